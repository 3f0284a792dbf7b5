//! Phrase encoder, character encoder, and the concatenated embedding.
//!
//! * `u`: mean of hashed whole-token rows from the token table (`m` dims).
//! * `v`: per word, the mean of hashed character n-gram rows of `<word>`;
//!   averaged over words, then `tanh(c·P + b)` (`n` dims).
//! * `h = (u, v) / ‖(u, v)‖`.
//!
//! Tokenization is plain whitespace splitting; case and Unicode are kept.

mod checkpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::PhraseTypeLabel;
use crate::error::{Error, Result};
use crate::numkernel::{self, AdamState, Matrix};
use crate::rng::{self, streams};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn hash_bucket(s: &str, num_buckets: usize) -> usize {
    assert!(num_buckets > 0, "num_buckets must be positive");
    (fnv1a64(s.as_bytes()) % num_buckets as u64) as usize
}

/// Character n-grams of `<word>` for each size. A wrapped word shorter than
/// a size contributes itself once for that size.
pub fn char_ngrams(word: &str, sizes: &[usize]) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for &k in sizes {
        if wrapped.len() < k {
            out.push(wrapped.iter().collect());
        } else {
            out.extend(wrapped.windows(k).map(|w| w.iter().collect::<String>()));
        }
    }
    out
}

pub fn tokenize(phrase: &str) -> Vec<&str> {
    phrase.split_whitespace().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub token_dim: usize,
    pub char_dim: usize,
    pub char_ngram_sizes: Vec<usize>,
    pub num_token_buckets: usize,
    pub num_char_buckets: usize,
    pub char_hidden_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            token_dim: 64,
            char_dim: 32,
            char_ngram_sizes: vec![3, 4],
            num_token_buckets: 1 << 16,
            num_char_buckets: 1 << 16,
            char_hidden_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("token_dim", self.token_dim),
            ("char_dim", self.char_dim),
            ("num_token_buckets", self.num_token_buckets),
            ("num_char_buckets", self.num_char_buckets),
            ("char_hidden_dim", self.char_hidden_dim),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
            if value > u32::MAX as usize {
                return Err(Error::Config(format!("{name} does not fit in 32 bits")));
            }
        }
        if self.char_ngram_sizes.is_empty() {
            return Err(Error::Config("char_ngram_sizes must not be empty".into()));
        }
        if self.char_ngram_sizes.iter().any(|&k| k < 2) {
            return Err(Error::Config("n-gram sizes must be >= 2".into()));
        }
        let mut sorted = self.char_ngram_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.char_ngram_sizes.len() {
            return Err(Error::Config("n-gram sizes must be distinct".into()));
        }
        Ok(())
    }

    /// Dimension of `h`.
    pub fn embedding_dim(&self) -> usize {
        self.token_dim + self.char_dim
    }
}

/// A dense real vector; unit-norm when produced by [`ModelState::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        EmbeddingVector {
            values: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        numkernel::dot_f32(&self.values, &self.values).sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        numkernel::dot_f32(&self.values, &other.values)
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        numkernel::cosine_f32(&self.values, &other.values)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Anything that maps a phrase to a fixed-dimension embedding.
pub trait PhraseEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, phrase: &str) -> Result<EmbeddingVector>;
}

/// The trainable arrays of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    TokenTable,
    CharTable,
    CharProjection,
    CharBias,
    TypeHead,
}

impl ParamId {
    pub const ALL: [ParamId; 5] = [
        ParamId::TokenTable,
        ParamId::CharTable,
        ParamId::CharProjection,
        ParamId::CharBias,
        ParamId::TypeHead,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub moments: [AdamState; 5],
}

impl OptimizerState {
    pub fn for_model(model: &ModelState) -> Self {
        OptimizerState {
            moments: ParamId::ALL.map(|id| AdamState::new(model.param(id).data().len())),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut AdamState {
        &mut self.moments[id as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub token_table: Matrix,
    pub char_table: Matrix,
    pub char_projection: Matrix,
    pub char_bias: Matrix,
    pub type_head: Matrix,
    pub optimizer: Option<OptimizerState>,
}

/// Intermediate values of one phrase's forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct PhraseForward {
    token_buckets: Vec<usize>,
    word_ngram_buckets: Vec<Vec<usize>>,
    char_mean: Vec<f64>,
    /// Phrase-level vector `u`.
    pub u: Vec<f64>,
    /// Character-level vector `v`.
    pub v: Vec<f64>,
    /// Concatenation `(u, v)`.
    pub z: Vec<f64>,
    /// Normalized embedding `h`.
    pub h: Vec<f64>,
}

/// Gradients with respect to every parameter. Table gradients are sparse
/// by row; ordered maps keep accumulation order deterministic.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub token_rows: BTreeMap<usize, Vec<f64>>,
    pub char_rows: BTreeMap<usize, Vec<f64>>,
    pub char_projection: Vec<f64>,
    pub char_bias: Vec<f64>,
    pub type_head: Vec<f64>,
}

impl Gradients {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Gradients {
            token_rows: BTreeMap::new(),
            char_rows: BTreeMap::new(),
            char_projection: vec![0.0; config.char_hidden_dim * config.char_dim],
            char_bias: vec![0.0; config.char_dim],
            type_head: vec![0.0; config.embedding_dim() * PhraseTypeLabel::COUNT],
        }
    }

    /// Dense `f64` view of the gradient for one parameter.
    pub fn dense(&self, id: ParamId, model: &ModelState) -> Vec<f64> {
        let sparse = |rows: &BTreeMap<usize, Vec<f64>>, m: &Matrix| {
            let mut out = vec![0.0; m.data().len()];
            for (&r, g) in rows {
                out[r * m.cols()..(r + 1) * m.cols()].copy_from_slice(g);
            }
            out
        };
        match id {
            ParamId::TokenTable => sparse(&self.token_rows, &model.token_table),
            ParamId::CharTable => sparse(&self.char_rows, &model.char_table),
            ParamId::CharProjection => self.char_projection.clone(),
            ParamId::CharBias => self.char_bias.clone(),
            ParamId::TypeHead => self.type_head.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.token_rows.values().flatten().all(|x| x.is_finite())
            && self.char_rows.values().flatten().all(|x| x.is_finite())
            && self.char_projection.iter().all(|x| x.is_finite())
            && self.char_bias.iter().all(|x| x.is_finite())
            && self.type_head.iter().all(|x| x.is_finite())
    }
}

fn add_into(acc: &mut [f64], x: &[f64], scale: f64) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += scale * b;
    }
}

impl ModelState {
    /// Fresh model with Xavier-uniform weights drawn from the `init` stream
    /// of `seed`; the character bias starts at zero.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, streams::INIT);
        let token_table = Matrix::xavier_uniform(config.num_token_buckets, config.token_dim, &mut r);
        let char_table =
            Matrix::xavier_uniform(config.num_char_buckets, config.char_hidden_dim, &mut r);
        let char_projection =
            Matrix::xavier_uniform(config.char_hidden_dim, config.char_dim, &mut r);
        let char_bias = Matrix::zeros(1, config.char_dim);
        let type_head =
            Matrix::xavier_uniform(config.embedding_dim(), PhraseTypeLabel::COUNT, &mut r);
        Ok(ModelState {
            config,
            token_table,
            char_table,
            char_projection,
            char_bias,
            type_head,
            optimizer: None,
        })
    }

    /// Expected shape of each parameter under `config`.
    pub fn expected_shape(config: &EncoderConfig, id: ParamId) -> (usize, usize) {
        match id {
            ParamId::TokenTable => (config.num_token_buckets, config.token_dim),
            ParamId::CharTable => (config.num_char_buckets, config.char_hidden_dim),
            ParamId::CharProjection => (config.char_hidden_dim, config.char_dim),
            ParamId::CharBias => (1, config.char_dim),
            ParamId::TypeHead => (config.embedding_dim(), PhraseTypeLabel::COUNT),
        }
    }

    pub fn param(&self, id: ParamId) -> &Matrix {
        match id {
            ParamId::TokenTable => &self.token_table,
            ParamId::CharTable => &self.char_table,
            ParamId::CharProjection => &self.char_projection,
            ParamId::CharBias => &self.char_bias,
            ParamId::TypeHead => &self.type_head,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Matrix {
        match id {
            ParamId::TokenTable => &mut self.token_table,
            ParamId::CharTable => &mut self.char_table,
            ParamId::CharProjection => &mut self.char_projection,
            ParamId::CharBias => &mut self.char_bias,
            ParamId::TypeHead => &mut self.type_head,
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        for id in ParamId::ALL {
            let want = Self::expected_shape(&self.config, id);
            let got = self.param(id).shape();
            if want != got {
                return Err(Error::Dimension {
                    context: "model parameter shape",
                    left: got,
                    right: want,
                });
            }
        }
        Ok(())
    }

    /// Same config and shapes, ignoring weights and optimizer state.
    pub fn same_architecture(&self, other: &ModelState) -> bool {
        self.config == other.config
            && ParamId::ALL
                .iter()
                .all(|&id| self.param(id).shape() == other.param(id).shape())
    }

    fn check_phrase<'a>(&self, phrase: &'a str) -> Result<Vec<&'a str>> {
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty phrase"));
        }
        Ok(tokens)
    }

    fn phrase_vector(&self, tokens: &[&str]) -> (Vec<usize>, Vec<f64>) {
        let m = self.config.token_dim;
        let buckets: Vec<usize> = tokens
            .iter()
            .map(|t| hash_bucket(t, self.config.num_token_buckets))
            .collect();
        let mut u = vec![0.0f64; m];
        for &b in &buckets {
            for (acc, &w) in u.iter_mut().zip(self.token_table.row(b)) {
                *acc += w as f64;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        u.iter_mut().for_each(|x| *x *= inv);
        (buckets, u)
    }

    fn char_vector(&self, tokens: &[&str]) -> (Vec<Vec<usize>>, Vec<f64>, Vec<f64>) {
        let hidden = self.config.char_hidden_dim;
        let word_buckets: Vec<Vec<usize>> = tokens
            .iter()
            .map(|w| {
                char_ngrams(w, &self.config.char_ngram_sizes)
                    .iter()
                    .map(|g| hash_bucket(g, self.config.num_char_buckets))
                    .collect()
            })
            .collect();
        let mut c = vec![0.0f64; hidden];
        let word_weight = 1.0 / word_buckets.len() as f64;
        for buckets in &word_buckets {
            let mut word = vec![0.0f64; hidden];
            for &b in buckets {
                for (acc, &x) in word.iter_mut().zip(self.char_table.row(b)) {
                    *acc += x as f64;
                }
            }
            add_into(&mut c, &word, word_weight / buckets.len() as f64);
        }
        let pre = self
            .char_projection
            .vec_mul(&c)
            .expect("projection shape checked at construction");
        let v: Vec<f64> = pre
            .iter()
            .zip(self.char_bias.row(0))
            .map(|(p, &b)| (p + b as f64).tanh())
            .collect();
        (word_buckets, c, v)
    }

    /// Full forward pass, keeping intermediates. Fails on an empty phrase or
    /// an all-zero concatenation.
    pub fn forward(&self, phrase: &str) -> Result<PhraseForward> {
        let tokens = self.check_phrase(phrase)?;
        let (token_buckets, u) = self.phrase_vector(&tokens);
        let (word_ngram_buckets, char_mean, v) = self.char_vector(&tokens);
        let z: Vec<f64> = u.iter().chain(&v).copied().collect();
        let h = numkernel::l2_normalize(&z)?;
        Ok(PhraseForward {
            token_buckets,
            word_ngram_buckets,
            char_mean,
            u,
            v,
            z,
            h,
        })
    }

    pub fn encode_phrase(&self, phrase: &str) -> Result<EmbeddingVector> {
        let tokens = self.check_phrase(phrase)?;
        Ok(EmbeddingVector::from_f64(&self.phrase_vector(&tokens).1))
    }

    pub fn encode_char(&self, phrase: &str) -> Result<EmbeddingVector> {
        let tokens = self.check_phrase(phrase)?;
        Ok(EmbeddingVector::from_f64(&self.char_vector(&tokens).2))
    }

    pub fn encode(&self, phrase: &str) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector::from_f64(&self.forward(phrase)?.h))
    }

    /// Backpropagate `d_h` (gradient w.r.t. the normalized embedding) and
    /// `d_z` (gradient w.r.t. the raw concatenation, e.g. from the type
    /// head) through one phrase's forward pass, accumulating into `grads`.
    pub fn backward(
        &self,
        fwd: &PhraseForward,
        d_h: Option<&[f64]>,
        d_z: Option<&[f64]>,
        grads: &mut Gradients,
    ) -> Result<()> {
        let m = self.config.token_dim;
        let n = self.config.char_dim;
        let hidden = self.config.char_hidden_dim;

        let mut dz = match d_h {
            Some(d_h) => numkernel::l2_normalize_backward(&fwd.z, d_h)?,
            None => vec![0.0; m + n],
        };
        if let Some(extra) = d_z {
            add_into(&mut dz, extra, 1.0);
        }
        let (du, dv) = dz.split_at(m);

        let token_scale = 1.0 / fwd.token_buckets.len() as f64;
        for &b in &fwd.token_buckets {
            let row = grads.token_rows.entry(b).or_insert_with(|| vec![0.0; m]);
            add_into(row, du, token_scale);
        }

        // v = tanh(c·P + b)
        let d_pre: Vec<f64> = dv.iter().zip(&fwd.v).map(|(g, v)| g * (1.0 - v * v)).collect();
        for (i, &ci) in fwd.char_mean.iter().enumerate() {
            if ci != 0.0 {
                add_into(&mut grads.char_projection[i * n..(i + 1) * n], &d_pre, ci);
            }
        }
        add_into(&mut grads.char_bias, &d_pre, 1.0);
        let d_c = self.char_projection.mul_vec(&d_pre)?;
        let word_weight = 1.0 / fwd.word_ngram_buckets.len() as f64;
        for buckets in &fwd.word_ngram_buckets {
            let scale = word_weight / buckets.len() as f64;
            for &b in buckets {
                let row = grads.char_rows.entry(b).or_insert_with(|| vec![0.0; hidden]);
                add_into(row, &d_c, scale);
            }
        }
        Ok(())
    }

    pub fn strip_optimizer(mut self) -> Self {
        self.optimizer = None;
        self
    }
}

impl PhraseEmbedder for ModelState {
    fn dim(&self) -> usize {
        self.config.embedding_dim()
    }

    fn embed(&self, phrase: &str) -> Result<EmbeddingVector> {
        self.encode(phrase)
    }
}
