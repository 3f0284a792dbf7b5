//! Phrase-level evaluation: paraphrase classification with an MLP probe,
//! similarity correlation, Turney multiple choice, entity retrieval,
//! clustering and fuzzy join, plus the metrics they report.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::encoder::{char_ngrams, fnv1a64, tokenize, EmbeddingVector, PhraseEmbedder};
use crate::error::{Error, Result};
use crate::numkernel::{adam_step, AdamState, Matrix};
use crate::rng::{self, streams};

// ---------------------------------------------------------------------------
// metrics

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length series of at least 2 values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson is undefined for a constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `I / ((H(pred) + H(gold)) / 2)`, natural
/// log. Two single-cluster labelings score 1.
pub fn nmi(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(Error::invalid("nmi needs two equal-length non-empty labelings"));
    }
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pc: BTreeMap<usize, usize> = BTreeMap::new();
    let mut gc: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gold) {
        *joint.entry((p, g)).or_default() += 1;
        *pc.entry(p).or_default() += 1;
        *gc.entry(g).or_default() += 1;
    }
    let hp = entropy(pc.values().copied(), n);
    let hg = entropy(gc.values().copied(), n);
    if hp == 0.0 && hg == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(p, g), &c) in &joint {
        let c = c as f64;
        mi += c / n * (n * c / (pc[&p] as f64 * gc[&g] as f64)).ln();
    }
    Ok((mi / ((hp + hg) / 2.0)).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// k-means

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

const KMEANS_MAX_ITER: usize = 300;

fn kmeans_once(vectors: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> KMeansResult {
    // k-means++ seeding
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(vectors[next].clone());
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, &centroids[centroids.len() - 1]));
        }
    }

    let dim = vectors[0].len();
    let mut assignment = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut new_inertia = 0.0;
        for (a, v) in assignment.iter_mut().zip(vectors) {
            let (c, d) = nearest(v, &centroids);
            changed |= *a != c;
            *a = c;
            new_inertia += d;
        }
        debug_assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia rose from {inertia} to {new_inertia}"
        );
        inertia = new_inertia;
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, v) in assignment.iter().zip(vectors) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        for c in 0..k {
            // an empty cluster keeps its centroid
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    KMeansResult { assignment, inertia }
}

/// Lloyd's algorithm with k-means++ seeding; the lowest-inertia run of
/// `restarts` is returned. Deterministic for a given seed.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if vectors.len() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", vectors.len())));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("vectors differ in dimension"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans_once(vectors, k, &mut rng::indexed(seed, streams::KMEANS, r as u64));
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

// ---------------------------------------------------------------------------
// embeddings

pub fn embed_all<E: PhraseEmbedder + ?Sized>(model: &E, phrases: &[String]) -> Result<Vec<EmbeddingVector>> {
    phrases.par_iter().map(|p| model.embed(p)).collect()
}

/// Index of the highest score; ties go to the lowest index.
fn argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Fixed vectors looked up by phrase, e.g. read back from `embed` output.
#[derive(Debug, Clone, Default)]
pub struct LookupEmbedder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl LookupEmbedder {
    pub fn new(table: HashMap<String, EmbeddingVector>) -> Result<Self> {
        let dim = table.values().next().map_or(0, EmbeddingVector::dim);
        if table.values().any(|v| v.dim() != dim) {
            return Err(Error::invalid("lookup vectors differ in dimension"));
        }
        Ok(LookupEmbedder { dim, table })
    }

    /// `phrase<TAB>x1<TAB>x2...` per line.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let phrase = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| {
                    f.parse::<f32>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("bad number {f:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.insert(phrase.to_string(), EmbeddingVector::new(values));
        }
        Self::new(table)
    }
}

impl PhraseEmbedder for LookupEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, phrase: &str) -> Result<EmbeddingVector> {
        self.table
            .get(phrase)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no vector for {phrase:?}")))
    }
}

// ---------------------------------------------------------------------------
// file helpers

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn split_fields<'a>(line: &'a str, line_no: usize, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {n} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// One name per non-empty line.
pub fn parse_names(text: &str) -> Vec<String> {
    data_lines(text).map(|(_, l)| l.trim().to_string()).collect()
}

// ---------------------------------------------------------------------------
// pairs: paraphrase and similarity

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub phrase_a: String,
    pub phrase_b: String,
    pub label: f64,
}

impl LabeledPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, label: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::Validation {
                field: "label",
                message: format!("must lie in [0, 1], got {label}"),
            });
        }
        Ok(LabeledPair {
            phrase_a: a.into(),
            phrase_b: b.into(),
            label,
        })
    }
}

/// `phrase_a<TAB>phrase_b<TAB>label` per line.
pub fn parse_pairs(text: &str) -> Result<Vec<LabeledPair>> {
    data_lines(text)
        .map(|(n, line)| {
            let f = split_fields(line, n, 3)?;
            let label: f64 = f[2].trim().parse().map_err(|_| Error::Parse {
                line: n,
                message: format!("bad label {:?}", f[2]),
            })?;
            LabeledPair::new(f[0], f[1], label).map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    parse_pairs(&read(path.as_ref())?)
}

/// Pearson correlation between pair cosines and gold scores.
pub fn eval_similarity<E: PhraseEmbedder + ?Sized>(pairs: &[LabeledPair], model: &E) -> Result<f64> {
    let cos = pairs
        .par_iter()
        .map(|p| Ok(model.embed(&p.phrase_a)?.cosine(&model.embed(&p.phrase_b)?)))
        .collect::<Result<Vec<f64>>>()?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    pearson(&cos, &gold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

/// One hidden ReLU layer, sigmoid output.
#[derive(Debug, Clone)]
struct Mlp {
    w1: Matrix,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

impl Mlp {
    fn init(input: usize, hidden: usize, rng: &mut rng::Rng) -> Self {
        Mlp {
            w1: Matrix::xavier_uniform(input, hidden, rng),
            b1: vec![0.0; hidden],
            w2: Matrix::xavier_uniform(hidden, 1, rng).data().to_vec(),
            b2: 0.0,
        }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.w1.vec_mul(x).expect("probe input width");
        for (v, &b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b as f64).max(0.0);
        }
        h
    }

    fn prob(&self, x: &[f64]) -> f64 {
        let h = self.hidden(x);
        let logit: f64 = h.iter().zip(&self.w2).map(|(a, &w)| a * w as f64).sum::<f64>() + self.b2 as f64;
        1.0 / (1.0 + (-logit).exp())
    }

    fn accuracy(&self, xs: &[Vec<f64>], ys: &[bool]) -> f64 {
        let correct = xs.iter().zip(ys).filter(|(x, &y)| (self.prob(x) >= 0.5) == y).count();
        correct as f64 / xs.len() as f64
    }
}

#[derive(Default)]
struct MlpGrads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

fn pair_features<E: PhraseEmbedder + ?Sized>(pairs: &[LabeledPair], model: &E) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let xs = pairs
        .par_iter()
        .map(|p| {
            let mut x = model.embed(&p.phrase_a)?.to_f64();
            x.extend(model.embed(&p.phrase_b)?.to_f64());
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((xs, pairs.iter().map(|p| p.label >= 0.5).collect()))
}

/// Train an MLP probe on frozen `concat(h_a, h_b)` features, early-stopped
/// on dev accuracy, and report test accuracy.
pub fn eval_paraphrase<E: PhraseEmbedder + ?Sized>(
    train: &[LabeledPair],
    dev: &[LabeledPair],
    test: &[LabeledPair],
    model: &E,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if dev.is_empty() || test.is_empty() {
        return Err(Error::invalid("paraphrase dev and test splits must be non-empty"));
    }
    let (xs, ys) = pair_features(train, model)?;
    if !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
        return Err(Error::invalid("paraphrase training set has a single class"));
    }
    let (dev_x, dev_y) = pair_features(dev, model)?;
    let (test_x, test_y) = pair_features(test, model)?;

    let input = xs[0].len();
    let hidden = probe.hidden;
    let mut r = rng::stream(seed, streams::PROBE);
    let mut mlp = Mlp::init(input, hidden, &mut r);
    let mut states = [
        AdamState::new(input * hidden),
        AdamState::new(hidden),
        AdamState::new(hidden),
        AdamState::new(1),
    ];
    let mut best = (mlp.accuracy(&dev_x, &dev_y), mlp.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for _ in 0..probe.max_epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(probe.batch_size.max(1)) {
            let mut g = MlpGrads {
                w1: vec![0.0; input * hidden],
                b1: vec![0.0; hidden],
                w2: vec![0.0; hidden],
                b2: 0.0,
            };
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &xs[i];
                let h = mlp.hidden(x);
                let logit: f64 = h.iter().zip(&mlp.w2).map(|(a, &w)| a * w as f64).sum::<f64>() + mlp.b2 as f64;
                let p = 1.0 / (1.0 + (-logit).exp());
                // binary cross-entropy through the sigmoid
                let d_logit = (p - if ys[i] { 1.0 } else { 0.0 }) * scale;
                g.b2 += d_logit;
                for j in 0..hidden {
                    g.w2[j] += d_logit * h[j];
                    if h[j] > 0.0 {
                        let dh = d_logit * mlp.w2[j] as f64;
                        g.b1[j] += dh;
                        for (k, &xk) in x.iter().enumerate() {
                            if xk != 0.0 {
                                g.w1[k * hidden + j] += dh * xk;
                            }
                        }
                    }
                }
            }
            let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
            let lr = probe.learning_rate;
            adam_step(mlp.w1.data_mut(), &f(&g.w1), &mut states[0], lr)?;
            adam_step(&mut mlp.b1, &f(&g.b1), &mut states[1], lr)?;
            adam_step(&mut mlp.w2, &f(&g.w2), &mut states[2], lr)?;
            let mut b2 = [mlp.b2];
            adam_step(&mut b2, &[g.b2 as f32], &mut states[3], lr)?;
            mlp.b2 = b2[0];
        }
        let acc = mlp.accuracy(&dev_x, &dev_y);
        if acc > best.0 {
            best = (acc, mlp.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= probe.patience {
                break;
            }
        }
    }
    Ok(best.1.accuracy(&test_x, &test_y))
}

// ---------------------------------------------------------------------------
// Turney

#[derive(Debug, Clone, PartialEq)]
pub struct TurneyItem {
    pub bigram: String,
    pub candidates: [String; 5],
    pub gold: usize,
}

/// `bigram<TAB>c1<TAB>..<TAB>c5<TAB>gold_index` (0-based).
pub fn parse_turney(text: &str) -> Result<Vec<TurneyItem>> {
    data_lines(text)
        .map(|(n, line)| {
            let f = split_fields(line, n, 7)?;
            let gold: usize = f[6].trim().parse().ok().filter(|&g| g < 5).ok_or_else(|| Error::Parse {
                line: n,
                message: format!("gold index must be 0..4, got {:?}", f[6]),
            })?;
            Ok(TurneyItem {
                bigram: f[0].to_string(),
                candidates: std::array::from_fn(|i| f[i + 1].to_string()),
                gold,
            })
        })
        .collect()
}

/// Accuracy of picking the candidate closest to the bigram; ties go to the
/// lowest index.
pub fn eval_turney<E: PhraseEmbedder + ?Sized>(items: &[TurneyItem], model: &E) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::invalid("no Turney items"));
    }
    let correct = items
        .par_iter()
        .map(|it| {
            let q = model.embed(&it.bigram)?;
            let scores = it
                .candidates
                .iter()
                .map(|c| Ok(q.cosine(&model.embed(c)?)))
                .collect::<Result<Vec<f64>>>()?;
            Ok(argmax(scores.into_iter()) == Some(it.gold))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / items.len() as f64)
}

// ---------------------------------------------------------------------------
// retrieval

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTask {
    pub dictionary: Vec<String>,
    pub queries: Vec<(String, usize)>,
}

impl RetrievalTask {
    pub fn new(dictionary: Vec<String>, queries: Vec<(String, usize)>) -> Result<Self> {
        if dictionary.is_empty() {
            return Err(Error::invalid("retrieval dictionary is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &dictionary {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate dictionary name {name:?}")));
            }
        }
        if let Some((m, g)) = queries.iter().find(|(_, g)| *g >= dictionary.len()) {
            return Err(Error::invalid(format!("query {m:?} has gold index {g} out of range")));
        }
        Ok(RetrievalTask { dictionary, queries })
    }

    /// Dictionary: one name per line. Queries: `mention<TAB>gold_name`.
    pub fn parse(dictionary: &str, queries: &str) -> Result<Self> {
        let dictionary = parse_names(dictionary);
        let position: HashMap<&str, usize> = dictionary.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let queries = data_lines(queries)
            .map(|(n, line)| {
                let f = split_fields(line, n, 2)?;
                let gold = position.get(f[1].trim()).copied().ok_or_else(|| Error::Parse {
                    line: n,
                    message: format!("gold name {:?} not in dictionary", f[1]),
                })?;
                Ok((f[0].to_string(), gold))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dictionary, queries)
    }

    pub fn load(dictionary: impl AsRef<Path>, queries: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(dictionary.as_ref())?, &read(queries.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Exact,
    /// Rank by cosine only among the `candidates` names sharing the most
    /// character n-grams with the query.
    Prefilter { candidates: usize },
}

impl Default for SearchMode {
    fn default() -> Self {
        SearchMode::Exact
    }
}

pub const DEFAULT_PREFILTER_CANDIDATES: usize = 1024;
const PREFILTER_NGRAM: [usize; 1] = [3];

fn ngram_keys(name: &str) -> Vec<u64> {
    let mut keys: Vec<u64> = tokenize(name)
        .into_iter()
        .flat_map(|w| char_ngrams(w, &PREFILTER_NGRAM))
        .map(|g| fnv1a64(g.as_bytes()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Character trigram inverted index over dictionary names.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    postings: HashMap<u64, Vec<u32>>,
    len: usize,
}

impl NgramIndex {
    pub fn build(names: &[String]) -> Self {
        let mut postings: HashMap<u64, Vec<u32>> = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            for k in ngram_keys(name) {
                postings.entry(k).or_default().push(i as u32);
            }
        }
        NgramIndex {
            postings,
            len: names.len(),
        }
    }

    /// Up to `c` entries by shared-n-gram count, highest first, ties by
    /// lowest index; entries with no overlap fill the tail in index order.
    pub fn candidates(&self, query: &str, c: usize) -> Vec<usize> {
        if c >= self.len {
            return (0..self.len).collect();
        }
        let mut counts = vec![0u32; self.len];
        for k in ngram_keys(query) {
            if let Some(list) = self.postings.get(&k) {
                for &i in list {
                    counts[i as usize] += 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..self.len).collect();
        order.select_nth_unstable_by(c - 1, |&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order.truncate(c);
        order.sort_unstable();
        order
    }
}

/// Retrieval over a fixed, pre-embedded dictionary.
pub struct Retriever {
    embeddings: Vec<EmbeddingVector>,
    index: Option<NgramIndex>,
    mode: SearchMode,
}

impl Retriever {
    pub fn new<E: PhraseEmbedder + ?Sized>(dictionary: &[String], model: &E, mode: SearchMode) -> Result<Self> {
        if dictionary.is_empty() {
            return Err(Error::invalid("retrieval dictionary is empty"));
        }
        let index = match mode {
            SearchMode::Exact => None,
            SearchMode::Prefilter { candidates: 0 } => {
                return Err(Error::invalid("prefilter needs at least one candidate"))
            }
            SearchMode::Prefilter { .. } => Some(NgramIndex::build(dictionary)),
        };
        Ok(Retriever {
            embeddings: embed_all(model, dictionary)?,
            index,
            mode,
        })
    }

    /// Index of the nearest dictionary entry by cosine; ties go to the
    /// lowest index.
    pub fn nearest(&self, query: &str, query_vec: &EmbeddingVector) -> usize {
        match (&self.index, self.mode) {
            (Some(index), SearchMode::Prefilter { candidates }) => {
                let cands = index.candidates(query, candidates);
                let best = argmax(cands.iter().map(|&i| query_vec.cosine(&self.embeddings[i]))).unwrap();
                cands[best]
            }
            _ => argmax(self.embeddings.iter().map(|e| query_vec.cosine(e))).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Top-1 accuracy of nearest-neighbour search from each mention into the
/// dictionary.
pub fn eval_retrieval<E: PhraseEmbedder + ?Sized>(
    task: &RetrievalTask,
    model: &E,
    mode: SearchMode,
) -> Result<RetrievalReport> {
    if task.queries.is_empty() {
        return Err(Error::invalid("retrieval task has no queries"));
    }
    let retriever = Retriever::new(&task.dictionary, model, mode)?;
    let predictions = task
        .queries
        .par_iter()
        .map(|(m, _)| Ok(retriever.nearest(m, &model.embed(m)?)))
        .collect::<Result<Vec<usize>>>()?;
    let correct = predictions.iter().zip(&task.queries).filter(|(p, (_, g))| *p == g).count();
    Ok(RetrievalReport {
        accuracy: correct as f64 / task.queries.len() as f64,
        predictions,
    })
}

// ---------------------------------------------------------------------------
// clustering

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringTask {
    pub items: Vec<(String, usize)>,
    pub class_names: Vec<String>,
}

impl ClusteringTask {
    /// Class ids are assigned in order of first appearance.
    pub fn from_labeled(items: Vec<(String, String)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("clustering task has no items"));
        }
        let mut class_names: Vec<String> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let items = items
            .into_iter()
            .map(|(p, c)| {
                let next = ids.len();
                let id = *ids.entry(c.clone()).or_insert_with(|| {
                    class_names.push(c);
                    next
                });
                (p, id)
            })
            .collect();
        Ok(ClusteringTask { items, class_names })
    }

    /// `phrase<TAB>class` per line.
    pub fn parse(text: &str) -> Result<Self> {
        let items = data_lines(text)
            .map(|(n, line)| {
                let f = split_fields(line, n, 2)?;
                Ok((f[0].to_string(), f[1].trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_labeled(items)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(path.as_ref())?)
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }
}

pub const KMEANS_RESTARTS: usize = 10;

/// NMI between k-means clusters of the item embeddings (k = number of
/// classes) and the gold classes.
pub fn eval_clustering<E: PhraseEmbedder + ?Sized>(task: &ClusteringTask, model: &E, seed: u64) -> Result<f64> {
    let phrases: Vec<String> = task.items.iter().map(|(p, _)| p.clone()).collect();
    let vectors: Vec<Vec<f64>> = embed_all(model, &phrases)?.iter().map(EmbeddingVector::to_f64).collect();
    let result = kmeans(&vectors, task.k(), seed, KMEANS_RESTARTS)?;
    let gold: Vec<usize> = task.items.iter().map(|(_, c)| *c).collect();
    nmi(&result.assignment, &gold)
}

// ---------------------------------------------------------------------------
// fuzzy join

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyJoinTask {
    pub left: Vec<String>,
    /// Right-table name and the left name it should join to.
    pub right: Vec<(String, String)>,
}

impl FuzzyJoinTask {
    pub fn new(left: Vec<String>, right: Vec<(String, String)>) -> Result<Self> {
        if left.is_empty() {
            return Err(Error::invalid("fuzzy join left table is empty"));
        }
        let names: std::collections::HashSet<&str> = left.iter().map(String::as_str).collect();
        if let Some((r, g)) = right.iter().find(|(_, g)| !names.contains(g.as_str())) {
            return Err(Error::invalid(format!("gold {g:?} for {r:?} is not in the left table")));
        }
        Ok(FuzzyJoinTask { left, right })
    }

    /// Left and right: one name per line. Gold: `right_name<TAB>left_name`.
    /// Every right name needs a gold row.
    pub fn parse(left: &str, right: &str, gold: &str) -> Result<Self> {
        let left = parse_names(left);
        let mut gold_map = HashMap::new();
        for (n, line) in data_lines(gold) {
            let f = split_fields(line, n, 2)?;
            gold_map.insert(f[0].trim().to_string(), f[1].trim().to_string());
        }
        let right = parse_names(right)
            .into_iter()
            .map(|r| {
                let g = gold_map
                    .get(&r)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no gold row for right name {r:?}")))?;
                Ok((r, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(left, right)
    }

    pub fn load(left: impl AsRef<Path>, right: impl AsRef<Path>, gold: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read(left.as_ref())?, &read(right.as_ref())?, &read(gold.as_ref())?)
    }
}

/// Fraction of right names whose nearest left name is the gold one.
pub fn eval_fuzzyjoin<E: PhraseEmbedder + ?Sized>(task: &FuzzyJoinTask, model: &E) -> Result<f64> {
    if task.right.is_empty() {
        return Err(Error::invalid("fuzzy join right table is empty"));
    }
    let retriever = Retriever::new(&task.left, model, SearchMode::Exact)?;
    let correct = task
        .right
        .par_iter()
        .map(|(r, g)| Ok(task.left[retriever.nearest(r, &model.embed(r)?)] == *g))
        .collect::<Result<Vec<bool>>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / task.right.len() as f64)
}

/// Vectors as `phrase<TAB>x1<TAB>...`, 9 significant digits.
pub fn format_vector_line(phrase: &str, v: &EmbeddingVector) -> String {
    let mut line = phrase.to_string();
    for &x in &v.values {
        line.push('\t');
        line.push_str(&significant(x as f64, 9));
    }
    line
}

/// Plain decimal notation with `digits` significant digits.
fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.9999999995 -> 10.00000000).
    let rounded: f64 = s.parse().unwrap();
    if rounded != 0.0 && rounded.abs().log10().floor() as i64 > exponent && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lookup(entries: &[(&str, &[f32])]) -> LookupEmbedder {
        LookupEmbedder::new(
            entries
                .iter()
                .map(|(k, v)| (k.to_string(), EmbeddingVector::new(v.to_vec())))
                .collect(),
        )
        .unwrap()
    }

    // direct-from-definition references
    fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    fn nmi_ref(p: &[usize], g: &[usize]) -> f64 {
        let n = p.len() as f64;
        let kp = p.iter().max().unwrap() + 1;
        let kg = g.iter().max().unwrap() + 1;
        let mut table = vec![vec![0.0; kg]; kp];
        for (&a, &b) in p.iter().zip(g) {
            table[a][b] += 1.0;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..kg).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let h = |m: &[f64]| -m.iter().filter(|&&c| c > 0.0).map(|c| c / n * (c / n).ln()).sum::<f64>();
        let mut mi = 0.0;
        for i in 0..kp {
            for j in 0..kg {
                if table[i][j] > 0.0 {
                    let pij = table[i][j] / n;
                    mi += pij * (pij / (rows[i] / n * cols[j] / n)).ln();
                }
            }
        }
        let (hp, hg) = (h(&rows), h(&cols));
        if hp == 0.0 && hg == 0.0 {
            1.0
        } else {
            2.0 * mi / (hp + hg)
        }
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn metrics_match_references() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = r.gen_range(2..60);
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            assert!((pearson(&x, &y).unwrap() - pearson_ref(&x, &y)).abs() < 1e-12);
            let kp = r.gen_range(1..6);
            let kg = r.gen_range(1..6);
            let p: Vec<usize> = (0..n).map(|_| r.gen_range(0..kp)).collect();
            let g: Vec<usize> = (0..n).map(|_| r.gen_range(0..kg)).collect();
            assert!((nmi(&p, &g).unwrap() - nmi_ref(&p, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_examples() {
        let g = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmi(&[5, 5, 3, 3, 9, 9], &g).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let p: Vec<usize> = (0..1000).map(|_| r.gen_range(0..2)).collect();
        let g: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        assert!(nmi(&p, &g).unwrap() <= 0.01);
    }

    #[test]
    fn kmeans_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Vec<f64>> = (0..7).map(|_| vec![r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]).collect();
        let own = kmeans(&pts, 7, 1, 10).unwrap();
        assert_eq!(own.inertia, 0.0);
        let mut a = own.assignment.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);

        let mut blobs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..100 {
            let c = if i % 2 == 0 { -5.0 } else { 5.0 };
            blobs.push(vec![c + r.gen_range(-0.5..0.5), c + r.gen_range(-0.5..0.5)]);
            truth.push(i % 2);
        }
        let res = kmeans(&blobs, 2, 3, 10).unwrap();
        assert!((nmi(&res.assignment, &truth).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(res, kmeans(&blobs, 2, 3, 10).unwrap());
        assert!(kmeans(&blobs, 0, 1, 1).is_err());
        assert!(kmeans(&pts, 8, 1, 1).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let model = lookup(&[
            ("new york", &[1.0, 0.0, 0.0]),
            ("boston", &[0.0, 1.0, 0.0]),
            ("chicago", &[0.0, 0.0, 1.0]),
            ("nyc", &[0.9, 0.1, 0.0]),
            ("bostn", &[0.1, 0.9, 0.1]),
        ]);
        let dict: Vec<String> = ["new york", "boston", "chicago"].map(String::from).to_vec();
        let task = RetrievalTask::new(
            dict.clone(),
            vec![("new york".into(), 0), ("nyc".into(), 0), ("bostn".into(), 2)],
        )
        .unwrap();
        let rep = eval_retrieval(&task, &model, SearchMode::Exact).unwrap();
        assert_eq!(rep.predictions, vec![0, 0, 1]);
        assert!((rep.accuracy - 2.0 / 3.0).abs() < 1e-15);
        let pre = eval_retrieval(&task, &model, SearchMode::Prefilter { candidates: 3 }).unwrap();
        assert_eq!(pre, rep);

        assert!(RetrievalTask::new(vec![], vec![]).is_err());
        assert!(RetrievalTask::new(vec!["a".into(), "a".into()], vec![]).is_err());
        assert!(RetrievalTask::new(dict, vec![("x".into(), 3)]).is_err());
        let parsed = RetrievalTask::parse("a\nb\n", "aa\ta\nbb\tb\n").unwrap();
        assert_eq!(parsed.queries, vec![("aa".to_string(), 0), ("bb".to_string(), 1)]);
        assert!(matches!(RetrievalTask::parse("a\n", "x\tz\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ngram_prefilter_prefers_overlap() {
        let names: Vec<String> = ["alpha beta", "gamma", "alphabet", "delta"].map(String::from).to_vec();
        let index = NgramIndex::build(&names);
        let c = index.candidates("alpha", 2);
        assert_eq!(c, vec![0, 2]);
        assert_eq!(index.candidates("zzz", 2), vec![0, 1]);
        assert_eq!(index.candidates("x", 10), vec![0, 1, 2, 3]);
    }

    #[test]
    fn turney_examples() {
        let model = lookup(&[
            ("big apple", &[1.0, 0.0]),
            ("a", &[0.0, 1.0]),
            ("b", &[0.5, 0.5]),
            ("c", &[0.5, 0.5]),
            ("big apple2", &[1.0, 0.0]),
        ]);
        let item = |cands: [&str; 5], gold| TurneyItem {
            bigram: "big apple".into(),
            candidates: cands.map(String::from),
            gold,
        };
        // exact match wins; b and c tie, lowest index
        let items = [item(["a", "b", "big apple", "c", "a"], 2), item(["a", "c", "b", "a", "a"], 1)];
        assert_eq!(eval_turney(&items, &model).unwrap(), 1.0);
        let parsed = parse_turney("x\ta\tb\tc\td\te\t4\n").unwrap();
        assert_eq!(parsed[0].gold, 4);
        assert!(parse_turney("x\ta\tb\tc\td\te\t5\n").is_err());
    }

    #[test]
    fn turney_random_baseline() {
        let mut r = ChaCha8Rng::seed_from_u64(14);
        let mut table = HashMap::new();
        let mut items = Vec::new();
        for i in 0..2000 {
            let names: Vec<String> = (0..6).map(|j| format!("w{i}_{j}")).collect();
            for n in &names {
                let v: Vec<f32> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
                table.insert(n.clone(), EmbeddingVector::new(v));
            }
            items.push(TurneyItem {
                bigram: names[0].clone(),
                candidates: std::array::from_fn(|k| names[k + 1].clone()),
                gold: r.gen_range(0..5),
            });
        }
        let acc = eval_turney(&items, &LookupEmbedder::new(table).unwrap()).unwrap();
        assert!((acc - 0.2).abs() < 0.03, "{acc}");
    }

    #[test]
    fn clustering_and_fuzzyjoin() {
        let model = lookup(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[-1.0, 0.0])]);
        let task = ClusteringTask::parse("a\tx\nb\ty\nc\tz\n").unwrap();
        assert_eq!(task.k(), 3);
        assert_eq!(eval_clustering(&task, &model, 0).unwrap(), 1.0);

        let left: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let ident = FuzzyJoinTask::new(left.clone(), left.iter().map(|l| (l.clone(), l.clone())).collect()).unwrap();
        assert_eq!(eval_fuzzyjoin(&ident, &model).unwrap(), 1.0);
        assert!(FuzzyJoinTask::new(vec![], vec![]).is_err());
        assert!(FuzzyJoinTask::new(left, vec![("a".into(), "q".into())]).is_err());
        let parsed = FuzzyJoinTask::parse("a\nb\n", "b\n", "b\ta\n").unwrap();
        assert_eq!(parsed.right, vec![("b".to_string(), "a".to_string())]);
    }

    fn random_unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        crate::numkernel::l2_normalize(&v).unwrap().iter().map(|&x| x as f32).collect()
    }

    fn probe_data(seed: u64, separable: bool) -> (LookupEmbedder, Vec<Vec<LabeledPair>>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let mut table = HashMap::new();
        let mut splits = vec![Vec::new(), Vec::new(), Vec::new()];
        for i in 0..1500 {
            let a = format!("a{i}");
            let b = format!("b{i}");
            let va = random_unit(&mut r, d);
            let label = r.gen_bool(0.5);
            let vb = if !separable {
                random_unit(&mut r, d)
            } else if label {
                va.clone()
            } else {
                // orthogonal to va
                let w: Vec<f64> = random_unit(&mut r, d).iter().map(|&x| x as f64).collect();
                let a64: Vec<f64> = va.iter().map(|&x| x as f64).collect();
                let dot = crate::numkernel::dot(&w, &a64);
                let o: Vec<f64> = w.iter().zip(&a64).map(|(x, y)| x - dot * y).collect();
                crate::numkernel::l2_normalize(&o).unwrap().iter().map(|&x| x as f32).collect()
            };
            table.insert(a.clone(), EmbeddingVector::new(va));
            table.insert(b.clone(), EmbeddingVector::new(vb));
            let split = if i < 400 { 0 } else if i < 500 { 1 } else { 2 };
            splits[split].push(LabeledPair::new(a, b, if label { 1.0 } else { 0.0 }).unwrap());
        }
        (LookupEmbedder::new(table).unwrap(), splits)
    }

    #[test]
    fn probe_learns_separable_pairs() {
        let (model, s) = probe_data(15, true);
        let acc = eval_paraphrase(&s[0], &s[1], &s[2], &model, &ProbeConfig::default(), 1).unwrap();
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn probe_null_signal_stays_near_majority() {
        let (model, s) = probe_data(16, false);
        let acc = eval_paraphrase(&s[0], &s[1], &s[2], &model, &ProbeConfig::default(), 1).unwrap();
        let pos = s[2].iter().filter(|p| p.label >= 0.5).count() as f64 / s[2].len() as f64;
        let majority = pos.max(1.0 - pos);
        assert!((acc - majority).abs() <= 0.05, "{acc} vs {majority}");
        let one_class: Vec<LabeledPair> = s[0].iter().cloned().map(|mut p| { p.label = 1.0; p }).collect();
        assert!(eval_paraphrase(&one_class, &s[1], &s[2], &model, &ProbeConfig::default(), 1).is_err());
    }

    #[test]
    fn similarity_and_pairs_file() {
        let model = lookup(&[("a", &[1.0, 0.0]), ("b", &[0.6, 0.8]), ("c", &[0.0, 1.0])]);
        let pairs = parse_pairs("a\ta\t1.0\na\tb\t0.5\na\tc\t0.1\n").unwrap();
        let r = eval_similarity(&pairs, &model).unwrap();
        assert!(r > 0.9);
        assert!(parse_pairs("a\tb\t1.5\n").is_err());
        assert!(matches!(parse_pairs("a\tb\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn vector_lines_round_trip() {
        let v = EmbeddingVector::new(vec![0.123456789, -1.0, 3.0e-7]);
        let line = format_vector_line("new york", &v);
        let back = LookupEmbedder::from_tsv(&line).unwrap();
        assert_eq!(back.embed("new york").unwrap(), v);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(significant(0.123456789, 9), "0.123456789");
        assert_eq!(significant(-0.00123456789, 9), "-0.00123456789");
        assert_eq!(significant(1.0, 9), "1.00000000");
        assert_eq!(significant(9.9999999996, 9), "10.0000000");
        assert_eq!(significant(0.0, 9), "0");
    }
}
