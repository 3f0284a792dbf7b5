//! The training loop: batch assembly, Adam with stepwise exponential decay,
//! periodic checkpoints, and a final average with the starting weights.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, AugmentLevel, AugmentResources, Augmenter};
use crate::corpus::Corpus;
use crate::encoder::{EncoderConfig, ModelState, OptimizerState, ParamId};
use crate::error::{Error, Result};
use crate::mining::HardNegativeIndex;
use crate::numkernel::adam_step;
use crate::objective::{batch_from_phrases, total_loss, BatchPhrases, LossWeights, TrainBatch};
use crate::rng::{self, streams};

/// Learning rate from which `lr_multiplier` scales.
pub const BASE_LEARNING_RATE: f64 = 3e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// From-scratch hashed tables need a far larger step than fine-tuning.
    pub lr_multiplier: f64,
    pub decay_rate: f64,
    pub decay_every: u64,
    pub temperature: f64,
    pub hard_negatives_per_batch: usize,
    pub seed: u64,
    pub weight_average_alpha: f64,
    pub checkpoint_every: u64,
    pub type_loss: bool,
    pub augment_levels: Vec<AugmentLevel>,
    pub synonym_threshold: f64,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 2,
            learning_rate: BASE_LEARNING_RATE,
            lr_multiplier: 1e-2 / BASE_LEARNING_RATE,
            decay_rate: 0.98,
            decay_every: 2000,
            temperature: 0.07,
            hard_negatives_per_batch: 2,
            seed: 0,
            weight_average_alpha: 0.5,
            checkpoint_every: 500,
            type_loss: true,
            augment_levels: AugmentLevel::ALL.to_vec(),
            synonym_threshold: 0.7,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The reference constants: batch 512, lr 3e-5 unscaled.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 512,
            lr_multiplier: 1.0,
            ..TrainConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, message: &str| {
            Err(Error::Validation {
                field,
                message: message.into(),
            })
        };
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("decay_rate", "must lie in (0, 1]");
        }
        if self.decay_every == 0 {
            return bad("decay_every", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.lr_multiplier > 0.0) {
            return bad("learning_rate", "rate and multiplier must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.weight_average_alpha) {
            return bad("weight_average_alpha", "must lie in [0, 1]");
        }
        if self.augment_levels.is_empty() {
            return bad("augment_levels", "at least one level is required");
        }
        self.encoder.validate()
    }

    pub fn initial_learning_rate(&self) -> f64 {
        self.learning_rate * self.lr_multiplier
    }

    pub fn augment_config(&self) -> AugmentConfig {
        let mut cfg = AugmentConfig::new(self.seed).with_levels(self.augment_levels.iter().copied());
        cfg.synonym_threshold = self.synonym_threshold;
        cfg
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            type_loss: self.type_loss,
        }
    }
}

/// `lr0 · decay_rate^⌊step / decay_every⌋`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_every) as i32;
    cfg.initial_learning_rate() * cfg.decay_rate.powi(k)
}

pub fn steps_per_epoch(corpus_len: usize, batch_size: usize) -> usize {
    corpus_len.div_ceil(batch_size)
}

/// `α·original + (1−α)·finetuned` element-wise; optimizer state dropped.
/// `α = 1` and `α = 0` return the respective input exactly, as do equal
/// inputs for any `α`.
pub fn average_weights(original: &ModelState, finetuned: &ModelState, alpha: f64) -> Result<ModelState> {
    if !original.same_architecture(finetuned) {
        return Err(Error::Mismatch("cannot average models with different configurations".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation {
            field: "alpha",
            message: format!("must lie in [0, 1], got {alpha}"),
        });
    }
    let mut out = finetuned.clone().strip_optimizer();
    for id in ParamId::ALL {
        let a = original.param(id).data();
        let b = finetuned.param(id).data();
        for ((o, &x), &y) in out.param_mut(id).data_mut().iter_mut().zip(a).zip(b) {
            *o = if x.to_bits() == y.to_bits() || alpha == 1.0 {
                x
            } else if alpha == 0.0 {
                y
            } else {
                (alpha * x as f64 + (1.0 - alpha) * y as f64) as f32
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss_cl: f64,
    pub loss_ce: f64,
    pub loss_total: f64,
}

impl TrainLogEntry {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("log entry serializes")
    }
}

pub fn log_to_jsonl(log: &[TrainLogEntry]) -> String {
    log.iter().map(|e| e.to_jsonl() + "\n").collect()
}

/// Draws batches for one run. Everything depends only on the seed, the
/// epoch and the step, never on how many batches were drawn before.
pub struct BatchAssembler<'a> {
    corpus: &'a Corpus,
    hard_negatives: &'a HardNegativeIndex,
    augmenter: Augmenter,
    cfg: &'a TrainConfig,
}

impl<'a> BatchAssembler<'a> {
    pub fn new(
        corpus: &'a Corpus,
        hard_negatives: &'a HardNegativeIndex,
        resources: AugmentResources,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.len() < cfg.batch_size {
            return Err(Error::invalid(format!(
                "corpus has {} phrases, fewer than the batch size {}",
                corpus.len(),
                cfg.batch_size
            )));
        }
        let augmenter = Augmenter::new(cfg.augment_config(), resources)?;
        Ok(BatchAssembler {
            corpus,
            hard_negatives,
            augmenter,
            cfg,
        })
    }

    /// Shuffled corpus order for `epoch`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        order.shuffle(&mut rng::indexed(self.cfg.seed, streams::SHUFFLE, epoch as u64));
        order
    }

    /// Corpus indices of batch `i` within an epoch order. The last batch is
    /// topped up from the start of the order.
    pub fn batch_indices(&self, order: &[usize], i: usize) -> Vec<usize> {
        let b = self.cfg.batch_size;
        (0..b).map(|j| order[(i * b + j) % order.len()]).collect()
    }

    pub fn assemble(&self, indices: &[usize], step: u64, model: &ModelState) -> Result<TrainBatch> {
        let records = self.corpus.records();
        let anchors: Vec<String> = indices.iter().map(|&i| records[i].surface.clone()).collect();
        let b = anchors.len() as u64;
        let positives = anchors
            .iter()
            .enumerate()
            .map(|(j, a)| self.augmenter.augment_at(a, step * b + j as u64))
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| records[i].label()).collect();
        let hard_negatives = self.hard_negatives_for(&anchors, step);
        let phrases = BatchPhrases {
            anchors,
            positives,
            hard_negatives,
        };
        batch_from_phrases(model, phrases, labels, self.cfg.temperature)
    }

    fn hard_negatives_for(&self, anchors: &[String], step: u64) -> Vec<String> {
        let k = self.cfg.hard_negatives_per_batch;
        if k == 0 {
            return Vec::new();
        }
        let mut r = rng::indexed(self.cfg.seed, streams::NEGATIVES, step);
        let in_batch: BTreeSet<&str> = anchors.iter().map(String::as_str).collect();
        let pool: Vec<&str> = anchors
            .iter()
            .flat_map(|a| self.hard_negatives.get(a))
            .map(|(n, _)| n.as_str())
            .filter(|n| !in_batch.contains(n))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !pool.is_empty() {
            let take = k.min(pool.len());
            return sample(&mut r, pool.len(), take)
                .into_iter()
                .map(|i| pool[i].to_string())
                .collect();
        }
        let outside: Vec<&str> = self
            .corpus
            .surfaces()
            .filter(|s| !in_batch.contains(s))
            .collect();
        let take = k.min(outside.len());
        sample(&mut r, outside.len(), take)
            .into_iter()
            .map(|i| outside[i].to_string())
            .collect()
    }
}

/// Where optional artifacts go during a run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Periodic checkpoints, written as `step-<n>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Destination for the JSON dump of a batch whose loss is not finite.
    pub dump_dir: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialization.
    pub initial: Option<ModelState>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Weight-averaged result.
    pub model: ModelState,
    /// Weights after the last step, with optimizer state.
    pub finetuned: ModelState,
    pub log: Vec<TrainLogEntry>,
}

#[derive(Serialize)]
struct BatchDump<'a> {
    step: u64,
    anchors: &'a [String],
    positives: &'a [String],
    hard_negatives: &'a [String],
    type_labels: Vec<usize>,
    loss_cl: f64,
    loss_ce: f64,
}

pub fn train(
    corpus: &Corpus,
    hard_negatives: &HardNegativeIndex,
    resources: AugmentResources,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let initial = match &opts.initial {
        Some(m) => {
            if m.config != cfg.encoder {
                return Err(Error::Mismatch("initial checkpoint does not match the encoder config".into()));
            }
            m.clone().strip_optimizer()
        }
        None => ModelState::init(cfg.encoder.clone(), cfg.seed)?,
    };
    let mut model = initial.clone();
    let mut log = Vec::new();

    if cfg.epochs > 0 {
        let assembler = BatchAssembler::new(corpus, hard_negatives, resources, cfg)?;
        let mut optimizer = OptimizerState::for_model(&model);
        let per_epoch = steps_per_epoch(corpus.len(), cfg.batch_size);
        let weights = cfg.loss_weights();
        let mut step = 0u64;
        for epoch in 0..cfg.epochs {
            let order = assembler.epoch_order(epoch);
            for i in 0..per_epoch {
                let indices = assembler.batch_indices(&order, i);
                let batch = assembler.assemble(&indices, step, &model)?;
                let out = total_loss(&batch, &model, weights)?;
                if !out.total.is_finite() || !out.grads.is_finite() {
                    let dump = dump_batch(opts, step, &batch, out.loss_cl, out.loss_ce)?;
                    return Err(Error::Numeric {
                        step,
                        message: format!("loss {} (cl {}, ce {})", out.total, out.loss_cl, out.loss_ce),
                        dump,
                    });
                }
                let lr = lr_at(step, cfg);
                for id in ParamId::ALL {
                    let grad: Vec<f32> = out.grads.dense(id, &model).iter().map(|&g| g as f32).collect();
                    adam_step(model.param_mut(id).data_mut(), &grad, optimizer.get_mut(id), lr)?;
                }
                if let Some(id) = ParamId::ALL.into_iter().find(|&id| model.param(id).data().iter().any(|x| !x.is_finite())) {
                    let dump = dump_batch(opts, step, &batch, out.loss_cl, out.loss_ce)?;
                    return Err(Error::Numeric {
                        step,
                        message: format!("{id:?} became non-finite after the update (lr {lr:e})"),
                        dump,
                    });
                }
                log.push(TrainLogEntry {
                    step,
                    lr,
                    loss_cl: out.loss_cl,
                    loss_ce: out.loss_ce,
                    loss_total: out.total,
                });
                debug!("step {step} lr {lr:.3e} loss {:.5}", out.total);
                step += 1;
                if let Some(dir) = &opts.checkpoint_dir {
                    if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                        let mut snapshot = model.clone();
                        snapshot.optimizer = Some(optimizer.clone());
                        snapshot.save(dir.join(format!("step-{step}.ckpt")))?;
                    }
                }
            }
            info!("epoch {} done after {step} steps", epoch + 1);
        }
        model.optimizer = Some(optimizer);
    }

    let averaged = average_weights(&initial, &model, cfg.weight_average_alpha)?;
    Ok(TrainOutput {
        model: averaged,
        finetuned: model,
        log,
    })
}

fn dump_batch(opts: &TrainOptions, step: u64, batch: &TrainBatch, loss_cl: f64, loss_ce: f64) -> Result<Option<PathBuf>> {
    let (Some(dir), Some(phrases)) = (&opts.dump_dir, &batch.phrases) else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir)?;
    let dump = BatchDump {
        step,
        anchors: &phrases.anchors,
        positives: &phrases.positives,
        hard_negatives: &phrases.hard_negatives,
        type_labels: batch.type_labels.iter().map(|l| l.index()).collect(),
        loss_cl,
        loss_ce,
    };
    let path = dir.join(format!("nan-batch-{step}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&dump)?)?;
    Ok(Some(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityType, LexicalTag, PhraseRecord};
    use crate::encoder::EncoderConfig;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            token_dim: 6,
            char_dim: 6,
            char_ngram_sizes: vec![3],
            num_token_buckets: 64,
            num_char_buckets: 128,
            char_hidden_dim: 6,
        }
    }

    fn toy_corpus(n: usize) -> Corpus {
        Corpus::from_records((0..n).map(|i| {
            PhraseRecord::new(
                format!("phrase number {i}"),
                LexicalTag::NP,
                EntityType::ALL[i % 19],
                1 + i as u64,
            )
            .unwrap()
        }))
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 1,
            encoder: tiny_encoder(),
            augment_levels: vec![AugmentLevel::Character],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_at(0, &cfg), 3e-5);
        assert_eq!(lr_at(1999, &cfg), 3e-5);
        assert!((lr_at(2000, &cfg) - 2.94e-5).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for s in (0..100_000).step_by(997) {
            let lr = lr_at(s, &cfg);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = TrainConfig::paper();
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = TrainConfig::from_json(r#"{"batch_size": 8, "seed": 3}"#).unwrap();
        assert_eq!(partial.batch_size, 8);
        assert_eq!(partial.temperature, 0.07);
        assert!(TrainConfig::from_json(r#"{"batch_size": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"decay_rate": 1.5}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"weight_average_alpha": -0.1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn averaging_special_cases() {
        let a = ModelState::init(tiny_encoder(), 1).unwrap();
        let b = ModelState::init(tiny_encoder(), 2).unwrap();
        assert_eq!(average_weights(&a, &b, 1.0).unwrap(), a);
        assert_eq!(average_weights(&a, &b, 0.0).unwrap(), b);
        assert_eq!(average_weights(&a, &a, 0.3).unwrap(), a);
        let ab = average_weights(&a, &b, 0.25).unwrap();
        let ba = average_weights(&b, &a, 0.75).unwrap();
        assert_eq!(ab, ba);
        let mut other = tiny_encoder();
        other.token_dim = 7;
        assert!(average_weights(&a, &ModelState::init(other, 1).unwrap(), 0.5).is_err());
        assert!(average_weights(&a, &b, 1.5).is_err());
    }

    #[test]
    fn batches_are_deterministic_and_well_formed() {
        let corpus = toy_corpus(10);
        let index = HardNegativeIndex::default();
        let cfg = toy_config();
        let asm = BatchAssembler::new(&corpus, &index, AugmentResources::default(), &cfg).unwrap();
        let model = ModelState::init(tiny_encoder(), 0).unwrap();
        let order = asm.epoch_order(0);
        assert_eq!(order, asm.epoch_order(0));
        assert_ne!(order, asm.epoch_order(1));
        // 10 phrases, batch 4: last batch wraps to the start of the order
        let last = asm.batch_indices(&order, 2);
        assert_eq!(last, vec![order[8], order[9], order[0], order[1]]);
        let b1 = asm.assemble(&last, 2, &model).unwrap();
        let b2 = asm.assemble(&last, 2, &model).unwrap();
        assert_eq!(b1.phrases, b2.phrases);
        assert_eq!(b1.hard_negatives.len(), 2);
        assert!(b1.type_labels.iter().all(|l| l.index() < 95));
        let anchors = &b1.phrases.as_ref().unwrap().anchors;
        for n in &b1.phrases.as_ref().unwrap().hard_negatives {
            assert!(!anchors.contains(n));
        }

        let no_negs = TrainConfig {
            hard_negatives_per_batch: 0,
            ..toy_config()
        };
        let asm0 = BatchAssembler::new(&corpus, &index, AugmentResources::default(), &no_negs).unwrap();
        assert!(asm0.assemble(&last, 0, &model).unwrap().hard_negatives.is_empty());

        let small = toy_corpus(3);
        assert!(BatchAssembler::new(&small, &index, AugmentResources::default(), &cfg).is_err());
    }

    #[test]
    fn negatives_come_from_the_index() {
        let corpus = toy_corpus(8);
        let mut entries = std::collections::BTreeMap::new();
        for r in corpus.records() {
            entries.insert(r.surface.clone(), vec![("outside one".to_string(), 0.1), ("outside two".to_string(), 0.2)]);
        }
        let index = HardNegativeIndex::from_entries(entries);
        let cfg = toy_config();
        let asm = BatchAssembler::new(&corpus, &index, AugmentResources::default(), &cfg).unwrap();
        let model = ModelState::init(tiny_encoder(), 0).unwrap();
        let batch = asm.assemble(&[0, 1, 2, 3], 5, &model).unwrap();
        let mut negs = batch.phrases.unwrap().hard_negatives;
        negs.sort();
        assert_eq!(negs, vec!["outside one", "outside two"]);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = toy_corpus(8);
        let cfg = TrainConfig {
            epochs: 0,
            ..toy_config()
        };
        let out = train(&corpus, &HardNegativeIndex::default(), AugmentResources::default(), &cfg, &TrainOptions::default())
            .unwrap();
        assert_eq!(out.model, ModelState::init(tiny_encoder(), cfg.seed).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn runs_are_bit_identical() {
        let corpus = toy_corpus(12);
        let cfg = TrainConfig {
            epochs: 2,
            ..toy_config()
        };
        let run = || {
            train(&corpus, &HardNegativeIndex::default(), AugmentResources::default(), &cfg, &TrainOptions::default())
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.len(), 6);
        assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
        assert_eq!(log_to_jsonl(&a.log), log_to_jsonl(&b.log));
        assert!(a.finetuned.optimizer.is_some());
        assert!(a.model.optimizer.is_none());
        assert_ne!(a.model, a.finetuned.clone().strip_optimizer());
    }

    #[test]
    fn checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = toy_corpus(8);
        let cfg = TrainConfig {
            epochs: 2,
            checkpoint_every: 2,
            ..toy_config()
        };
        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        };
        train(&corpus, &HardNegativeIndex::default(), AugmentResources::default(), &cfg, &opts).unwrap();
        let m = ModelState::load(dir.path().join("step-4.ckpt")).unwrap();
        assert_eq!(m.optimizer.unwrap().moments[0].t, 4);
        assert!(dir.path().join("step-2.ckpt").exists());
    }
}
