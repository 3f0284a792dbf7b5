//! Training objectives: InfoNCE over in-batch and hard negatives, phrase
//! type cross-entropy through a softmax head, and their unweighted sum.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::corpus::PhraseTypeLabel;
use crate::encoder::{EmbeddingVector, Gradients, ModelState, PhraseForward};
use crate::error::{Error, Result};
use crate::numkernel::{self, Matrix};

/// Probability floor for cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

static CE_CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// How many times cross-entropy had to clamp a zero probability.
pub fn ce_clamp_events() -> u64 {
    CE_CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// Phrases behind a batch, needed to backpropagate into the encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPhrases {
    pub anchors: Vec<String>,
    pub positives: Vec<String>,
    pub hard_negatives: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub anchors: Vec<EmbeddingVector>,
    pub positives: Vec<EmbeddingVector>,
    pub hard_negatives: Vec<EmbeddingVector>,
    pub type_labels: Vec<PhraseTypeLabel>,
    pub temperature: f64,
    pub phrases: Option<BatchPhrases>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        let b = self.anchors.len();
        if b == 0 {
            return Err(Error::invalid("batch has no anchors"));
        }
        if self.positives.len() != b || self.type_labels.len() != b {
            return Err(Error::invalid(format!(
                "batch has {b} anchors but {} positives and {} labels",
                self.positives.len(),
                self.type_labels.len()
            )));
        }
        if b < 2 && self.hard_negatives.is_empty() {
            return Err(Error::invalid("a single-anchor batch needs at least one hard negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let dim = self.anchors[0].dim();
        for v in self.anchors.iter().chain(&self.positives).chain(&self.hard_negatives) {
            if v.dim() != dim {
                return Err(Error::Dimension {
                    context: "batch embedding",
                    left: (1, v.dim()),
                    right: (1, dim),
                });
            }
            if (v.norm() - 1.0).abs() > 1e-5 {
                return Err(Error::invalid(format!(
                    "batch embeddings must be unit norm, got norm {}",
                    v.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Contrastive loss and its gradients with respect to every embedding.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub d_anchors: Vec<Vec<f64>>,
    pub d_positives: Vec<Vec<f64>>,
    pub d_negatives: Vec<Vec<f64>>,
}

/// Mean InfoNCE over anchors. For anchor `i` the candidates are its own
/// positive, every other positive in the batch, and all shared hard
/// negatives; similarity is the dot product divided by `temperature`.
pub fn infonce(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    temperature: f64,
) -> Result<ContrastiveOutput> {
    let b = anchors.len();
    if b == 0 || positives.len() != b {
        return Err(Error::invalid("anchors and positives must be non-empty and equal length"));
    }
    if b < 2 && negatives.is_empty() {
        return Err(Error::invalid("no negatives: need two anchors or a hard negative"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let dim = anchors[0].len();
    let mut d_anchors = vec![vec![0.0; dim]; b];
    let mut d_positives = vec![vec![0.0; dim]; b];
    let mut d_negatives = vec![vec![0.0; dim]; negatives.len()];
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;

    for i in 0..b {
        // candidate 0..b are positives (i is the target), then hard negatives
        let candidates: Vec<&Vec<f64>> = positives.iter().chain(negatives).collect();
        let logits: Vec<f64> = candidates
            .iter()
            .map(|c| numkernel::dot(&anchors[i], c) / temperature)
            .collect();
        let probs = numkernel::softmax(&logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[i];

        for (j, (cand, &p)) in candidates.iter().zip(&probs).enumerate() {
            let coeff = (p - if j == i { 1.0 } else { 0.0 }) * inv_b / temperature;
            if coeff == 0.0 {
                continue;
            }
            for (d, &c) in d_anchors[i].iter_mut().zip(cand.iter()) {
                *d += coeff * c;
            }
            let target = if j < b {
                &mut d_positives[j]
            } else {
                &mut d_negatives[j - b]
            };
            for (d, &a) in target.iter_mut().zip(&anchors[i]) {
                *d += coeff * a;
            }
        }
    }
    Ok(ContrastiveOutput {
        loss: total * inv_b,
        d_anchors,
        d_positives,
        d_negatives,
    })
}

pub fn infonce_loss(batch: &TrainBatch) -> Result<ContrastiveOutput> {
    batch.validate()?;
    let conv = |vs: &[EmbeddingVector]| vs.iter().map(EmbeddingVector::to_f64).collect::<Vec<_>>();
    infonce(
        &conv(&batch.anchors),
        &conv(&batch.positives),
        &conv(&batch.hard_negatives),
        batch.temperature,
    )
}

/// Softmax over `(u, v)·W`.
pub fn type_logits(u: &[f64], v: &[f64], head: &Matrix) -> Result<Vec<f64>> {
    if u.len() + v.len() != head.rows() {
        return Err(Error::Dimension {
            context: "type head input",
            left: (1, u.len() + v.len()),
            right: head.shape(),
        });
    }
    if head.cols() != PhraseTypeLabel::COUNT {
        return Err(Error::Dimension {
            context: "type head classes",
            left: head.shape(),
            right: (head.rows(), PhraseTypeLabel::COUNT),
        });
    }
    let z: Vec<f64> = u.iter().chain(v).copied().collect();
    Ok(numkernel::softmax(&head.vec_mul(&z)?))
}

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: f64,
    /// Gradient with respect to the logits: `probs - one_hot(label)`.
    pub d_logits: Vec<f64>,
    pub clamped: bool,
}

pub fn cross_entropy_loss(probs: &[f64], label: usize) -> Result<CrossEntropyOutput> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("cross-entropy input is not a probability vector"));
    }
    let p = probs[label];
    let clamped = p < CE_CLAMP;
    if clamped {
        CE_CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        log::warn!("cross-entropy probability {p:e} clamped to {CE_CLAMP:e}");
    }
    let mut d_logits = probs.to_vec();
    d_logits[label] -= 1.0;
    Ok(CrossEntropyOutput {
        loss: -p.max(CE_CLAMP).ln(),
        d_logits,
        clamped,
    })
}

/// Which terms enter the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub type_loss: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { type_loss: true }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss_cl: f64,
    pub loss_ce: f64,
    pub total: f64,
    pub grads: Gradients,
}

fn forward_all(model: &ModelState, phrases: &[String]) -> Result<Vec<PhraseForward>> {
    phrases.par_iter().map(|p| model.forward(p)).collect()
}

/// `L = L_CL + L_CE` for a batch with phrases attached, with gradients for
/// every model parameter. Hard negatives contribute only to `L_CL`.
pub fn total_loss(batch: &TrainBatch, model: &ModelState, weights: LossWeights) -> Result<LossOutput> {
    let phrases = batch
        .phrases
        .as_ref()
        .ok_or_else(|| Error::invalid("total_loss needs the batch phrases"))?;
    let b = phrases.anchors.len();
    if phrases.positives.len() != b || batch.type_labels.len() != b {
        return Err(Error::invalid("anchors, positives and labels differ in length"));
    }
    let anchors = forward_all(model, &phrases.anchors)?;
    let positives = forward_all(model, &phrases.positives)?;
    let negatives = forward_all(model, &phrases.hard_negatives)?;

    let hs = |fs: &[PhraseForward]| fs.iter().map(|f| f.h.clone()).collect::<Vec<_>>();
    let cl = infonce(&hs(&anchors), &hs(&positives), &hs(&negatives), batch.temperature)?;

    let mut grads = Gradients::zeros(&model.config);
    let mut loss_ce = 0.0;
    let mut d_z_anchor: Vec<Option<Vec<f64>>> = vec![None; b];
    if weights.type_loss {
        let classes = PhraseTypeLabel::COUNT;
        let inv_b = 1.0 / b as f64;
        for (i, (fwd, label)) in anchors.iter().zip(&batch.type_labels).enumerate() {
            let probs = type_logits(&fwd.u, &fwd.v, &model.type_head)?;
            let ce = cross_entropy_loss(&probs, label.index())?;
            loss_ce += ce.loss * inv_b;
            let d_logits: Vec<f64> = ce.d_logits.iter().map(|g| g * inv_b).collect();
            for (r, &zr) in fwd.z.iter().enumerate() {
                if zr == 0.0 {
                    continue;
                }
                let row = &mut grads.type_head[r * classes..(r + 1) * classes];
                for (g, &d) in row.iter_mut().zip(&d_logits) {
                    *g += zr * d;
                }
            }
            d_z_anchor[i] = Some(model.type_head.mul_vec(&d_logits)?);
        }
    }

    for (i, fwd) in anchors.iter().enumerate() {
        model.backward(fwd, Some(&cl.d_anchors[i]), d_z_anchor[i].as_deref(), &mut grads)?;
    }
    for (fwd, d) in positives.iter().zip(&cl.d_positives) {
        model.backward(fwd, Some(d), None, &mut grads)?;
    }
    for (fwd, d) in negatives.iter().zip(&cl.d_negatives) {
        model.backward(fwd, Some(d), None, &mut grads)?;
    }

    Ok(LossOutput {
        loss_cl: cl.loss,
        loss_ce,
        total: cl.loss + loss_ce,
        grads,
    })
}

/// Build a batch from phrases, embedding them with `model`.
pub fn batch_from_phrases(
    model: &ModelState,
    phrases: BatchPhrases,
    type_labels: Vec<PhraseTypeLabel>,
    temperature: f64,
) -> Result<TrainBatch> {
    let embed = |ps: &[String]| -> Result<Vec<EmbeddingVector>> {
        ps.par_iter().map(|p| model.encode(p)).collect()
    };
    Ok(TrainBatch {
        anchors: embed(&phrases.anchors)?,
        positives: embed(&phrases.positives)?,
        hard_negatives: embed(&phrases.hard_negatives)?,
        type_labels,
        temperature,
        phrases: Some(phrases),
    })
}
