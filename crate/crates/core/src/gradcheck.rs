//! Finite-difference verification of the analytic model gradients.
//!
//! Parameters are `f32`, so before probing, the model is snapped onto a
//! grid of `2^-12`; with a probe step of `2^-16` every `x ± h` is then
//! exactly representable and the central difference divides by the step
//! that was actually applied.

use rand::seq::index::sample;
use rand::Rng;

use crate::encoder::{ModelState, ParamId};
use crate::error::Result;
use crate::numkernel::{finite_diff_grad, relative_error};
use crate::objective::{total_loss, LossWeights, TrainBatch};

pub const GRID: f64 = 1.0 / 4096.0;
pub const STEP: f64 = 1.0 / 65536.0;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-3;

pub fn snap_to_grid(model: &mut ModelState) {
    for id in ParamId::ALL {
        for x in model.param_mut(id).data_mut() {
            *x = ((*x as f64 / GRID).round() * GRID) as f32;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

/// Which scalar of the loss output to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Total,
    Contrastive,
}

/// Compare analytic gradients of `total_loss` against central differences.
/// Every coordinate with a nonzero analytic gradient is probed, plus up to
/// `zero_probes` coordinates per parameter whose analytic gradient is zero.
/// `model` must already be snapped with [`snap_to_grid`].
pub fn check_total_loss<R: Rng + ?Sized>(
    batch: &TrainBatch,
    model: &ModelState,
    weights: LossWeights,
    target: Target,
    zero_probes: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let out = total_loss(batch, model, weights)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates_checked: 0,
        worst: None,
    };
    let mut probe = model.clone();
    for id in ParamId::ALL {
        let analytic = out.grads.dense(id, model);
        let zeros: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] == 0.0).collect();
        let mut coords: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
        let take = zero_probes.min(zeros.len());
        coords.extend(sample(rng, zeros.len(), take).into_iter().map(|j| zeros[j]));

        for i in coords {
            let original = probe.param(id).data()[i];
            let f = |x: &[f64]| {
                let mut m = probe.clone();
                m.param_mut(id).data_mut()[i] = x[0] as f32;
                let o = total_loss(batch, &m, weights).expect("loss evaluates near the probe point");
                match target {
                    Target::Total => o.total,
                    Target::Contrastive => o.loss_cl,
                }
            };
            let numeric = finite_diff_grad(f, &[original as f64], STEP)?[0];
            let err = relative_error(analytic[i], numeric, FLOOR);
            report.coordinates_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((id, i, analytic[i], numeric));
            }
            probe.param_mut(id).data_mut()[i] = original;
        }
    }
    Ok(report)
}
