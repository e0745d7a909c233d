//! Central finite-difference check of the analytic loss gradient.
//!
//! Targets are computed once at the base point and frozen, matching the
//! stop-gradient treatment in training.

use rand::seq::index::sample;

use crate::batch::Batch;
use crate::clinical::ClinicalKernel;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::loss::{compute_targets, loss_and_grad, loss_value, Targets};
use crate::rng;

/// Below this many trainable parameters every coordinate is checked.
pub const EXHAUSTIVE_LIMIT: usize = 4096;
pub const MIN_SAMPLED: usize = 200;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate, if any were checked.
    pub worst: Option<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Coordinates to probe: all trainable ones for small nets, otherwise a
/// seeded sample of `max(MIN_SAMPLED, 512)`.
pub fn check_coordinates(params: &ModelParams, seed: u64) -> Vec<usize> {
    let n = params.trainable_len();
    if n <= EXHAUSTIVE_LIMIT {
        return (0..n).collect();
    }
    let k = MIN_SAMPLED.max(512).min(n);
    let mut idx = sample(&mut rng::stream(seed, 0x6C4E), n, k).into_vec();
    idx.sort_unstable();
    idx
}

pub fn gradient_check(params: &ModelParams, batch: &Batch, epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let coords = check_coordinates(params, seed);
    if coords.is_empty() {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        });
    }
    let targets = compute_targets(params, batch, ClinicalKernel::Cosine)?;
    let analytic = loss_and_grad(params, batch, &targets)?.grad;
    check_against(params, batch, &targets, &analytic, epsilon, &coords)
}

/// Compare a supplied gradient against central differences on `coords`.
pub fn check_against(
    params: &ModelParams,
    batch: &Batch,
    targets: &Targets,
    analytic: &[f64],
    epsilon: f64,
    coords: &[usize],
) -> Result<GradCheckReport> {
    let base = params.flatten();
    if analytic.len() != base.len() {
        return Err(Error::shape("analytic gradient", base.len(), analytic.len()));
    }
    let mut probe = params.clone();
    let mut flat = base.clone();
    let eval = |flat: &[f64], probe: &mut ModelParams| -> Result<f64> {
        probe.assign_flat(flat)?;
        loss_value(probe, batch, targets)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &c in coords {
        flat[c] = base[c] + epsilon;
        let plus = eval(&flat, &mut probe)?;
        flat[c] = base[c] - epsilon;
        let minus = eval(&flat, &mut probe)?;
        flat[c] = base[c];
        let numeric = (plus - minus) / (2.0 * epsilon);
        let g = analytic[c];
        if !numeric.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient coordinate {c}")));
        }
        let rel = (numeric - g).abs() / (g.abs() + 1e-8);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(c);
        }
        report.checked += 1;
    }
    Ok(report)
}
