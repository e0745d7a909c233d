//! Symmetric soft-label contrastive loss and its analytic gradient.
//!
//! `i2t` is the mean over image rows of the cross-entropy between the soft
//! targets and `softmax(logits_i2t[i])` over all `B + H` text candidates;
//! `t2i` is the same over the `B x B` text-to-image logits (hard negatives
//! are text-only). The total is their average. Gradients flow through the
//! logits only: `d/dlogits = (softmax - T) / (2B)`.

use crate::batch::Batch;
use crate::clinical::ClinicalKernel;
use crate::encoders::{cosine_logits, Mlp, MlpTrace, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::softlabel::{batch_similarities, check_row_stochastic, fuse_targets, SoftTargetMatrix};

const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub i2t: f64,
    pub t2i: f64,
    /// `d total / d logits_i2t`.
    pub d_i2t: Mat,
    /// `d total / d logits_t2i`.
    pub d_t2i: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub i2t: f64,
    pub t2i: f64,
    /// Flat gradient in [`ModelParams::flatten`] order.
    pub grad: Vec<f64>,
}

/// Frozen targets for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub i2t: SoftTargetMatrix,
    pub t2i: Mat,
}

/// Mean soft cross-entropy of rows; also returns `(softmax - T) * scale`.
fn soft_cross_entropy(logits: &Mat, targets: &Mat, scale: f64) -> (f64, Mat) {
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for i in 0..logits.rows {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let t = targets.row(i);
        // -sum_j T_j (l_j - lse), with sum_j T_j = 1.
        let mut ce = 0.0;
        for (l, tj) in row.iter().zip(t) {
            if *tj != 0.0 {
                ce -= tj * (l - lse);
            }
        }
        total += ce;
        for (j, (l, tj)) in row.iter().zip(t).enumerate() {
            grad[(i, j)] = ((l - lse).exp() - tj) * scale;
        }
    }
    (total / logits.rows as f64, grad)
}

pub fn soft_contrastive_loss(
    logits_i2t: &Mat,
    logits_t2i: &Mat,
    t_i2t: &SoftTargetMatrix,
    t_t2i: &Mat,
) -> Result<LossTerms> {
    let b = logits_i2t.rows;
    if b == 0 {
        return Err(Error::Contract("loss needs at least one row".into()));
    }
    if (t_i2t.t.rows, t_i2t.t.cols) != (logits_i2t.rows, logits_i2t.cols) {
        return Err(Error::shape("i2t targets", logits_i2t.cols, t_i2t.t.cols));
    }
    if (logits_t2i.rows, logits_t2i.cols) != (b, b) || (t_t2i.rows, t_t2i.cols) != (b, b) {
        return Err(Error::shape("t2i logits/targets", b, logits_t2i.cols));
    }
    t_i2t.validate(STOCHASTIC_TOL)?;
    check_row_stochastic(t_t2i, STOCHASTIC_TOL)?;
    let scale = 0.5 / b as f64;
    let (i2t, d_i2t) = soft_cross_entropy(logits_i2t, &t_i2t.t, scale);
    let (t2i, d_t2i) = soft_cross_entropy(logits_t2i, t_t2i, scale);
    Ok(LossTerms {
        total: 0.5 * (i2t + t2i),
        i2t,
        t2i,
        d_i2t,
        d_t2i,
    })
}

/// Build dynamic targets from the current encoders. The result is a constant
/// for the rest of the step.
pub fn compute_targets(params: &ModelParams, batch: &Batch, kernel: ClinicalKernel) -> Result<Targets> {
    let sims = batch_similarities(batch, params, kernel)?;
    let i2t = fuse_targets(&sims, &params.hyper, batch.num_hard_negatives())?;
    let t2i = i2t.text_to_image();
    Ok(Targets { i2t, t2i })
}

struct Forward {
    image: Vec<MlpTrace>,
    text: Vec<MlpTrace>,
    terms: LossTerms,
}

fn forward(params: &ModelParams, batch: &Batch, targets: &Targets) -> Result<Forward> {
    let image: Vec<MlpTrace> = batch
        .items
        .iter()
        .map(|it| params.image.forward(it.image.as_slice()))
        .collect::<Result<_>>()?;
    let text: Vec<MlpTrace> = batch
        .text_inputs()
        .map(|x| params.text.forward(x))
        .collect::<Result<_>>()?;
    let u = Mat::from_rows(&image.iter().map(|t| t.output.clone()).collect::<Vec<_>>());
    let v = Mat::from_rows(&text.iter().map(|t| t.output.clone()).collect::<Vec<_>>());
    let b = batch.len();
    let v_pos = Mat::from_rows(&text[..b].iter().map(|t| t.output.clone()).collect::<Vec<_>>());
    let logits_i2t = cosine_logits(&u, &v, params.tau)?;
    let logits_t2i = cosine_logits(&v_pos, &u, params.tau)?;
    let terms = soft_contrastive_loss(&logits_i2t, &logits_t2i, &targets.i2t, &targets.t2i)?;
    Ok(Forward { image, text, terms })
}

/// Loss value only, targets held fixed.
pub fn loss_value(params: &ModelParams, batch: &Batch, targets: &Targets) -> Result<f64> {
    Ok(forward(params, batch, targets)?.terms.total)
}

/// Loss and analytic gradient with targets held fixed.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch, targets: &Targets) -> Result<LossReport> {
    let fwd = forward(params, batch, targets)?;
    let b = batch.len();
    let k = fwd.text.len();
    let d = params.embed_dim();
    let inv_tau = 1.0 / params.tau;
    let mut d_u = vec![vec![0.0; d]; b];
    let mut d_v = vec![vec![0.0; d]; k];
    for i in 0..b {
        for j in 0..k {
            let g = fwd.terms.d_i2t[(i, j)] * inv_tau;
            if g == 0.0 {
                continue;
            }
            let (ui, vj) = (&fwd.image[i].output, &fwd.text[j].output);
            d_u[i].iter_mut().zip(vj).for_each(|(a, x)| *a += g * x);
            d_v[j].iter_mut().zip(ui).for_each(|(a, x)| *a += g * x);
        }
    }
    for t in 0..b {
        for i in 0..b {
            let g = fwd.terms.d_t2i[(t, i)] * inv_tau;
            if g == 0.0 {
                continue;
            }
            let (vt, ui) = (&fwd.text[t].output, &fwd.image[i].output);
            d_v[t].iter_mut().zip(ui).for_each(|(a, x)| *a += g * x);
            d_u[i].iter_mut().zip(vt).for_each(|(a, x)| *a += g * x);
        }
    }
    let mut g_img: Mlp = params.image.zeros_like();
    let mut g_txt: Mlp = params.text.zeros_like();
    for (trace, du) in fwd.image.iter().zip(&d_u) {
        params.image.backward(trace, du, &mut g_img);
    }
    for (trace, dv) in fwd.text.iter().zip(&d_v) {
        params.text.backward(trace, dv, &mut g_txt);
    }
    let mut grad = Vec::with_capacity(params.num_params());
    for m in [&g_img, &g_txt] {
        grad.extend_from_slice(&m.w1.data);
        grad.extend_from_slice(&m.b1);
        grad.extend_from_slice(&m.w2.data);
        grad.extend_from_slice(&m.b2);
    }
    grad.resize(params.num_params(), 0.0);
    Ok(LossReport {
        total: fwd.terms.total,
        i2t: fwd.terms.i2t,
        t2i: fwd.terms.t2i,
        grad,
    })
}
