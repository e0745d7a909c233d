//! Image and text towers projecting into a shared unit-norm embedding space.
//!
//! Each tower is `x -> tanh(W1 x + b1) -> tanh(W2 h + b2) -> z / |z|`. The
//! text tower's input is the mean of hashed token embeddings over the first
//! [`MAX_TOKENS`] tokens; those embeddings are fixed, only the MLPs learn.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{token_embed, GcnDims, GcnParams};
use crate::linalg::{dot, norm, Mat};
use crate::reports::{ImageFeature, Report};
use crate::rng;

pub const MAX_TOKENS: usize = 300;

/// Soft-label thresholds and fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBlock {
    pub tau_t: f64,
    pub tau_c: f64,
    pub tau_g: f64,
    pub w_t: f64,
    pub w_c: f64,
    pub w_g: f64,
}

impl Default for HyperBlock {
    fn default() -> Self {
        Self {
            tau_t: 0.9,
            tau_c: 0.8,
            tau_g: 0.7,
            w_t: 0.167,
            w_c: 0.167,
            w_g: 0.167,
        }
    }
}

impl HyperBlock {
    /// Thresholds above any attainable cosine: targets collapse to one-hot.
    pub fn hard_labels() -> Self {
        Self {
            tau_t: 1.0 + 1e-6,
            tau_c: 1.0 + 1e-6,
            tau_g: 1.0 + 1e-6,
            ..Self::default()
        }
    }

    pub fn is_hard(&self) -> bool {
        self.tau_t > 1.0 && self.tau_c > 1.0 && self.tau_g > 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub image: usize,
    pub token: usize,
    pub hidden: usize,
    pub embed: usize,
    pub graph_token: usize,
    pub graph_hidden: usize,
}

impl ModelDims {
    pub const DESK: ModelDims = ModelDims {
        image: 32,
        token: 16,
        hidden: 16,
        embed: 8,
        graph_token: 16,
        graph_hidden: 8,
    };

    pub const PAPER: ModelDims = ModelDims {
        image: 32,
        token: 768,
        hidden: 512,
        embed: 512,
        graph_token: 768,
        graph_hidden: 256,
    };

    pub fn gcn(&self) -> GcnDims {
        GcnDims {
            token_dim: self.graph_token,
            hidden: self.graph_hidden,
            out: self.embed,
        }
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::DESK
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `hidden x input`.
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// `embed x hidden`.
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// Intermediate values of one tower forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub pre_norm: Vec<f64>,
    pub norm: f64,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, embed: usize, rng: &mut rng::Rng) -> Self {
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        // Biases start at zero: text inputs are short means of unit token
        // vectors, and a random offset would swamp them.
        let w1 = Mat::uniform(hidden, input, a1, rng);
        let w2 = Mat::uniform(embed, hidden, a2, rng);
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; embed],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Mat::zeros(self.w1.rows, self.w1.cols),
            b1: vec![0.0; self.b1.len()],
            w2: Mat::zeros(self.w2.rows, self.w2.cols),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols
    }

    pub fn num_params(&self) -> usize {
        self.w1.data.len() + self.b1.len() + self.w2.data.len() + self.b2.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<MlpTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("tower input", self.input_dim(), x.len()));
        }
        let mut hidden = self.w1.mul_vec(x);
        hidden
            .iter_mut()
            .zip(&self.b1)
            .for_each(|(h, b)| *h = (*h + b).tanh());
        let mut pre_norm = self.w2.mul_vec(&hidden);
        pre_norm
            .iter_mut()
            .zip(&self.b2)
            .for_each(|(z, b)| *z = (*z + b).tanh());
        let n = norm(&pre_norm);
        let output = if n > 0.0 {
            pre_norm.iter().map(|z| z / n).collect()
        } else {
            log::warn!("zero embedding before normalization; falling back to e1");
            let mut e = vec![0.0; pre_norm.len()];
            e[0] = 1.0;
            e
        };
        Ok(MlpTrace {
            input: x.to_vec(),
            hidden,
            pre_norm,
            norm: n,
            output,
        })
    }

    /// Accumulate parameter gradients given `d loss / d output`.
    pub fn backward(&self, t: &MlpTrace, d_out: &[f64], grad: &mut Mlp) {
        if t.norm == 0.0 {
            return;
        }
        // Through u = z / |z|.
        let proj = dot(&t.output, d_out);
        let d_z: Vec<f64> = d_out
            .iter()
            .zip(&t.output)
            .map(|(g, u)| (g - u * proj) / t.norm)
            .collect();
        let d_a2: Vec<f64> = d_z
            .iter()
            .zip(&t.pre_norm)
            .map(|(g, z)| g * (1.0 - z * z))
            .collect();
        grad.w2.add_outer(&d_a2, &t.hidden);
        grad.b2.iter_mut().zip(&d_a2).for_each(|(g, d)| *g += d);
        let d_h = self.w2.tmul_vec(&d_a2);
        let d_a1: Vec<f64> = d_h
            .iter()
            .zip(&t.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        grad.w1.add_outer(&d_a1, &t.input);
        grad.b1.iter_mut().zip(&d_a1).for_each(|(g, d)| *g += d);
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1.data);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2.data);
        out.extend_from_slice(&self.b2);
    }

    fn assign_from(&mut self, src: &mut &[f64]) {
        for dst in [
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ] {
            let (head, tail) = src.split_at(dst.len());
            dst.copy_from_slice(head);
            *src = tail;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub image: Mlp,
    pub text: Mlp,
    pub gcn: GcnParams,
    pub tau: f64,
    pub hyper: HyperBlock,
}

impl ModelParams {
    pub fn init(dims: ModelDims, tau: f64, hyper: HyperBlock, seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidTemperature(tau));
        }
        let mut r = rng::stream(seed, 0x1417);
        Ok(Self {
            image: Mlp::init(dims.image, dims.hidden, dims.embed, &mut r),
            text: Mlp::init(dims.token, dims.hidden, dims.embed, &mut r),
            gcn: GcnParams::init(dims.gcn(), rng::derive(seed, 0x6C17)),
            tau,
            hyper,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.image.w2.rows
    }

    pub fn token_dim(&self) -> usize {
        self.text.input_dim()
    }

    pub fn graph_token_dim(&self) -> usize {
        self.gcn.w1.rows - crate::graph::NodeClass::COUNT
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            image: self.image.input_dim(),
            token: self.token_dim(),
            hidden: self.image.w1.rows,
            embed: self.embed_dim(),
            graph_token: self.graph_token_dim(),
            graph_hidden: self.gcn.w1.cols,
        }
    }

    pub fn num_params(&self) -> usize {
        self.trainable_len() + self.gcn.w1.data.len() + self.gcn.w2.data.len()
    }

    /// Image and text towers come first in the flat layout; the graph encoder
    /// is frozen (targets are stop-gradient, so no loss term reaches it).
    pub fn trainable_len(&self) -> usize {
        self.image.num_params() + self.text.num_params()
    }

    pub fn trainable_range(&self) -> Range<usize> {
        0..self.trainable_len()
    }

    /// Flat layout: image (w1, b1, w2, b2), text (w1, b1, w2, b2), gcn (w1, w2).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.image.flatten_into(&mut out);
        self.text.flatten_into(&mut out);
        out.extend_from_slice(&self.gcn.w1.data);
        out.extend_from_slice(&self.gcn.w2.data);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameters", self.num_params(), flat.len()));
        }
        let mut src = flat;
        self.image.assign_from(&mut src);
        self.text.assign_from(&mut src);
        let (w1, w2) = src.split_at(self.gcn.w1.data.len());
        self.gcn.w1.data.copy_from_slice(w1);
        self.gcn.w2.data.copy_from_slice(w2);
        Ok(())
    }
}

/// Mean of hashed token embeddings over the first [`MAX_TOKENS`] tokens.
///
/// Summation runs over distinct tokens in sorted order so the result is
/// bit-identical under any sentence permutation.
pub fn text_features(report: &Report, token_dim: usize) -> Vec<f64> {
    let tokens = report.tokens();
    let kept = &tokens[..tokens.len().min(MAX_TOKENS)];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in kept {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut x = vec![0.0; token_dim];
    if kept.is_empty() {
        return x;
    }
    for (tok, c) in counts {
        let e = token_embed(tok, token_dim);
        x.iter_mut().zip(&e).for_each(|(a, b)| *a += c as f64 * b);
    }
    let n = kept.len() as f64;
    x.iter_mut().for_each(|a| *a /= n);
    x
}

pub fn encode_image(x: &ImageFeature, p: &ModelParams) -> Result<Vec<f64>> {
    Ok(p.image.forward(x.as_slice())?.output)
}

pub fn encode_text(r: &Report, p: &ModelParams) -> Result<Vec<f64>> {
    Ok(p.text.forward(&text_features(r, p.token_dim()))?.output)
}

/// `logits[i][j] = <u_i, v_j> / tau` for unit-norm rows.
pub fn cosine_logits(u: &Mat, v: &Mat, tau: f64) -> Result<Mat> {
    if !(tau > 0.0) {
        return Err(Error::InvalidTemperature(tau));
    }
    if u.cols != v.cols {
        return Err(Error::shape("cosine logits", u.cols, v.cols));
    }
    let mut out = Mat::zeros(u.rows, v.rows);
    for i in 0..u.rows {
        for j in 0..v.rows {
            out[(i, j)] = dot(u.row(i), v.row(j)) / tau;
        }
    }
    Ok(out)
}

/// Anything that maps images and reports into a shared space.
pub trait Embedder: Sync {
    fn embed_image(&self, x: &ImageFeature) -> Result<Vec<f64>>;
    fn embed_text(&self, r: &Report) -> Result<Vec<f64>>;
}

impl Embedder for ModelParams {
    fn embed_image(&self, x: &ImageFeature) -> Result<Vec<f64>> {
        encode_image(x, self)
    }

    fn embed_text(&self, r: &Report) -> Result<Vec<f64>> {
        encode_text(r, self)
    }
}
