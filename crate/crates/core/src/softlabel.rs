//! Dynamic soft contrastive targets.
//!
//! For a batch of `B` pairs and `H` appended hard negatives:
//!
//! ```text
//! R[i][i] = 1
//! R[i][j] = max(0, sum_m w_m * S_m[i][j] * [S_m[i][j] >= tau_m])   (j < B, j != i)
//! R[i][j] = 0                                                       (j >= B)
//! T       = row_normalize(R)
//! ```
//!
//! with `m` ranging over text, clinical and graph similarity. `S_text` and
//! `S_graph` come from the current encoders every step; all three are treated
//! as constants by the loss.

use std::io::Write;

use crate::batch::Batch;
use crate::clinical::{clinical_similarity_with, ClinicalKernel};
use crate::encoders::{HyperBlock, ModelParams};
use crate::error::{Error, Result};
use crate::graph::gcn_encode;
use crate::linalg::{dot, Mat};

/// Pairwise in-batch similarities, each `B x B`, symmetric with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub text: Mat,
    pub clinical: Mat,
    pub graph: Mat,
}

impl SimilarityBundle {
    pub fn batch_size(&self) -> usize {
        self.text.rows
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        for (name, m) in [("text", &self.text), ("clinical", &self.clinical), ("graph", &self.graph)] {
            if m.rows != b || m.cols != b {
                return Err(Error::shape("similarity bundle", b, m.cols));
            }
            for i in 0..b {
                if (m[(i, i)] - 1.0).abs() > 1e-9 {
                    return Err(Error::Contract(format!("{name} similarity diagonal is not 1")));
                }
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                        return Err(Error::Contract(format!("{name} similarity is not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-stochastic `B x (B + H)` targets whose hard-negative columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetMatrix {
    pub t: Mat,
    pub hard_negatives: usize,
}

impl SoftTargetMatrix {
    pub fn batch_size(&self) -> usize {
        self.t.rows
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let b = self.batch_size();
        if self.t.cols != b + self.hard_negatives {
            return Err(Error::shape("soft targets", b + self.hard_negatives, self.t.cols));
        }
        check_row_stochastic(&self.t, tol)?;
        for i in 0..b {
            if self.t.row(i)[b..].iter().any(|v| *v != 0.0) {
                return Err(Error::Contract(format!("row {i} puts mass on a hard negative")));
            }
        }
        Ok(())
    }

    /// True when the matrix is exactly `[I | 0]`.
    pub fn is_hard(&self) -> bool {
        let b = self.batch_size();
        (0..b).all(|i| {
            self.t
                .row(i)
                .iter()
                .enumerate()
                .all(|(j, v)| *v == if i == j { 1.0 } else { 0.0 })
        })
    }

    /// Targets for the text-to-image direction: the `B x B` block transposed
    /// and row-normalized again.
    pub fn text_to_image(&self) -> Mat {
        let b = self.batch_size();
        let mut out = Mat::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                out[(j, i)] = self.t[(i, j)];
            }
        }
        row_normalize(&mut out);
        out
    }
}

pub(crate) fn check_row_stochastic(t: &Mat, tol: f64) -> Result<()> {
    for i in 0..t.rows {
        let row = t.row(i);
        if row.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract(format!("target row {i} has a negative or NaN entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Contract(format!("target row {i} sums to {s}")));
        }
    }
    Ok(())
}

fn row_normalize(m: &mut Mat) {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

fn gated(sim: f64, threshold: f64, weight: f64) -> f64 {
    if sim >= threshold {
        weight * sim
    } else {
        0.0
    }
}

pub fn fuse_targets(s: &SimilarityBundle, hyper: &HyperBlock, hard_negatives: usize) -> Result<SoftTargetMatrix> {
    s.validate()?;
    let b = s.batch_size();
    let mut t = Mat::zeros(b, b + hard_negatives);
    for i in 0..b {
        for j in 0..b {
            t[(i, j)] = if i == j {
                1.0
            } else {
                let raw = gated(s.text[(i, j)], hyper.tau_t, hyper.w_t)
                    + gated(s.clinical[(i, j)], hyper.tau_c, hyper.w_c)
                    + gated(s.graph[(i, j)], hyper.tau_g, hyper.w_g);
                raw.max(0.0)
            };
        }
    }
    row_normalize(&mut t);
    Ok(SoftTargetMatrix { t, hard_negatives })
}

fn gram(rows: &[Vec<f64>]) -> Mat {
    let b = rows.len();
    let mut m = Mat::zeros(b, b);
    for i in 0..b {
        m[(i, i)] = 1.0;
        for j in 0..i {
            let c = dot(&rows[i], &rows[j]).clamp(-1.0, 1.0);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}

/// Recompute the similarity bundle from the current encoders.
pub fn batch_similarities(batch: &Batch, params: &ModelParams, kernel: ClinicalKernel) -> Result<SimilarityBundle> {
    if batch.is_empty() {
        return Err(Error::Contract("similarities need a nonempty batch".into()));
    }
    let text: Vec<Vec<f64>> = batch
        .items
        .iter()
        .map(|it| params.text.forward(&it.text_features).map(|t| t.output))
        .collect::<Result<_>>()?;
    let graph: Vec<Vec<f64>> = batch
        .items
        .iter()
        .map(|it| {
            let mut g = gcn_encode(&it.graph, &params.gcn)?;
            // Empty graphs encode to zero; identical empties are still identical.
            if g.iter().all(|v| *v == 0.0) {
                g[0] = 1.0;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let b = batch.len();
    let mut clinical = Mat::identity(b);
    for i in 0..b {
        for j in 0..i {
            let c = clinical_similarity_with(kernel, &batch.items[i].labels, &batch.items[j].labels);
            clinical[(i, j)] = c;
            clinical[(j, i)] = c;
        }
    }
    Ok(SimilarityBundle {
        text: gram(&text),
        clinical,
        graph: gram(&graph),
    })
}

/// Append one step's target matrix to a debug CSV (`step,row,col,value`).
pub fn write_targets_csv<W: Write>(mut w: W, step: usize, t: &SoftTargetMatrix) -> Result<()> {
    for i in 0..t.t.rows {
        for j in 0..t.t.cols {
            writeln!(w, "{step},{i},{j},{}", t.t[(i, j)])?;
        }
    }
    Ok(())
}
