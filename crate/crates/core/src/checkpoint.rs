//! JSON checkpoints: named flat arrays with shape metadata.
//!
//! Floats are written in shortest round-trip decimal form, so a load after a
//! save reproduces every parameter bit-for-bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::encoders::{HyperBlock, Mlp, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{GcnOptions, GcnParams};
use crate::linalg::Mat;

pub const FORMAT: &str = "softneg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tau: f64,
    pub hyper: HyperBlock,
    pub gcn_options: GcnOptions,
    pub tensors: Vec<Tensor>,
}

fn mat(name: &str, m: &Mat) -> Tensor {
    Tensor {
        name: name.to_owned(),
        shape: vec![m.rows, m.cols],
        data: m.data.clone(),
    }
}

fn vector(name: &str, v: &[f64]) -> Tensor {
    Tensor {
        name: name.to_owned(),
        shape: vec![v.len()],
        data: v.to_vec(),
    }
}

impl From<&ModelParams> for Checkpoint {
    fn from(p: &ModelParams) -> Self {
        let mut tensors = Vec::new();
        for (prefix, m) in [("image", &p.image), ("text", &p.text)] {
            tensors.push(mat(&format!("{prefix}.w1"), &m.w1));
            tensors.push(vector(&format!("{prefix}.b1"), &m.b1));
            tensors.push(mat(&format!("{prefix}.w2"), &m.w2));
            tensors.push(vector(&format!("{prefix}.b2"), &m.b2));
        }
        tensors.push(mat("gcn.w1", &p.gcn.w1));
        tensors.push(mat("gcn.w2", &p.gcn.w2));
        Self {
            format: FORMAT.to_owned(),
            version: VERSION,
            tau: p.tau,
            hyper: p.hyper,
            gcn_options: p.gcn.options,
            tensors,
        }
    }
}

impl Checkpoint {
    fn take(&self, name: &str) -> Result<&Tensor> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Contract(format!("checkpoint is missing tensor {name}")))?;
        let n: usize = t.shape.iter().product();
        if n != t.data.len() {
            return Err(Error::Contract(format!(
                "tensor {name}: shape {:?} does not match {} values",
                t.shape,
                t.data.len()
            )));
        }
        Ok(t)
    }

    fn mat(&self, name: &str) -> Result<Mat> {
        let t = self.take(name)?;
        match t.shape[..] {
            [rows, cols] => Ok(Mat {
                rows,
                cols,
                data: t.data.clone(),
            }),
            _ => Err(Error::Contract(format!("tensor {name} is not a matrix"))),
        }
    }

    fn mlp(&self, prefix: &str) -> Result<Mlp> {
        Ok(Mlp {
            w1: self.mat(&format!("{prefix}.w1"))?,
            b1: self.take(&format!("{prefix}.b1"))?.data.clone(),
            w2: self.mat(&format!("{prefix}.w2"))?,
            b2: self.take(&format!("{prefix}.b2"))?.data.clone(),
        })
    }

    pub fn into_params(self) -> Result<ModelParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        let image = self.mlp("image")?;
        let text = self.mlp("text")?;
        let gcn = GcnParams {
            w1: self.mat("gcn.w1")?,
            w2: self.mat("gcn.w2")?,
            options: self.gcn_options,
        };
        if image.w2.rows != text.w2.rows || gcn.w2.cols != image.w2.rows {
            return Err(Error::Contract("embedding widths differ across towers".into()));
        }
        Ok(ModelParams {
            image,
            text,
            gcn,
            tau: self.tau,
            hyper: self.hyper,
        })
    }
}

pub fn save_checkpoint<W: Write>(mut w: W, p: &ModelParams) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, &Checkpoint::from(p))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: R) -> Result<ModelParams> {
    let c: Checkpoint = serde_json::from_reader(r)?;
    c.into_params()
}
