//! Seeded mini-batch training, metric logging, checkpoints and the ablation
//! harness.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, BatchItem};
use crate::benchmark::{EvalSuite, SuiteResult};
use crate::checkpoint::save_checkpoint;
use crate::clinical::ClinicalKernel;
use crate::encoders::{HyperBlock, ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::loss::{compute_targets, loss_and_grad};
use crate::negation::{attach_hard_negatives, NegationOptions};
use crate::reports::Pair;
use crate::rng;
use crate::softlabel::write_targets_csv;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        momentum: f64,
    },
    Adamw {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub const ADAMW: Optimizer = Optimizer::Adamw {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub name: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub tau: f64,
    pub hyper: HyperBlock,
    /// `false` forces one-hot targets regardless of `hyper` thresholds.
    pub soft_labels: bool,
    /// Fraction of eligible rows per batch that get a negated copy.
    pub hard_negative_rate: f64,
    pub negation: NegationOptions,
    pub dims: ModelDims,
    pub clinical_kernel: ClinicalKernel,
    /// Record real elapsed time; otherwise `wall_ms` is written as 0 so
    /// metric files stay byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            seed: 0,
            epochs: 30,
            batch_size: 32,
            lr: 1e-2,
            optimizer: Optimizer::Sgd { momentum: 0.0 },
            tau: 0.1,
            hyper: HyperBlock::default(),
            soft_labels: true,
            hard_negative_rate: 0.5,
            negation: NegationOptions::default(),
            dims: ModelDims::DESK,
            clinical_kernel: ClinicalKernel::Cosine,
            record_wall_time: false,
        }
    }

    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            epochs: 10,
            batch_size: 64,
            lr: 4e-6,
            optimizer: Optimizer::ADAMW,
            dims: ModelDims::PAPER,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// Hyperparameters actually used to build targets.
    pub fn effective_hyper(&self) -> HyperBlock {
        if self.soft_labels {
            self.hyper
        } else {
            HyperBlock::hard_labels()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_rate) {
            return bad(format!("hard_negative_rate must lie in [0, 1], got {}", self.hard_negative_rate));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("momentum must lie in [0, 1), got {momentum}"))
            }
            Optimizer::Adamw { beta1, beta2, eps, weight_decay }
                if !(0.0..1.0).contains(&beta1)
                    || !(0.0..1.0).contains(&beta2)
                    || eps <= 0.0
                    || weight_decay < 0.0 =>
            {
                bad("adamw needs betas in [0, 1), eps > 0, weight_decay >= 0".into())
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer state over the trainable slice of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(theta.len(), grad.len());
        self.t += 1;
        match self.kind {
            Optimizer::Sgd { momentum } => {
                for ((p, g), m) in theta.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            Optimizer::Adamw { beta1, beta2, eps, weight_decay } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * ((*m / c1) / ((*v / c2).sqrt() + eps) + weight_decay * *p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub i2t: f64,
    pub t2i: f64,
    /// Mean number of hard negatives per batch.
    pub h_mean: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "epoch,loss,i2t,t2i,h_mean,wall_ms";

pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(w, "{},{},{},{},{},{}", m.epoch, m.loss, m.i2t, m.t2i, m.h_mean, m.wall_ms)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.loss)
    }
}

const INIT_TAG: u64 = 0x1417;
const SHUFFLE_TAG: u64 = 0x5F1E;
const NEGATIVE_TAG: u64 = 0x4E65;

pub fn init_params(config: &TrainConfig) -> Result<ModelParams> {
    ModelParams::init(
        config.dims,
        config.tau,
        config.effective_hyper(),
        rng::derive(config.seed, INIT_TAG),
    )
}

pub fn train(config: &TrainConfig, corpus: &[Pair]) -> Result<TrainOutcome> {
    train_with(config, corpus, None)
}

/// Train; when `dump` is given, every step's image-to-text targets are
/// appended to it as CSV.
pub fn train_with(
    config: &TrainConfig,
    corpus: &[Pair],
    mut dump: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    config.validate()?;
    let mut params = init_params(config)?;
    let range = params.trainable_range();
    let items: Vec<BatchItem> = corpus
        .iter()
        .map(|p| BatchItem::prepare(p, params.token_dim(), params.graph_token_dim()))
        .collect();
    let mut opt = OptimizerState::new(config.optimizer, range.len());
    let mut flat = params.flatten();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0usize;
    if let Some(w) = dump.as_deref_mut() {
        writeln!(w, "step,row,col,value")?;
    }

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, rng::derive(SHUFFLE_TAG, epoch as u64)));
        let (mut loss, mut i2t, mut t2i, mut h, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = Batch::new(chunk.iter().map(|i| items[*i].clone()).collect());
            let batch = attach_hard_negatives(
                batch,
                config.hard_negative_rate,
                rng::derive(config.seed, rng::derive(NEGATIVE_TAG, step as u64)),
                &config.negation,
            );
            let targets = compute_targets(&params, &batch, config.clinical_kernel)?;
            if !config.soft_labels && !targets.i2t.is_hard() {
                return Err(Error::Contract(format!(
                    "hard-label run produced soft targets at step {step}"
                )));
            }
            if let Some(w) = dump.as_deref_mut() {
                write_targets_csv(&mut *w, step, &targets.i2t)?;
            }
            let rep = loss_and_grad(&params, &batch, &targets)?;
            let grad = &rep.grad[range.clone()];
            if !rep.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite loss at epoch {epoch}, step {step}");
                return Err(Error::Diverged {
                    epoch,
                    step,
                    last_good: Box::new(params),
                });
            }
            opt.step(&mut flat[range.clone()], grad, config.lr);
            params.assign_flat(&flat)?;
            loss += rep.total;
            i2t += rep.i2t;
            t2i += rep.t2i;
            h += batch.num_hard_negatives() as f64;
            n += 1;
            step += 1;
        }
        let n = n.max(1) as f64;
        let m = EpochMetrics {
            epoch,
            loss: loss / n,
            i2t: i2t / n,
            t2i: t2i / n,
            h_mean: h / n,
            wall_ms: if config.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        log::info!("epoch {epoch}: loss {:.5} (i2t {:.5}, t2i {:.5})", m.loss, m.i2t, m.t2i);
        metrics.push(m);
    }
    Ok(TrainOutcome { params, metrics })
}

/// Create a file that must not already exist.
pub fn create_new(path: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?;
    Ok(BufWriter::new(f))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub targets: Option<PathBuf>,
}

/// Train and write `checkpoint.json` and `metrics.csv` under `dir`. On
/// divergence the last good parameters are still written before the error
/// is returned.
pub fn train_to_dir(
    config: &TrainConfig,
    corpus: &[Pair],
    dir: &Path,
    dump_targets: bool,
) -> Result<TrainArtifacts> {
    let checkpoint = dir.join("checkpoint.json");
    let metrics_path = dir.join("metrics.csv");
    let targets = dump_targets.then(|| dir.join("targets.csv"));
    let mut dump = targets.as_deref().map(create_new).transpose()?;
    let result = train_with(config, corpus, dump.as_mut().map(|w| w as &mut dyn Write));
    if let Some(mut w) = dump {
        w.flush()?;
    }
    match result {
        Ok(out) => {
            let mut w = create_new(&checkpoint)?;
            save_checkpoint(&mut w, &out.params)?;
            w.flush()?;
            let mut w = create_new(&metrics_path)?;
            write_metrics_csv(&mut w, &out.metrics)?;
            w.flush()?;
            Ok(TrainArtifacts {
                checkpoint,
                metrics: metrics_path,
                targets,
            })
        }
        Err(Error::Diverged { epoch, step, last_good }) => {
            let mut w = create_new(&checkpoint)?;
            save_checkpoint(&mut w, &last_good)?;
            w.flush()?;
            Err(Error::Diverged { epoch, step, last_good })
        }
        Err(e) => Err(e),
    }
}

/// The four standard runs: one-hot targets, soft targets, one-hot with
/// negation hard negatives, and soft targets with hard negatives.
pub fn standard_ablation(base: &TrainConfig) -> Vec<TrainConfig> {
    let rate = if base.hard_negative_rate > 0.0 {
        base.hard_negative_rate
    } else {
        TrainConfig::desk().hard_negative_rate
    };
    [("hard-labels", false, 0.0), ("soft", true, 0.0), ("hardneg", false, rate), ("both", true, rate)]
        .into_iter()
        .map(|(name, soft, r)| TrainConfig {
            name: name.into(),
            soft_labels: soft,
            hard_negative_rate: r,
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub final_loss: f64,
    pub align_accuracy: f64,
    pub zeroshot_accuracy: f64,
    pub zeroshot_auc: f64,
    pub retrieval_macro_f1: f64,
    pub normal_top1: f64,
    pub normal_median_rank: f64,
    pub adversarial_absent_positive: usize,
}

impl AblationRow {
    pub fn new(name: &str, final_loss: f64, r: &SuiteResult) -> Self {
        Self {
            name: name.to_string(),
            final_loss,
            align_accuracy: r.align.accuracy,
            zeroshot_accuracy: r.zeroshot.mean_accuracy(),
            zeroshot_auc: r.zeroshot.mean_auc(),
            retrieval_macro_f1: r.retrieval.macro_f1,
            normal_top1: r.normal.top1,
            normal_median_rank: r.normal.median_rank,
            adversarial_absent_positive: r.adversarial.absent_positive,
        }
    }
}

pub const ABLATION_HEADER: &str = "name,final_loss,align_accuracy,zeroshot_accuracy,zeroshot_auc,retrieval_macro_f1,normal_top1,normal_median_rank,adversarial_absent_positive";

pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            r.final_loss,
            r.align_accuracy,
            r.zeroshot_accuracy,
            r.zeroshot_auc,
            r.retrieval_macro_f1,
            r.normal_top1,
            r.normal_median_rank,
            r.adversarial_absent_positive
        )?;
    }
    Ok(())
}

/// Train every config on `corpus` and evaluate each on `suite`. Rows keep
/// the order of `configs`.
pub fn ablation_matrix(
    configs: &[TrainConfig],
    corpus: &[Pair],
    suite: &EvalSuite,
) -> Result<Vec<AblationRow>> {
    use rayon::prelude::*;
    if configs.len() < 2 {
        return Err(Error::Config(format!(
            "ablation needs at least 2 configs, got {}",
            configs.len()
        )));
    }
    configs
        .par_iter()
        .map(|c| {
            let out = train(c, corpus)?;
            let r = suite.run(&out.params)?;
            Ok(AblationRow::new(&c.name, out.final_loss().unwrap_or(f64::NAN), &r))
        })
        .collect()
}
