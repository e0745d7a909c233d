use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use softneg_core::benchmark::{
    eval_align_null, generate_align_set, read_triplets_jsonl, write_adversarial_csv,
    write_align_csv, write_normal_csv, write_retrieval_csv, write_triplets_jsonl,
    write_zeroshot_csv, AlignOptions, EvalSuite, LabelOracle, SuiteSpec,
};
use softneg_core::reports::{read_corpus_jsonl, write_corpus_jsonl};
use softneg_core::trainer::{
    ablation_matrix, init_params, standard_ablation, train_with, write_ablation_csv,
    write_metrics_csv, Optimizer, TrainConfig,
};
use softneg_core::{
    attach_hard_negatives, generate_corpus, gradient_check, load_checkpoint, rng,
    save_checkpoint, Batch, CorpusSpec, Embedder, Error, NegationOptions, Pair,
};

use crate::args::{
    Ablate, CorpusArgs, Eval, GenAlign, GenCorpus, Global, GradCheck, Labels, OptimizerArg,
    Train, TrainOverrides,
};
use crate::output::{input_record, Manifest, OutDir};

const TRAIN_CORPUS_TAG: u64 = 0xC0;
const EVAL_CORPUS_TAG: u64 = 0xE7A1;

/// Preset, then config file keys, then flags.
pub fn load_config(g: &Global, o: Option<&TrainOverrides>) -> Result<TrainConfig> {
    let mut value = serde_json::to_value(TrainConfig::preset(g.preset.name()).expect("known preset"))?;
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if !file.is_object() {
            bail!("{}: config must be a JSON object", path.display());
        }
        merge(&mut value, file);
    }
    let mut c: TrainConfig = serde_json::from_value(value).context("invalid config")?;
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    if let Some(o) = o {
        if let Some(v) = o.epochs {
            c.epochs = v;
        }
        if let Some(v) = o.lr {
            c.lr = v;
        }
        if let Some(v) = o.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = o.tau {
            c.tau = v;
        }
        if let Some(v) = o.hard_negative_rate {
            c.hard_negative_rate = v;
        }
        if let Some(l) = o.labels {
            c.soft_labels = l == Labels::Soft;
        }
        match o.optimizer {
            Some(OptimizerArg::Sgd) if !matches!(c.optimizer, Optimizer::Sgd { .. }) => {
                c.optimizer = Optimizer::Sgd { momentum: 0.0 }
            }
            Some(OptimizerArg::Adamw) if !matches!(c.optimizer, Optimizer::Adamw { .. }) => {
                c.optimizer = Optimizer::ADAMW
            }
            _ => {}
        }
        c.record_wall_time |= o.record_wall_time;
    }
    c.validate()?;
    Ok(c)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && k != "optimizer" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn seed(g: &Global) -> u64 {
    g.seed.unwrap_or(0)
}

fn corpus_spec(a: &CorpusArgs, seed: u64) -> CorpusSpec {
    let d = CorpusSpec::default();
    CorpusSpec {
        n_reports: a.n,
        normal_fraction: a.normal_fraction.unwrap_or(d.normal_fraction),
        duplicate_mass: a.duplicate_mass.unwrap_or(d.duplicate_mass),
        seed,
        ..d
    }
}

fn read_corpus(path: &Path) -> Result<Vec<Pair>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let pairs = read_corpus_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(pairs)
}

/// Pairs from a file, or generated from the seed.
fn corpus_source(
    file: &Option<std::path::PathBuf>,
    gen: &CorpusArgs,
    seed: u64,
    inputs: &mut Vec<Value>,
) -> Result<(Vec<Pair>, Value)> {
    match file {
        Some(p) => {
            inputs.push(input_record("corpus", p)?);
            Ok((read_corpus(p)?, json!("file")))
        }
        None => {
            let spec = corpus_spec(gen, seed);
            Ok((generate_corpus(&spec)?, serde_json::to_value(&spec)?))
        }
    }
}

pub fn gen_corpus(g: &Global, a: &GenCorpus, out: &Path) -> Result<()> {
    let spec = corpus_spec(&a.corpus, seed(g));
    let pairs = generate_corpus(&spec)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("corpus.jsonl", |w| write_corpus_jsonl(w, &pairs))?;
    println!("wrote {} pairs", pairs.len());
    dir.finish(Manifest {
        command: "gen-corpus",
        seed: spec.seed,
        config: serde_json::to_value(&spec)?,
        inputs: vec![],
    })
}

pub fn train(g: &Global, a: &Train, out: &Path) -> Result<()> {
    let config = load_config(g, Some(&a.overrides))?;
    let corpus = read_corpus(&a.corpus)?;
    let mut dir = OutDir::create(out)?;
    let mut dump = Vec::new();
    let result = train_with(&config, &corpus, a.dump_targets.then_some(&mut dump as _));
    let outcome = match result {
        Ok(o) => o,
        Err(Error::Diverged { epoch, step, last_good }) => {
            dir.write_with("checkpoint.json", |w| save_checkpoint(w, &last_good))?;
            bail!("training diverged at epoch {epoch}, step {step}; last good checkpoint kept");
        }
        Err(e) => return Err(e.into()),
    };
    dir.write_json("config.json", &config)?;
    dir.write_with("checkpoint.json", |w| save_checkpoint(w, &outcome.params))?;
    dir.write_with("metrics.csv", |w| write_metrics_csv(w, &outcome.metrics))?;
    if a.dump_targets {
        dir.write("targets.csv", &dump)?;
    }
    if let Some(m) = outcome.metrics.last() {
        println!("final loss {:.6} after {} epochs", m.loss, outcome.metrics.len());
    }
    dir.finish(Manifest {
        command: "train",
        seed: config.seed,
        config: serde_json::to_value(&config)?,
        inputs: vec![input_record("corpus", &a.corpus)?],
    })
}

pub fn gen_align(g: &Global, a: &GenAlign, out: &Path) -> Result<()> {
    let s = seed(g);
    let mut inputs = Vec::new();
    let (pairs, source) = corpus_source(&a.corpus, &a.generate, s, &mut inputs)?;
    let opts = AlignOptions {
        priority_boost: a.priority_boost,
        ..AlignOptions::default()
    };
    let triplets = generate_align_set(&pairs, s, &opts);
    for t in &triplets {
        softneg_core::benchmark::check_triplet(t)?;
    }
    let mut dir = OutDir::create(out)?;
    dir.write_with("align.jsonl", |w| write_triplets_jsonl(w, &triplets))?;
    println!("wrote {} triplets from {} pairs", triplets.len(), pairs.len());
    dir.finish(Manifest {
        command: "gen-align",
        seed: s,
        config: json!({ "corpus": source, "align": opts }),
        inputs,
    })
}

enum Model {
    Checkpoint(softneg_core::ModelParams),
    Oracle(LabelOracle),
    Random(softneg_core::ModelParams),
}

impl Model {
    fn embedder(&self) -> &dyn Embedder {
        match self {
            Model::Checkpoint(p) | Model::Random(p) => p,
            Model::Oracle(o) => o,
        }
    }
}

pub fn eval(g: &Global, a: &Eval, out: &Path) -> Result<()> {
    let s = seed(g);
    let mut inputs = Vec::new();
    let model = match a.model.as_str() {
        "oracle" => Model::Oracle(LabelOracle::new(&CorpusSpec::default().image)?),
        "random" => Model::Random(init_params(&load_config(g, None)?)?),
        path => {
            let p = Path::new(path);
            inputs.push(input_record("checkpoint", p)?);
            let f = File::open(p).with_context(|| format!("opening {path}"))?;
            Model::Checkpoint(load_checkpoint(BufReader::new(f))?)
        }
    };
    let (pairs, source) = corpus_source(&a.corpus, &a.generate, s, &mut inputs)?;
    let spec = SuiteSpec::default();
    let mut suite = EvalSuite::from_pairs(&pairs, &spec);
    if let Some(p) = &a.align {
        inputs.push(input_record("align", p)?);
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        suite.triplets = read_triplets_jsonl(BufReader::new(f))?;
    }
    let r = suite.run(model.embedder())?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("align.csv", |w| write_align_csv(w, &r.align))?;
    if let Model::Random(p) = &model {
        let null = eval_align_null(p.dims(), &suite.triplets, s)?;
        dir.write_with("align_null.csv", |w| write_align_csv(w, &null))?;
        println!("align accuracy (null over parameter draws) {:.4}", null.accuracy);
    }
    dir.write_with("zeroshot.csv", |w| write_zeroshot_csv(w, &r.zeroshot))?;
    dir.write_with("retrieval.csv", |w| write_retrieval_csv(w, &r.retrieval))?;
    dir.write_with("normal.csv", |w| write_normal_csv(w, &r.normal))?;
    dir.write_with("adversarial.csv", |w| write_adversarial_csv(w, &r.adversarial))?;
    println!(
        "align {:.4} over {} | zero-shot acc {:.4} auc {:.4} | retrieval macro-F1 {:.4} | normal top-1 {:.4} median rank {}",
        r.align.accuracy,
        r.align.n,
        r.zeroshot.mean_accuracy(),
        r.zeroshot.mean_auc(),
        r.retrieval.macro_f1,
        r.normal.top1,
        r.normal.median_rank
    );
    dir.finish(Manifest {
        command: "eval",
        seed: s,
        config: json!({ "model": model_kind(&model), "corpus": source, "suite": spec }),
        inputs,
    })
}

fn model_kind(m: &Model) -> &'static str {
    match m {
        Model::Checkpoint(_) => "checkpoint",
        Model::Oracle(_) => "oracle",
        Model::Random(_) => "random",
    }
}

pub fn ablate(g: &Global, a: &Ablate, out: &Path) -> Result<()> {
    let base = load_config(g, Some(&a.overrides))?;
    let configs: Vec<TrainConfig> = standard_ablation(&base).into_iter().take(a.configs as usize).collect();
    let train_spec = CorpusSpec {
        n_reports: a.n,
        seed: rng::derive(base.seed, TRAIN_CORPUS_TAG),
        ..CorpusSpec::default()
    };
    let suite_spec = SuiteSpec {
        corpus: CorpusSpec {
            n_reports: a.eval_n,
            seed: rng::derive(base.seed, EVAL_CORPUS_TAG),
            ..CorpusSpec::default()
        },
        ..SuiteSpec::default()
    };
    let corpus = generate_corpus(&train_spec)?;
    let suite = EvalSuite::build(&suite_spec)?;
    let rows = ablation_matrix(&configs, &corpus, &suite)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("ablation.csv", |w| write_ablation_csv(w, &rows))?;
    for r in &rows {
        println!("{:12} align {:.4} loss {:.5}", r.name, r.align_accuracy, r.final_loss);
    }
    dir.finish(Manifest {
        command: "ablate",
        seed: base.seed,
        config: json!({ "configs": configs, "train_corpus": train_spec, "suite": suite_spec }),
        inputs: vec![],
    })
}

pub fn grad_check(g: &Global, a: &GradCheck, out: Option<&Path>) -> Result<bool> {
    let config = load_config(g, None)?;
    let s = config.seed;
    if a.batch < 2 {
        bail!("--batch must be at least 2");
    }
    let params = init_params(&config)?;
    let pairs = generate_corpus(&CorpusSpec {
        n_reports: a.batch,
        normal_fraction: 0.4,
        seed: s,
        ..CorpusSpec::default()
    })?;
    let batch = Batch::from_pairs(&pairs, params.token_dim(), params.graph_token_dim());
    let batch = attach_hard_negatives(batch, a.hard_negative_rate, s, &NegationOptions::default());
    let r = gradient_check(&params, &batch, a.eps, s)?;
    let pass = r.passes(a.tol);
    println!(
        "max relative error {:.3e} over {} coordinates ({})",
        r.max_rel_error,
        r.checked,
        if pass { "pass" } else { "FAIL" }
    );
    if let Some(out) = out {
        let mut dir = OutDir::create(out)?;
        dir.write_json("gradcheck.json", &json!({ "report": r, "tol": a.tol, "pass": pass }))?;
        dir.finish(Manifest {
            command: "grad-check",
            seed: s,
            config: json!({ "eps": a.eps, "tol": a.tol, "batch": a.batch,
                "hard_negative_rate": a.hard_negative_rate, "train": config }),
            inputs: vec![],
        })?;
    }
    Ok(pass)
}
