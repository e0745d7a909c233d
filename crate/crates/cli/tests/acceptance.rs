//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use softneg_core::benchmark::{
    check_triplet, eval_align, eval_align_null, generate_align_set, AlignOptions, EvalSuite,
    InsertPos, LabelOracle, SuiteSpec,
};
use softneg_core::graph::{GcnOptions, Node, NodeClass, Pooling};
use softneg_core::linalg::Mat;
use softneg_core::reports::{dedup_pairs, ImageSpec};
use softneg_core::trainer::{train, TrainConfig};
use softneg_core::{
    fuse_targets, gcn_encode, generate_corpus, rng, CorpusSpec, GcnParams, HyperBlock, ModelDims,
    ReportGraph, SimilarityBundle, SoftTargetMatrix,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&Path) -> Outcome);

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_softneg")
}

fn softneg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .env("SOFTNEG_LOG", "error")
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "softneg {} exited {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            stdout,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(stdout)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1. Gradient fidelity.
fn gradient_fidelity(_: &Path) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in ["1", "2", "3"] {
        let out = softneg(&["grad-check", "--seed", seed, "--eps", "1e-5"])?;
        // "max relative error X over N coordinates (pass)"
        let words: Vec<&str> = out.split_whitespace().collect();
        let err: f64 = words[3].parse().map_err(|_| format!("unparsed output: {out}"))?;
        let coords: usize = words[5].parse().map_err(|_| format!("unparsed output: {out}"))?;
        check(coords >= 200, || format!("seed {seed}: only {coords} coordinates"))?;
        check(err < 1e-4, || format!("seed {seed}: max rel error {err:e}"))?;
        worst = worst.max(err);
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(30), || format!("took {}", secs(t)))?;
    Ok(format!("worst max rel error {worst:.2e} over 3 seeds in {}", secs(t)))
}

fn random_symmetric(r: &mut rng::Rng, b: usize) -> Mat {
    let mut m = Mat::identity(b);
    for i in 0..b {
        for j in 0..i {
            let v = r.random_range(-1.0..=1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn raw(t: &SoftTargetMatrix, i: usize, j: usize) -> f64 {
    t.t[(i, j)] / t.t[(i, i)]
}

// 2. Soft-target algebra over random bundles.
fn soft_target_algebra(_: &Path) -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(2, 0);
    for case in 0..1000 {
        let b = r.random_range(1..=8);
        let h = r.random_range(0..=4);
        let s = SimilarityBundle {
            text: random_symmetric(&mut r, b),
            clinical: random_symmetric(&mut r, b),
            graph: random_symmetric(&mut r, b),
        };
        let hyper = HyperBlock {
            tau_t: r.random_range(0.0..=1.0),
            tau_c: r.random_range(0.0..=1.0),
            tau_g: r.random_range(0.0..=1.0),
            w_t: r.random_range(0.0..=0.5),
            w_c: r.random_range(0.0..=0.5),
            w_g: r.random_range(0.0..=0.5),
        };
        let t = fuse_targets(&s, &hyper, h).map_err(|e| format!("case {case}: {e}"))?;
        for i in 0..b {
            let row = t.t.row(i);
            let sum: f64 = row.iter().sum();
            check((sum - 1.0).abs() <= 1e-9, || format!("case {case}: row {i} sums to {sum}"))?;
            check(row.iter().all(|v| *v >= 0.0), || format!("case {case}: negative entry"))?;
            check(row[b..].iter().all(|v| *v == 0.0), || {
                format!("case {case}: hard-negative column has mass")
            })?;
        }
        // Raising each threshold in turn never increases a raw entry.
        for m in 0..3 {
            let mut up = hyper;
            let bump = r.random_range(0.0..=0.5);
            match m {
                0 => up.tau_t += bump,
                1 => up.tau_c += bump,
                _ => up.tau_g += bump,
            }
            let tu = fuse_targets(&s, &up, h).map_err(|e| e.to_string())?;
            for i in 0..b {
                for j in (0..b).filter(|j| *j != i) {
                    check(raw(&tu, i, j) <= raw(&t, i, j) + 1e-12, || {
                        format!("case {case}: raising threshold {m} increased raw ({i},{j})")
                    })?;
                }
            }
        }
        let hard = fuse_targets(&s, &HyperBlock::hard_labels(), h).map_err(|e| e.to_string())?;
        for i in 0..b {
            for j in 0..b + h {
                let want = if i == j { 1.0 } else { 0.0 };
                check(hard.t[(i, j)] == want, || format!("case {case}: hard limit is not [I|0]"))?;
            }
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(5), || format!("took {}", secs(t)))?;
    Ok(format!("1000 random bundles in {}", secs(t)))
}

// 3. Hand-computed fusion examples.
fn hand_fusion(_: &Path) -> Outcome {
    let pair = |t: f64, c: f64, g: f64| SimilarityBundle {
        text: Mat::from_rows(&[vec![1.0, t], vec![t, 1.0]]),
        clinical: Mat::from_rows(&[vec![1.0, c], vec![c, 1.0]]),
        graph: Mat::from_rows(&[vec![1.0, g], vec![g, 1.0]]),
    };
    let hyper = HyperBlock::default();
    let a = fuse_targets(&pair(0.5, 1.0, 0.5), &hyper, 0).map_err(|e| e.to_string())?;
    let b = fuse_targets(&pair(1.0, 1.0, 1.0), &hyper, 0).map_err(|e| e.to_string())?;
    let got = [a.t[(0, 0)], a.t[(0, 1)], b.t[(0, 0)], b.t[(0, 1)]];
    let want = [0.85690, 0.14310, 0.66622, 0.33378];
    for (g, w) in got.iter().zip(&want) {
        check((g - w).abs() <= 1e-4, || format!("got {g:.5}, want {w:.5}"))?;
    }
    Ok(format!(
        "[{:.5}, {:.5}] and [{:.5}, {:.5}]",
        got[0], got[1], got[2], got[3]
    ))
}

fn read_ablation(path: &Path) -> Result<BTreeMap<String, f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty ablation table")?.split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "align_accuracy")
        .ok_or("no align_accuracy column")?;
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let v = f[col].parse::<f64>().map_err(|e| e.to_string())?;
            Ok((f[0].to_string(), v))
        })
        .collect()
}

// 4. Ablation ordering on the alignment benchmark.
fn ablation_ordering(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let seeds = ["0", "1", "2"];
    for seed in seeds {
        let out = dir.join(format!("ablate-{seed}"));
        softneg(&["ablate", "--seed", seed, "--n", "2000", "--eval-n", "2000", "--threads", "1", "--out-dir", out.to_str().unwrap()])?;
        for (name, acc) in read_ablation(&out.join("ablation.csv"))? {
            *sums.entry(name).or_default() += acc / seeds.len() as f64;
        }
    }
    let t = start.elapsed();
    let get = |k: &str| sums.get(k).copied().ok_or(format!("missing row {k}"));
    let (both, soft, hard, hardneg) = (get("both")?, get("soft")?, get("hard-labels")?, get("hardneg")?);
    let summary = format!(
        "mean align accuracy: hard-labels {hard:.4}, soft {soft:.4}, hardneg {hardneg:.4}, both {both:.4} ({})",
        secs(t)
    );
    check(both - soft >= 0.02, || format!("both - soft = {:.4}; {summary}", both - soft))?;
    check(both - hard >= 0.02, || format!("both - hard-labels = {:.4}; {summary}", both - hard))?;
    check(t < Duration::from_secs(600), || format!("took {}", secs(t)))?;
    Ok(summary)
}

// 5. Null and oracle on the negation benchmark.
fn benchmark_sanity(_: &Path) -> Outcome {
    let pairs = generate_corpus(&CorpusSpec {
        n_reports: 4000,
        seed: 5,
        ..CorpusSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let triplets = generate_align_set(&pairs, 5, &AlignOptions::default());
    check(triplets.len() >= 2000, || format!("only {} triplets", triplets.len()))?;
    let null = eval_align_null(ModelDims::DESK, &triplets, 5).map_err(|e| e.to_string())?;
    let oracle = LabelOracle::new(&ImageSpec::default()).map_err(|e| e.to_string())?;
    let o = eval_align(&oracle, &triplets).map_err(|e| e.to_string())?;
    let summary = format!(
        "random {:.4}, oracle {:.4} over {} triplets",
        null.accuracy, o.accuracy, null.n
    );
    check((null.accuracy - 0.5).abs() <= 0.05, || summary.clone())?;
    check(o.accuracy > 0.95, || summary.clone())?;
    Ok(summary)
}

// 6. Duplicate robustness for normal-report retrieval.
fn duplicate_robustness(_: &Path) -> Outcome {
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let corpus = generate_corpus(&CorpusSpec {
            n_reports: 2000,
            normal_fraction: 0.6,
            duplicate_mass: 0.9,
            seed: rng::derive(seed, 0xD0),
            ..CorpusSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in &corpus {
            *counts.entry(p.report.render()).or_default() += 1;
        }
        let dup_normals = corpus
            .iter()
            .filter(|p| !p.report.has_present() && counts[&p.report.render()] > 1)
            .count();
        let share = dup_normals as f64 / corpus.len() as f64;
        check(share > 0.5, || format!("seed {seed}: duplicated normals only {share:.3}"))?;
        let dedup = dedup_pairs(&corpus);
        let suite = EvalSuite::build(&SuiteSpec {
            corpus: CorpusSpec {
                n_reports: 2000,
                seed: rng::derive(seed, 0xE7A1),
                ..CorpusSpec::default()
            },
            ..SuiteSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let config = TrainConfig {
            seed,
            ..TrainConfig::desk()
        };
        let rank = |data| -> Result<f64, String> {
            let out = train(&config, data).map_err(|e| e.to_string())?;
            Ok(suite.run(&out.params).map_err(|e| e.to_string())?.normal.median_rank)
        };
        let (dup, base) = (rank(&corpus)?, rank(&dedup)?);
        parts.push(format!("seed {seed}: {dup} vs {base}"));
        check(dup <= base, || parts.join("; "))?;
    }
    Ok(format!("median normal rank, duplicates vs dedup: {}", parts.join("; ")))
}

fn digest_dir(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        let bytes = fs::read(&p).map_err(|e| e.to_string())?;
        out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
    }
    Ok(out)
}

// 7. Generation fidelity of the alignment triplets.
fn align_generation(dir: &Path) -> Outcome {
    let pairs = generate_corpus(&CorpusSpec {
        n_reports: 1500,
        seed: 7,
        ..CorpusSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let triplets: Vec<_> = generate_align_set(&pairs, 7, &AlignOptions::default())
        .into_iter()
        .take(1000)
        .collect();
    check(triplets.len() == 1000, || format!("only {} triplets", triplets.len()))?;
    for t in &triplets {
        check_triplet(t).map_err(|e| e.to_string())?;
    }
    let mut templates: BTreeMap<(bool, usize), usize> = BTreeMap::new();
    let mut positions: BTreeMap<InsertPos, usize> = BTreeMap::new();
    for t in &triplets {
        *templates.entry((t.is_mediastinal(), t.template_id)).or_default() += 1;
        *positions.entry(t.insert_pos).or_default() += 1;
    }
    check(templates.len() == 9, || format!("templates seen: {templates:?}"))?;
    check(positions.len() == 3, || format!("positions seen: {positions:?}"))?;
    let (a, b) = (dir.join("align-a"), dir.join("align-b"));
    for d in [&a, &b] {
        softneg(&["gen-align", "--seed", "7", "--n", "1500", "--out-dir", d.to_str().unwrap()])?;
    }
    check(digest_dir(&a)? == digest_dir(&b)?, || "regenerated triplet files differ".into())?;
    Ok("1000/1000 pass the oracle; 9/9 templates and 3/3 positions seen; regeneration byte-identical".into())
}

fn graph(features: Vec<Vec<f64>>, edges: Vec<(usize, usize)>) -> ReportGraph {
    let nodes = (0..features.len())
        .map(|i| Node {
            token: format!("n{i}"),
            class: NodeClass::ObsDp,
        })
        .collect();
    ReportGraph {
        nodes,
        edges,
        node_features: features,
    }
}

// 8. GCN forward passes by hand and permutation invariance.
fn gcn_correctness(_: &Path) -> Outcome {
    let p = GcnParams {
        w1: Mat::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]),
        w2: Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]),
        options: GcnOptions::default(),
    };
    let close = |got: &[f64], want: &[f64]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-9);

    // One node x = [2, 1]: A_hat = [1]; x W1 = [2.5, 0]; relu keeps it;
    // times W2 = [2.5, 0]; normalized [1, 0].
    let one = gcn_encode(&graph(vec![vec![2.0, 1.0]], vec![]), &p).map_err(|e| e.to_string())?;
    check(close(&one, &[1.0, 0.0]), || format!("1-node: {one:?}"))?;

    // Two linked nodes x0 = [1, 0], x1 = [0, 1]: A_hat = 0.5 everywhere, so
    // both rows of A_hat X are [0.5, 0.5]; times W1 = [0.75, 0.5]; times W2 =
    // [1.25, 0.5]; mean pool keeps it; norm = sqrt(1.8125).
    let two = gcn_encode(&graph(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![(0, 1)]), &p)
        .map_err(|e| e.to_string())?;
    let n = 1.8125f64.sqrt();
    check(close(&two, &[1.25 / n, 0.5 / n]), || format!("2-node: {two:?}"))?;

    // Two unlinked nodes: A_hat = I; rows [1, -1] -> relu [1, 0] -> [1, 0]
    // and [0.5, 2] -> [2.5, 2]; mean [1.75, 1]; norm sqrt(4.0625).
    let apart = gcn_encode(&graph(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![]), &p)
        .map_err(|e| e.to_string())?;
    let n = 4.0625f64.sqrt();
    check(close(&apart, &[1.75 / n, 1.0 / n]), || format!("2-node unlinked: {apart:?}"))?;

    let mut r = rng::stream(8, 0);
    let max_pool = GcnParams {
        options: GcnOptions {
            pooling: Pooling::Max,
            ..GcnOptions::default()
        },
        ..GcnParams::init(softneg_core::graph::GcnDims::DESK, 8)
    };
    let mean_pool = GcnParams::init(softneg_core::graph::GcnDims::DESK, 8);
    let d = mean_pool.w1.rows;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..=9);
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if r.random_bool(0.3) {
                    edges.push((j, i));
                }
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let mut pf = vec![Vec::new(); n];
        for (i, f) in feats.iter().enumerate() {
            pf[perm[i]] = f.clone();
        }
        let pe: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[b], perm[a])).collect();
        for params in [&mean_pool, &max_pool] {
            let a = gcn_encode(&graph(feats.clone(), edges.clone()), params).map_err(|e| e.to_string())?;
            let b = gcn_encode(&graph(pf.clone(), pe.clone()), params).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check(worst <= 1e-9, || format!("permutation changed output by {worst:e}"))?;
    Ok(format!(
        "1-node and 2-node passes exact to 1e-9; 100 permuted graphs differ by at most {worst:.1e}"
    ))
}

// 9. Byte-identical artifacts from every subcommand.
fn determinism(dir: &Path) -> Outcome {
    let run = |tag: &str, threads: &str| -> Result<BTreeMap<String, BTreeMap<PathBuf, Vec<u8>>>, String> {
        let root = dir.join(format!("det-{tag}"));
        let p = |name: &str| root.join(name).to_str().unwrap().to_string();
        let corpus = root.join("corpus").join("corpus.jsonl");
        let corpus = corpus.to_str().unwrap();
        let ckpt = root.join("train").join("checkpoint.json");
        let ckpt = ckpt.to_str().unwrap();
        let align = root.join("align").join("align.jsonl");
        let align = align.to_str().unwrap();
        let g = ["--seed", "11", "--threads", threads];
        let cmds: Vec<(&str, Vec<String>)> = vec![
            ("corpus", vec!["gen-corpus".into(), "--n".into(), "300".into()]),
            ("train", ["train", "--corpus", corpus, "--epochs", "3", "--dump-targets"].map(String::from).to_vec()),
            ("align", ["gen-align", "--corpus", corpus].map(String::from).to_vec()),
            ("eval", ["eval", "--model", ckpt, "--corpus", corpus, "--align", align].map(String::from).to_vec()),
            ("eval-random", ["eval", "--model", "random", "--n", "300"].map(String::from).to_vec()),
            ("eval-oracle", ["eval", "--model", "oracle", "--n", "300"].map(String::from).to_vec()),
            ("ablate", ["ablate", "--configs", "4", "--n", "200", "--eval-n", "200", "--epochs", "2"].map(String::from).to_vec()),
            ("grad-check", vec!["grad-check".into()]),
        ];
        let mut out = BTreeMap::new();
        for (name, args) in cmds {
            let mut full: Vec<String> = args;
            full.extend(g.iter().map(|s| s.to_string()));
            full.push("--out-dir".into());
            full.push(p(name));
            let refs: Vec<&str> = full.iter().map(|s| s.as_str()).collect();
            softneg(&refs)?;
            out.insert(name.to_string(), digest_dir(&root.join(name))?);
        }
        Ok(out)
    };
    let a = run("a", "1")?;
    let mut files = 0;
    for (tag, threads) in [("b", "1"), ("c", "4")] {
        let b = run(tag, threads)?;
        for (cmd, fa) in &a {
            let fb = &b[cmd];
            check(fa.keys().eq(fb.keys()), || format!("{cmd}: different file sets"))?;
            for (f, bytes) in fa {
                check(*bytes == fb[f], || {
                    format!("{cmd}: {} differs with {threads} threads", f.display())
                })?;
            }
        }
        files = a.values().map(|f| f.len()).sum();
    }
    Ok(format!(
        "{} subcommand runs, {files} artifacts byte-identical across repeats and 1 vs 4 threads",
        a.len()
    ))
}

fn main() {
    let work = std::env::temp_dir().join(format!("softneg-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("scratch directory");
    let criteria: [Criterion; 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("soft-target algebra", soft_target_algebra),
        ("hand-computed fusion", hand_fusion),
        ("ablation ordering", ablation_ordering),
        ("negation benchmark sanity", benchmark_sanity),
        ("duplicate robustness", duplicate_robustness),
        ("alignment generation fidelity", align_generation),
        ("gcn correctness", gcn_correctness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| f(&work)))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    let _ = fs::remove_dir_all(&work);
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
