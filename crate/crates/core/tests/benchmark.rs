use softneg_core::benchmark::{
    auc, eval_adversarial, eval_align, eval_align_null, eval_normal_detection, eval_retrieval,
    eval_zeroshot, generate_align_set, make_align_triplet, zeroshot_prompts, AlignOptions,
    EvalSuite, LabelOracle, SuiteSpec,
};
use softneg_core::reports::{ImageSpec, NORMAL_TEMPLATES};
use softneg_core::{
    generate_corpus, parse_report, CorpusSpec, EntityId, HyperBlock, ModelDims, ModelParams, Pair,
    Report,
};

fn corpus(n: usize, seed: u64) -> Vec<Pair> {
    generate_corpus(&CorpusSpec {
        n_reports: n,
        seed,
        ..CorpusSpec::default()
    })
    .unwrap()
}

fn random_model(seed: u64) -> ModelParams {
    ModelParams::init(ModelDims::DESK, 0.1, HyperBlock::default(), seed).unwrap()
}

fn oracle() -> LabelOracle {
    LabelOracle::new(&ImageSpec::default()).unwrap()
}

#[test]
fn align_null_and_oracle() {
    let pairs = corpus(4000, 11);
    let triplets = generate_align_set(&pairs, 11, &AlignOptions::default());
    assert!(triplets.len() >= 2000);
    let null = eval_align_null(ModelDims::DESK, &triplets, 3).unwrap();
    assert!((null.accuracy - 0.5).abs() <= 0.05, "null {}", null.accuracy);
    let o = eval_align(&oracle(), &triplets).unwrap();
    assert!(o.accuracy > 0.95, "oracle {}", o.accuracy);
}

#[test]
fn align_tie_counts_as_failure() {
    // A constant embedder ties every comparison.
    struct Constant;
    impl softneg_core::Embedder for Constant {
        fn embed_image(&self, _: &softneg_core::ImageFeature) -> softneg_core::Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }
        fn embed_text(&self, _: &Report) -> softneg_core::Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }
    }
    let pair = Pair {
        id: 0,
        report: parse_report("Mild edema.").unwrap(),
        image: softneg_core::ImageFeature(vec![0.0; 32]),
    };
    let t = make_align_triplet(&pair, 0, &AlignOptions::default()).unwrap();
    let r = eval_align(&Constant, &[t]).unwrap();
    assert_eq!(r.accuracy, 0.0);
    assert!(eval_align(&Constant, &[]).is_err());
}

#[test]
fn breakdown_aggregates_to_overall() {
    let pairs = corpus(600, 5);
    let triplets = generate_align_set(&pairs, 5, &AlignOptions::default());
    let r = eval_align(&random_model(2), &triplets).unwrap();
    for group in ["entity", "position", "template"] {
        let (n, c) = r
            .group(group)
            .fold((0, 0), |(n, c), row| (n + row.n, c + row.correct));
        assert_eq!((n, c), (r.n, r.correct), "{group}");
        let weighted: f64 = r.group(group).map(|row| row.accuracy * row.n as f64).sum();
        assert!((weighted / r.n as f64 - r.accuracy).abs() < 1e-12);
    }
}

#[test]
fn zeroshot_prompt_rendering() {
    let (p, n) = zeroshot_prompts(EntityId::PNEUMONIA);
    assert_eq!(p.render(), "There is pneumonia.");
    assert_eq!(n.render(), "There is no pneumonia.");
}

#[test]
fn zeroshot_oracle_and_null() {
    let pairs = corpus(2000, 21);
    let o = eval_zeroshot(&oracle(), &pairs).unwrap();
    for row in &o.rows {
        if row.positives >= 20 {
            assert!(row.accuracy > 0.95, "{}: {}", row.entity, row.accuracy);
        }
    }
    // Balanced set for one entity; AUC of a random model is averaged over draws.
    let e = EntityId::PLEURAL_EFFUSION;
    let pos: Vec<Pair> = pairs.iter().filter(|p| softneg_core::label_vector(&p.report).get(e)).cloned().collect();
    let neg: Vec<Pair> = pairs.iter().filter(|p| !softneg_core::label_vector(&p.report).get(e)).take(pos.len()).cloned().collect();
    let balanced: Vec<Pair> = pos.into_iter().chain(neg).collect();
    let aucs: Vec<f64> = (0..40)
        .map(|s| {
            let r = eval_zeroshot(&random_model(s), &balanced).unwrap();
            r.rows.iter().find(|row| row.entity == e).unwrap().auc
        })
        .collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "mean null AUC {mean}");
}

#[test]
fn zeroshot_skips_absent_entities() {
    let pairs: Vec<Pair> = corpus(300, 1).into_iter().filter(|p| !p.report.has_present()).collect();
    let r = eval_zeroshot(&oracle(), &pairs).unwrap();
    assert!(r.rows.is_empty());
    assert_eq!(r.skipped.len(), 13);
}

#[test]
fn auc_reference_values() {
    assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[false, false, true, true]), Some(1.0));
    assert_eq!(auc(&[0.4, 0.3, 0.2, 0.1], &[false, false, true, true]), Some(0.0));
    assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
    assert_eq!(auc(&[0.1, 0.3, 0.2], &[false, true, true]), Some(1.0));
    assert_eq!(auc(&[0.1], &[true]), None);
}

#[test]
fn retrieval_oracle_and_random() {
    let pairs = corpus(1000, 8);
    let gallery: Vec<Report> = pairs.iter().map(|p| p.report.clone()).collect();
    let o = eval_retrieval(&oracle(), &pairs, &gallery).unwrap();
    assert_eq!(o.macro_f1, 1.0);
    assert_eq!(o.exact_match, 1.0);
    let r = eval_retrieval(&random_model(4), &pairs, &gallery).unwrap();
    assert!(o.macro_f1 - r.macro_f1 >= 0.3, "random {}", r.macro_f1);
    assert!(eval_retrieval(&oracle(), &pairs, &[]).is_err());
}

#[test]
fn retrieval_of_templated_normal_matches_every_label() {
    let normals: Vec<Pair> = corpus(400, 3)
        .into_iter()
        .filter(|p| p.report.is_templated_normal)
        .collect();
    assert!(!normals.is_empty());
    let gallery = vec![parse_report(NORMAL_TEMPLATES[1]).unwrap()];
    let r = eval_retrieval(&random_model(0), &normals, &gallery).unwrap();
    assert_eq!(r.exact_match, 1.0);
}

#[test]
fn normal_detection() {
    let pairs = corpus(1500, 9);
    let suite = EvalSuite::from_pairs(&pairs, &SuiteSpec::default());
    let o = eval_normal_detection(&oracle(), &suite.normal_report, &suite.abnormal_reports, &suite.normal_images).unwrap();
    assert!(o.n > 100);
    assert_eq!(o.top1, 1.0);
    assert_eq!(o.median_rank, 1.0);
    let single = eval_normal_detection(&random_model(1), &suite.normal_report, &[], &suite.normal_images).unwrap();
    assert!(single.ranks.iter().all(|r| *r == 1));
    assert!(eval_normal_detection(&oracle(), &suite.abnormal_reports[0], &[], &suite.normal_images).is_err());
}

#[test]
fn adversarial_counts() {
    let pairs = corpus(2000, 13);
    let ents = [EntityId::ATELECTASIS, EntityId::PLEURAL_EFFUSION];
    let set = softneg_core::benchmark::adversarial_testset(&pairs, ents[0], ents[1]);
    assert!(set.len() > 50);
    let o = eval_adversarial(&oracle(), ents, &set).unwrap();
    assert_eq!(o.absent_positive, 0);
    assert_eq!(o.present_negative, 0);
    assert_eq!(o.present_total(), set.len());
    assert_eq!(o.absent_total(), set.len());
    let r = eval_adversarial(&random_model(5), ents, &set).unwrap();
    assert_eq!(r.present_total() + r.absent_total(), 2 * set.len());
    assert!(eval_adversarial(&oracle(), ents, &pairs).is_err());
}

#[test]
fn suite_runs_end_to_end() {
    let suite = EvalSuite::build(&SuiteSpec {
        corpus: CorpusSpec {
            n_reports: 300,
            seed: 77,
            ..CorpusSpec::default()
        },
        ..SuiteSpec::default()
    })
    .unwrap();
    let r = suite.run(&oracle()).unwrap();
    assert!(r.align.accuracy > 0.95);
    assert_eq!(r.retrieval.macro_f1, 1.0);
    let again = suite.run(&oracle()).unwrap();
    assert_eq!(r, again);
}
