//! Negation alignment benchmark and the evaluation protocols.

mod align;
mod eval;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use align::{
    check_triplet, generate_align_set, make_align_triplet, negation_template, read_triplets_jsonl,
    write_triplets_jsonl, AlignOptions, AlignTriplet, InsertPos, LUNG_TEMPLATES,
    MEDIASTINAL_TEMPLATES, PRIORITIZED,
};
pub use eval::{
    adversarial_testset, auc, eval_adversarial, eval_align, eval_normal_detection, eval_retrieval,
    eval_align_null, eval_zeroshot, zeroshot_prompts, AdversarialTable, AlignResult, GroupRow, LabelOracle,
    NormalDetectionResult, RetrievalResult, ZeroShotResult, ZeroShotRow,
};

use crate::encoders::Embedder;
use crate::error::Result;
use crate::reports::{
    generate_corpus, parse_report, CorpusSpec, EntityId, ImageFeature, Pair, Report,
    NORMAL_TEMPLATES,
};
use crate::rng;

/// How the held-out evaluation data is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub corpus: CorpusSpec,
    pub align: AlignOptions,
    /// Upper bound on abnormal candidates in normal detection.
    pub max_abnormal_candidates: usize,
    pub adversarial_entities: [EntityId; 2],
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec {
                n_reports: 2000,
                seed: 0xE7A1,
                ..CorpusSpec::default()
            },
            align: AlignOptions::default(),
            max_abnormal_candidates: 2999,
            adversarial_entities: [EntityId::ATELECTASIS, EntityId::PLEURAL_EFFUSION],
        }
    }
}

/// Every evaluation set, generated once and shared across models.
#[derive(Debug, Clone)]
pub struct EvalSuite {
    pub triplets: Vec<AlignTriplet>,
    pub testset: Vec<Pair>,
    pub gallery: Vec<Report>,
    pub normal_report: Report,
    pub abnormal_reports: Vec<Report>,
    pub normal_images: Vec<ImageFeature>,
    pub adversarial_entities: [EntityId; 2],
    pub adversarial: Vec<Pair>,
}

impl EvalSuite {
    pub fn build(spec: &SuiteSpec) -> Result<Self> {
        let pairs = generate_corpus(&spec.corpus)?;
        Ok(Self::from_pairs(&pairs, spec))
    }

    pub fn from_pairs(pairs: &[Pair], spec: &SuiteSpec) -> Self {
        let triplets = generate_align_set(pairs, rng::derive(spec.corpus.seed, 0xA1), &spec.align);
        let mut abnormal_reports: Vec<Report> = Vec::new();
        for p in pairs.iter().filter(|p| p.report.has_present()) {
            if abnormal_reports.len() == spec.max_abnormal_candidates {
                break;
            }
            if !abnormal_reports.contains(&p.report) {
                abnormal_reports.push(p.report.clone());
            }
        }
        let [a, b] = spec.adversarial_entities;
        Self {
            triplets,
            testset: pairs.to_vec(),
            gallery: pairs.iter().map(|p| p.report.clone()).collect(),
            normal_report: parse_report(NORMAL_TEMPLATES[0]).expect("template parses"),
            abnormal_reports,
            normal_images: pairs
                .iter()
                .filter(|p| !p.report.has_present())
                .map(|p| p.image.clone())
                .collect(),
            adversarial_entities: spec.adversarial_entities,
            adversarial: adversarial_testset(pairs, a, b),
        }
    }

    pub fn run<E: Embedder + ?Sized>(&self, model: &E) -> Result<SuiteResult> {
        Ok(SuiteResult {
            align: eval_align(model, &self.triplets)?,
            zeroshot: eval_zeroshot(model, &self.testset)?,
            retrieval: eval_retrieval(model, &self.testset, &self.gallery)?,
            normal: eval_normal_detection(
                model,
                &self.normal_report,
                &self.abnormal_reports,
                &self.normal_images,
            )?,
            adversarial: eval_adversarial(model, self.adversarial_entities, &self.adversarial)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub align: AlignResult,
    pub zeroshot: ZeroShotResult,
    pub retrieval: RetrievalResult,
    pub normal: NormalDetectionResult,
    pub adversarial: AdversarialTable,
}

pub fn write_align_csv<W: Write>(mut w: W, r: &AlignResult) -> Result<()> {
    writeln!(w, "group,key,n,correct,accuracy")?;
    writeln!(w, "all,all,{},{},{}", r.n, r.correct, r.accuracy)?;
    for row in &r.breakdown {
        writeln!(w, "{},{},{},{},{}", row.group, row.key, row.n, row.correct, row.accuracy)?;
    }
    Ok(())
}

pub fn write_zeroshot_csv<W: Write>(mut w: W, r: &ZeroShotResult) -> Result<()> {
    writeln!(w, "entity,n,positives,accuracy,auc")?;
    for row in &r.rows {
        writeln!(w, "{},{},{},{},{}", row.entity, row.n, row.positives, row.accuracy, row.auc)?;
    }
    Ok(())
}

pub fn write_retrieval_csv<W: Write>(mut w: W, r: &RetrievalResult) -> Result<()> {
    writeln!(w, "label,f1")?;
    for (e, f) in &r.per_label {
        match f {
            Some(f) => writeln!(w, "{e},{f}")?,
            None => writeln!(w, "{e},")?,
        }
    }
    writeln!(w, "macro,{}", r.macro_f1)?;
    Ok(())
}

pub fn write_normal_csv<W: Write>(mut w: W, r: &NormalDetectionResult) -> Result<()> {
    writeln!(w, "n,candidates,top1,median_rank")?;
    writeln!(w, "{},{},{},{}", r.n, r.candidates, r.top1, r.median_rank)?;
    Ok(())
}

pub fn write_adversarial_csv<W: Write>(mut w: W, t: &AdversarialTable) -> Result<()> {
    writeln!(w, "prediction,present,absent")?;
    writeln!(w, "positive,{},{}", t.present_positive, t.absent_positive)?;
    writeln!(w, "negative,{},{}", t.present_negative, t.absent_negative)?;
    Ok(())
}
