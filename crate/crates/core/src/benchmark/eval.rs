//! Evaluation protocols over any [`Embedder`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::align::{AlignTriplet, InsertPos};
use crate::clinical::{label_vector, ClinicalLabelVector};
use crate::encoders::Embedder;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize_in_place};
use crate::reports::{
    parse_report, AbsentForm, EntityId, ImageFeature, ImageSpec, Pair, PresentForm, Report,
    NUM_ENTITIES, NUM_FINDINGS,
};

fn cos(a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::cosine(a, b)
}

fn embed_reports<E: Embedder + ?Sized>(model: &E, reports: &[&Report]) -> Result<Vec<Vec<f64>>> {
    reports.par_iter().map(|r| model.embed_text(r)).collect()
}

fn embed_images<E: Embedder + ?Sized>(model: &E, images: &[&ImageFeature]) -> Result<Vec<Vec<f64>>> {
    images.par_iter().map(|x| model.embed_image(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: &'static str,
    pub key: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignResult {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Rows grouped by entity, insert position and template.
    pub breakdown: Vec<GroupRow>,
}

impl AlignResult {
    pub fn group(&self, group: &str) -> impl Iterator<Item = &GroupRow> {
        let group = group.to_string();
        self.breakdown.iter().filter(move |r| r.group == group)
    }
}

fn template_key(t: &AlignTriplet) -> String {
    let family = if t.is_mediastinal() { "mediastinal" } else { "lung" };
    format!("{family}-{}", t.template_id)
}

/// Fraction of triplets whose image is strictly closer to the original report.
pub fn eval_align<E: Embedder + ?Sized>(model: &E, triplets: &[AlignTriplet]) -> Result<AlignResult> {
    if triplets.is_empty() {
        return Err(Error::Contract("alignment evaluation needs at least one triplet".into()));
    }
    let wins: Vec<bool> = triplets
        .par_iter()
        .map(|t| {
            let img = model.embed_image(&t.image)?;
            let a = cos(&img, &model.embed_text(&t.original)?);
            let b = cos(&img, &model.embed_text(&t.perturbed)?);
            Ok(a > b)
        })
        .collect::<Result<_>>()?;

    Ok(tally(triplets, &wins))
}

fn tally(triplets: &[AlignTriplet], wins: &[bool]) -> AlignResult {
    let mut groups: BTreeMap<(&'static str, String), (usize, usize)> = BTreeMap::new();
    for (t, win) in triplets.iter().zip(wins) {
        let keys = [
            ("entity", t.entity.name().to_string()),
            ("position", t.insert_pos.name().to_string()),
            ("template", template_key(t)),
        ];
        for k in keys {
            let e = groups.entry(k).or_default();
            e.0 += 1;
            e.1 += usize::from(*win);
        }
    }
    // Keep positions in reading order rather than alphabetical.
    let pos_rank = |k: &str| InsertPos::ALL.iter().position(|p| p.name() == k);
    let mut breakdown: Vec<GroupRow> = groups
        .into_iter()
        .map(|((group, key), (n, correct))| GroupRow {
            group,
            key,
            n,
            correct,
            accuracy: correct as f64 / n as f64,
        })
        .collect();
    breakdown.sort_by(|a, b| {
        let ga = ["entity", "position", "template"].iter().position(|g| *g == a.group);
        let gb = ["entity", "position", "template"].iter().position(|g| *g == b.group);
        ga.cmp(&gb)
            .then_with(|| pos_rank(&a.key).cmp(&pos_rank(&b.key)))
            .then_with(|| a.key.cmp(&b.key))
    });
    let correct = wins.iter().filter(|w| **w).count();
    AlignResult {
        n: triplets.len(),
        correct,
        accuracy: correct as f64 / triplets.len() as f64,
        breakdown,
    }
}

/// Positive and negative prompt for an entity, rendered through the grammar.
pub fn zeroshot_prompts(entity: EntityId) -> (Report, Report) {
    let pos = PresentForm::ThereIs
        .render(entity, None, None)
        .expect("bare form always renders");
    let neg = AbsentForm::ThereIsNo.render(entity);
    (
        parse_report(&pos).expect("prompt is in the grammar"),
        parse_report(&neg).expect("prompt is in the grammar"),
    )
}

/// Area under the ROC curve of `scores` against `labels`, ties counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks over tied groups, then Mann-Whitney U.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|k| labels[**k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroShotRow {
    pub entity: EntityId,
    pub n: usize,
    pub positives: usize,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroShotResult {
    pub rows: Vec<ZeroShotRow>,
    pub skipped: Vec<EntityId>,
}

impl ZeroShotResult {
    pub fn mean_accuracy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.accuracy))
    }

    pub fn mean_auc(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.auc))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Positive iff the image is strictly closer to the positive prompt.
pub fn eval_zeroshot<E: Embedder + ?Sized>(model: &E, testset: &[Pair]) -> Result<ZeroShotResult> {
    let images: Vec<&ImageFeature> = testset.iter().map(|p| &p.image).collect();
    let img = embed_images(model, &images)?;
    let labels: Vec<ClinicalLabelVector> = testset.iter().map(|p| label_vector(&p.report)).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for e in EntityId::findings() {
        let truth: Vec<bool> = labels.iter().map(|l| l.get(e)).collect();
        let positives = truth.iter().filter(|t| **t).count();
        if positives == 0 || positives == truth.len() {
            log::info!("zero-shot: skipping {e}, {positives} of {} positive", truth.len());
            skipped.push(e);
            continue;
        }
        let (pos, neg) = zeroshot_prompts(e);
        let p = model.embed_text(&pos)?;
        let n = model.embed_text(&neg)?;
        let margins: Vec<f64> = img.iter().map(|v| cos(v, &p) - cos(v, &n)).collect();
        let correct = margins.iter().zip(&truth).filter(|(m, t)| (**m > 0.0) == **t).count();
        rows.push(ZeroShotRow {
            entity: e,
            n: truth.len(),
            positives,
            accuracy: correct as f64 / truth.len() as f64,
            auc: auc(&margins, &truth).expect("both classes present"),
        });
    }
    Ok(ZeroShotResult { rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub n: usize,
    /// Fraction of queries whose retrieved label vector matches exactly.
    pub exact_match: f64,
    pub macro_f1: f64,
    /// Per-label F1; `None` where the label never occurs in truth or prediction.
    pub per_label: Vec<(EntityId, Option<f64>)>,
}

/// Index of the highest-scoring candidate; the first one wins ties.
fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

/// Top-1 report retrieval scored as label prediction.
pub fn eval_retrieval<E: Embedder + ?Sized>(
    model: &E,
    queries: &[Pair],
    gallery: &[Report],
) -> Result<RetrievalResult> {
    if gallery.is_empty() {
        return Err(Error::Contract("retrieval gallery is empty".into()));
    }
    let g: Vec<&Report> = gallery.iter().collect();
    let g_emb = embed_reports(model, &g)?;
    let g_labels: Vec<ClinicalLabelVector> = gallery.iter().map(label_vector).collect();
    let picks: Vec<usize> = queries
        .par_iter()
        .map(|q| {
            let v = model.embed_image(&q.image)?;
            Ok(argmax(g_emb.iter().map(|t| cos(&v, t))))
        })
        .collect::<Result<_>>()?;

    let mut counts = [[0usize; 3]; NUM_ENTITIES];
    let mut exact = 0;
    for (q, pick) in queries.iter().zip(&picks) {
        let truth = label_vector(&q.report);
        let pred = &g_labels[*pick];
        exact += usize::from(truth == *pred);
        for e in EntityId::all() {
            let c = &mut counts[e.index()];
            match (truth.get(e), pred.get(e)) {
                (true, true) => c[0] += 1,
                (false, true) => c[1] += 1,
                (true, false) => c[2] += 1,
                (false, false) => {}
            }
        }
    }
    let per_label: Vec<(EntityId, Option<f64>)> = EntityId::all()
        .map(|e| {
            let [tp, fp, fn_] = counts[e.index()];
            let denom = 2 * tp + fp + fn_;
            (e, (denom > 0).then(|| 2.0 * tp as f64 / denom as f64))
        })
        .collect();
    let n = queries.len();
    Ok(RetrievalResult {
        n,
        exact_match: if n == 0 { f64::NAN } else { exact as f64 / n as f64 },
        macro_f1: mean(per_label.iter().filter_map(|(_, f)| *f)),
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalDetectionResult {
    pub n: usize,
    pub candidates: usize,
    pub top1: f64,
    pub median_rank: f64,
    pub ranks: Vec<usize>,
}

/// Rank (1-based) of the single normal report for each normal image. Ties
/// with an abnormal candidate count against the normal report.
pub fn eval_normal_detection<E: Embedder + ?Sized>(
    model: &E,
    normal_report: &Report,
    abnormal_reports: &[Report],
    normal_images: &[ImageFeature],
) -> Result<NormalDetectionResult> {
    if normal_report.has_present() {
        return Err(Error::Contract("the normal candidate has a present finding".into()));
    }
    if let Some(r) = abnormal_reports.iter().find(|r| !r.has_present()) {
        return Err(Error::Contract(format!("abnormal candidate is normal: {}", r.render())));
    }
    let normal = model.embed_text(normal_report)?;
    let abn: Vec<&Report> = abnormal_reports.iter().collect();
    let abn = embed_reports(model, &abn)?;
    let ranks: Vec<usize> = normal_images
        .par_iter()
        .map(|x| {
            let v = model.embed_image(x)?;
            let s = cos(&v, &normal);
            Ok(1 + abn.iter().filter(|t| cos(&v, t) >= s).count())
        })
        .collect::<Result<_>>()?;
    let n = ranks.len();
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let median_rank = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => sorted[n / 2] as f64,
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    };
    Ok(NormalDetectionResult {
        n,
        candidates: abnormal_reports.len() + 1,
        top1: ranks.iter().filter(|r| **r == 1).count() as f64 / n.max(1) as f64,
        median_rank,
        ranks,
    })
}

/// Prediction by ground truth counts, summed over both entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AdversarialTable {
    pub entities: [EntityId; 2],
    pub present_positive: usize,
    pub present_negative: usize,
    pub absent_positive: usize,
    pub absent_negative: usize,
}

impl AdversarialTable {
    pub fn present_total(&self) -> usize {
        self.present_positive + self.present_negative
    }

    pub fn absent_total(&self) -> usize {
        self.absent_positive + self.absent_negative
    }
}

/// Pairs in which exactly one of the two entities is present.
pub fn adversarial_testset(pairs: &[Pair], a: EntityId, b: EntityId) -> Vec<Pair> {
    pairs
        .iter()
        .filter(|p| {
            let l = label_vector(&p.report);
            l.get(a) != l.get(b)
        })
        .cloned()
        .collect()
}

pub fn eval_adversarial<E: Embedder + ?Sized>(
    model: &E,
    entities: [EntityId; 2],
    testset: &[Pair],
) -> Result<AdversarialTable> {
    let [a, b] = entities;
    if a == b || !a.is_finding() || !b.is_finding() {
        return Err(Error::Contract(format!("need two distinct findings, got {a} and {b}")));
    }
    let truth: Vec<ClinicalLabelVector> = testset.iter().map(|p| label_vector(&p.report)).collect();
    if let Some((p, _)) = testset.iter().zip(&truth).find(|(_, l)| l.get(a) == l.get(b)) {
        return Err(Error::Contract(format!(
            "pair {} does not have exactly one of {a} and {b}",
            p.id
        )));
    }
    let prompts: Vec<(Vec<f64>, Vec<f64>)> = entities
        .iter()
        .map(|e| {
            let (p, n) = zeroshot_prompts(*e);
            Ok((model.embed_text(&p)?, model.embed_text(&n)?))
        })
        .collect::<Result<_>>()?;
    let images: Vec<&ImageFeature> = testset.iter().map(|p| &p.image).collect();
    let img = embed_images(model, &images)?;
    let mut t = AdversarialTable {
        entities,
        present_positive: 0,
        present_negative: 0,
        absent_positive: 0,
        absent_negative: 0,
    };
    for (v, l) in img.iter().zip(&truth) {
        for (e, (p, n)) in entities.iter().zip(&prompts) {
            let positive = cos(v, p) > cos(v, n);
            match (l.get(*e), positive) {
                (true, true) => t.present_positive += 1,
                (true, false) => t.present_negative += 1,
                (false, true) => t.absent_positive += 1,
                (false, false) => t.absent_negative += 1,
            }
        }
    }
    Ok(t)
}

/// Reads labels straight off the generator's image basis and embeds both
/// modalities as the normalized 14-bit label vector.
#[derive(Debug, Clone)]
pub struct LabelOracle {
    basis: Vec<Vec<f64>>,
}

impl LabelOracle {
    pub fn new(spec: &ImageSpec) -> Result<Self> {
        Ok(Self { basis: spec.basis()? })
    }

    pub fn decode(&self, x: &ImageFeature) -> ClinicalLabelVector {
        let mut bits = [false; NUM_FINDINGS];
        for (k, b) in bits.iter_mut().enumerate() {
            *b = dot(x.as_slice(), &self.basis[k]) > 0.5;
        }
        ClinicalLabelVector::from_findings(bits)
    }

    fn embed(l: &ClinicalLabelVector) -> Vec<f64> {
        let mut v = l.as_f64().to_vec();
        normalize_in_place(&mut v);
        v
    }
}

impl Embedder for LabelOracle {
    fn embed_image(&self, x: &ImageFeature) -> Result<Vec<f64>> {
        if x.dim() != self.basis[0].len() {
            return Err(Error::shape("oracle image", self.basis[0].len(), x.dim()));
        }
        Ok(Self::embed(&self.decode(x)))
    }

    fn embed_text(&self, r: &Report) -> Result<Vec<f64>> {
        Ok(Self::embed(&label_vector(r)))
    }
}

/// Monte-Carlo chance baseline: every triplet is scored by its own freshly
/// initialized model. Any single random network carries a systematic
/// preference between original and perturbed text, so the null is taken
/// over parameter draws rather than over triplets.
pub fn eval_align_null(
    dims: crate::encoders::ModelDims,
    triplets: &[AlignTriplet],
    seed: u64,
) -> Result<AlignResult> {
    if triplets.is_empty() {
        return Err(Error::Contract("alignment evaluation needs at least one triplet".into()));
    }
    let results: Vec<AlignResult> = triplets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let model = crate::encoders::ModelParams::init(
                dims,
                0.1,
                crate::encoders::HyperBlock::default(),
                crate::rng::derive(seed, i as u64),
            )?;
            eval_align(&model, std::slice::from_ref(t))
        })
        .collect::<Result<_>>()?;
    let wins: Vec<bool> = results.iter().map(|r| r.correct == 1).collect();
    Ok(tally(triplets, &wins))
}
