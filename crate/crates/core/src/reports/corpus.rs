//! Synthetic long-tailed report/image corpora.
//!
//! Image features stand in for pixels: a fixed orthonormal embedding of the
//! clinical label vector, plus severity/location offsets and Gaussian noise.
//! The embedding basis depends only on [`ImageSpec::basis_seed`], so train and
//! test corpora drawn with different sampling seeds share one image "world".

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    absent_variants, parse_report, EntityId, Fact, Location, PresentForm, Report, Sentence,
    Severity, NORMAL_TEMPLATES, NUM_ENTITIES, NUM_FINDINGS,
};
use crate::clinical::label_vector;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize_in_place};
use crate::rng;

/// Long-tailed finding frequencies loosely shaped like public chest X-ray
/// label counts (support devices and effusion common, pleural other rare).
pub const DEFAULT_ENTITY_FREQUENCY: [f64; NUM_FINDINGS] = [
    0.12, 0.15, 0.13, 0.03, 0.15, 0.02, 0.16, 0.03, 0.01, 0.05, 0.09, 0.03, 0.03,
];

// Relative counts of the three most frequent boilerplate impressions.
const TEMPLATE_WEIGHTS: [f64; 3] = [37_962.0, 10_806.0, 10_744.0];

const FINDING_COUNT_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageSpec {
    pub dim: usize,
    pub noise_sigma: f64,
    pub severity_scale: f64,
    pub location_scale: f64,
    pub basis_seed: u64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            noise_sigma: 0.1,
            severity_scale: 0.3,
            location_scale: 0.3,
            basis_seed: 0x1A6E_BA51,
        }
    }
}

const BASIS_TAG: u64 = 0xBA515;

impl ImageSpec {
    /// Number of orthonormal directions: 14 labels, 3 severities, 5 locations.
    pub const DIRECTIONS: usize = NUM_ENTITIES + 3 + 5;

    /// Orthonormal directions via Gram-Schmidt on seeded Gaussian draws.
    pub fn basis(&self) -> Result<Vec<Vec<f64>>> {
        if self.dim < Self::DIRECTIONS {
            return Err(Error::Config(format!(
                "image dim {} is below the {} required directions",
                self.dim,
                Self::DIRECTIONS
            )));
        }
        let mut r = rng::stream(self.basis_seed, BASIS_TAG);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(Self::DIRECTIONS);
        while basis.len() < Self::DIRECTIONS {
            let mut v: Vec<f64> = (0..self.dim).map(|_| r.sample(StandardNormal)).collect();
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            if normalize_in_place(&mut v) > 1e-6 {
                basis.push(v);
            }
        }
        Ok(basis)
    }

    /// Noise-free image for a report.
    pub fn clean_feature(&self, basis: &[Vec<f64>], report: &Report) -> ImageFeature {
        let mut x = vec![0.0; self.dim];
        let labels = label_vector(report);
        for (e, on) in labels.bits().iter().enumerate() {
            if *on {
                x.iter_mut().zip(&basis[e]).for_each(|(a, b)| *a += b);
            }
        }
        for f in report.facts().filter(|f| f.is_present()) {
            if let Some(s) = f.severity {
                let d = &basis[NUM_ENTITIES + s.index()];
                x.iter_mut().zip(d).for_each(|(a, b)| *a += self.severity_scale * b);
            }
            if let Some(l) = f.location {
                let d = &basis[NUM_ENTITIES + 3 + l.index()];
                x.iter_mut().zip(d).for_each(|(a, b)| *a += self.location_scale * b);
            }
        }
        ImageFeature(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageFeature(pub Vec<f64>);

impl ImageFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_reports: usize,
    pub normal_fraction: f64,
    /// Fraction of normal reports drawn from the fixed boilerplate templates.
    pub duplicate_mass: f64,
    pub entity_frequency: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub image: ImageSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_reports: 2000,
            normal_fraction: 0.3,
            duplicate_mass: 0.7,
            entity_frequency: DEFAULT_ENTITY_FREQUENCY.to_vec(),
            seed: 0,
            image: ImageSpec::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_reports == 0 {
            return Err(Error::EmptyCorpus);
        }
        for (name, v) in [
            ("normal_fraction", self.normal_fraction),
            ("duplicate_mass", self.duplicate_mass),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.entity_frequency.len() != NUM_FINDINGS {
            return Err(Error::shape(
                "entity_frequency",
                NUM_FINDINGS,
                self.entity_frequency.len(),
            ));
        }
        let total: f64 = self.entity_frequency.iter().sum();
        if self.entity_frequency.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || total <= 0.0 {
            return Err(Error::Config(
                "entity_frequency must be nonnegative with positive sum".into(),
            ));
        }
        Ok(())
    }

    /// Entity weights normalized to sum to one.
    pub fn normalized_frequency(&self) -> Vec<f64> {
        let total: f64 = self.entity_frequency.iter().sum();
        self.entity_frequency.iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: u64,
    pub report: Report,
    pub image: ImageFeature,
}

const CORPUS_TAG: u64 = 0xC0_4905;

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Pair>> {
    spec.validate()?;
    let basis = spec.image.basis()?;
    let noise = Normal::new(0.0, spec.image.noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let entity_dist = WeightedIndex::new(&spec.entity_frequency)
        .map_err(|e| Error::Config(format!("entity_frequency: {e}")))?;
    let template_dist = WeightedIndex::new(TEMPLATE_WEIGHTS).expect("static weights");
    let count_dist = WeightedIndex::new(FINDING_COUNT_WEIGHTS).expect("static weights");
    let templates: Vec<Report> = NORMAL_TEMPLATES
        .iter()
        .map(|t| parse_report(t).expect("templates are in the grammar"))
        .collect();

    let mut r = rng::stream(spec.seed, CORPUS_TAG);
    let mut out = Vec::with_capacity(spec.n_reports);
    for id in 0..spec.n_reports {
        let report = if r.random::<f64>() < spec.normal_fraction {
            if r.random::<f64>() < spec.duplicate_mass {
                templates[template_dist.sample(&mut r)].clone()
            } else {
                random_normal(&mut r)
            }
        } else {
            let k = count_dist.sample(&mut r) + 1;
            random_abnormal(&mut r, k, &entity_dist)
        };
        let mut image = spec.image.clean_feature(&basis, &report);
        for v in image.0.iter_mut() {
            *v += noise.sample(&mut r);
        }
        out.push(Pair {
            id: id as u64,
            report,
            image,
        });
    }
    Ok(out)
}

fn random_normal(r: &mut rng::Rng) -> Report {
    let n = r.random_range(2..=4);
    let entities: Vec<EntityId> = EntityId::findings().collect();
    let chosen: Vec<EntityId> = entities.choose_multiple(r, n).copied().collect();
    let sentences = chosen
        .into_iter()
        .map(|e| absent_variants(e).choose(r).expect("nonempty").clone())
        .collect();
    Report::new(sentences)
}

fn random_abnormal(r: &mut rng::Rng, k: usize, entity_dist: &WeightedIndex<f64>) -> Report {
    let mut sentences = Vec::new();
    let mut present = [false; NUM_FINDINGS];
    for _ in 0..k {
        let e = EntityId::new(entity_dist.sample(r)).expect("finding index");
        present[e.index()] = true;
        let severity = (r.random::<f64>() < 0.5).then(|| *Severity::ALL.choose(r).unwrap());
        let location = (r.random::<f64>() < 0.5).then(|| *Location::ALL.choose(r).unwrap());
        let fallback = if r.random::<bool>() {
            PresentForm::ThereIs
        } else {
            PresentForm::IsPresent
        };
        sentences.push(Sentence::present(e, severity, location, fallback));
    }
    let candidates: Vec<EntityId> = EntityId::findings().filter(|e| !present[e.index()]).collect();
    let m = r.random_range(0..=2);
    for e in candidates.choose_multiple(r, m).copied().collect::<Vec<_>>() {
        sentences.push(absent_variants(e).choose(r).expect("nonempty").clone());
    }
    sentences.shuffle(r);
    Report::new(sentences)
}

/// Drop byte-identical duplicate reports, keeping the first occurrence.
pub fn dedup_pairs(pairs: &[Pair]) -> Vec<Pair> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.report.render()))
        .cloned()
        .collect()
}

/// One line of the persisted corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub report_text: String,
    pub facts: Vec<Fact>,
    pub image_feature: Vec<f64>,
    pub id: u64,
}

impl From<&Pair> for CorpusRecord {
    fn from(p: &Pair) -> Self {
        Self {
            report_text: p.report.render(),
            facts: p.report.facts().cloned().collect(),
            image_feature: p.image.0.clone(),
            id: p.id,
        }
    }
}

pub fn write_corpus_jsonl<W: Write>(mut w: W, pairs: &[Pair]) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, &CorpusRecord::from(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus_jsonl<R: BufRead>(r: R) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)?;
        let report = parse_report(&rec.report_text)?;
        if report.facts().cloned().collect::<Vec<_>>() != rec.facts {
            return Err(Error::Contract(format!(
                "record {}: facts disagree with report text",
                rec.id
            )));
        }
        out.push(Pair {
            id: rec.id,
            report,
            image: ImageFeature(rec.image_feature),
        });
    }
    Ok(out)
}
