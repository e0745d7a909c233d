//! Negation alignment triplets: an image, its true report, and a copy in
//! which one present finding has been removed and replaced by a negated
//! statement inserted at the beginning, middle, or end.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clinical::label_vector;
use crate::error::{Error, Result};
use crate::reports::{
    parse_report, AbsentForm, EntityId, ImageFeature, Pair, Report, Sentence,
    DEFAULT_ENTITY_FREQUENCY, NUM_FINDINGS,
};
use crate::rng;

/// Sentences inserted when a mediastinal finding is chosen, by template id.
pub const MEDIASTINAL_TEMPLATES: [&str; 5] = [
    "The cardiomediastinal silhouette is normal.",
    "The cardiac silhouette is unremarkable.",
    "The heart size is normal.",
    "The cardiomediastinal silhouette is within normal limits.",
    "No cardiomegaly.",
];

/// Negation templates for every other finding, by template id.
pub const LUNG_TEMPLATES: [AbsentForm; 4] = [
    AbsentForm::NoSeen,
    AbsentForm::NoObserved,
    AbsentForm::ThereIsNo,
    AbsentForm::NoEvidence,
];

/// Findings whose negations are common enough to be over-sampled.
pub const PRIORITIZED: [EntityId; 6] = [
    EntityId::CARDIOMEGALY,
    EntityId::ATELECTASIS,
    EntityId::EDEMA,
    EntityId::PLEURAL_EFFUSION,
    EntityId::PNEUMOTHORAX,
    EntityId::CONSOLIDATION,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertPos {
    Begin,
    Middle,
    End,
}

impl InsertPos {
    pub const ALL: [InsertPos; 3] = [InsertPos::Begin, InsertPos::Middle, InsertPos::End];

    pub fn name(self) -> &'static str {
        match self {
            InsertPos::Begin => "begin",
            InsertPos::Middle => "middle",
            InsertPos::End => "end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignTriplet {
    pub id: u64,
    pub image: ImageFeature,
    pub original: Report,
    pub perturbed: Report,
    pub entity: EntityId,
    pub insert_pos: InsertPos,
    pub template_id: usize,
    /// Sentence index of the inserted negation within `perturbed`.
    pub inserted_index: usize,
}

impl AlignTriplet {
    pub fn is_mediastinal(&self) -> bool {
        self.entity.is_mediastinal()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Per-finding selection weights (13 entries).
    pub entity_weights: Vec<f64>,
    /// Multiplier applied to [`PRIORITIZED`] findings.
    pub priority_boost: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            entity_weights: DEFAULT_ENTITY_FREQUENCY.to_vec(),
            priority_boost: 2.0,
        }
    }
}

/// Rendered negation for a finding and template id, if the id is valid.
pub fn negation_template(entity: EntityId, template_id: usize) -> Option<Sentence> {
    let text = if entity.is_mediastinal() {
        MEDIASTINAL_TEMPLATES.get(template_id)?.to_string()
    } else {
        LUNG_TEMPLATES.get(template_id)?.render(entity)
    };
    let r = parse_report(&text).expect("templates are in the grammar");
    r.sentences.into_iter().next()
}

const ALIGN_TAG: u64 = 0xA119;

pub fn make_align_triplet(pair: &Pair, seed: u64, opts: &AlignOptions) -> Option<AlignTriplet> {
    let present = pair.report.present_entities();
    if present.is_empty() || opts.entity_weights.len() != NUM_FINDINGS {
        return None;
    }
    let mut r = rng::stream(seed, ALIGN_TAG);
    let weights: Vec<f64> = present
        .iter()
        .map(|e| {
            let w = opts.entity_weights[e.index()];
            if PRIORITIZED.contains(e) {
                w * opts.priority_boost
            } else {
                w
            }
        })
        .collect();
    let entity = match WeightedIndex::new(&weights) {
        Ok(d) => present[d.sample(&mut r)],
        Err(_) => *present.choose(&mut r)?,
    };
    let n_templates = if entity.is_mediastinal() {
        MEDIASTINAL_TEMPLATES.len()
    } else {
        LUNG_TEMPLATES.len()
    };
    let template_id = r.random_range(0..n_templates);
    let inserted = negation_template(entity, template_id)?;

    let mut sentences: Vec<Sentence> = pair
        .report
        .sentences
        .iter()
        .filter(|s| s.fact.entity != entity)
        .cloned()
        .collect();
    let m = sentences.len();
    let choices: &[InsertPos] = match m {
        0 => &[InsertPos::Begin],
        1 => &[InsertPos::Begin, InsertPos::End],
        _ => &InsertPos::ALL,
    };
    let insert_pos = *choices.choose(&mut r)?;
    let inserted_index = match insert_pos {
        InsertPos::Begin => 0,
        InsertPos::End => m,
        InsertPos::Middle => r.random_range(1..m),
    };
    sentences.insert(inserted_index, inserted);
    Some(AlignTriplet {
        id: pair.id,
        image: pair.image.clone(),
        original: pair.report.clone(),
        perturbed: Report::new(sentences),
        entity,
        insert_pos,
        template_id,
        inserted_index,
    })
}

/// One triplet per eligible pair, each with its own derived seed.
pub fn generate_align_set(pairs: &[Pair], seed: u64, opts: &AlignOptions) -> Vec<AlignTriplet> {
    pairs
        .iter()
        .filter_map(|p| make_align_triplet(p, rng::derive(seed, p.id), opts))
        .collect()
}

/// Independent validity check: the perturbed text parses back to itself, its
/// labels equal the original's with the chosen bit cleared, the only sentence
/// mentioning the entity is the inserted negation, and nothing else changed.
pub fn check_triplet(t: &AlignTriplet) -> Result<()> {
    let fail = |msg: String| Err(Error::Contract(format!("triplet {}: {msg}", t.id)));
    let reparsed = parse_report(&t.perturbed.render())?;
    if reparsed != t.perturbed {
        return fail("perturbed report does not round-trip".into());
    }
    if !label_vector(&t.original).get(t.entity) {
        return fail(format!("{} is not present in the original", t.entity));
    }
    if label_vector(&reparsed) != label_vector(&t.original).without(t.entity) {
        return fail("label vector is not the original with one bit cleared".into());
    }
    let Some(expected) = negation_template(t.entity, t.template_id) else {
        return fail(format!("template {} out of range", t.template_id));
    };
    match reparsed.sentences.get(t.inserted_index) {
        Some(s) if *s == expected && !s.fact.is_present() => {}
        _ => return fail("inserted sentence missing or altered".into()),
    }
    let negates = expected.fact.entity == t.entity
        || (t.entity.is_mediastinal() && expected.fact.entity.is_mediastinal());
    if !negates {
        return fail("inserted sentence does not negate the chosen entity".into());
    }
    let rest: Vec<&Sentence> = reparsed
        .sentences
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t.inserted_index)
        .map(|(_, s)| s)
        .collect();
    if rest.iter().any(|s| s.fact.entity == t.entity) {
        return fail("entity still mentioned outside the inserted sentence".into());
    }
    let kept: Vec<&Sentence> = t
        .original
        .sentences
        .iter()
        .filter(|s| s.fact.entity != t.entity)
        .collect();
    if rest != kept {
        return fail("unrelated sentences changed".into());
    }
    let m = kept.len();
    let pos_ok = match t.insert_pos {
        InsertPos::Begin => t.inserted_index == 0,
        InsertPos::End => t.inserted_index == m,
        InsertPos::Middle => t.inserted_index > 0 && t.inserted_index < m,
    };
    if !pos_ok {
        return fail(format!("{} insertion at index {}", t.insert_pos.name(), t.inserted_index));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    id: u64,
    entity: EntityId,
    insert_pos: InsertPos,
    template_id: usize,
    inserted_index: usize,
    original: String,
    perturbed: String,
    image_feature: Vec<f64>,
}

pub fn write_triplets_jsonl<W: Write>(mut w: W, triplets: &[AlignTriplet]) -> Result<()> {
    for t in triplets {
        let rec = TripletRecord {
            id: t.id,
            entity: t.entity,
            insert_pos: t.insert_pos,
            template_id: t.template_id,
            inserted_index: t.inserted_index,
            original: t.original.render(),
            perturbed: t.perturbed.render(),
            image_feature: t.image.0.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triplets_jsonl<R: BufRead>(r: R) -> Result<Vec<AlignTriplet>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripletRecord = serde_json::from_str(&line)?;
        out.push(AlignTriplet {
            id: rec.id,
            image: ImageFeature(rec.image_feature),
            original: parse_report(&rec.original)?,
            perturbed: parse_report(&rec.perturbed)?,
            entity: rec.entity,
            insert_pos: rec.insert_pos,
            template_id: rec.template_id,
            inserted_index: rec.inserted_index,
        });
    }
    Ok(out)
}
