//! Structured radiology reports: one sentence per fact over the fixed
//! 14-entry finding list, a closed sentence grammar, and a long-tailed
//! synthetic corpus generator.

mod corpus;
mod grammar;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt;

pub use corpus::{
    dedup_pairs, generate_corpus, read_corpus_jsonl, write_corpus_jsonl, CorpusRecord, CorpusSpec,
    ImageFeature, ImageSpec, Pair, DEFAULT_ENTITY_FREQUENCY,
};
pub use grammar::{
    absent_variants, detect_negation, grammar_size, parse_report, AbsentForm, PresentForm, NEGATION_LEXICON,
    NORMAL_TEMPLATES,
};

use crate::rng;

/// Index into the canonical finding list. Slot 13 ("No Findings") is derived
/// from the other 13 and never authored as a fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(u8);

pub const NUM_ENTITIES: usize = 14;
pub const NUM_FINDINGS: usize = 13;

const ENTITY_NAMES: [&str; NUM_ENTITIES] = [
    "Cardiomegaly",
    "Lung Opacity",
    "Atelectasis",
    "Lung Lesion",
    "Pleural Effusion",
    "Fracture",
    "Support Devices",
    "Enlarged Cardiomediastinum",
    "Pleural Other",
    "Consolidation",
    "Edema",
    "Pneumothorax",
    "Pneumonia",
    "No Findings",
];

// Surface noun used in sentences. "Pleural Other" is written as pleural thickening.
const ENTITY_NOUNS: [&str; NUM_FINDINGS] = [
    "cardiomegaly",
    "lung opacity",
    "atelectasis",
    "lung lesion",
    "pleural effusion",
    "fracture",
    "support devices",
    "enlarged cardiomediastinum",
    "pleural thickening",
    "consolidation",
    "edema",
    "pneumothorax",
    "pneumonia",
];

impl EntityId {
    pub const CARDIOMEGALY: EntityId = EntityId(0);
    pub const LUNG_OPACITY: EntityId = EntityId(1);
    pub const ATELECTASIS: EntityId = EntityId(2);
    pub const PLEURAL_EFFUSION: EntityId = EntityId(4);
    pub const ENLARGED_CARDIOMEDIASTINUM: EntityId = EntityId(7);
    pub const CONSOLIDATION: EntityId = EntityId(9);
    pub const EDEMA: EntityId = EntityId(10);
    pub const PNEUMOTHORAX: EntityId = EntityId(11);
    pub const PNEUMONIA: EntityId = EntityId(12);
    pub const NO_FINDINGS: EntityId = EntityId(13);

    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_ENTITIES).then_some(EntityId(index as u8))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn name(self) -> &'static str {
        ENTITY_NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ENTITY_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .and_then(Self::new)
    }

    /// Lower-case noun phrase used in rendered sentences.
    pub fn noun(self) -> &'static str {
        ENTITY_NOUNS.get(self.index()).copied().unwrap_or("no findings")
    }

    pub fn is_finding(self) -> bool {
        self.index() < NUM_FINDINGS
    }

    /// Cardiomegaly and enlarged cardiomediastinum share the mediastinal
    /// negation sentences.
    pub fn is_mediastinal(self) -> bool {
        self == Self::CARDIOMEGALY || self == Self::ENLARGED_CARDIOMEDIASTINUM
    }

    pub fn all() -> impl Iterator<Item = EntityId> {
        (0..NUM_ENTITIES).map(|i| EntityId(i as u8))
    }

    pub fn findings() -> impl Iterator<Item = EntityId> {
        (0..NUM_FINDINGS).map(|i| EntityId(i as u8))
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EntityId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        EntityId::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown entity {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Mild, Severity::Moderate, Severity::Severe];

    pub fn word(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Left,
    Right,
    Bilateral,
    Upper,
    Lower,
}

impl Location {
    pub const ALL: [Location; 5] = [
        Location::Left,
        Location::Right,
        Location::Bilateral,
        Location::Upper,
        Location::Lower,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Location::Left => "left",
            Location::Right => "right",
            Location::Bilateral => "bilateral",
            Location::Upper => "upper",
            Location::Lower => "lower",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A single structured statement about one entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub entity: EntityId,
    pub polarity: Polarity,
    pub severity: Option<Severity>,
    pub location: Option<Location>,
    pub negation_phrase: Option<String>,
}

impl Fact {
    pub fn present(entity: EntityId, severity: Option<Severity>, location: Option<Location>) -> Self {
        Self {
            entity,
            polarity: Polarity::Present,
            severity,
            location,
            negation_phrase: None,
        }
    }

    pub fn absent(entity: EntityId, negation_phrase: Option<&str>) -> Self {
        Self {
            entity,
            polarity: Polarity::Absent,
            severity: None,
            location: None,
            negation_phrase: negation_phrase.map(str::to_owned),
        }
    }

    pub fn is_present(&self) -> bool {
        self.polarity == Polarity::Present
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub fact: Fact,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Report {
    pub sentences: Vec<Sentence>,
    pub is_templated_normal: bool,
}

impl Report {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let mut r = Self {
            sentences,
            is_templated_normal: false,
        };
        r.is_templated_normal = NORMAL_TEMPLATES.contains(&r.render().as_str());
        r
    }

    pub fn render(&self) -> String {
        let texts: Vec<&str> = self.sentences.iter().map(|s| s.text.as_str()).collect();
        texts.join(" ")
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.sentences.iter().map(|s| &s.fact)
    }

    /// Facts sorted, for multiset comparison.
    pub fn fact_multiset(&self) -> Vec<Fact> {
        let mut f: Vec<Fact> = self.facts().cloned().collect();
        f.sort();
        f
    }

    pub fn has_present(&self) -> bool {
        self.facts().any(Fact::is_present)
    }

    /// Distinct entities with at least one present fact, in canonical order.
    pub fn present_entities(&self) -> Vec<EntityId> {
        let mut seen = [false; NUM_ENTITIES];
        for f in self.facts().filter(|f| f.is_present()) {
            seen[f.entity.index()] = true;
        }
        EntityId::all().filter(|e| seen[e.index()]).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Lower-cased word tokens with punctuation stripped.
    pub fn tokens(&self) -> Vec<String> {
        self.sentences
            .iter()
            .flat_map(|s| {
                s.text
                    .split(|c: char| !c.is_ascii_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_ascii_lowercase)
            })
            .collect()
    }
}

const SHUFFLE_TAG: u64 = 0x5348_5546;

/// Sentence-order augmentation. The fact multiset and label vector are unchanged.
pub fn shuffle_sentences(report: &Report, seed: u64) -> Report {
    let mut out = report.clone();
    out.sentences.shuffle(&mut rng::stream(seed, SHUFFLE_TAG));
    out.is_templated_normal = NORMAL_TEMPLATES.contains(&out.render().as_str());
    out
}
