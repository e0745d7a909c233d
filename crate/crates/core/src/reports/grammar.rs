//! The closed sentence grammar. Every sentence the generator, the negation
//! operator, or the alignment benchmark can emit is enumerated once into a
//! lookup table, so parsing is an exact inverse of rendering.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{EntityId, Fact, Location, Report, Sentence, Severity};
use crate::error::{Error, Result};

pub const NEGATION_LEXICON: [&str; 8] = [
    "no",
    "not",
    "without",
    "resolved",
    "removed",
    "rule out",
    "free of",
    "absence of",
];

/// Boilerplate fully-normal reports. These are the byte-identical duplicates
/// that dominate real corpora.
pub const NORMAL_TEMPLATES: [&str; 3] = [
    "The heart size is normal. Lungs are clear. No pleural effusion. No pneumothorax.",
    "There is no consolidation. No pleural effusion. No pneumothorax. The cardiomediastinal silhouette is normal.",
    "Lungs are clear. No pleural effusion. No pneumothorax. The cardiac silhouette is unremarkable.",
];

// Fixed absent sentences without an entity slot.
const SPECIAL_ABSENT: [(&str, EntityId); 5] = [
    ("The cardiomediastinal silhouette is normal.", EntityId::ENLARGED_CARDIOMEDIASTINUM),
    ("The cardiac silhouette is unremarkable.", EntityId::CARDIOMEGALY),
    ("The heart size is normal.", EntityId::CARDIOMEGALY),
    ("The cardiomediastinal silhouette is within normal limits.", EntityId::ENLARGED_CARDIOMEDIASTINUM),
    ("Lungs are clear.", EntityId::LUNG_OPACITY),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresentForm {
    /// "Edema is present."
    IsPresent,
    /// "There is edema."
    ThereIs,
    /// "Mild edema."
    Severity,
    /// "Edema is present on the left."
    Location,
    /// "Mild edema in the left."
    SeverityLocation,
}

impl PresentForm {
    pub const ALL: [PresentForm; 5] = [
        PresentForm::IsPresent,
        PresentForm::ThereIs,
        PresentForm::Severity,
        PresentForm::Location,
        PresentForm::SeverityLocation,
    ];

    pub fn render(
        self,
        entity: EntityId,
        severity: Option<Severity>,
        location: Option<Location>,
    ) -> Option<String> {
        let n = entity.noun();
        let s = match (self, severity, location) {
            (PresentForm::IsPresent, None, None) => format!("{n} is present"),
            (PresentForm::ThereIs, None, None) => format!("there is {n}"),
            (PresentForm::Severity, Some(s), None) => format!("{} {n}", s.word()),
            (PresentForm::Location, None, Some(l)) => format!("{n} is present on the {}", l.word()),
            (PresentForm::SeverityLocation, Some(s), Some(l)) => {
                format!("{} {n} in the {}", s.word(), l.word())
            }
            _ => return None,
        };
        Some(finish(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbsentForm {
    No,
    ThereIsNo,
    NoSeen,
    NoObserved,
    NoEvidence,
    NotSeen,
    Without,
    Resolved,
    Removed,
    RuleOut,
    FreeOf,
    AbsenceOf,
}

impl AbsentForm {
    pub const ALL: [AbsentForm; 12] = [
        AbsentForm::No,
        AbsentForm::ThereIsNo,
        AbsentForm::NoSeen,
        AbsentForm::NoObserved,
        AbsentForm::NoEvidence,
        AbsentForm::NotSeen,
        AbsentForm::Without,
        AbsentForm::Resolved,
        AbsentForm::Removed,
        AbsentForm::RuleOut,
        AbsentForm::FreeOf,
        AbsentForm::AbsenceOf,
    ];

    /// One representative form per lexicon phrase, in lexicon order.
    pub fn for_phrase(phrase: &str) -> Option<AbsentForm> {
        Some(match phrase {
            "no" => AbsentForm::No,
            "not" => AbsentForm::NotSeen,
            "without" => AbsentForm::Without,
            "resolved" => AbsentForm::Resolved,
            "removed" => AbsentForm::Removed,
            "rule out" => AbsentForm::RuleOut,
            "free of" => AbsentForm::FreeOf,
            "absence of" => AbsentForm::AbsenceOf,
            _ => return None,
        })
    }

    pub fn render(self, entity: EntityId) -> String {
        let n = entity.noun();
        let s = match self {
            AbsentForm::No => format!("no {n}"),
            AbsentForm::ThereIsNo => format!("there is no {n}"),
            AbsentForm::NoSeen => format!("no {n} is seen"),
            AbsentForm::NoObserved => format!("no {n} is observed"),
            AbsentForm::NoEvidence => format!("no evidence of {n}"),
            AbsentForm::NotSeen => format!("{n} is not seen"),
            AbsentForm::Without => format!("the chest is without {n}"),
            AbsentForm::Resolved => format!("{n} has resolved"),
            AbsentForm::Removed => format!("{n} has been removed"),
            AbsentForm::RuleOut => format!("rule out {n}"),
            AbsentForm::FreeOf => format!("the chest is free of {n}"),
            AbsentForm::AbsenceOf => format!("absence of {n}"),
        };
        finish(&s)
    }

    pub fn sentence(self, entity: EntityId) -> Sentence {
        let text = self.render(entity);
        let phrase = detect_negation(&text);
        Sentence {
            text,
            fact: Fact::absent(entity, phrase),
        }
    }
}

impl Sentence {
    /// Render a present fact, choosing the only form compatible with its
    /// attributes (or `fallback` when it carries none).
    pub fn present(
        entity: EntityId,
        severity: Option<Severity>,
        location: Option<Location>,
        fallback: PresentForm,
    ) -> Sentence {
        let form = match (severity, location) {
            (Some(_), Some(_)) => PresentForm::SeverityLocation,
            (Some(_), None) => PresentForm::Severity,
            (None, Some(_)) => PresentForm::Location,
            (None, None) => match fallback {
                PresentForm::ThereIs => PresentForm::ThereIs,
                _ => PresentForm::IsPresent,
            },
        };
        let text = form
            .render(entity, severity, location)
            .expect("form chosen from attributes");
        Sentence {
            text,
            fact: Fact::present(entity, severity, location),
        }
    }
}

/// Every absent sentence the grammar can express for `entity`.
pub fn absent_variants(entity: EntityId) -> Vec<Sentence> {
    let mut out: Vec<Sentence> = AbsentForm::ALL.iter().map(|f| f.sentence(entity)).collect();
    for (text, e) in SPECIAL_ABSENT {
        if e == entity {
            out.push(Sentence {
                text: text.to_owned(),
                fact: Fact::absent(e, detect_negation(text)),
            });
        }
    }
    out
}

/// Earliest lexicon phrase occurring on word boundaries; longer phrases win ties.
pub fn detect_negation(text: &str) -> Option<&'static str> {
    let words: Vec<String> = words(text).collect();
    let mut best: Option<(usize, usize, &'static str)> = None;
    for phrase in NEGATION_LEXICON {
        let pw: Vec<&str> = phrase.split(' ').collect();
        if pw.len() > words.len() {
            continue;
        }
        if let Some(pos) = (0..=words.len() - pw.len())
            .find(|&i| words[i..i + pw.len()].iter().zip(&pw).all(|(a, b)| a == b))
        {
            let better = match best {
                None => true,
                Some((p, l, _)) => pos < p || (pos == p && pw.len() > l),
            };
            if better {
                best = Some((pos, pw.len(), phrase));
            }
        }
    }
    best.map(|(_, _, p)| p)
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
}

fn finish(lower: &str) -> String {
    let mut c = lower.chars();
    match c.next() {
        Some(first) => format!("{}{}.", first.to_ascii_uppercase(), c.as_str()),
        None => String::new(),
    }
}

fn key(sentence: &str) -> String {
    words(sentence).collect::<Vec<_>>().join(" ")
}

fn table() -> &'static HashMap<String, Sentence> {
    static TABLE: OnceLock<HashMap<String, Sentence>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = HashMap::new();
        let mut add = |s: Sentence| {
            let k = key(&s.text);
            if let Some(prev) = t.get(&k) {
                assert_eq!(prev, &s, "ambiguous grammar entry {k:?}");
            } else {
                t.insert(k, s);
            }
        };
        for e in EntityId::findings() {
            for form in PresentForm::ALL {
                let sevs = std::iter::once(None).chain(Severity::ALL.map(Some));
                for sev in sevs {
                    let locs = std::iter::once(None).chain(Location::ALL.map(Some));
                    for loc in locs {
                        if let Some(text) = form.render(e, sev, loc) {
                            add(Sentence {
                                text,
                                fact: Fact::present(e, sev, loc),
                            });
                        }
                    }
                }
            }
            for s in absent_variants(e) {
                add(s);
            }
        }
        t
    })
}

/// Number of distinct sentences in the grammar.
pub fn grammar_size() -> usize {
    table().len()
}

/// Parse text produced by the grammar back into a structured report.
pub fn parse_report(text: &str) -> Result<Report> {
    let mut sentences = Vec::new();
    for raw in text.split('.') {
        let k = key(raw);
        if k.is_empty() {
            continue;
        }
        match table().get(&k) {
            Some(s) => sentences.push(s.clone()),
            None => {
                return Err(Error::Parse {
                    sentence: raw.trim().to_owned(),
                })
            }
        }
    }
    Ok(Report::new(sentences))
}
