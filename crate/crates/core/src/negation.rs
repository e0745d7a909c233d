//! Negation hard negatives: flip one present finding of a report to absent.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, HardNegative};
use crate::encoders::text_features;
use crate::reports::{AbsentForm, Report, NEGATION_LEXICON};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegationStyle {
    /// Always use one lexicon phrase ("no" renders "No pneumothorax.").
    Fixed(String),
    /// Draw the phrase uniformly from the lexicon.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationOptions {
    pub style: NegationStyle,
    /// Number of distinct present entities flipped per negative.
    pub flips: usize,
}

impl Default for NegationOptions {
    fn default() -> Self {
        Self {
            style: NegationStyle::Fixed("no".to_owned()),
            flips: 1,
        }
    }
}

const NEGATE_TAG: u64 = 0x4E47;
const ATTACH_TAG: u64 = 0xA77A;

pub fn negate_report(r: &Report, seed: u64) -> Option<Report> {
    negate_report_with(r, seed, &NegationOptions::default())
}

/// Pick present entities uniformly, replace the first present sentence of each
/// with a lexicon negation and drop that entity's other present sentences.
/// Returns `None` when nothing is present.
pub fn negate_report_with(r: &Report, seed: u64, opts: &NegationOptions) -> Option<Report> {
    let mut rng = rng::stream(seed, NEGATE_TAG);
    let present = r.present_entities();
    if present.is_empty() {
        return None;
    }
    let k = opts.flips.clamp(1, present.len());
    let chosen: Vec<_> = present.choose_multiple(&mut rng, k).copied().collect();
    let mut out = r.sentences.clone();
    for entity in chosen {
        let phrase = match &opts.style {
            NegationStyle::Fixed(p) => p.as_str(),
            NegationStyle::Sampled => NEGATION_LEXICON.choose(&mut rng).copied().unwrap_or("no"),
        };
        let form = AbsentForm::for_phrase(phrase).unwrap_or(AbsentForm::No);
        let first = out
            .iter()
            .position(|s| s.fact.entity == entity && s.fact.is_present())
            .expect("entity listed as present");
        out[first] = form.sentence(entity);
        let mut idx = 0;
        out.retain(|s| {
            let keep = idx <= first || !(s.fact.entity == entity && s.fact.is_present());
            idx += 1;
            keep
        });
    }
    Some(Report::new(out))
}

/// Append negated copies of a seeded `rate` fraction of eligible batch rows as
/// extra text candidates. Returns the extended batch; `H` is
/// `batch.num_hard_negatives()`.
pub fn attach_hard_negatives(batch: Batch, rate: f64, seed: u64, opts: &NegationOptions) -> Batch {
    let mut batch = batch;
    batch.hard_negatives.clear();
    let rate = rate.clamp(0.0, 1.0);
    let eligible: Vec<usize> = (0..batch.len())
        .filter(|&i| batch.items[i].report.has_present())
        .collect();
    let n = (rate * eligible.len() as f64).round() as usize;
    if n == 0 {
        return batch;
    }
    let mut rng = rng::stream(seed, ATTACH_TAG);
    let mut picked: Vec<usize> = eligible.choose_multiple(&mut rng, n).copied().collect();
    picked.sort_unstable();
    let token_dim = batch.items[0].text_features.len();
    for source in picked {
        let neg_seed = rng::derive(seed, source as u64);
        let report = negate_report_with(&batch.items[source].report, neg_seed, opts)
            .expect("eligible rows have a present fact");
        batch.hard_negatives.push(HardNegative {
            text_features: text_features(&report, token_dim),
            report,
            source,
        });
    }
    batch
}
