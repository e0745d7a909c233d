//! Training batches: paired items with cached model inputs, plus any
//! appended negation hard negatives (extra text candidates).

use crate::clinical::{label_vector, ClinicalLabelVector};
use crate::encoders::text_features;
use crate::graph::{build_graph, ReportGraph};
use crate::reports::{ImageFeature, Pair, Report};

/// A pair with everything derived from its report precomputed.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub report: Report,
    pub image: ImageFeature,
    pub labels: ClinicalLabelVector,
    pub text_features: Vec<f64>,
    pub graph: ReportGraph,
}

impl BatchItem {
    pub fn prepare(pair: &Pair, token_dim: usize, graph_token_dim: usize) -> Self {
        Self {
            text_features: text_features(&pair.report, token_dim),
            graph: build_graph(&pair.report, graph_token_dim),
            labels: label_vector(&pair.report),
            report: pair.report.clone(),
            image: pair.image.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HardNegative {
    pub report: Report,
    /// Row of the batch item this negative was derived from.
    pub source: usize,
    pub text_features: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
    pub hard_negatives: Vec<HardNegative>,
}

impl Batch {
    pub fn new(items: Vec<BatchItem>) -> Self {
        Self {
            items,
            hard_negatives: Vec::new(),
        }
    }

    pub fn from_pairs(pairs: &[Pair], token_dim: usize, graph_token_dim: usize) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|p| BatchItem::prepare(p, token_dim, graph_token_dim))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_hard_negatives(&self) -> usize {
        self.hard_negatives.len()
    }

    /// Text inputs for all `B + H` candidates: batch items first, then negatives.
    pub fn text_inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.items
            .iter()
            .map(|i| i.text_features.as_slice())
            .chain(self.hard_negatives.iter().map(|h| h.text_features.as_slice()))
    }
}
