//! Clinical label vectors: exact per-entity presence bits read off report
//! facts, plus the derived "No Findings" slot.

use serde::{Deserialize, Serialize};

use crate::reports::{EntityId, Report, NUM_ENTITIES, NUM_FINDINGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClinicalLabelVector([bool; NUM_ENTITIES]);

impl ClinicalLabelVector {
    /// Build from the 13 finding bits; the last slot is derived.
    pub fn from_findings(findings: [bool; NUM_FINDINGS]) -> Self {
        let mut bits = [false; NUM_ENTITIES];
        bits[..NUM_FINDINGS].copy_from_slice(&findings);
        bits[NUM_FINDINGS] = !findings.iter().any(|b| *b);
        Self(bits)
    }

    pub fn bits(&self) -> &[bool; NUM_ENTITIES] {
        &self.0
    }

    pub fn get(&self, e: EntityId) -> bool {
        self.0[e.index()]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_normal(&self) -> bool {
        self.0[NUM_FINDINGS]
    }

    pub fn as_f64(&self) -> [f64; NUM_ENTITIES] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }

    /// Copy with one finding cleared and the derived slot recomputed.
    pub fn without(&self, e: EntityId) -> Self {
        let mut f = [false; NUM_FINDINGS];
        f.copy_from_slice(&self.0[..NUM_FINDINGS]);
        if e.is_finding() {
            f[e.index()] = false;
        }
        Self::from_findings(f)
    }
}

pub fn label_vector(report: &Report) -> ClinicalLabelVector {
    let mut f = [false; NUM_FINDINGS];
    for fact in report.facts().filter(|f| f.is_present()) {
        if fact.entity.is_finding() {
            f[fact.entity.index()] = true;
        }
    }
    ClinicalLabelVector::from_findings(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClinicalKernel {
    #[default]
    Cosine,
    Jaccard,
}

/// Cosine of two binary label vectors. Nonnegative bits keep it in `[0, 1]`.
pub fn clinical_similarity(a: &ClinicalLabelVector, b: &ClinicalLabelVector) -> f64 {
    clinical_similarity_with(ClinicalKernel::Cosine, a, b)
}

pub fn clinical_similarity_with(
    kernel: ClinicalKernel,
    a: &ClinicalLabelVector,
    b: &ClinicalLabelVector,
) -> f64 {
    let both = a.0.iter().zip(&b.0).filter(|(x, y)| **x && **y).count() as f64;
    let (na, nb) = (a.count_ones() as f64, b.count_ones() as f64);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    match kernel {
        ClinicalKernel::Cosine => {
            if a == b {
                1.0
            } else {
                both / (na * nb).sqrt()
            }
        }
        ClinicalKernel::Jaccard => both / (na + nb - both),
    }
}
