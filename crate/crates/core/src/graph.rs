//! Report graphs and a two-layer graph-convolutional encoder.
//!
//! Nodes are observations (present or absent findings), anatomy (location
//! words) and uncertainty/size modifiers (severity words). Node features are
//! a hashed token embedding followed by a one-hot class code.

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalize_in_place, Mat};
use crate::reports::Report;
use crate::rng;
use rand::{Rng as _, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    #[serde(rename = "ANAT-DP")]
    AnatDp,
    #[serde(rename = "OBS-DP")]
    ObsDp,
    #[serde(rename = "OBS-DA")]
    ObsDa,
    #[serde(rename = "OBS-U")]
    ObsU,
}

impl NodeClass {
    pub const COUNT: usize = 4;

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self as usize] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub token: String,
    pub class: NodeClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGraph {
    pub nodes: Vec<Node>,
    /// Undirected, no self-loops.
    pub edges: Vec<(usize, usize)>,
    pub node_features: Vec<Vec<f64>>,
}

impl ReportGraph {
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<(usize, usize)>, token_dim: usize) -> Result<Self> {
        for &(a, b) in &edges {
            if a >= nodes.len() || b >= nodes.len() {
                return Err(Error::Contract(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::Contract(format!("explicit self-loop at node {a}")));
            }
        }
        let node_features = nodes.iter().map(|n| node_feature(n, token_dim)).collect();
        Ok(Self {
            nodes,
            edges,
            node_features,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn node_feature(node: &Node, token_dim: usize) -> Vec<f64> {
    let mut f = token_embed(&node.token, token_dim);
    f.extend_from_slice(&node.class.one_hot());
    f
}

/// Deterministic hash-seeded unit vector for a token.
pub fn token_embed(token: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 1, "token embedding dimension must be positive");
    let mut r = rng::Rng::seed_from_u64(rng::fnv1a(token.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    if normalize_in_place(&mut v) == 0.0 {
        v[0] = 1.0;
    }
    v
}

/// One observation node per fact; location and severity hang off it.
pub fn build_graph(report: &Report, token_dim: usize) -> ReportGraph {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for fact in report.facts() {
        let obs = nodes.len();
        nodes.push(Node {
            token: fact.entity.noun().to_owned(),
            class: if fact.is_present() {
                NodeClass::ObsDp
            } else {
                NodeClass::ObsDa
            },
        });
        if let Some(loc) = fact.location {
            edges.push((obs, nodes.len()));
            nodes.push(Node {
                token: loc.word().to_owned(),
                class: NodeClass::AnatDp,
            });
        }
        if let Some(sev) = fact.severity {
            edges.push((obs, nodes.len()));
            nodes.push(Node {
                token: sev.word().to_owned(),
                class: NodeClass::ObsU,
            });
        }
    }
    ReportGraph::from_parts(nodes, edges, token_dim).expect("edges built in range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// `D^{-1/2} (A + I) D^{-1/2}`.
    #[default]
    Symmetric,
    /// `D^{-1} (A + I)`.
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GcnOptions {
    #[serde(default)]
    pub adjacency: Adjacency,
    #[serde(default)]
    pub pooling: Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcnDims {
    pub token_dim: usize,
    pub hidden: usize,
    pub out: usize,
}

impl GcnDims {
    pub const DESK: GcnDims = GcnDims {
        token_dim: 16,
        hidden: 8,
        out: 8,
    };
    /// 768-d word embeddings + 4 class slots, 256 hidden, 512 out.
    pub const PAPER: GcnDims = GcnDims {
        token_dim: 768,
        hidden: 256,
        out: 512,
    };

    pub fn input(&self) -> usize {
        self.token_dim + NodeClass::COUNT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// `d_in x d_hidden`.
    pub w1: Mat,
    /// `d_hidden x d_out`.
    pub w2: Mat,
    #[serde(default)]
    pub options: GcnOptions,
}

impl GcnParams {
    pub fn init(dims: GcnDims, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x6C17);
        let d_in = dims.input();
        Self {
            w1: Mat::uniform(d_in, dims.hidden, 1.0 / (d_in as f64).sqrt(), &mut r),
            w2: Mat::uniform(dims.hidden, dims.out, 1.0 / (dims.hidden as f64).sqrt(), &mut r),
            options: GcnOptions::default(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w2.cols
    }
}

pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)], kind: Adjacency) -> Mat {
    let mut a = Mat::identity(n);
    for &(i, j) in edges {
        a[(i, j)] = 1.0;
        a[(j, i)] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= match kind {
                Adjacency::Symmetric => 1.0 / (deg[i] * deg[j]).sqrt(),
                Adjacency::RandomWalk => 1.0 / deg[i],
            };
        }
    }
    a
}

/// Two GCN layers (ReLU between), pooled over nodes, L2-normalized unless zero.
pub fn gcn_encode(g: &ReportGraph, p: &GcnParams) -> Result<Vec<f64>> {
    let d_out = p.out_dim();
    if g.is_empty() {
        return Ok(vec![0.0; d_out]);
    }
    if p.w1.cols != p.w2.rows {
        return Err(Error::shape("gcn hidden", p.w1.cols, p.w2.rows));
    }
    for f in &g.node_features {
        if f.len() != p.w1.rows {
            return Err(Error::shape("gcn input features", p.w1.rows, f.len()));
        }
    }
    let a_hat = normalized_adjacency(g.len(), &g.edges, p.options.adjacency);
    let x = Mat::from_rows(&g.node_features);
    let mut h1 = a_hat.matmul(&x).matmul(&p.w1);
    h1.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let h2 = a_hat.matmul(&h1).matmul(&p.w2);
    let mut out = vec![0.0; d_out];
    match p.options.pooling {
        Pooling::Mean => {
            for i in 0..h2.rows {
                out.iter_mut().zip(h2.row(i)).for_each(|(o, v)| *o += v);
            }
            let n = h2.rows as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        Pooling::Max => {
            out.fill(f64::NEG_INFINITY);
            for i in 0..h2.rows {
                out.iter_mut().zip(h2.row(i)).for_each(|(o, v)| *o = o.max(*v));
            }
        }
    }
    normalize_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, norm};
    use crate::reports::parse_report;

    #[test]
    fn single_absent_fact_graph() {
        let g = build_graph(&parse_report("There is no pneumothorax.").unwrap(), 16);
        assert_eq!(g.len(), 1);
        assert_eq!(g.nodes[0].class, NodeClass::ObsDa);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn severity_location_graph_counts() {
        let g = build_graph(&parse_report("Severe cardiomegaly in the left.").unwrap(), 16);
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges.len(), 2);
        let classes: Vec<NodeClass> = g.nodes.iter().map(|n| n.class).collect();
        assert_eq!(classes, [NodeClass::ObsDp, NodeClass::AnatDp, NodeClass::ObsU]);
        assert_eq!(&g.node_features[1][16..], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_report_encodes_to_zero() {
        let g = build_graph(&Report::default(), 16);
        assert!(g.is_empty());
        let p = GcnParams::init(GcnDims::DESK, 1);
        assert_eq!(gcn_encode(&g, &p).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let g = build_graph(&parse_report("Edema is present.").unwrap(), 12);
        let p = GcnParams::init(GcnDims::DESK, 1);
        assert!(matches!(gcn_encode(&g, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn token_embedding_properties() {
        assert_eq!(token_embed("edema", 16), token_embed("edema", 16));
        assert!((norm(&token_embed("edema", 16)) - 1.0).abs() < 1e-12);
        for t in ["no", "edema", "left"] {
            let v = token_embed(t, 1);
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn distinct_grammar_tokens_are_not_aligned() {
        let mut vocab = std::collections::BTreeSet::new();
        for e in crate::reports::EntityId::findings() {
            for s in crate::reports::absent_variants(e) {
                vocab.extend(Report::new(vec![s]).tokens());
            }
            vocab.insert(e.noun().to_owned());
        }
        for s in crate::reports::Severity::ALL {
            vocab.insert(s.word().to_owned());
        }
        for l in crate::reports::Location::ALL {
            vocab.insert(l.word().to_owned());
        }
        vocab.extend(["present", "there", "is", "in", "on", "the"].map(String::from));
        let v: Vec<&String> = vocab.iter().collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let c = cosine(&token_embed(v[i], 16), &token_embed(v[j], 16));
                assert!(c < 0.9, "{} / {}: {c}", v[i], v[j]);
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_bounded_rows() {
        let a = normalized_adjacency(3, &[(0, 1)], Adjacency::Symmetric);
        assert_eq!(a, a.transpose());
        for i in 0..2 {
            let s: f64 = a.row(i).iter().sum();
            assert!(s > 0.0 && s <= 2.0);
        }
        assert_eq!(a[(2, 2)], 1.0);
    }
}
