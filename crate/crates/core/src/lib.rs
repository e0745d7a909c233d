//! Clinically-weighted soft-label contrastive learning on paired
//! image-like features and structured radiology reports.
//!
//! The pipeline: [`reports`] generates and parses a long-tailed synthetic
//! corpus; [`encoders`] maps images and reports into a shared unit sphere;
//! [`softlabel`] fuses textual, clinical and graph similarity into soft
//! targets; [`negation`] appends negated reports as hard negatives; [`loss`]
//! scores the batch with a symmetric soft cross-entropy and its analytic
//! gradient; [`trainer`] runs seeded mini-batch optimization; [`benchmark`]
//! builds the negation alignment set and runs the evaluation protocols.

pub mod batch;
pub mod benchmark;
pub mod checkpoint;
pub mod clinical;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod loss;
pub mod negation;
pub mod reports;
pub mod rng;
pub mod softlabel;
pub mod trainer;

pub use batch::{Batch, BatchItem, HardNegative};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use clinical::{clinical_similarity, label_vector, ClinicalKernel, ClinicalLabelVector};
pub use encoders::{
    cosine_logits, encode_image, encode_text, Embedder, HyperBlock, ModelDims, ModelParams,
};
pub use error::{Error, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{build_graph, gcn_encode, token_embed, GcnParams, ReportGraph};
pub use loss::{compute_targets, loss_and_grad, soft_contrastive_loss, LossReport, Targets};
pub use negation::{attach_hard_negatives, negate_report, NegationOptions};
pub use reports::{
    generate_corpus, parse_report, shuffle_sentences, CorpusSpec, EntityId, Fact, ImageFeature,
    Pair, Report,
};
pub use softlabel::{batch_similarities, fuse_targets, SimilarityBundle, SoftTargetMatrix};
pub use benchmark::{EvalSuite, LabelOracle, SuiteResult, SuiteSpec};
pub use trainer::{ablation_matrix, train, train_to_dir, EpochMetrics, Optimizer, TrainConfig, TrainOutcome};
