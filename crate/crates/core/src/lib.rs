//! Multiple-instance logistic regression with soft, crowd-derived bag labels
//! and sparse (L1) training, for lesion-candidate classification.
//!
//! The flow is: reader marks are merged into ground-truth regions
//! ([`marks`]), turned into soft targets ([`labels`]), grouped with lesion
//! candidates into bags ([`evaluation::build_bags`]), fitted by an orthant-wise
//! quasi-Newton solver ([`optimizer`]) and scored with FROC-style tables.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod labels;
pub mod marks;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod sweep;
pub mod synth;

pub use dataset::{export, ingest, Dataset, DatasetPaths, ImageRecord, ModelFile};
pub use error::{Error, Result};
pub use evaluation::{build_bags, froc, Candidate, PseudoGoldenGt, RocTable};
pub use labels::{assign_soft_targets, LabelConfig, SoftTarget};
pub use marks::{merge_marks, EllipseMark, GroundTruthMark, HitConfig};
pub use objective::{Bag, BagKind, ModelWeights, Normalization, NormalizationMode, Objective};
pub use optimizer::{fit, lambda_max, stationarity_certificate, FitResult, OptimizerConfig};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use sweep::{lambda_sweep, LambdaSweepResult};
pub use synth::{synth, SynthConfig};
