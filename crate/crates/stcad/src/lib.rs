//! # stcad
//!
//! Anomalous-edge detection in dynamic graphs with a structural-temporal
//! coupling transformer.
//!
//! The pipeline, bottom to top:
//! - [`graph`]: timestamped edge streams, snapshot partitioning, structural
//!   queries, and the `STCG` on-disk format.
//! - [`features`]: per-node level-1 features (PageRank, hop distance, edge
//!   lifetime) and level-2 coupling features (distance / interaction /
//!   common-neighbor change between consecutive snapshots).
//! - [`sampler`]: labeled edge samples with per-timestamp one-hop context
//!   windows, plus negative-edge injection for training and evaluation.
//! - [`tensor`]: a small dense f64 tensor engine with tape-based reverse-mode
//!   differentiation and an Adam optimizer.
//! - [`model`]: the dynamic graph transformer with two-dimensional positional
//!   encoding, edge scoring head, and mask-reconstruct decoder.
//! - [`training`]: discriminative + contextual losses and the end-to-end
//!   deterministic training loop.
//! - [`metrics`]: ROC-AUC and average precision over scored test edges.
//! - [`synthetic`]: a planted-anomaly two-community benchmark generator.

pub mod features;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use features::{FeatureVector, SampleFeatures};
pub use graph::{DynamicGraph, GraphError, NodeId, Snapshot};
pub use metrics::{average_precision, roc_auc, EvalResult, MetricsError};
pub use model::{Model, ModelConfig, ModelError};
pub use sampler::{EdgeSample, SampleError};
pub use tensor::{Parameter, ParamStore, Tape, TensorError};
pub use training::{train, TrainConfig, TrainError, TrainReport};
