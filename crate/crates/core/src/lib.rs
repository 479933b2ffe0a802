//! Modular classification from data topology.
//!
//! The pipeline clusters a training set hierarchically, cuts the dendrogram
//! at several levels to cope with density variations, extracts pure
//! same-class clusters ("islets"), trains one small two-class network per
//! islet and lets those networks cooperate with a k-nearest-neighbour
//! fallback.
//!
//! - [`dataset`]: loading, pyramid features, synthetic data, k-fold splits
//! - [`hierarchy`]: Lance-Williams agglomeration into a [`Dendrogram`]
//! - [`multicut`]: variation-coefficient driven multi-level cutting
//! - [`islet`]: pure-cluster extraction
//! - [`mlp`]: sigmoid networks, backpropagation, architecture escalation
//! - [`knn`]: exact k-NN with unanimity rejection
//! - [`ensemble`]: the cooperating classifier and its performance curves
//! - [`protocol`]: the cross-validated curve protocol

pub mod assignment;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod hierarchy;
pub mod islet;
pub mod knn;
pub mod mlp;
pub mod multicut;
pub mod protocol;

pub use dataset::{ClusterSpec, DataSource, Dataset, Label, LabeledPoint};
pub use ensemble::{CurvePoint, ModularClassifier, PipelineConfig};
pub use error::{Error, Result};
pub use hierarchy::{Dendrogram, DistanceMatrix, Linkage};
pub use islet::{Islet, IsletConfig, IsletPartition};
pub use knn::{Decision, ReferenceSet, Source, VoteMode};
pub use mlp::{Layout, Network, TrainParams};
pub use multicut::{Clustering, CutConfig};
