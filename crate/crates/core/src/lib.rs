//! Clustering-based contrastive refinement of precomputed embeddings.
//!
//! The pipeline discovers small, high-purity clusters with the first-neighbor
//! hierarchy ([`finch`]), turns them (plus same-frame co-occurrence
//! constraints) into weak positive/negative pairs ([`mining`]), trains a
//! shallow Siamese encoder with a contrastive objective ([`siamese`]), and
//! scores Ward agglomerative clustering of the refined embeddings
//! ([`hac`], [`metrics`]).
//!
//! [`pipeline::run_pipeline`] wires the stages together end to end.

pub mod config;
pub mod data;
pub mod error;
pub mod finch;
pub mod hac;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod mining;
pub mod pipeline;
pub mod siamese;
pub mod synth;
mod union_find;

pub use crate::data::{CooccurrenceSet, FeatureSet, TrackFeatureSet};
pub use crate::error::{CclError, Result};
pub use crate::finch::{finch_hierarchy, FirstNeighborMap, PartitionHierarchy};
pub use crate::hac::{ward_hac, HacResult};
pub use crate::kmeans::{minibatch_kmeans, KMeansConfig};
pub use crate::metrics::{bcubed, wcp, BCubed, ClusteringReport, Purity};
pub use crate::mining::{MiningConfig, PairBatch, PairMiner, PairSource};
pub use crate::pipeline::{run_baseline, run_pipeline, EvalLevel, PipelineConfig};
pub use crate::siamese::{SiameseModel, TrainConfig};
