//! Flow-record intrusion-detection pipeline.
//!
//! The crate covers every stage between a CIC-IDS style CSV export and a
//! per-class metric report:
//!
//! - [`ingest`]: CSV loading, cleaning, label encoding and stratified splits
//! - [`normalize`]: min-max scaling, Pearson correlation, histograms
//! - [`fcbf`]: fast correlation-based filter over symmetrical uncertainty
//! - [`pca`]: covariance eigendecomposition (cyclic Jacobi)
//! - [`balance`]: k-means clustering followed by per-cluster SMOTE
//! - [`models`]: random forest and a small 1-D CNN with analytic gradients
//! - [`hpo`]: tree-structured Parzen estimator search
//! - [`evaluate`]: confusion matrices, one-vs-rest metrics, reports
//! - [`pipeline`]: config-driven orchestration with stage caching
//! - [`synth`]: seeded synthetic flow data for desk-scale experiments

pub mod balance;
pub mod error;
pub mod evaluate;
pub mod fcbf;
pub mod hpo;
pub mod ingest;
pub mod matrix;
pub mod models;
pub mod normalize;
pub mod pca;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use ingest::{Dataset, LabelMap, RowOrigin, SplitSpec};
pub use matrix::Matrix;
