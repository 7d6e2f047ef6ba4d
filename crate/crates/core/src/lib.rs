//! Hybrid detection by probability filtering.
//!
//! A classifier head is trained on backbone embeddings to recognise subspecies, with
//! hybrids given half of their probability mass on each parent. At inference time the
//! class probabilities are turned into an anomaly score: a confident single-class
//! prediction scores low, while mass split across two classes scores high.
//!
//! Modules follow the pipeline: [`data`] (taxonomy, manifests, soft targets),
//! [`embedding`] (feature storage and the external-extractor protocol), [`synth`]
//! (synthetic mimic-species data), [`augment`] (image augmentation), [`trainer`],
//! [`scorer`] and [`svm`] (scoring), and [`metrics`] (AUC, recall, reports).

pub mod augment;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod scorer;
pub mod seed;
pub mod svm;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
