//! Synthetic chest-radiograph curation, pneumonia classifier fine-tuning and
//! external validation.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`dataset`]: records, manifests and real-corpus ingestion
//! * [`generation`]: prompt construction, generation providers, crop and curation
//! * [`preprocess`]: resize/normalize and training augmentations
//! * [`model`]: backbone + two-layer head, training, checkpoints, Grad-CAM
//! * [`metrics`]: AUROC/AUPR, percentile bootstrap, ARI and cluster accuracy
//! * [`representation`]: K-means over extracted features and 2-D embeddings
//!
//! Data-parallel loops go through [`par::Execution`]; building without the
//! default `parallel` feature turns all of them sequential.

pub mod dataset;
pub mod error;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod par;
pub mod preprocess;
pub mod raster;
pub mod representation;

pub use error::{Error, Result};
