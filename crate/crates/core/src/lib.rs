//! Multi-scale multiple-instance learning for whole-slide image classification.
//!
//! The pipeline samples co-located patch triples at scales 1, 1/2 and 1/4 from a
//! slide, turns each patch into a 512-wide feature vector, quantizes the vectors
//! against k-means codebooks into a per-slide bag-of-words histogram and
//! classifies histograms with a binary SVM. Four aggregation strategies are
//! supported:
//!
//! * `baseline`: scale-1 vectors only, width `k`;
//! * `MC`: per-patch concatenation of the three scales (1536-wide vectors), width `k`;
//! * `MA`: all `3·nP` vectors pooled into one codebook, width `k`;
//! * `MM`: one codebook per scale, histograms concatenated, width `3k`.
//!
//! [`harness`] runs repeated stratified holdout experiments over feature bags and
//! generates synthetic datasets with controllable per-scale signal.

pub mod aggregate;
mod binio;
pub mod classify;
pub mod cli;
pub mod codebook;
pub mod error;
pub mod features;
pub mod harness;
pub mod rng;
pub mod slide;
mod types;

pub use error::{Error, Result};
pub use types::{FeatureMatrix, Label, Scale, FEATURE_DIM, PATCH_SIZE, SCALES};
