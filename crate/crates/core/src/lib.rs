//! Semi-supervised grading of whole-slide-style images.
//!
//! The pipeline goes: MST-based foreground segmentation, overlapping patch
//! tiling and labeling, feature extraction, a trainable 4-class classifier,
//! hard-example mining plus collaborative-filtering pseudo-label selection,
//! an EM loop over annotated and unannotated patches, and finally heatmap /
//! classmap rendering with patch- and pixel-level scoring.
//!
//! All real-valued math is generic over the scalar type through the
//! [`Real`] trait (`f32` or `f64`); the aliases at the crate root pin the
//! common `f64` and `f32` instantiations.

pub mod classifier;
pub mod em;
pub mod error;
pub mod features;
pub mod heatmap;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod sample;
pub mod scalar;
pub mod selection;
pub mod synthdata;
pub mod tiling;

pub use error::{Error, Result};
pub use sample::{LabeledSample, PatchId, PatchLabel, Sample};
pub use scalar::Real;

/// `f64` instantiations of the scalar-generic core types.
pub type FeatureVector64 = features::FeatureVector<f64>;
pub type ProbabilityMap64 = classifier::ProbabilityMap<f64>;
pub type Model64 = classifier::Model<f64>;
pub type TrainConfig64 = classifier::TrainConfig<f64>;
pub type EffectiveSet64 = selection::EffectiveSet<f64>;
pub type EmConfig64 = em::EmConfig<f64>;
pub type EmHistory64 = em::EmHistory<f64>;
pub type Heatmap64 = heatmap::Heatmap<f64>;
pub type PatchMetrics64 = metrics::PatchMetrics<f64>;
pub type SegmentationParams64 = imaging::SegmentationParams<f64>;

/// `f32` instantiations, for callers that trade precision for footprint.
pub type FeatureVector32 = features::FeatureVector<f32>;
pub type ProbabilityMap32 = classifier::ProbabilityMap<f32>;
pub type Model32 = classifier::Model<f32>;
pub type Heatmap32 = heatmap::Heatmap<f32>;
pub type SegmentationParams32 = imaging::SegmentationParams<f32>;

/// Number of grading classes (Normal, Benign, InSitu, Invasive).
pub const CLASS_COUNT: usize = 4;
