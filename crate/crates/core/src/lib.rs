//! Toolkit for categorical speech emotion recognition from precomputed
//! encoder features.
//!
//! The pipeline runs per sub-system as feature sequences -> pooling ->
//! linear head -> posteriors, and then fuses the posteriors of several
//! sub-systems with a one-vs-rest linear SVM:
//!
//! ```text
//! annotations --consensus--> training labels
//! features --pooling--> pooled vector --trainer--> posteriors (one file per sub-system)
//! posteriors x N --fusion--> fused decision --evaluation--> Macro-F1 report
//! ```
//!
//! All vectors indexed by class use the canonical order of [`labels::CLASSES`].

pub mod consensus;
pub mod container;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod labels;
pub mod losses;
pub mod optim;
pub mod pooling;
pub mod synth;
pub mod tables;
pub mod trainer;

pub use data::{AnnotationRecord, FeatureSequence, PosteriorVector, SampleRecord};
pub use error::{Error, Result};
pub use labels::{parse_label, EmotionLabel, LabelSet, CLASSES, NUM_CLASSES};
