//! Core pipeline for detecting cyberbullying in animated GIFs.
//!
//! The crate covers everything after media collection: decoding GIFs into
//! capped frame sets, near-duplicate and blur filtering, affine augmentation,
//! a frozen VGG16-style backbone with a small trainable head, the training
//! protocol (hold-out and k-fold), and classification reports.

pub mod augment;
pub mod label;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod seed;
pub mod train;

pub use label::{Label, CLASS_NAMES};
pub use manifest::{ContentCategory, DatasetManifest, GifRecord, GifStatus};
