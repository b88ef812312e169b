//! GIF → cleaned frame dataset.
//!
//! Each qualifying GIF goes through frame extraction (capped, evenly
//! spaced), near-duplicate removal by difference hash, and blur scoring.
//! Blurred frames are kept in the index but marked excluded.

mod blur;
mod categorize;
mod dataset;
mod frames;
mod hash;
mod resize;

pub use blur::{blur_score, box_blur, laplacian};
pub use categorize::{
    categorize_content, categorize_manifest, CategoryOverrides, ConstantDetector, DetectorError, EdgeDensityTextDetector, FrameDetector,
    SkinToneFaceDetector,
};
pub use dataset::{
    build_frame_dataset, load_frame_image, load_frame_index, process_gif, write_frame_dataset, CleaningSummary,
    safe_component, write_frames, FrameDataset, FrameDescriptor, LabelSummary, FRAME_INDEX_FILE,
};
pub use frames::{count_frames, encode_gif, extract_frames, sample_indices, DecodedFrame};
pub use hash::{dedup_frames, dedup_indices, hamming, perceptual_hash, DHash};
pub use resize::{resize_normalize, FloatImage};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentDraw;
use crate::label::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub frame_cap: u32,
    pub hash_bits: u32,
    pub dup_hamming_threshold: u32,
    pub blur_threshold: f64,
    pub target_side: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { frame_cap: 16, hash_bits: 64, dup_hamming_threshold: 5, blur_threshold: 100.0, target_side: 224 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.frame_cap < 1 {
            return Err(PreprocessError::Config("frame_cap must be >= 1".into()));
        }
        hash::grid_side(self.hash_bits).map_err(|e| PreprocessError::Config(e.to_string()))?;
        if self.dup_hamming_threshold > self.hash_bits {
            return Err(PreprocessError::Config("dup_hamming_threshold must not exceed hash_bits".into()));
        }
        if !(self.blur_threshold >= 0.0) {
            return Err(PreprocessError::Config("blur_threshold must be >= 0".into()));
        }
        if self.target_side < 1 {
            return Err(PreprocessError::Config("target_side must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented { parent: String, variant: u32, draw: AugmentDraw },
}

/// One frame of a GIF, decoded to RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub gif_id: String,
    /// Index in the original GIF.
    pub frame_index: u32,
    pub image: RgbImage,
    pub label: Label,
    pub split: Split,
    pub provenance: Provenance,
    pub blur_score: f64,
    pub excluded: bool,
}

impl FrameSample {
    pub fn original(gif_id: impl Into<String>, frame_index: u32, image: RgbImage, label: Label) -> Self {
        FrameSample {
            gif_id: gif_id.into(),
            frame_index,
            image,
            label,
            split: Split::Unassigned,
            provenance: Provenance::Original,
            blur_score: 0.0,
            excluded: false,
        }
    }

    pub fn sample_id(&self) -> String {
        match &self.provenance {
            Provenance::Original => frame_id(&self.gif_id, self.frame_index),
            Provenance::Augmented { parent, variant, .. } => format!("{parent}/aug_{variant}"),
        }
    }
}

pub fn frame_id(gif_id: &str, frame_index: u32) -> String {
    format!("{gif_id}/{frame_index}")
}

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("gif {gif_id}: cannot decode: {message}")]
    Undecodable { gif_id: String, message: String },
    #[error("gif {gif_id}: no decodable frames")]
    NoFrames { gif_id: String },
    #[error("no qualifying GIFs (need content_category face_and_text and a final label)")]
    NoQualifyingGifs,
    #[error("gif {gif_id}: record has no stored media")]
    MissingMedia { gif_id: String },
    #[error("invalid preprocess config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: String, source: image::ImageError },
}
