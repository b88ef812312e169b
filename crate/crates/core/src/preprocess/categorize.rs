//! Content categorization: does a GIF carry faces, overlaid text, both?
//!
//! The detectors here are deliberately crude; real curation goes through the
//! manual override table, which always wins.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{extract_frames, PreprocessError};
use crate::manifest::{read_jsonl, ContentCategory, DatasetManifest};

#[derive(Debug, thiserror::Error)]
#[error("detector {detector}: {message}")]
pub struct DetectorError {
    pub detector: String,
    pub message: String,
}

/// A per-frame boolean predicate (e.g. "contains a face").
pub trait FrameDetector: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, frame: &RgbImage) -> Result<bool, DetectorError>;
}

/// Always answers the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDetector(pub bool);

impl FrameDetector for ConstantDetector {
    fn name(&self) -> &str {
        "constant"
    }

    fn detect(&self, _frame: &RgbImage) -> Result<bool, DetectorError> {
        Ok(self.0)
    }
}

/// Flags a frame when the fraction of skin-toned pixels (RGB rule of Peer
/// et al.) reaches `min_fraction`.
#[derive(Debug, Clone, Copy)]
pub struct SkinToneFaceDetector {
    pub min_fraction: f64,
}

impl Default for SkinToneFaceDetector {
    fn default() -> Self {
        SkinToneFaceDetector { min_fraction: 0.08 }
    }
}

fn is_skin(r: u8, g: u8, b: u8) -> bool {
    let (r, g, b) = (i32::from(r), i32::from(g), i32::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    r > 95 && g > 40 && b > 20 && max - min > 15 && (r - g).abs() > 15 && r > g && r > b
}

impl FrameDetector for SkinToneFaceDetector {
    fn name(&self) -> &str {
        "skin_tone"
    }

    fn detect(&self, frame: &RgbImage) -> Result<bool, DetectorError> {
        let total = u64::from(frame.width()) * u64::from(frame.height());
        if total == 0 {
            return Err(DetectorError { detector: self.name().into(), message: "empty frame".into() });
        }
        let skin = frame.pixels().filter(|p| is_skin(p.0[0], p.0[1], p.0[2])).count() as f64;
        Ok(skin / total as f64 >= self.min_fraction)
    }
}

/// Flags a frame when enough rows contain many sharp luminance transitions,
/// the usual signature of overlaid caption glyphs.
#[derive(Debug, Clone, Copy)]
pub struct EdgeDensityTextDetector {
    /// Minimum luminance jump between horizontal neighbours.
    pub step: u8,
    /// Transitions a row needs to count as text-like.
    pub min_transitions: usize,
    /// Fraction of text-like rows required.
    pub min_row_fraction: f64,
}

impl Default for EdgeDensityTextDetector {
    fn default() -> Self {
        EdgeDensityTextDetector { step: 96, min_transitions: 6, min_row_fraction: 0.05 }
    }
}

impl FrameDetector for EdgeDensityTextDetector {
    fn name(&self) -> &str {
        "edge_density"
    }

    fn detect(&self, frame: &RgbImage) -> Result<bool, DetectorError> {
        if frame.width() < 2 || frame.height() == 0 {
            return Err(DetectorError { detector: self.name().into(), message: "frame too small".into() });
        }
        let luma = |x: u32, y: u32| super::hash::luma(frame.get_pixel(x, y));
        let text_rows = (0..frame.height())
            .filter(|&y| {
                (1..frame.width()).filter(|&x| (luma(x, y) - luma(x - 1, y)).abs() >= f64::from(self.step)).count()
                    >= self.min_transitions
            })
            .count();
        Ok(text_rows as f64 / f64::from(frame.height()) >= self.min_row_fraction)
    }
}

/// Manual `gif_id → category` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryOverrides(pub HashMap<String, ContentCategory>);

#[derive(Debug, Deserialize, Serialize)]
struct OverrideLine {
    gif_id: String,
    content_category: ContentCategory,
}

impl CategoryOverrides {
    /// Loads a JSON Lines file of `{gif_id, content_category}`; later lines win.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let rows: Vec<OverrideLine> = read_jsonl(path)?;
        Ok(CategoryOverrides(rows.into_iter().map(|r| (r.gif_id, r.content_category)).collect()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut rows: Vec<OverrideLine> =
            self.0.iter().map(|(k, v)| OverrideLine { gif_id: k.clone(), content_category: *v }).collect();
        rows.sort_by(|a, b| a.gif_id.cmp(&b.gif_id));
        crate::manifest::write_jsonl(path, &rows)
    }

    pub fn get(&self, gif_id: &str) -> Option<ContentCategory> {
        self.0.get(gif_id).copied()
    }
}

fn any_positive(detector: &dyn FrameDetector, gif_id: &str, frames: &[&RgbImage]) -> bool {
    frames.iter().enumerate().any(|(i, f)| match detector.detect(f) {
        Ok(hit) => hit,
        Err(e) => {
            tracing::warn!(gif_id, frame = i, error = %e, "detector failed; treating frame as negative");
            false
        }
    })
}

/// Category of one GIF from its frames. An override entry replaces the
/// computed value.
pub fn categorize_content(
    gif_id: &str,
    frames: &[&RgbImage],
    text_detector: &dyn FrameDetector,
    face_detector: &dyn FrameDetector,
    overrides: &CategoryOverrides,
) -> ContentCategory {
    if let Some(category) = overrides.get(gif_id) {
        return category;
    }
    let text = any_positive(text_detector, gif_id, frames);
    let face = any_positive(face_detector, gif_id, frames);
    match (face, text) {
        (true, true) => ContentCategory::FaceAndText,
        (false, true) => ContentCategory::TextOnly,
        _ => ContentCategory::NoText,
    }
}

/// Assigns a category to every labeled record of a manifest from its
/// sampled frames. Unlabeled records keep their current category.
pub fn categorize_manifest(
    manifest: &DatasetManifest,
    data_root: &Path,
    frame_cap: u32,
    text_detector: &dyn FrameDetector,
    face_detector: &dyn FrameDetector,
    overrides: &CategoryOverrides,
) -> Result<DatasetManifest, PreprocessError> {
    let categories: Vec<Option<ContentCategory>> = manifest
        .records
        .par_iter()
        .map(|record| {
            if record.label.is_none() {
                return Ok(None);
            }
            if let Some(category) = overrides.get(&record.id) {
                return Ok(Some(category));
            }
            let rel = record.media_path.as_deref().ok_or_else(|| PreprocessError::MissingMedia { gif_id: record.id.clone() })?;
            let path = data_root.join(rel);
            let bytes = std::fs::read(&path).map_err(|source| PreprocessError::Io { path: path.display().to_string(), source })?;
            let frames = extract_frames(&record.id, &bytes, frame_cap)?;
            let images: Vec<&RgbImage> = frames.iter().map(|f| &f.image).collect();
            Ok(Some(categorize_content(&record.id, &images, text_detector, face_detector, overrides)))
        })
        .collect::<Result<_, PreprocessError>>()?;
    let mut out = manifest.clone();
    for (record, category) in out.records.iter_mut().zip(categories) {
        if let Some(category) = category {
            record.content_category = category;
        }
    }
    Ok(out)
}
