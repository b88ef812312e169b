use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    blur_score, dedup_frames, extract_frames, FrameSample, PreprocessConfig, PreprocessError, Provenance, Split,
};
use crate::label::Label;
use crate::manifest::{read_jsonl, write_atomic, write_jsonl, ContentCategory, DatasetManifest, GifRecord};

pub const FRAME_INDEX_FILE: &str = "index.jsonl";

/// Per-label tallies after cleaning. GIF and frame counts are kept apart.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub gifs: usize,
    pub frames_extracted: usize,
    pub duplicates_removed: usize,
    pub blurred_excluded: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningSummary {
    pub cyberbullying: LabelSummary,
    pub non_cyberbullying: LabelSummary,
    /// GIFs skipped for lacking the face_and_text category.
    pub skipped_category: usize,
    /// GIFs skipped for lacking a final label.
    pub skipped_unlabeled: usize,
}

impl CleaningSummary {
    pub fn for_label(&self, label: Label) -> &LabelSummary {
        match label {
            Label::Cyberbullying => &self.cyberbullying,
            Label::NonCyberbullying => &self.non_cyberbullying,
        }
    }

    fn for_label_mut(&mut self, label: Label) -> &mut LabelSummary {
        match label {
            Label::Cyberbullying => &mut self.cyberbullying,
            Label::NonCyberbullying => &mut self.non_cyberbullying,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,gifs,frames_extracted,duplicates_removed,blurred_excluded,frames\n");
        for (name, s) in [("Cyberbullying", &self.cyberbullying), ("Non-Cyberbullying", &self.non_cyberbullying)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                s.gifs, s.frames_extracted, s.duplicates_removed, s.blurred_excluded, s.frames
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20}{:>8}{:>12}{:>12}{:>10}{:>10}\n",
            "Dataset", "GIFs", "Extracted", "Duplicates", "Blurred", "Frames"
        );
        for (name, s) in [("Cyberbullying", &self.cyberbullying), ("Non-Cyberbullying", &self.non_cyberbullying)] {
            let _ = writeln!(
                out,
                "{name:<20}{:>8}{:>12}{:>12}{:>10}{:>10}",
                s.gifs, s.frames_extracted, s.duplicates_removed, s.blurred_excluded, s.frames
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FrameDataset {
    /// Frames in manifest order, then frame index. Blurred frames are present
    /// with `excluded = true`.
    pub frames: Vec<FrameSample>,
    pub summary: CleaningSummary,
}

impl FrameDataset {
    pub fn kept(&self) -> impl Iterator<Item = &FrameSample> {
        self.frames.iter().filter(|f| !f.excluded)
    }
}

/// Extraction, dedup and blur marking for one GIF.
pub fn process_gif(
    gif_id: &str,
    bytes: &[u8],
    label: Label,
    config: &PreprocessConfig,
) -> Result<(Vec<FrameSample>, usize), PreprocessError> {
    let decoded = extract_frames(gif_id, bytes, config.frame_cap)?;
    let extracted = decoded.len();
    let frames: Vec<FrameSample> =
        decoded.into_iter().map(|d| FrameSample::original(gif_id, d.index, d.image, label)).collect();
    let mut frames = dedup_frames(frames, config.dup_hamming_threshold, config.hash_bits)
        .map_err(|e| PreprocessError::Config(e.to_string()))?;
    for frame in &mut frames {
        frame.blur_score = blur_score(&frame.image);
        frame.excluded = frame.blur_score < config.blur_threshold;
    }
    Ok((frames, extracted))
}

/// Builds the cleaned frame dataset from a finalized manifest. Only GIFs with
/// a final label and category `face_and_text` contribute.
pub fn build_frame_dataset(
    manifest: &DatasetManifest,
    data_root: &Path,
    config: &PreprocessConfig,
) -> Result<FrameDataset, PreprocessError> {
    config.validate()?;
    let mut summary = CleaningSummary::default();
    let mut qualifying: Vec<(&GifRecord, Label)> = Vec::new();
    for record in &manifest.records {
        match record.label {
            None => summary.skipped_unlabeled += 1,
            Some(_) if record.content_category != ContentCategory::FaceAndText => summary.skipped_category += 1,
            Some(label) => qualifying.push((record, label)),
        }
    }
    if qualifying.is_empty() {
        return Err(PreprocessError::NoQualifyingGifs);
    }

    let per_gif: Vec<Result<(Vec<FrameSample>, usize), PreprocessError>> = qualifying
        .par_iter()
        .map(|(record, label)| {
            let rel = record.media_path.as_deref().ok_or_else(|| PreprocessError::MissingMedia { gif_id: record.id.clone() })?;
            let path = data_root.join(rel);
            let bytes = fs::read(&path).map_err(|source| PreprocessError::Io { path: path.display().to_string(), source })?;
            process_gif(&record.id, &bytes, *label, config)
        })
        .collect();

    let mut frames = Vec::new();
    for ((_, label), result) in qualifying.iter().zip(per_gif) {
        let (gif_frames, extracted) = result?;
        let s = summary.for_label_mut(*label);
        s.gifs += 1;
        s.frames_extracted += extracted;
        s.duplicates_removed += extracted - gif_frames.len();
        s.blurred_excluded += gif_frames.iter().filter(|f| f.excluded).count();
        s.frames += gif_frames.iter().filter(|f| !f.excluded).count();
        frames.extend(gif_frames);
    }
    Ok(FrameDataset { frames, summary })
}

/// On-disk index line for a frame; the raster lives at `path`, relative to
/// the frames directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub sample_id: String,
    pub gif_id: String,
    pub frame_index: u32,
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub provenance: Provenance,
    pub blur_score: f64,
    pub excluded: bool,
}

/// Maps an id to a string safe for use as a single path component.
pub fn safe_component(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

impl FrameDescriptor {
    pub fn for_sample(sample: &FrameSample) -> Self {
        let file = match &sample.provenance {
            Provenance::Original => format!("{}.png", sample.frame_index),
            Provenance::Augmented { variant, .. } => format!("{}_aug_{variant}.png", sample.frame_index),
        };
        FrameDescriptor {
            sample_id: sample.sample_id(),
            gif_id: sample.gif_id.clone(),
            frame_index: sample.frame_index,
            path: format!("{}/{file}", safe_component(&sample.gif_id)),
            label: sample.label,
            split: sample.split,
            provenance: sample.provenance.clone(),
            blur_score: sample.blur_score,
            excluded: sample.excluded,
        }
    }
}

/// Writes PNGs plus `index.jsonl`, `summary.csv` and `summary.txt` under
/// `frames_dir`.
pub fn write_frame_dataset(dataset: &FrameDataset, frames_dir: &Path) -> Result<Vec<FrameDescriptor>, PreprocessError> {
    let descriptors = write_frames(&dataset.frames, frames_dir)?;
    write_jsonl(&frames_dir.join(FRAME_INDEX_FILE), &descriptors).map_err(|source| io_err(frames_dir, source))?;
    write_atomic(&frames_dir.join("summary.csv"), dataset.summary.to_csv().as_bytes())
        .map_err(|source| io_err(frames_dir, source))?;
    write_atomic(&frames_dir.join("summary.txt"), dataset.summary.to_table().as_bytes())
        .map_err(|source| io_err(frames_dir, source))?;
    Ok(descriptors)
}

/// Writes frame rasters and returns their descriptors (no index file).
pub fn write_frames(frames: &[FrameSample], frames_dir: &Path) -> Result<Vec<FrameDescriptor>, PreprocessError> {
    frames
        .par_iter()
        .map(|frame| {
            let descriptor = FrameDescriptor::for_sample(frame);
            let path = frames_dir.join(&descriptor.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| io_err(parent, source))?;
            }
            frame.image.save(&path).map_err(|source| PreprocessError::Image { path: path.display().to_string(), source })?;
            Ok(descriptor)
        })
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> PreprocessError {
    PreprocessError::Io { path: path.display().to_string(), source }
}

pub fn load_frame_index(path: &Path) -> Result<Vec<FrameDescriptor>, PreprocessError> {
    read_jsonl(path).map_err(|source| io_err(path, source))
}

pub fn load_frame_image(frames_dir: &Path, descriptor: &FrameDescriptor) -> Result<RgbImage, PreprocessError> {
    let path: PathBuf = frames_dir.join(&descriptor.path);
    image::open(&path)
        .map(|img| img.to_rgb8())
        .map_err(|source| PreprocessError::Image { path: path.display().to_string(), source })
}

impl FrameDescriptor {
    pub fn to_sample(&self, image: RgbImage) -> FrameSample {
        FrameSample {
            gif_id: self.gif_id.clone(),
            frame_index: self.frame_index,
            image,
            label: self.label,
            split: self.split,
            provenance: self.provenance.clone(),
            blur_score: self.blur_score,
            excluded: self.excluded,
        }
    }
}
