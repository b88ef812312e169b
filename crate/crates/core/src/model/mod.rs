//! Transfer-learning classifier: a VGG16 convolutional backbone, global
//! average pooling, and a dense head (256 ReLU units, softmax output).

mod backbone;
mod checkpoint;
mod head;
pub mod tensor;

pub use backbone::{Backbone, Stage, FEATURE_CHANNELS, VGG16_LAYOUT};
pub(crate) use backbone::StageCache;
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCard};
pub use head::{softmax, Adam, BatchLoss, Head, HeadGrads};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::preprocess::FloatImage;
use tensor::Tensor3;

pub const REGISTRY_VGG16: &str = "vgg16_imagenet";
pub const WEIGHTS_DIR_ENV: &str = "GIFGUARD_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[default]
    Vgg16Imagenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub backbone: BackboneKind,
    pub freeze_base: bool,
    pub head_units: usize,
    pub num_classes: usize,
    pub input_side: usize,
    /// Conv blocks (counted from the top) trained when `freeze_base` is false.
    pub unfreeze_blocks: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            backbone: BackboneKind::Vgg16Imagenet,
            freeze_base: true,
            head_units: 256,
            num_classes: 2,
            input_side: 224,
            unfreeze_blocks: 1,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("num_classes must be >= 2".into()));
        }
        if self.head_units < 1 {
            return Err(ModelError::InvalidSpec("head_units must be >= 1".into()));
        }
        if self.input_side < 32 {
            return Err(ModelError::InvalidSpec("input_side must be >= 32 (five 2x poolings)".into()));
        }
        if !self.freeze_base && !(1..=5).contains(&self.unfreeze_blocks) {
            return Err(ModelError::InvalidSpec("unfreeze_blocks must be in 1..=5".into()));
        }
        Ok(())
    }
}

/// Where backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightsSource {
    /// Safetensors file with torchvision key names.
    File(PathBuf),
    /// Registry name resolved under `$GIFGUARD_WEIGHTS_DIR` or
    /// `~/.cache/gifguard/weights`.
    Registry(String),
    /// Deterministic random initialization.
    Seeded(u64),
}

impl FromStr for WeightsSource {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("seeded:") {
            return rest
                .parse()
                .map(WeightsSource::Seeded)
                .map_err(|_| ModelError::InvalidSpec(format!("bad seeded weights source {s:?}")));
        }
        if s == REGISTRY_VGG16 {
            return Ok(WeightsSource::Registry(s.to_string()));
        }
        Ok(WeightsSource::File(PathBuf::from(s)))
    }
}

impl std::fmt::Display for WeightsSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightsSource::File(p) => write!(f, "{}", p.display()),
            WeightsSource::Registry(name) => f.write_str(name),
            WeightsSource::Seeded(seed) => write!(f, "seeded:{seed}"),
        }
    }
}

impl WeightsSource {
    pub fn registry_dir() -> PathBuf {
        if let Ok(dir) = std::env::var(WEIGHTS_DIR_ENV) {
            return PathBuf::from(dir);
        }
        let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
        Path::new(&home).join(".cache").join("gifguard").join("weights")
    }

    /// Loads the backbone and returns it with a digest of its source.
    pub fn load(&self) -> Result<(Backbone, String), ModelError> {
        match self {
            WeightsSource::File(path) => Backbone::load(path),
            WeightsSource::Registry(name) => {
                let path = Self::registry_dir().join(format!("{name}.safetensors"));
                if !path.exists() {
                    return Err(ModelError::MissingWeights(format!(
                        "{name} not found at {} (set {WEIGHTS_DIR_ENV} or pass a weights file)",
                        path.display()
                    )));
                }
                Backbone::load(&path)
            }
            WeightsSource::Seeded(seed) => Ok((Backbone::seeded(*seed), format!("seeded:{seed}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let predicted_class = argmax(&probabilities);
        Prediction { probabilities, predicted_class }
    }

    /// Mean of per-frame probability vectors.
    pub fn mean(predictions: &[Prediction]) -> Result<Self, ModelError> {
        let first = predictions.first().ok_or(ModelError::EmptyFrames)?;
        let mut sum = vec![0.0; first.probabilities.len()];
        for p in predictions {
            for (s, v) in sum.iter_mut().zip(&p.probabilities) {
                *s += v;
            }
        }
        let n = predictions.len() as f64;
        Ok(Prediction::from_probabilities(sum.into_iter().map(|s| s / n).collect()))
    }
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("backbone weights missing: {0}")]
    MissingWeights(String),
    #[error("backbone weights corrupt: {0}")]
    CorruptWeights(String),
    #[error("layer {layer}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { layer: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("input must be {expected}x{expected}x3, got {width}x{height}x3")]
    InputShape { expected: usize, width: usize, height: usize },
    #[error("no frames to predict on")]
    EmptyFrames,
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// The model handle: backbone, head and the spec they were built from.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub backbone: Backbone,
    pub head: Head,
    pub weights_source: String,
    pub weights_digest: String,
    pub seed: u64,
}

pub fn build_classifier(spec: ClassifierSpec, weights: &WeightsSource, seed: u64) -> Result<Classifier, ModelError> {
    spec.validate()?;
    let (backbone, weights_digest) = weights.load()?;
    Ok(Classifier::from_parts(spec, backbone, weights.to_string(), weights_digest, seed))
}

impl Classifier {
    pub fn from_parts(
        spec: ClassifierSpec,
        backbone: Backbone,
        weights_source: String,
        weights_digest: String,
        seed: u64,
    ) -> Self {
        let head = Head::init(FEATURE_CHANNELS, spec.head_units, spec.num_classes, seed);
        Classifier { spec, backbone, head, weights_source, weights_digest, seed }
    }

    /// Fresh head from another seed, backbone shared by value.
    pub fn reinitialized(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.head = Head::init(FEATURE_CHANNELS, self.spec.head_units, self.spec.num_classes, seed);
        c.seed = seed;
        c
    }

    /// First stage that receives gradients; stages before it are frozen.
    pub fn frozen_boundary(&self) -> usize {
        if self.spec.freeze_base {
            self.backbone.stages.len()
        } else {
            self.backbone.block_start(self.spec.unfreeze_blocks)
        }
    }

    pub fn trainable_parameter_count(&self) -> usize {
        let base: usize = self.backbone.stages[self.frozen_boundary()..]
            .iter()
            .map(|s| match s {
                Stage::Conv(c) => c.parameter_count(),
                Stage::MaxPool => 0,
            })
            .sum();
        self.head.parameter_count() + base
    }

    pub fn backbone_output_shape(&self) -> (usize, usize, usize) {
        self.backbone.output_shape(self.spec.input_side)
    }

    pub fn check_input(&self, img: &FloatImage) -> Result<(), ModelError> {
        if img.width != self.spec.input_side || img.height != self.spec.input_side || img.data.len() != img.width * img.height * 3 {
            return Err(ModelError::InputShape { expected: self.spec.input_side, width: img.width, height: img.height });
        }
        Ok(())
    }

    /// Activations at the frozen boundary; these never change during
    /// training and can be cached.
    pub fn boundary_activations(&self, img: &FloatImage) -> Result<Tensor3<f32>, ModelError> {
        self.check_input(img)?;
        let x = self.backbone.to_input_tensor(img);
        Ok(self.backbone.forward_stages(x, 0..self.frozen_boundary()))
    }

    /// Pooled feature vector from boundary activations.
    pub fn pooled_from_boundary(&self, boundary: &Tensor3<f32>) -> Vec<f64> {
        let x = self.backbone.forward_stages(boundary.clone(), self.frozen_boundary()..self.backbone.stages.len());
        x.global_average().into_iter().map(f64::from).collect()
    }

    pub fn pooled_features(&self, img: &FloatImage) -> Result<Vec<f64>, ModelError> {
        Ok(self.pooled_from_boundary(&self.boundary_activations(img)?))
    }

    pub fn predict_features(&self, pooled: &[f64]) -> Prediction {
        Prediction::from_probabilities(self.head.probabilities(pooled))
    }

    pub fn predict_frame(&self, img: &FloatImage) -> Result<Prediction, ModelError> {
        Ok(self.predict_features(&self.pooled_features(img)?))
    }

    /// GIF-level prediction: mean of per-frame probabilities.
    pub fn predict_gif(&self, frames: &[FloatImage]) -> Result<Prediction, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::EmptyFrames);
        }
        let per_frame = frames.iter().map(|f| self.predict_frame(f)).collect::<Result<Vec<_>, _>>()?;
        Prediction::mean(&per_frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_classifier() -> Classifier {
        let spec = ClassifierSpec { input_side: 32, ..ClassifierSpec::default() };
        build_classifier(spec, &WeightsSource::Seeded(1), 2).unwrap()
    }

    fn image(side: usize, value: f32) -> FloatImage {
        let mut img = FloatImage::zeros(side, side);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i % 7) as f32 / 7.0) * value;
        }
        img
    }

    #[test]
    fn default_spec_counts() {
        let c = build_classifier(ClassifierSpec::default(), &WeightsSource::Seeded(0), 0).unwrap();
        assert_eq!(c.trainable_parameter_count(), 131_842);
        assert_eq!(c.backbone_output_shape(), (512, 7, 7));
    }

    #[test]
    fn unfrozen_top_block_adds_its_parameters() {
        let spec = ClassifierSpec { freeze_base: false, unfreeze_blocks: 1, ..ClassifierSpec::default() };
        let c = build_classifier(spec, &WeightsSource::Seeded(0), 0).unwrap();
        assert_eq!(c.trainable_parameter_count(), 131_842 + 3 * (512 * 512 * 9 + 512));
    }

    #[test]
    fn spec_validation() {
        let bad = ClassifierSpec { num_classes: 1, ..ClassifierSpec::default() };
        assert!(matches!(bad.validate(), Err(ModelError::InvalidSpec(_))));
        let bad = ClassifierSpec { head_units: 0, ..ClassifierSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_weights_file_errors_before_training() {
        let err = build_classifier(
            ClassifierSpec::default(),
            &WeightsSource::File("/nonexistent/vgg16.safetensors".into()),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::MissingWeights(_)));
    }

    #[test]
    fn weights_source_parsing() {
        assert_eq!("seeded:7".parse::<WeightsSource>().unwrap(), WeightsSource::Seeded(7));
        assert_eq!("vgg16_imagenet".parse::<WeightsSource>().unwrap(), WeightsSource::Registry("vgg16_imagenet".into()));
        assert_eq!("w.safetensors".parse::<WeightsSource>().unwrap(), WeightsSource::File("w.safetensors".into()));
        assert!("seeded:x".parse::<WeightsSource>().is_err());
    }

    #[test]
    fn predict_frame_is_deterministic_and_normalized() {
        let c = small_classifier();
        let img = image(32, 1.0);
        let a = c.predict_frame(&img).unwrap();
        let b = c.predict_frame(&img.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.probabilities.len(), 2);
        assert_abs_diff_eq!(a.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let mut c = small_classifier();
        c.head = Head::zeros(512, 256, 2);
        assert_eq!(c.predict_frame(&image(32, 0.5)).unwrap().probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let c = small_classifier();
        assert!(matches!(c.predict_frame(&image(31, 1.0)), Err(ModelError::InputShape { .. })));
    }

    #[test]
    fn gif_prediction_is_mean_of_frames() {
        let c = small_classifier();
        let img = image(32, 0.8);
        assert_eq!(c.predict_gif(std::slice::from_ref(&img)).unwrap(), c.predict_frame(&img).unwrap());
        assert!(matches!(c.predict_gif(&[]), Err(ModelError::EmptyFrames)));

        let two = [
            Prediction::from_probabilities(vec![0.9, 0.1]),
            Prediction::from_probabilities(vec![0.5, 0.5]),
        ];
        let m = Prediction::mean(&two).unwrap();
        assert_abs_diff_eq!(m.probabilities[0], 0.7, epsilon = 1e-12);
        assert_eq!(m.predicted_class, 0);
    }

    #[test]
    fn mean_softmax_can_overrule_majority() {
        let mut frames = vec![Prediction::from_probabilities(vec![0.4, 0.6]); 9];
        frames.extend(vec![Prediction::from_probabilities(vec![0.8, 0.2]); 7]);
        let m = Prediction::mean(&frames).unwrap();
        // (9 * 0.4 + 7 * 0.8) / 16 = 9.2 / 16
        assert_abs_diff_eq!(m.probabilities[0], 0.575, epsilon = 1e-12);
        assert_abs_diff_eq!(m.probabilities[1], 0.425, epsilon = 1e-12);
        assert_eq!(m.predicted_class, 0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
