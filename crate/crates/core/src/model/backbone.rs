//! VGG16 convolutional stack (13 conv layers, 5 max pools), no classifier.

use std::collections::HashMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::tensor::{max_pool2, max_pool2_backward, Conv3x3, ConvGrads, Tensor3};
use super::ModelError;
use crate::preprocess::FloatImage;
use crate::seed::rng_from;

/// Output channels per conv layer; `None` marks a 2x2 max pool.
pub const VGG16_LAYOUT: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

/// Index of each layout entry inside a torchvision-style `features`
/// sequential (conv, relu, ..., pool).
const TORCH_FEATURE_INDEX: [usize; 18] = [0, 2, 4, 5, 7, 9, 10, 12, 14, 16, 17, 19, 21, 23, 24, 26, 28, 30];

pub const FEATURE_CHANNELS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    /// Convolution followed by ReLU.
    Conv(Conv3x3<f32>),
    MaxPool,
}

#[derive(Clone, PartialEq)]
pub struct Backbone {
    pub stages: Vec<Stage>,
    /// Per-channel `(mean, std)` applied to `[0, 1]` inputs, when the weights
    /// expect it.
    pub normalization: Option<([f32; 3], [f32; 3])>,
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backbone")
            .field("stages", &self.stages.len())
            .field("parameters", &self.parameter_count())
            .field("normalization", &self.normalization)
            .finish()
    }
}

/// Cached activations of one trainable stage, for the backward pass.
pub(crate) enum StageCache {
    Conv { cols: Vec<f32>, output: Tensor3<f32> },
    Pool { argmax: Vec<usize>, input_shape: (usize, usize, usize) },
}

impl Backbone {
    fn empty_layout() -> Vec<Stage> {
        let mut in_ch = 3;
        VGG16_LAYOUT
            .iter()
            .map(|entry| match entry {
                Some(out) => {
                    let conv = Conv3x3::zeros(in_ch, *out);
                    in_ch = *out;
                    Stage::Conv(conv)
                }
                None => Stage::MaxPool,
            })
            .collect()
    }

    /// He-normal weights and zero biases from a fixed seed. Used when no
    /// pretrained checkpoint is available (offline tests, smoke runs).
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut stages = Self::empty_layout();
        for stage in &mut stages {
            if let Stage::Conv(conv) = stage {
                let std = (2.0 / (conv.in_channels * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                for w in &mut conv.weight {
                    *w = normal.sample(&mut rng) as f32;
                }
            }
        }
        Backbone { stages, normalization: None }
    }

    /// Loads a safetensors checkpoint with torchvision key names
    /// (`features.{i}.weight` shaped `[out, in, 3, 3]`, `features.{i}.bias`).
    /// Optional metadata keys `mean` and `std` (comma-separated triples) turn
    /// on input normalization.
    pub fn from_safetensors(bytes: &[u8]) -> Result<Self, ModelError> {
        let corrupt = |m: String| ModelError::CorruptWeights(m);
        let tensors = SafeTensors::deserialize(bytes).map_err(|e| corrupt(e.to_string()))?;
        let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(|e| corrupt(e.to_string()))?;
        let mut stages = Self::empty_layout();
        for (stage, &torch_idx) in stages.iter_mut().zip(TORCH_FEATURE_INDEX.iter()) {
            let Stage::Conv(conv) = stage else { continue };
            let w_name = format!("features.{torch_idx}.weight");
            let b_name = format!("features.{torch_idx}.bias");
            conv.weight = read_f32(&tensors, &w_name, &[conv.out_channels, conv.in_channels, 3, 3])?;
            conv.bias = read_f32(&tensors, &b_name, &[conv.out_channels])?;
        }
        let normalization = match metadata.metadata() {
            Some(meta) => parse_normalization(meta)?,
            None => None,
        };
        Ok(Backbone { stages, normalization })
    }

    pub fn load(path: &Path) -> Result<(Self, String), ModelError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ModelError::MissingWeights(format!("{}: {e}", path.display())))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        Ok((Self::from_safetensors(&bytes)?, digest))
    }

    /// Serializes to the same layout `from_safetensors` reads.
    pub fn to_safetensors(&self) -> Result<Vec<u8>, ModelError> {
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (stage, &torch_idx) in self.stages.iter().zip(TORCH_FEATURE_INDEX.iter()) {
            let Stage::Conv(conv) = stage else { continue };
            owned.push((
                format!("features.{torch_idx}.weight"),
                vec![conv.out_channels, conv.in_channels, 3, 3],
                f32_bytes(&conv.weight),
            ));
            owned.push((format!("features.{torch_idx}.bias"), vec![conv.out_channels], f32_bytes(&conv.bias)));
        }
        let views = owned
            .iter()
            .map(|(name, shape, data)| {
                TensorView::new(Dtype::F32, shape.clone(), data).map(|v| (name.clone(), v))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::CorruptWeights(e.to_string()))?;
        let metadata = self.normalization.map(|(mean, std)| {
            let join = |v: [f32; 3]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            HashMap::from([("mean".to_string(), join(mean)), ("std".to_string(), join(std))])
        });
        safetensors::serialize(views, metadata).map_err(|e| ModelError::CorruptWeights(e.to_string()))
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_layers().map(Conv3x3::parameter_count).sum()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &Conv3x3<f32>> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Conv(c) => Some(c),
            Stage::MaxPool => None,
        })
    }

    /// Stage index where the last `blocks` pooling blocks begin.
    pub fn block_start(&self, blocks: usize) -> usize {
        if blocks == 0 {
            return self.stages.len();
        }
        let pools: Vec<usize> =
            self.stages.iter().enumerate().filter(|(_, s)| matches!(s, Stage::MaxPool)).map(|(i, _)| i).collect();
        if blocks >= pools.len() {
            return 0;
        }
        pools[pools.len() - blocks - 1] + 1
    }

    /// Output shape `(channels, height, width)` for a square input.
    pub fn output_shape(&self, input_side: usize) -> (usize, usize, usize) {
        let mut shape = (3, input_side, input_side);
        for stage in &self.stages {
            shape = match stage {
                Stage::Conv(c) => (c.out_channels, shape.1, shape.2),
                Stage::MaxPool => (shape.0, shape.1 / 2, shape.2 / 2),
            };
        }
        shape
    }

    pub fn to_input_tensor(&self, img: &FloatImage) -> Tensor3<f32> {
        let plane = img.width * img.height;
        let mut data = vec![0f32; 3 * plane];
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = match self.normalization {
                    Some((mean, std)) => (px[c] - mean[c]) / std[c],
                    None => px[c],
                };
            }
        }
        Tensor3::from_vec(3, img.height, img.width, data)
    }

    /// Runs stages `range` on `input`.
    pub fn forward_stages(&self, mut x: Tensor3<f32>, range: std::ops::Range<usize>) -> Tensor3<f32> {
        for stage in &self.stages[range] {
            x = match stage {
                Stage::Conv(conv) => {
                    let mut y = conv.forward(&x);
                    y.relu_in_place();
                    y
                }
                Stage::MaxPool => max_pool2(&x).0,
            };
        }
        x
    }

    pub(crate) fn forward_stages_cached(
        &self,
        mut x: Tensor3<f32>,
        range: std::ops::Range<usize>,
    ) -> (Tensor3<f32>, Vec<StageCache>) {
        let mut caches = Vec::with_capacity(range.len());
        for stage in &self.stages[range] {
            match stage {
                Stage::Conv(conv) => {
                    let (mut y, cols) = conv.forward_cached(&x);
                    y.relu_in_place();
                    caches.push(StageCache::Conv { cols, output: y.clone() });
                    x = y;
                }
                Stage::MaxPool => {
                    let input_shape = x.shape();
                    let (y, argmax) = max_pool2(&x);
                    caches.push(StageCache::Pool { argmax, input_shape });
                    x = y;
                }
            }
        }
        (x, caches)
    }

    /// Backpropagates `grad` through stages `start..` using the caches from
    /// `forward_stages_cached`. Returns conv gradients aligned with those
    /// stages (`None` for pools).
    pub(crate) fn backward_stages(
        &self,
        start: usize,
        caches: &[StageCache],
        mut grad: Tensor3<f32>,
    ) -> Vec<Option<ConvGrads<f32>>> {
        let mut out: Vec<Option<ConvGrads<f32>>> = Vec::with_capacity(caches.len());
        for (offset, cache) in caches.iter().enumerate().rev() {
            match (&self.stages[start + offset], cache) {
                (Stage::Conv(conv), StageCache::Conv { cols, output }) => {
                    for (g, y) in grad.data.iter_mut().zip(&output.data) {
                        if *y <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    let (grads, grad_in) = conv.backward(cols, &grad);
                    out.push(Some(grads));
                    grad = grad_in;
                }
                (Stage::MaxPool, StageCache::Pool { argmax, input_shape }) => {
                    grad = max_pool2_backward(&grad, argmax, *input_shape);
                    out.push(None);
                }
                _ => unreachable!("cache does not match stage layout"),
            }
        }
        out.reverse();
        out
    }

    /// Full forward pass to the final feature map.
    pub fn feature_map(&self, img: &FloatImage) -> Tensor3<f32> {
        self.forward_stages(self.to_input_tensor(img), 0..self.stages.len())
    }

    /// Globally pooled 512-d descriptor of one image.
    pub fn pooled_features(&self, img: &FloatImage) -> Vec<f32> {
        self.feature_map(img).global_average()
    }
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(tensors: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Vec<f32>, ModelError> {
    let view = tensors.tensor(name).map_err(|_| ModelError::ShapeMismatch {
        layer: name.to_string(),
        expected: shape.to_vec(),
        found: vec![],
    })?;
    if view.shape() != shape {
        return Err(ModelError::ShapeMismatch { layer: name.to_string(), expected: shape.to_vec(), found: view.shape().to_vec() });
    }
    if view.dtype() != Dtype::F32 {
        return Err(ModelError::CorruptWeights(format!("{name}: expected F32, found {:?}", view.dtype())));
    }
    Ok(view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

fn parse_normalization(meta: &HashMap<String, String>) -> Result<Option<([f32; 3], [f32; 3])>, ModelError> {
    let parse = |key: &str| -> Result<Option<[f32; 3]>, ModelError> {
        let Some(raw) = meta.get(key) else { return Ok(None) };
        let values = raw
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::CorruptWeights(format!("metadata {key}: {e}")))?;
        <[f32; 3]>::try_from(values)
            .map(Some)
            .map_err(|_| ModelError::CorruptWeights(format!("metadata {key}: expected three values")))
    };
    match (parse("mean")?, parse("std")?) {
        (Some(mean), Some(std)) => Ok(Some((mean, std))),
        (None, None) => Ok(None),
        _ => Err(ModelError::CorruptWeights("metadata needs both mean and std".into())),
    }
}
