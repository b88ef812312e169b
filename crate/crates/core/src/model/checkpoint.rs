//! Safetensors checkpoints holding the trainable parameters, plus the
//! `model.json` card describing how the model was built.

use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::backbone::Stage;
use super::{Classifier, ClassifierSpec, ModelError};
use crate::manifest::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub spec: ClassifierSpec,
    pub seed: u64,
    pub weights_source: String,
    pub weights_sha256: String,
    pub trainable_parameters: usize,
}

impl ModelCard {
    pub fn of(model: &Classifier) -> Self {
        ModelCard {
            spec: model.spec.clone(),
            seed: model.seed,
            weights_source: model.weights_source.clone(),
            weights_sha256: model.weights_digest.clone(),
            trainable_parameters: model.trainable_parameter_count(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut json = serde_json::to_string_pretty(self).expect("model card serializes");
        json.push('\n');
        write_atomic(path, json.as_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| ModelError::CorruptWeights(format!("{}: {e}", path.display())))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ModelError {
    ModelError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn le_bytes_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn le_bytes_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes the head and any unfrozen backbone layers.
pub fn save_checkpoint(path: &Path, model: &Classifier) -> Result<(), ModelError> {
    let h = &model.head;
    let mut owned: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = vec![
        ("head.dense1.weight".into(), Dtype::F64, vec![h.units, h.input_dim], le_bytes_f64(&h.w1)),
        ("head.dense1.bias".into(), Dtype::F64, vec![h.units], le_bytes_f64(&h.b1)),
        ("head.dense2.weight".into(), Dtype::F64, vec![h.classes, h.units], le_bytes_f64(&h.w2)),
        ("head.dense2.bias".into(), Dtype::F64, vec![h.classes], le_bytes_f64(&h.b2)),
    ];
    let boundary = model.frozen_boundary();
    for (i, stage) in model.backbone.stages.iter().enumerate().skip(boundary) {
        if let Stage::Conv(conv) = stage {
            owned.push((
                format!("backbone.{i}.weight"),
                Dtype::F32,
                vec![conv.out_channels, conv.in_channels, 3, 3],
                le_bytes_f32(&conv.weight),
            ));
            owned.push((format!("backbone.{i}.bias"), Dtype::F32, vec![conv.out_channels], le_bytes_f32(&conv.bias)));
        }
    }
    let views = owned
        .iter()
        .map(|(name, dtype, shape, data)| TensorView::new(*dtype, shape.clone(), data).map(|v| (name.clone(), v)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::CorruptWeights(e.to_string()))?;
    let bytes = safetensors::serialize(views, None).map_err(|e| ModelError::CorruptWeights(e.to_string()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

fn read_tensor(tensors: &SafeTensors<'_>, name: &str, dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>, ModelError> {
    let view = tensors.tensor(name).map_err(|_| ModelError::ShapeMismatch {
        layer: name.to_string(),
        expected: shape.to_vec(),
        found: vec![],
    })?;
    if view.shape() != shape || view.dtype() != dtype {
        return Err(ModelError::ShapeMismatch { layer: name.to_string(), expected: shape.to_vec(), found: view.shape().to_vec() });
    }
    Ok(view.data().to_vec())
}

/// Restores parameters written by `save_checkpoint` into `model`, which must
/// have the same spec.
pub fn load_checkpoint(path: &Path, model: &mut Classifier) -> Result<(), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::MissingWeights(format!("{}: {e}", path.display())))?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::CorruptWeights(e.to_string()))?;
    let f64s = |b: Vec<u8>| -> Vec<f64> {
        b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
    };
    let f32s = |b: Vec<u8>| -> Vec<f32> {
        b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect()
    };
    let (u, d, k) = (model.head.units, model.head.input_dim, model.head.classes);
    model.head.w1 = f64s(read_tensor(&tensors, "head.dense1.weight", Dtype::F64, &[u, d])?);
    model.head.b1 = f64s(read_tensor(&tensors, "head.dense1.bias", Dtype::F64, &[u])?);
    model.head.w2 = f64s(read_tensor(&tensors, "head.dense2.weight", Dtype::F64, &[k, u])?);
    model.head.b2 = f64s(read_tensor(&tensors, "head.dense2.bias", Dtype::F64, &[k])?);
    let boundary = model.frozen_boundary();
    for (i, stage) in model.backbone.stages.iter_mut().enumerate().skip(boundary) {
        if let Stage::Conv(conv) = stage {
            conv.weight = f32s(read_tensor(
                &tensors,
                &format!("backbone.{i}.weight"),
                Dtype::F32,
                &[conv.out_channels, conv.in_channels, 3, 3],
            )?);
            conv.bias = f32s(read_tensor(&tensors, &format!("backbone.{i}.bias"), Dtype::F32, &[conv.out_channels])?);
        }
    }
    Ok(())
}
