//! Splitting, class weighting, the epoch loop with its callbacks, and
//! k-fold cross-validation.
//!
//! Training runs on encoded samples: activations at the frozen boundary of
//! the backbone, computed once. With the default frozen base that is the
//! pooled 512-d descriptor and only the head is optimized.

mod callbacks;
pub(crate) mod history;
mod split;

pub use callbacks::{simulate, CallbackConfig, CallbackState, EpochOutcome};
pub use history::{EpochRecord, StopReason, TrainHistory};
pub use split::{kfold_assign, split_dataset, split_sizes, SplitKey};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::label::{Label, CLASS_NAMES};
use crate::manifest::write_atomic;
use crate::metrics::{aggregate_fold_reports, classification_report, confusion, EvalReport, MetricsError, SamplePrediction};
use crate::model::tensor::{ConvGrads, Tensor3};
use crate::model::{argmax, save_checkpoint, softmax, Adam, Classifier, ModelCard, ModelError, Stage};
use crate::preprocess::{resize_normalize, FrameSample};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
    TrainLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    None,
    #[default]
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub k_folds: usize,
    pub split_ratios: [f64; 3],
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_reduce_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub early_stop_monitor: Monitor,
    pub class_weight_mode: ClassWeightMode,
    pub seed: u64,
    pub group_by_gif: bool,
    /// Frame-level split after augmentation, as in the original experiments.
    pub paper_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            k_folds: 5,
            split_ratios: [0.8, 0.1, 0.1],
            batch_size: 32,
            initial_lr: 1e-4,
            lr_reduce_factor: 0.5,
            lr_patience: 3,
            min_lr: 1e-6,
            early_stop_patience: 5,
            early_stop_monitor: Monitor::ValLoss,
            class_weight_mode: ClassWeightMode::InverseFrequency,
            seed: 0,
            group_by_gif: true,
            paper_mode: false,
        }
    }
}

pub(crate) fn validate_ratios(r: [f64; 3]) -> Result<(), TrainError> {
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split ratios {r:?} must be in [0,1] and sum to 1")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        validate_ratios(self.split_ratios)?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.k_folds < 2 {
            return bad("k_folds must be >= 2");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return bad("lr_reduce_factor must be in (0, 1)");
        }
        if !(self.initial_lr > 0.0) || self.min_lr < 0.0 {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    /// Grouping is off in paper mode.
    pub fn grouped(&self) -> bool {
        self.group_by_gif && !self.paper_mode
    }

    fn callbacks(&self) -> CallbackConfig {
        CallbackConfig {
            initial_lr: self.initial_lr,
            lr_reduce_factor: self.lr_reduce_factor,
            lr_patience: self.lr_patience,
            min_lr: self.min_lr,
            early_stop_patience: self.early_stop_patience,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split {0} would be empty")]
    EmptySplit(&'static str),
    #[error("{samples} samples or groups cannot fill {k} folds")]
    TooFewForFolds { samples: usize, k: usize },
    #[error("class {0} has no samples")]
    MissingClass(String),
    #[error("fold {0} has a single class in its validation set")]
    SingleClassFold(usize),
    #[error("monitored loss diverged at epoch {epoch} ({loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl TrainError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        TrainError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// `w_c = N / (K · n_c)`, indexed by class.
pub fn compute_class_weights(labels: &[Label]) -> Result<Vec<f64>, TrainError> {
    let k = Label::ALL.len();
    let mut counts = vec![0usize; k];
    for l in labels {
        counts[l.index()] += 1;
    }
    if let Some(missing) = Label::ALL.iter().find(|l| counts[l.index()] == 0) {
        return Err(TrainError::MissingClass(missing.to_string()));
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| n / (k as f64 * c as f64)).collect())
}

/// Backbone activations at the frozen boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    /// Pooled descriptor; the whole backbone is frozen.
    Pooled(Vec<f64>),
    /// Feature map entering the first trainable stage.
    Boundary(Tensor3<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub sample_id: String,
    pub gif_id: String,
    pub label: Label,
    pub input: Encoded,
}

impl EncodedSample {
    pub fn key(&self) -> SplitKey<'_> {
        SplitKey { gif_id: &self.gif_id, label: self.label }
    }
}

/// Resizes, normalizes and runs the frozen part of the backbone on every
/// frame, in parallel.
pub fn encode_frames(model: &Classifier, frames: &[FrameSample]) -> Result<Vec<EncodedSample>, TrainError> {
    let boundary = model.frozen_boundary();
    let full = model.backbone.stages.len();
    frames
        .par_iter()
        .map(|f| {
            let img = resize_normalize(&f.image, model.spec.input_side);
            let act = model.boundary_activations(&img)?;
            let input = if boundary == full {
                Encoded::Pooled(act.global_average().into_iter().map(f64::from).collect())
            } else {
                Encoded::Boundary(act)
            };
            Ok(EncodedSample { sample_id: f.sample_id(), gif_id: f.gif_id.clone(), label: f.label, input })
        })
        .collect()
}

/// Digest over sample ids and labels, for the run record.
pub fn dataset_digest(samples: &[EncodedSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.sample_id.as_bytes());
        h.update([0]);
        h.update(s.label.as_str().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn pooled_of(model: &Classifier, input: &Encoded) -> Vec<f64> {
    match input {
        Encoded::Pooled(v) => v.clone(),
        Encoded::Boundary(t) => model.pooled_from_boundary(t),
    }
}

/// Per-sample predictions in input order.
pub fn predict_samples(model: &Classifier, samples: &[EncodedSample]) -> Vec<SamplePrediction> {
    samples
        .par_iter()
        .map(|s| {
            let probabilities = model.head.probabilities(&pooled_of(model, &s.input));
            SamplePrediction {
                sample_id: s.sample_id.clone(),
                truth: s.label.index(),
                predicted: argmax(&probabilities),
                probabilities,
            }
        })
        .collect()
}

pub fn evaluate(model: &Classifier, samples: &[EncodedSample]) -> Result<(Vec<SamplePrediction>, EvalReport), TrainError> {
    let predictions = predict_samples(model, samples);
    let truths: Vec<usize> = predictions.iter().map(|p| p.truth).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let report = classification_report(&confusion(&truths, &predicted, &CLASS_NAMES)?)?;
    Ok((predictions, report))
}

/// Unweighted mean cross-entropy and accuracy.
fn loss_and_accuracy(predictions: &[SamplePrediction]) -> (f64, f64) {
    let n = predictions.len() as f64;
    let loss = predictions
        .iter()
        .map(|p| {
            let q = p.probabilities[p.truth];
            -(if q < f64::MIN_POSITIVE { f64::MIN_POSITIVE } else { q }).ln()
        })
        .sum::<f64>()
        / n;
    let correct = predictions.iter().filter(|p| p.predicted == p.truth).count() as f64;
    (loss, correct / n)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters of the best epoch.
    pub model: Classifier,
    pub history: TrainHistory,
}

struct Snapshot {
    head: crate::model::Head,
    stages: Vec<Stage>,
}

impl Snapshot {
    fn take(model: &Classifier) -> Self {
        Snapshot { head: model.head.clone(), stages: model.backbone.stages[model.frozen_boundary()..].to_vec() }
    }

    fn restore(self, model: &mut Classifier) {
        let start = model.frozen_boundary();
        model.head = self.head;
        model.backbone.stages.truncate(start);
        model.backbone.stages.extend(self.stages);
    }
}

/// One optimizer step on a batch. Returns (weighted loss, correct count).
fn train_batch(
    model: &mut Classifier,
    adam: &mut Adam,
    lr: f64,
    batch: &[&EncodedSample],
    class_weights: &[f64],
) -> (f64, usize) {
    let start = model.frozen_boundary();
    let end = model.backbone.stages.len();
    let forward: Vec<(Vec<f64>, Option<Vec<crate::model::StageCache>>)> = batch
        .par_iter()
        .map(|s| match &s.input {
            Encoded::Pooled(v) => (v.clone(), None),
            Encoded::Boundary(t) => {
                let (top, caches) = model.backbone.forward_stages_cached(t.clone(), start..end);
                (top.global_average().into_iter().map(f64::from).collect(), Some(caches))
            }
        })
        .collect();
    let inputs: Vec<&[f64]> = forward.iter().map(|(p, _)| p.as_slice()).collect();
    let targets: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
    let weights: Vec<f64> = targets.iter().map(|&t| class_weights[t]).collect();
    let out = model.head.loss_and_grads(&inputs, &targets, &weights);
    let correct = out.probabilities.iter().zip(&targets).filter(|(p, &t)| argmax(p) == t).count();

    adam.begin_step();
    let grads = out.grads.as_slices();
    for (slot, params) in model.head.params_mut().into_iter().enumerate() {
        adam.update(slot, lr, params, grads[slot]);
    }

    if start < end {
        let (c, h, w) = model.backbone.output_shape(model.spec.input_side);
        let backbone = &model.backbone;
        let per_sample: Vec<Vec<Option<ConvGrads<f32>>>> = forward
            .into_par_iter()
            .zip(out.input_grads.par_iter())
            .map(|((_, caches), g)| {
                let caches = caches.expect("boundary input when base is trainable");
                let plane = (h * w) as f64;
                let mut grad = Tensor3::<f32>::zeros(c, h, w);
                for (ch, gv) in g.iter().enumerate() {
                    let v = (gv / plane) as f32;
                    grad.data[ch * h * w..(ch + 1) * h * w].fill(v);
                }
                backbone.backward_stages(start, &caches, grad)
            })
            .collect();
        let mut sum: Vec<Option<ConvGrads<f32>>> = Vec::new();
        for sample in per_sample {
            if sum.is_empty() {
                sum = sample;
                continue;
            }
            for (acc, g) in sum.iter_mut().zip(sample) {
                if let (Some(a), Some(g)) = (acc.as_mut(), g) {
                    a.weight.iter_mut().zip(&g.weight).for_each(|(x, y)| *x += y);
                    a.bias.iter_mut().zip(&g.bias).for_each(|(x, y)| *x += y);
                }
            }
        }
        for (offset, g) in sum.into_iter().enumerate() {
            let i = start + offset;
            if let (Stage::Conv(conv), Some(g)) = (&mut model.backbone.stages[i], g) {
                adam.update(4 + 2 * i, lr, &mut conv.weight, &g.weight);
                adam.update(5 + 2 * i, lr, &mut conv.bias, &g.bias);
            }
        }
    }
    (out.loss * batch.len() as f64, correct)
}

/// Hold-out training with checkpointing, plateau LR reduction and early
/// stopping. The returned model carries the best epoch's parameters.
pub fn train_holdout(
    mut model: Classifier,
    train: &[EncodedSample],
    val: &[EncodedSample],
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() && config.early_stop_monitor == Monitor::ValLoss {
        return Err(TrainError::EmptySplit("val"));
    }
    let class_weights = match config.class_weight_mode {
        ClassWeightMode::InverseFrequency => compute_class_weights(&train.iter().map(|s| s.label).collect::<Vec<_>>())?,
        ClassWeightMode::None => vec![1.0; Label::ALL.len()],
    };
    let ckpt_dir: Option<PathBuf> = run_dir.map(|d| d.join("checkpoints"));
    if let Some(dir) = run_dir {
        ModelCard::of(&model).save(&dir.join("model.json"))?;
    }

    let mut callbacks = CallbackState::new(config.callbacks());
    let mut adam = Adam::default();
    let mut records = Vec::new();
    let mut best = Snapshot::take(&model);
    let mut stop_reason = StopReason::Completed;

    for epoch in 1..=config.epochs {
        let lr = callbacks.learning_rate();
        let mut order: Vec<&EncodedSample> = train.iter().collect();
        order.shuffle(&mut rng_from(derive_seed("epoch", &[&config.seed, &epoch])));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let (l, c) = train_batch(&mut model, &mut adam, lr, batch, &class_weights);
            loss_sum += l;
            correct += c;
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_accuracy = correct as f64 / train.len() as f64;
        let (val_loss, val_accuracy) =
            if val.is_empty() { (f64::NAN, f64::NAN) } else { loss_and_accuracy(&predict_samples(&model, val)) };
        records.push(EpochRecord { epoch, train_accuracy, val_accuracy, train_loss, val_loss, learning_rate: lr });
        tracing::info!(epoch, train_loss, train_accuracy, val_loss, val_accuracy, lr, "epoch");

        let monitored = match config.early_stop_monitor {
            Monitor::ValLoss => val_loss,
            Monitor::TrainLoss => train_loss,
        };
        let outcome = match callbacks.observe(epoch, monitored) {
            Ok(o) => o,
            Err(e) => {
                if let Some(dir) = run_dir {
                    let partial = TrainHistory { epochs: records, best_epoch: callbacks.best_epoch(), stop_reason };
                    partial.write_csv(&dir.join("history.csv"))?;
                }
                return Err(e);
            }
        };
        if outcome.improved {
            best = Snapshot::take(&model);
            if let Some(dir) = &ckpt_dir {
                save_checkpoint(&dir.join(format!("epoch_{epoch}.safetensors")), &model)?;
                save_checkpoint(&dir.join("best.safetensors"), &model)?;
            }
        }
        if outcome.stop {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    best.restore(&mut model);
    let history = TrainHistory { epochs: records, best_epoch: callbacks.best_epoch(), stop_reason };
    if let Some(dir) = run_dir {
        history.write_csv(&dir.join("history.csv"))?;
    }
    Ok(TrainedModel { model, history })
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub history: TrainHistory,
    pub predictions: Vec<SamplePrediction>,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct KFoldOutcome {
    pub folds: Vec<FoldOutcome>,
    /// Report over all validation predictions pooled across folds.
    pub aggregate: EvalReport,
}

/// K-fold cross-validation: every fold is validated once by a model with a
/// fresh, fold-seeded head.
pub fn kfold_train(
    base: &Classifier,
    pool: &[EncodedSample],
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<KFoldOutcome, TrainError> {
    config.validate()?;
    let k = config.k_folds;
    let keys: Vec<SplitKey<'_>> = pool.iter().map(EncodedSample::key).collect();
    let assignment = kfold_assign(&keys, k, config.seed, config.grouped())?;
    for fold in 0..k {
        let mut labels = pool.iter().zip(&assignment).filter(|(_, &f)| f == fold).map(|(s, _)| s.label);
        let first = labels.next();
        if labels.all(|l| Some(l) == first) {
            return Err(TrainError::SingleClassFold(fold));
        }
    }

    let folds: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let fold_seed = derive_seed("fold", &[&config.seed, &fold]);
            let train: Vec<EncodedSample> =
                pool.iter().zip(&assignment).filter(|(_, &f)| f != fold).map(|(s, _)| s.clone()).collect();
            let val: Vec<EncodedSample> =
                pool.iter().zip(&assignment).filter(|(_, &f)| f == fold).map(|(s, _)| s.clone()).collect();
            let fold_dir = run_dir.map(|d| d.join(format!("fold_{fold}")));
            if let Some(d) = &fold_dir {
                std::fs::create_dir_all(d).map_err(|e| TrainError::io(d, e))?;
            }
            let fold_config = TrainConfig { seed: fold_seed, ..config.clone() };
            let trained = train_holdout(base.reinitialized(fold_seed), &train, &val, &fold_config, fold_dir.as_deref())?;
            let (predictions, report) = evaluate(&trained.model, &val)?;
            if let Some(d) = &fold_dir {
                report.write(d)?;
            }
            Ok(FoldOutcome { fold, history: trained.history, predictions, report })
        })
        .collect::<Result<_, TrainError>>()?;

    let pooled: Vec<Vec<SamplePrediction>> = folds.iter().map(|f| f.predictions.clone()).collect();
    let aggregate = aggregate_fold_reports(&pooled, &CLASS_NAMES)?;
    if let Some(d) = run_dir {
        aggregate.write(d)?;
    }
    Ok(KFoldOutcome { folds, aggregate })
}

/// Software and platform identifiers recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    pub package_version: String,
    pub os: String,
    pub arch: String,
}

impl EnvironmentStamp {
    pub fn current() -> Self {
        EnvironmentStamp {
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Contents of `run.json`. Timestamps go to `run.meta.json` so reruns
/// produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<C> {
    pub config: C,
    pub dataset_digest: String,
    pub environment: EnvironmentStamp,
}

pub fn write_run_record<C: Serialize>(run_dir: &Path, config: &C, dataset_digest: &str) -> Result<(), TrainError> {
    std::fs::create_dir_all(run_dir).map_err(|e| TrainError::io(run_dir, e))?;
    let record = RunRecord { config, dataset_digest: dataset_digest.to_string(), environment: EnvironmentStamp::current() };
    let mut json = serde_json::to_string_pretty(&record).map_err(|e| TrainError::io(run_dir, e))?;
    json.push('\n');
    let path = run_dir.join("run.json");
    write_atomic(&path, json.as_bytes()).map_err(|e| TrainError::io(&path, e))?;
    let meta = serde_json::json!({ "written_at": chrono::Utc::now().to_rfc3339() });
    let meta_path = run_dir.join("run.meta.json");
    write_atomic(&meta_path, format!("{meta}\n").as_bytes()).map_err(|e| TrainError::io(&meta_path, e))
}

/// Mean weighted loss of a batch under `softmax`, exposed for tests of the
/// weighting convention.
pub fn weighted_cross_entropy(logits: &[Vec<f64>], targets: &[usize], class_weights: &[f64]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(z, &t)| -class_weights[t] * softmax(z)[t].ln())
        .sum::<f64>()
        / n
}
