//! Stage implementations. Each stage reads the artifacts of the one before
//! it from `data_root` or `run_dir` and writes its own.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use gifguard_annotate::{AnnotationStore, AppState, Assignments};
use gifguard_core::augment::augment_dataset;
use gifguard_core::manifest::{read_jsonl, write_jsonl};
use gifguard_core::metrics::{aggregate_fold_reports, export_curves, EvalReport, SamplePrediction};
use gifguard_core::model::{build_classifier, load_checkpoint, Classifier, ModelCard, WeightsSource};
use gifguard_core::preprocess::{
    build_frame_dataset, categorize_manifest, load_frame_image, load_frame_index, write_frame_dataset, write_frames,
    CategoryOverrides, CleaningSummary, EdgeDensityTextDetector, FrameDescriptor, FrameSample, Provenance,
    SkinToneFaceDetector, Split, FRAME_INDEX_FILE,
};
use gifguard_core::train::{
    dataset_digest, encode_frames, evaluate as evaluate_model, kfold_train, split_dataset, train_holdout,
    write_run_record, EncodedSample, SplitKey, StopReason, TrainHistory,
};
use gifguard_core::{DatasetManifest, CLASS_NAMES};
use gifguard_ingest::store::MANIFEST_FILE;
use gifguard_ingest::{
    collect as collect_gifs, load_seeds, resolve_api_key, write_manifest, ClientConfig, CollectOptions, CollectSummary,
    FixtureMode, GiphyClient, MediaStore,
};
use rayon::prelude::*;

use crate::args::{CollectArgs, ServeArgs};
use crate::config::PipelineConfig;
use crate::CliError;

pub const LABELED_MANIFEST: &str = "manifest.labeled.jsonl";
pub const CATEGORIZED_MANIFEST: &str = "manifest.categorized.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Where every artifact lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub data_root: PathBuf,
    pub run_dir: PathBuf,
}

impl Layout {
    pub fn of(config: &PipelineConfig) -> Self {
        Layout { data_root: config.data_root.clone(), run_dir: config.run_dir.clone() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.data_root.join(MANIFEST_FILE)
    }
    pub fn labeled_manifest(&self) -> PathBuf {
        self.data_root.join(LABELED_MANIFEST)
    }
    pub fn categorized_manifest(&self) -> PathBuf {
        self.data_root.join(CATEGORIZED_MANIFEST)
    }
    pub fn annotations_dir(&self) -> PathBuf {
        self.data_root.join("annotations")
    }
    /// Cleaned original frames.
    pub fn frames_dir(&self) -> PathBuf {
        self.data_root.join("frames")
    }
    pub fn frame_index(&self) -> PathBuf {
        self.frames_dir().join(FRAME_INDEX_FILE)
    }
    /// Augmented frames, which depend on the run's seed and split.
    pub fn run_frames_dir(&self) -> PathBuf {
        self.run_dir.join("frames")
    }
    pub fn split_index(&self) -> PathBuf {
        self.run_dir.join("split.jsonl")
    }
    pub fn augmented_index(&self) -> PathBuf {
        self.run_dir.join("augmented.jsonl")
    }
    /// Final training index: split and augmented, in either order.
    pub fn dataset_index(&self) -> PathBuf {
        self.run_dir.join("dataset.jsonl")
    }
    pub fn crossval_dir(&self) -> PathBuf {
        self.run_dir.join("crossval")
    }
    pub fn evaluation_dir(&self, split: Split) -> PathBuf {
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        };
        self.run_dir.join("evaluation").join(name)
    }
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::StageMissing { stage, path })
    }
}

fn reset_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Config(e.to_string()))
}

pub fn collect(config: &PipelineConfig, args: &CollectArgs) -> Result<CollectSummary, CliError> {
    let section = &config.collect;
    let seeds_path = args
        .seeds
        .clone()
        .or_else(|| section.seeds_file.clone())
        .ok_or_else(|| CliError::Config("no seed file; pass --seeds or set collect.seeds_file".into()))?;
    let seeds = load_seeds(&seeds_path)?;
    let mode = args.fixtures.as_deref().unwrap_or(&section.fixtures);
    let fixtures_dir = || {
        args.fixtures_dir
            .clone()
            .or_else(|| section.fixtures_dir.clone())
            .ok_or_else(|| CliError::Config(format!("fixture mode {mode} needs a fixtures dir")))
    };
    let fixtures = match mode {
        "live" => FixtureMode::Live,
        "record" => FixtureMode::Record(fixtures_dir()?),
        "replay" => FixtureMode::Replay(fixtures_dir()?),
        other => return Err(CliError::Config(format!("unknown fixture mode {other:?}"))),
    };
    let client = GiphyClient::new(ClientConfig {
        base_url: section.base_url.clone(),
        api_key: resolve_api_key(args.api_key.as_deref()),
        requests_per_second: section.requests_per_second,
        fixtures,
        timeout: Duration::from_secs(30),
        ..ClientConfig::default()
    })?;
    let store = MediaStore::open(&config.data_root)?;
    let options = CollectOptions {
        per_seed_limit: args.limit.unwrap_or(section.per_seed_limit),
        parallelism: section.parallelism.max(1),
    };
    let summary = runtime()?.block_on(collect_gifs(&client, &store, &seeds, options))?;
    let manifest = write_manifest(&config.data_root)?;
    let counts = manifest.counts();
    tracing::info!(
        records = counts.total(),
        cyberbullying = counts.cyberbullying,
        non_cyberbullying = counts.non_cyberbullying,
        excluded = manifest.excluded.len(),
        "manifest written"
    );
    Ok(summary)
}

pub fn load_assignments(path: &Path) -> Result<Assignments, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Opens the annotation store over the collected manifest.
pub fn open_annotation_state(config: &PipelineConfig, assignments: &Assignments) -> Result<AppState, CliError> {
    let layout = Layout::of(config);
    let manifest = DatasetManifest::load(&require(layout.manifest(), "collect")?)?;
    let store = AnnotationStore::open(&layout.annotations_dir(), manifest, assignments)?;
    Ok(AppState { store: Mutex::new(store), data_root: layout.data_root.clone(), manifest_out: layout.labeled_manifest() })
}

pub fn serve(config: &PipelineConfig, args: &ServeArgs) -> Result<(), CliError> {
    let path = args
        .assignments
        .clone()
        .or_else(|| config.serve.assignments.clone())
        .ok_or_else(|| CliError::Config("no assignments file; pass --assignments or set serve.assignments".into()))?;
    let state = Arc::new(open_annotation_state(config, &load_assignments(&path)?)?);
    let addr_text = args.addr.as_deref().unwrap_or(&config.serve.addr);
    let addr: SocketAddr = addr_text.parse().map_err(|e| CliError::Config(format!("bad address {addr_text:?}: {e}")))?;
    let static_dir = args.static_dir.clone().or_else(|| config.serve.static_dir.clone());
    runtime()?
        .block_on(gifguard_annotate::serve(addr, state, static_dir.as_deref()))
        .map_err(|e| CliError::Config(format!("serve {addr}: {e}")))
}

pub fn preprocess(config: &PipelineConfig) -> Result<CleaningSummary, CliError> {
    let layout = Layout::of(config);
    let manifest = DatasetManifest::load(&require(layout.labeled_manifest(), "serve")?)?;
    let overrides = match &config.category_overrides {
        Some(path) => CategoryOverrides::load(path).map_err(|e| CliError::io(path, e))?,
        None => CategoryOverrides::default(),
    };
    let categorized = categorize_manifest(
        &manifest,
        &config.data_root,
        config.preprocess.frame_cap,
        &EdgeDensityTextDetector::default(),
        &SkinToneFaceDetector::default(),
        &overrides,
    )?;
    categorized.save(&layout.categorized_manifest())?;
    let dataset = build_frame_dataset(&categorized, &config.data_root, &config.preprocess)?;
    reset_dir(&layout.frames_dir())?;
    write_frame_dataset(&dataset, &layout.frames_dir())?;
    tracing::info!(frames = dataset.kept().count(), "frames written");
    Ok(dataset.summary)
}

/// Loads frame rasters; originals come from the data root, augmented
/// variants from the run directory.
pub fn load_samples(layout: &Layout, descriptors: &[FrameDescriptor]) -> Result<Vec<FrameSample>, CliError> {
    let (originals, augmented) = (layout.frames_dir(), layout.run_frames_dir());
    descriptors
        .par_iter()
        .map(|d| {
            let root = match d.provenance {
                Provenance::Original => &originals,
                Provenance::Augmented { .. } => &augmented,
            };
            Ok(d.to_sample(load_frame_image(root, d)?))
        })
        .collect()
}

fn kept_frames(layout: &Layout) -> Result<Vec<FrameDescriptor>, CliError> {
    let index = require(layout.frame_index(), "preprocess")?;
    Ok(load_frame_index(&index)?.into_iter().filter(|d| !d.excluded).collect())
}

fn write_index(path: &Path, rows: &[FrameDescriptor]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_jsonl(path, rows).map_err(|e| CliError::io(path, e))
}

/// Frame counts per split: train, val, test.
pub fn split(config: &PipelineConfig) -> Result<[usize; 3], CliError> {
    let layout = Layout::of(config);
    let (mut frames, out) = if config.train.paper_mode {
        let input = require(layout.augmented_index(), "augment")?;
        (load_frame_index(&input)?, layout.dataset_index())
    } else {
        (kept_frames(&layout)?, layout.split_index())
    };
    let keys: Vec<SplitKey<'_>> = frames.iter().map(|d| SplitKey { gif_id: &d.gif_id, label: d.label }).collect();
    let splits = split_dataset(&keys, config.train.split_ratios, config.seed, config.train.grouped())?;
    let mut counts = [0; 3];
    for (frame, split) in frames.iter_mut().zip(splits) {
        frame.split = split;
        counts[match split {
            Split::Train => 0,
            Split::Val => 1,
            _ => 2,
        }] += 1;
    }
    write_index(&out, &frames)?;
    tracing::info!(train = counts[0], val = counts[1], test = counts[2], path = %out.display(), "split written");
    Ok(counts)
}

/// Number of frames in the resulting index.
pub fn augment(config: &PipelineConfig) -> Result<usize, CliError> {
    let layout = Layout::of(config);
    let leaky = config.train.paper_mode;
    let (frames, out) = if leaky {
        (kept_frames(&layout)?, layout.augmented_index())
    } else {
        let input = require(layout.split_index(), "split")?;
        (load_frame_index(&input)?, layout.dataset_index())
    };
    let to_augment: Vec<FrameDescriptor> = frames.iter().filter(|d| leaky || d.split == Split::Train).cloned().collect();
    let samples = load_samples(&layout, &to_augment)?;
    let augmented = augment_dataset(&samples, &config.augment, leaky)?;
    drop(samples);

    let variants: Vec<FrameSample> =
        augmented.iter().filter(|s| matches!(s.provenance, Provenance::Augmented { .. })).cloned().collect();
    reset_dir(&layout.run_frames_dir())?;
    write_frames(&variants, &layout.run_frames_dir())?;

    let factor = config.augment.factor as usize;
    let mut groups = augmented.chunks(factor);
    let mut index = Vec::with_capacity(frames.len() + variants.len());
    for frame in frames {
        if leaky || frame.split == Split::Train {
            let group = groups.next().expect("one group per augmented frame");
            index.extend(group.iter().map(FrameDescriptor::for_sample));
        } else {
            index.push(frame);
        }
    }
    write_index(&out, &index)?;
    tracing::info!(frames = index.len(), variants = variants.len(), path = %out.display(), "augmented index written");
    Ok(index.len())
}

/// The final training index, or the first missing stage before it.
pub fn load_dataset(config: &PipelineConfig) -> Result<Vec<FrameDescriptor>, CliError> {
    let layout = Layout::of(config);
    require(layout.frame_index(), "preprocess")?;
    if config.train.paper_mode {
        require(layout.augmented_index(), "augment")?;
        Ok(load_frame_index(&require(layout.dataset_index(), "split")?)?)
    } else {
        require(layout.split_index(), "split")?;
        Ok(load_frame_index(&require(layout.dataset_index(), "augment")?)?)
    }
}

pub fn build_model(config: &PipelineConfig) -> Result<Classifier, CliError> {
    let weights: WeightsSource = config.weights.parse()?;
    Ok(build_classifier(config.model.clone(), &weights, config.seed)?)
}

fn partition(descriptors: &[FrameDescriptor], encoded: Vec<EncodedSample>) -> Result<[Vec<EncodedSample>; 3], CliError> {
    let mut parts: [Vec<EncodedSample>; 3] = Default::default();
    for (d, e) in descriptors.iter().zip(encoded) {
        let slot = match d.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
            Split::Unassigned => return Err(CliError::Config(format!("frame {} has no split", d.sample_id))),
        };
        parts[slot].push(e);
    }
    Ok(parts)
}

fn write_predictions(dir: &Path, predictions: &[SamplePrediction]) -> Result<(), CliError> {
    let path = dir.join(PREDICTIONS_FILE);
    write_jsonl(&path, predictions).map_err(|e| CliError::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub test_report: EvalReport,
}

pub fn train(config: &PipelineConfig) -> Result<TrainOutcome, CliError> {
    let layout = Layout::of(config);
    let descriptors = load_dataset(config)?;
    let samples = load_samples(&layout, &descriptors)?;
    let model = build_model(config)?;
    let encoded = encode_frames(&model, &samples)?;
    drop(samples);
    write_run_record(&config.run_dir, config, &dataset_digest(&encoded))?;
    let [train, val, test] = partition(&descriptors, encoded)?;
    tracing::info!(train = train.len(), val = val.len(), test = test.len(), "training");

    let checkpoints = config.run_dir.join("checkpoints");
    if checkpoints.exists() {
        std::fs::remove_dir_all(&checkpoints).map_err(|e| CliError::io(&checkpoints, e))?;
    }
    let trained = train_holdout(model, &train, &val, &config.train, Some(&config.run_dir))?;
    export_curves(&trained.history, &config.run_dir)?;
    let (predictions, report) = evaluate_model(&trained.model, &test)?;
    report.write(&config.run_dir)?;
    write_predictions(&config.run_dir, &predictions)?;
    Ok(TrainOutcome { history: trained.history, test_report: report })
}

/// Cross-validation pool: the cleaned originals, or every augmented frame
/// in paper mode.
pub fn crossval(config: &PipelineConfig) -> Result<EvalReport, CliError> {
    let layout = Layout::of(config);
    let pool = if config.train.paper_mode {
        load_frame_index(&require(layout.augmented_index(), "augment")?)?
    } else {
        kept_frames(&layout)?
    };
    let samples = load_samples(&layout, &pool)?;
    let model = build_model(config)?;
    let encoded = encode_frames(&model, &samples)?;
    drop(samples);
    let dir = layout.crossval_dir();
    reset_dir(&dir)?;
    write_run_record(&dir, config, &dataset_digest(&encoded))?;
    let outcome = kfold_train(&model, &encoded, &config.train, Some(&dir))?;
    let mut pooled = Vec::new();
    for fold in &outcome.folds {
        export_curves(&fold.history, &dir.join(format!("fold_{}", fold.fold)))?;
        pooled.extend(fold.predictions.iter().cloned());
    }
    write_predictions(&dir, &pooled)?;
    Ok(outcome.aggregate)
}

/// Rebuilds the trained model from its card and best checkpoint.
pub fn load_trained(run_dir: &Path) -> Result<Classifier, CliError> {
    let card = ModelCard::load(&require(run_dir.join("model.json"), "train")?)?;
    let best = require(run_dir.join("checkpoints").join("best.safetensors"), "train")?;
    let weights: WeightsSource = card.weights_source.parse()?;
    let mut model = build_classifier(card.spec.clone(), &weights, card.seed)?;
    if model.weights_digest != card.weights_sha256 {
        return Err(CliError::Config(format!(
            "backbone weights {} do not match those used in training ({} vs {})",
            card.weights_source, model.weights_digest, card.weights_sha256
        )));
    }
    load_checkpoint(&best, &mut model)?;
    Ok(model)
}

pub fn evaluate(config: &PipelineConfig, split: Split) -> Result<EvalReport, CliError> {
    let layout = Layout::of(config);
    let model = load_trained(&config.run_dir)?;
    let descriptors: Vec<FrameDescriptor> = load_dataset(config)?.into_iter().filter(|d| d.split == split).collect();
    let samples = load_samples(&layout, &descriptors)?;
    let encoded = encode_frames(&model, &samples)?;
    let (predictions, report) = evaluate_model(&model, &encoded)?;
    let dir = layout.evaluation_dir(split);
    report.write(&dir)?;
    write_predictions(&dir, &predictions)?;
    Ok(report)
}

/// Recomputes `report.*` and `confusion.csv` from `predictions.jsonl`, and
/// the curves from `history.csv` when present.
pub fn report(dir: &Path) -> Result<EvalReport, CliError> {
    let path = require(dir.join(PREDICTIONS_FILE), "train")?;
    let predictions: Vec<SamplePrediction> = read_jsonl(&path).map_err(|e| CliError::io(&path, e))?;
    let report = aggregate_fold_reports(&[predictions], &CLASS_NAMES)?;
    report.write(dir)?;
    let history_path = dir.join("history.csv");
    if history_path.exists() {
        let epochs = TrainHistory::read_csv(&history_path)?;
        let best_epoch = epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map_or(0, |r| r.epoch);
        let history = TrainHistory { epochs, best_epoch, stop_reason: StopReason::Completed };
        if !history.epochs.is_empty() {
            export_curves(&history, dir)?;
        }
    }
    Ok(report)
}
