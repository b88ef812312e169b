//! Synthetic end-to-end run: generated GIFs go through storage, scripted
//! annotation, preprocessing, split, augmentation, training and evaluation.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::Utc;
use gifguard_annotate::{AgreementReport, AssignmentSpec, Assignments, Block, Criterion, LabelSubmission, Round};
use gifguard_core::manifest::read_jsonl;
use gifguard_core::metrics::{read_curves_csv, EvalReport, SamplePrediction};
use gifguard_core::model::ModelCard;
use gifguard_core::preprocess::{encode_gif, CategoryOverrides, Split};
use gifguard_core::seed::{derive_seed, rng_from};
use gifguard_core::train::TrainHistory;
use gifguard_core::{ContentCategory, DatasetManifest, GifRecord, Label};
use gifguard_ingest::{write_manifest, MediaStore, StoreOutcome};
use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::stages::{self, Layout};
use crate::CliError;

/// Present in every directory the smoke run owns; only such directories are
/// wiped on rerun.
pub const MARKER: &str = ".gifguard-smoke";
pub const GIFS_PER_CLASS: usize = 40;
pub const SIDE: u32 = 64;
pub const MAX_EPOCHS: usize = 10;
pub const MIN_VAL_ACCURACY: f64 = 0.95;
/// The second annotator contradicts the first on every tenth GIF.
const FLIP_EVERY: usize = 10;
const TAG_CB: &str = "synthetic_cb";
const TAG_NC: &str = "synthetic_nc";

/// The smoke run's settings on top of `base`: small inputs, a seeded
/// backbone and a short schedule.
pub fn smoke_config(base: &PipelineConfig) -> PipelineConfig {
    let mut config = base.clone();
    config.weights = format!("seeded:{}", config.seed);
    config.model.input_side = 32;
    config.train.epochs = MAX_EPOCHS;
    config.train.batch_size = 16;
    config.train.initial_lr = 1e-3;
    config.train.lr_patience = 2;
    config.train.early_stop_patience = 4;
    config.train.paper_mode = false;
    config.category_overrides = Some(config.data_root.join("category_overrides.jsonl"));
    config.sync_seeds();
    config
}

fn claim_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let empty = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_none();
        if !empty && !dir.join(MARKER).exists() {
            return Err(CliError::Config(format!("{} is not empty and was not created by a smoke run", dir.display())));
        }
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    std::fs::write(dir.join(MARKER), b"").map_err(|e| CliError::io(dir, e))
}

fn fill_disc(img: &mut RgbImage, cx: f32, cy: f32, r_in: f32, r_out: f32, color: Rgb<u8>) {
    for (x, y, px) in img.enumerate_pixels_mut() {
        let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
        if d >= r_in && d <= r_out {
            *px = color;
        }
    }
}

/// One frame. Cyberbullying frames carry a bright disc under a band of
/// white glyphs; the others a dark ring. Both sit on noisy gray so that
/// they pass the blur filter, and the shape moves between frames so that
/// frames are not near-duplicates.
fn synthetic_frame<R: Rng>(label: Label, frame: u32, rng: &mut R) -> RgbImage {
    let mut img = RgbImage::from_fn(SIDE, SIDE, |_, _| {
        let v = (110 + rng.random_range(-30i32..=30)) as u8;
        Rgb([v, v, v])
    });
    let cx = 14.0 + ((frame * 7) % 36) as f32;
    let cy = 30.0 + ((frame * 5) % 20) as f32;
    match label {
        Label::Cyberbullying => {
            fill_disc(&mut img, cx, cy, 0.0, 11.0, Rgb([235, 215, 70]));
            for y in 3..17 {
                for x in 3..61 {
                    img.put_pixel(x, y, Rgb([0, 0, 0]));
                }
            }
            for g in 0..5u32 {
                let bits: u16 = rng.random();
                for k in 0..15u32 {
                    if bits >> k & 1 == 1 {
                        let (gx, gy) = (5 + g * 11 + (k % 3) * 3, 5 + (k / 3) * 2);
                        for (dx, dy) in [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)] {
                            img.put_pixel(gx + dx, gy + dy, Rgb([255, 255, 255]));
                        }
                    }
                }
            }
        }
        Label::NonCyberbullying => fill_disc(&mut img, cx, cy, 8.0, 14.0, Rgb([35, 35, 50])),
    }
    img
}

/// A 4 to 20 frame GIF for `label`.
pub fn synthetic_gif(label: Label, seed: u64) -> Vec<u8> {
    let mut rng = rng_from(seed);
    let n = rng.random_range(4..=20u32);
    let frames: Vec<RgbImage> = (0..n).map(|f| synthetic_frame(label, f, &mut rng)).collect();
    encode_gif(&frames, 8).expect("in-memory GIF encoding")
}

/// Writes `2 * GIFS_PER_CLASS` GIFs into the store under `data_root` and
/// builds the manifest.
pub fn generate(data_root: &Path, seed: u64) -> Result<DatasetManifest, CliError> {
    let store = MediaStore::open(data_root)?;
    for (label, tag) in [(Label::Cyberbullying, TAG_CB), (Label::NonCyberbullying, TAG_NC)] {
        for i in 0..GIFS_PER_CLASS {
            let id = format!("{tag}_{i:02}");
            let bytes = synthetic_gif(label, derive_seed("smoke-gif", &[&seed, &id.as_str()]));
            let record = GifRecord::pending(&id, format!("synthetic://{id}"), tag, label);
            match store.store(&record, &bytes)? {
                StoreOutcome::Stored(_) => {}
                other => return Err(CliError::Smoke(format!("synthetic gif {id} not stored: {other:?}"))),
            }
        }
    }
    Ok(write_manifest(data_root)?)
}

fn submission(gif: &GifRecord, annotator: &str, round: Round, label: Label) -> LabelSubmission {
    let criteria_flags = match label {
        Label::Cyberbullying => BTreeSet::from([Criterion::HostileGestureOrExpression]),
        Label::NonCyberbullying => BTreeSet::new(),
    };
    LabelSubmission { gif_id: gif.id.clone(), annotator_id: annotator.into(), round, label, criteria_flags }
}

fn flipped(label: Label) -> Label {
    match label {
        Label::Cyberbullying => Label::NonCyberbullying,
        Label::NonCyberbullying => Label::Cyberbullying,
    }
}

/// Two annotators label everything, the second one contrary on every tenth
/// GIF; an adjudicator settles those in the second round. The finalized
/// manifest is saved where preprocessing expects it.
pub fn annotate(config: &PipelineConfig, n_gifs: usize) -> Result<AgreementReport, CliError> {
    let block = Block { start: 0, len: n_gifs };
    let mut assignments = Assignments::shared_block(&["a1", "a2"], Round::Round1, block);
    assignments.assignments.push(AssignmentSpec {
        annotator: "lead".into(),
        round: Round::Round2,
        gif_ids: Vec::new(),
        block: None,
        adjudicate: true,
    });
    let state = stages::open_annotation_state(config, &assignments)?;
    let mut store = state.store.into_inner().expect("store lock is not shared");

    let mut seen = 0usize;
    for annotator in ["a1", "a2"] {
        while let Some(gif) = store.next_unlabeled(annotator, Round::Round1)? {
            let mut label = gif.query_label;
            if annotator == "a2" {
                if seen.is_multiple_of(FLIP_EVERY) {
                    label = flipped(label);
                }
                seen += 1;
            }
            store.submit(submission(&gif, annotator, Round::Round1, label), Utc::now())?;
        }
    }
    while let Some(gif) = store.next_unlabeled("lead", Round::Round2)? {
        store.submit(submission(&gif, "lead", Round::Round2, gif.query_label), Utc::now())?;
    }
    let agreement = store.agreement_report(Round::Round1, "a1", "a2")?;
    store.finalize()?;
    store.manifest().save(&state.manifest_out)?;
    Ok(agreement)
}

/// Deterministic summary, also written to `smoke.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeOutcome {
    pub gifs: usize,
    pub percent_agreement: f64,
    pub cohens_kappa: f64,
    pub adjudicated: usize,
    pub split_frames: [usize; 3],
    pub training_frames: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub test_weighted_recall: f64,
    pub reloaded_test_accuracy: f64,
}

impl SmokeOutcome {
    pub fn summary_text(&self) -> String {
        format!(
            "gifs {}\nround-1 agreement {:.4} (kappa {:.4}), {} adjudicated\nsplit frames train {} / val {} / test {}\n\
             training frames after augmentation {}\nepochs {} (best {}), best val accuracy {:.4}\n\
             test accuracy {:.4}, weighted recall {:.4}, reloaded checkpoint accuracy {:.4}\n",
            self.gifs,
            self.percent_agreement,
            self.cohens_kappa,
            self.adjudicated,
            self.split_frames[0],
            self.split_frames[1],
            self.split_frames[2],
            self.training_frames,
            self.epochs_run,
            self.best_epoch,
            self.best_val_accuracy,
            self.test_accuracy,
            self.test_weighted_recall,
            self.reloaded_test_accuracy,
        )
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Smoke(what()))
    }
}

/// Every artifact the run leaves behind must load back.
fn check_outputs(run_dir: &Path) -> Result<(), CliError> {
    EvalReport::load_json(&run_dir.join("report.json"))?;
    read_curves_csv(&run_dir.join("curves.csv"))?;
    TrainHistory::read_csv(&run_dir.join("history.csv"))?;
    ModelCard::load(&run_dir.join("model.json"))?;
    let path = run_dir.join(stages::PREDICTIONS_FILE);
    let predictions: Vec<SamplePrediction> = read_jsonl(&path).map_err(|e| CliError::io(&path, e))?;
    check(!predictions.is_empty(), || "no test predictions".into())?;
    for file in ["report.txt", "confusion.csv", "accuracy.svg", "loss.svg", "run.json", "checkpoints/best.safetensors"] {
        check(run_dir.join(file).is_file(), || format!("{file} missing from {}", run_dir.display()))?;
    }
    Ok(())
}

/// Runs the whole pipeline on synthetic data and checks the result.
pub fn run(base: &PipelineConfig) -> Result<SmokeOutcome, CliError> {
    let config = smoke_config(base);
    config.validate()?;
    let layout = Layout::of(&config);
    claim_dir(&layout.run_dir)?;
    claim_dir(&layout.data_root)?;

    let manifest = generate(&layout.data_root, config.seed)?;
    let gifs = manifest.records.len();
    tracing::info!(gifs, "synthetic gifs stored");
    let agreement = annotate(&config, gifs)?;
    let labeled = DatasetManifest::load(&layout.labeled_manifest())?;
    let overrides =
        CategoryOverrides(labeled.records.iter().map(|r| (r.id.clone(), ContentCategory::FaceAndText)).collect());
    let overrides_path = config.category_overrides.clone().expect("smoke config sets overrides");
    overrides.save(&overrides_path).map_err(|e| CliError::io(&overrides_path, e))?;

    stages::preprocess(&config)?;
    let split_frames = stages::split(&config)?;
    let training_frames = stages::augment(&config)?;
    let trained = stages::train(&config)?;
    let reloaded = stages::evaluate(&config, Split::Test)?;

    let best = *trained.history.best().ok_or_else(|| CliError::Smoke("empty history".into()))?;
    let report = &trained.test_report;
    let outcome = SmokeOutcome {
        gifs,
        percent_agreement: agreement.percent_agreement,
        cohens_kappa: agreement.cohens_kappa,
        adjudicated: agreement.disagreement_ids.len(),
        split_frames,
        training_frames,
        epochs_run: trained.history.epochs.len(),
        best_epoch: best.epoch,
        best_val_accuracy: best.val_accuracy,
        test_accuracy: report.accuracy,
        test_weighted_recall: report.weighted_avg.recall,
        reloaded_test_accuracy: reloaded.accuracy,
    };
    let path = layout.run_dir.join("smoke.json");
    let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes") + "\n";
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;

    check(outcome.epochs_run <= MAX_EPOCHS, || format!("{} epochs run", outcome.epochs_run))?;
    check(outcome.best_val_accuracy >= MIN_VAL_ACCURACY, || {
        format!("best validation accuracy {:.4} < {MIN_VAL_ACCURACY}", outcome.best_val_accuracy)
    })?;
    check((outcome.test_weighted_recall - outcome.test_accuracy).abs() < 1e-12, || {
        format!("weighted recall {} differs from accuracy {}", outcome.test_weighted_recall, outcome.test_accuracy)
    })?;
    check(reloaded == *report, || "reloaded checkpoint gives a different test report".into())?;
    check_outputs(&layout.run_dir)?;
    Ok(outcome)
}
