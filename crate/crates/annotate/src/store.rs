//! Annotation state: fixed per-annotator assignments, the label log, and the
//! record of which GIFs have been served to whom.
//!
//! Both logs are JSON Lines and append-only; state is rebuilt by replay with
//! the last record per key winning.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use gifguard_core::{DatasetManifest, GifRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agreement::{agreement, AgreementReport};
use crate::finalize::{finalize_labels, group_by_gif, resolve, FinalizeSummary, Resolution};
use crate::record::{AnnotationRecord, LabelSubmission, Round};
use crate::AnnotateError;

pub const LABEL_LOG: &str = "annotations.jsonl";
pub const SERVED_LOG: &str = "served.jsonl";

/// A contiguous run of manifest records, by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

/// Work given to one annotator in one round. Items are `gif_ids` followed
/// by `block`; an adjudicating assignment instead draws on the open
/// first-round disagreements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentSpec {
    pub annotator: String,
    pub round: Round,
    #[serde(default)]
    pub gif_ids: Vec<String>,
    #[serde(default)]
    pub block: Option<Block>,
    #[serde(default)]
    pub adjudicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    #[serde(default)]
    pub assignments: Vec<AssignmentSpec>,
}

impl Assignments {
    /// The same block for every listed annotator.
    pub fn shared_block(annotators: &[&str], round: Round, block: Block) -> Self {
        let assignments = annotators
            .iter()
            .map(|a| AssignmentSpec { annotator: a.to_string(), round, gif_ids: Vec::new(), block: Some(block), adjudicate: false })
            .collect();
        Assignments { assignments }
    }
}

#[derive(Debug, Clone, Default)]
struct Queue {
    items: Vec<String>,
    adjudicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ServedEntry {
    annotator_id: String,
    round: Round,
    gif_id: String,
    served_at: DateTime<Utc>,
}

type RecordKey = (String, String, Round);

pub struct AnnotationStore {
    manifest: DatasetManifest,
    index: HashMap<String, usize>,
    queues: HashMap<(String, Round), Queue>,
    annotators: BTreeSet<String>,
    records: BTreeMap<RecordKey, AnnotationRecord>,
    served: HashSet<(String, Round, String)>,
    label_log: File,
    served_log: File,
}

impl AnnotationStore {
    /// Opens the logs under `dir`, replaying any existing entries.
    pub fn open(dir: &Path, manifest: DatasetManifest, assignments: &Assignments) -> Result<Self, AnnotateError> {
        std::fs::create_dir_all(dir).map_err(|e| AnnotateError::io(dir, e))?;
        let index: HashMap<String, usize> = manifest.records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();

        let mut queues: HashMap<(String, Round), Queue> = HashMap::new();
        let mut annotators = BTreeSet::new();
        for spec in &assignments.assignments {
            if spec.annotator.trim().is_empty() {
                return Err(AnnotateError::Config("assignment with empty annotator id".into()));
            }
            let queue = queues.entry((spec.annotator.clone(), spec.round)).or_default();
            for id in &spec.gif_ids {
                if !index.contains_key(id) {
                    return Err(AnnotateError::Config(format!("assignment for {} names unknown gif {id}", spec.annotator)));
                }
                queue.items.push(id.clone());
            }
            if let Some(Block { start, len }) = spec.block {
                let end = start.checked_add(len).filter(|&e| e <= manifest.records.len()).ok_or_else(|| {
                    AnnotateError::Config(format!(
                        "block {start}+{len} for {} exceeds {} records",
                        spec.annotator,
                        manifest.records.len()
                    ))
                })?;
                queue.items.extend(manifest.records[start..end].iter().map(|r| r.id.clone()));
            }
            queue.adjudicate |= spec.adjudicate;
            let mut seen = HashSet::new();
            queue.items.retain(|id| seen.insert(id.clone()));
            annotators.insert(spec.annotator.clone());
        }

        let label_path = dir.join(LABEL_LOG);
        let served_path = dir.join(SERVED_LOG);
        let mut records = BTreeMap::new();
        for r in replay::<AnnotationRecord>(&label_path)? {
            records.insert((r.gif_id.clone(), r.annotator_id.clone(), r.round), r);
        }
        let served = replay::<ServedEntry>(&served_path)?
            .into_iter()
            .map(|e| (e.annotator_id, e.round, e.gif_id))
            .collect();
        Ok(AnnotationStore {
            manifest,
            index,
            queues,
            annotators,
            records,
            served,
            label_log: open_append(&label_path)?,
            served_log: open_append(&served_path)?,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn gif(&self, id: &str) -> Option<&GifRecord> {
        self.index.get(id).map(|&i| &self.manifest.records[i])
    }

    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.annotators.iter().map(String::as_str)
    }

    /// Current records, one per (gif, annotator, round).
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.records.values().cloned().collect()
    }

    fn known(&self, annotator: &str) -> Result<(), AnnotateError> {
        if self.annotators.contains(annotator) {
            Ok(())
        } else {
            Err(AnnotateError::UnknownAnnotator(annotator.to_string()))
        }
    }

    /// Next assigned GIF that this annotator has neither labeled nor been
    /// served in this round.
    pub fn next_unlabeled(&mut self, annotator: &str, round: Round) -> Result<Option<GifRecord>, AnnotateError> {
        self.known(annotator)?;
        let queue = self
            .queues
            .get(&(annotator.to_string(), round))
            .ok_or_else(|| AnnotateError::RoundInactive { annotator: annotator.to_string(), round })?;
        let candidates: Vec<String> = if queue.adjudicate {
            let mut ids: Vec<String> = queue.items.clone();
            ids.extend(self.open_disagreements().into_iter().map(|r| r.id));
            ids
        } else {
            queue.items.clone()
        };
        let next = candidates.into_iter().find(|id| {
            !self.served.contains(&(annotator.to_string(), round, id.clone()))
                && !self.records.contains_key(&(id.clone(), annotator.to_string(), round))
        });
        let Some(id) = next else {
            return Ok(None);
        };
        let entry = ServedEntry { annotator_id: annotator.to_string(), round, gif_id: id.clone(), served_at: Utc::now() };
        append(&mut self.served_log, &entry)?;
        self.served.insert((entry.annotator_id, round, id.clone()));
        Ok(self.gif(&id).cloned())
    }

    pub fn served_count(&self, annotator: &str, round: Round) -> usize {
        self.served.iter().filter(|(a, r, _)| a == annotator && *r == round).count()
    }

    /// Validates and persists a label. A resubmission for the same
    /// (gif, annotator, round) replaces the earlier one.
    pub fn submit(&mut self, submission: LabelSubmission, now: DateTime<Utc>) -> Result<AnnotationRecord, AnnotateError> {
        if self.gif(&submission.gif_id).is_none() {
            return Err(AnnotateError::UnknownGif(submission.gif_id));
        }
        self.known(&submission.annotator_id)?;
        submission.check_criteria()?;
        let served_key = (submission.annotator_id.clone(), submission.round, submission.gif_id.clone());
        if !self.served.contains(&served_key) {
            return Err(AnnotateError::NotServed { gif_id: submission.gif_id, annotator_id: submission.annotator_id });
        }
        let key = (submission.gif_id.clone(), submission.annotator_id.clone(), submission.round);
        let now = match self.records.get(&key) {
            Some(prev) if prev.timestamp >= now => prev.timestamp + chrono::Duration::microseconds(1),
            _ => now,
        };
        let record = submission.into_record(now);
        append(&mut self.label_log, &record)?;
        self.records.insert(key, record.clone());
        Ok(record)
    }

    /// Agreement between two raters over the items both labeled in `round`.
    pub fn agreement_report(&self, round: Round, rater_a: &str, rater_b: &str) -> Result<AgreementReport, AnnotateError> {
        let items: Vec<_> = self
            .manifest
            .records
            .iter()
            .filter_map(|g| {
                let a = self.records.get(&(g.id.clone(), rater_a.to_string(), round))?;
                let b = self.records.get(&(g.id.clone(), rater_b.to_string(), round))?;
                Some((g.id.clone(), a.label, b.label))
            })
            .collect();
        agreement(&items).ok_or(AnnotateError::EmptyOverlap)
    }

    /// GIFs whose labels in `round` differ between raters, in manifest order.
    pub fn disagreements(&self, round: Round) -> Vec<GifRecord> {
        let records = self.records();
        let by_gif = group_by_gif(&records);
        self.manifest
            .records
            .iter()
            .filter(|g| {
                by_gif.get(g.id.as_str()).is_some_and(|rs| {
                    let mut labels = rs.iter().filter(|r| r.round == round).map(|r| r.label);
                    labels.next().is_some_and(|first| labels.any(|l| l != first))
                })
            })
            .cloned()
            .collect()
    }

    /// First-round disagreements still lacking an adjudication.
    pub fn open_disagreements(&self) -> Vec<GifRecord> {
        let records = self.records();
        let by_gif = group_by_gif(&records);
        self.disagreements(Round::Round1)
            .into_iter()
            .filter(|g| by_gif.get(g.id.as_str()).is_some_and(|rs| matches!(resolve(rs), Resolution::Disputed | Resolution::Conflicted)))
            .collect()
    }

    /// Applies final labels to the held manifest.
    pub fn finalize(&mut self) -> Result<FinalizeSummary, AnnotateError> {
        let (manifest, summary) = finalize_labels(&self.manifest, &self.records())?;
        self.manifest = manifest;
        Ok(summary)
    }
}

fn open_append(path: &Path) -> Result<File, AnnotateError> {
    OpenOptions::new().create(true).append(true).open(path).map_err(|e| AnnotateError::io(path, e))
}

fn append<T: Serialize>(file: &mut File, row: &T) -> Result<(), AnnotateError> {
    let mut line = serde_json::to_string(row).expect("row serializes");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.sync_data())
        .map_err(|e| AnnotateError::Io(e.to_string()))
}

/// Reads a log. A final line without its newline is a torn write and is
/// dropped; any other malformed line is an error.
fn replay<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AnnotateError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AnnotateError::io(path, e)),
    };
    let mut rows = Vec::new();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(row) => rows.push(row),
            Err(_) if !line.ends_with('\n') => {
                tracing::warn!(path = %path.display(), line = i + 1, "dropping torn final line");
            }
            Err(e) => return Err(AnnotateError::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}
