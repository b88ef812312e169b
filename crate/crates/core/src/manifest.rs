//! Dataset manifest: the list of collected GIFs and its JSON Lines encoding.
//!
//! The on-disk form is a header line followed by one [`GifRecord`] per line.
//! The creation timestamp lives in a `.meta.json` sidecar so that manifests
//! built from identical inputs are byte-identical.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::label::Label;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentCategory {
    TextOnly,
    NoText,
    FaceAndText,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GifStatus {
    /// Search hit whose media has not been fetched yet.
    Pending,
    Downloaded,
    Annotated,
    Cleaned,
    Excluded,
}

/// One collected GIF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GifRecord {
    pub id: String,
    pub source_url: String,
    pub tag: String,
    pub query_label: Label,
    pub media_path: Option<String>,
    pub sha256: Option<String>,
    pub frame_count: Option<u32>,
    #[serde(default)]
    pub content_category: ContentCategory,
    pub status: GifStatus,
    /// Final annotated label, set by label finalization.
    #[serde(default)]
    pub label: Option<Label>,
}

impl GifRecord {
    pub fn pending(id: impl Into<String>, source_url: impl Into<String>, tag: impl Into<String>, query_label: Label) -> Self {
        GifRecord {
            id: id.into(),
            source_url: source_url.into(),
            tag: tag.into(),
            query_label,
            media_path: None,
            sha256: None,
            frame_count: None,
            content_category: ContentCategory::Unknown,
            status: GifStatus::Pending,
            label: None,
        }
    }
}

/// Entry for a record that could not be admitted to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedEntry {
    pub source: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub cyberbullying: usize,
    pub non_cyberbullying: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.cyberbullying + self.non_cyberbullying
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Cyberbullying => self.cyberbullying,
            Label::NonCyberbullying => self.non_cyberbullying,
        }
    }

    fn bump(&mut self, label: Label) {
        match label {
            Label::Cyberbullying => self.cyberbullying += 1,
            Label::NonCyberbullying => self.non_cyberbullying += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    schema_version: u32,
    counts: LabelCounts,
    total: usize,
    #[serde(default)]
    excluded: Vec<ExcludedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestMeta {
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub created_at: DateTime<Utc>,
    pub records: Vec<GifRecord>,
    pub excluded: Vec<ExcludedEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("duplicate sha256 {sha256} shared by {first} and {second}")]
    DuplicateDigest { sha256: String, first: String, second: String },
    #[error("manifest {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported manifest schema version {0}")]
    SchemaVersion(u32),
    #[error("manifest header counts {header:?} disagree with record tally {tally:?}")]
    CountMismatch { header: LabelCounts, tally: LabelCounts },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetManifest {
    pub fn new(records: Vec<GifRecord>) -> Result<Self, ManifestError> {
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            created_at: Utc::now(),
            records,
            excluded: Vec::new(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Per query-label tally of the records.
    pub fn counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for record in &self.records {
            counts.bump(record.query_label);
        }
        counts
    }

    /// Per final-label tally; records without a final label are skipped.
    pub fn final_label_counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for label in self.records.iter().filter_map(|r| r.label) {
            counts.bump(label);
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&GifRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Checks id uniqueness and sha256 uniqueness.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut ids = HashSet::new();
        let mut digests: BTreeMap<&str, &str> = BTreeMap::new();
        for record in &self.records {
            if !ids.insert(record.id.as_str()) {
                return Err(ManifestError::DuplicateId(record.id.clone()));
            }
            if let Some(sha) = record.sha256.as_deref() {
                if let Some(first) = digests.insert(sha, record.id.as_str()) {
                    return Err(ManifestError::DuplicateDigest {
                        sha256: sha.to_string(),
                        first: first.to_string(),
                        second: record.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let counts = self.counts();
        let header = ManifestHeader {
            schema_version: self.schema_version,
            total: counts.total(),
            counts,
            excluded: self.excluded.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(path: &Path, text: &str) -> Result<Self, ManifestError> {
        let parse_err = |line: usize, e: serde_json::Error| ManifestError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", line + 1),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (idx, first) = lines.next().ok_or_else(|| ManifestError::Parse {
            path: path.to_path_buf(),
            message: "missing header line".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(first).map_err(|e| parse_err(idx, e))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::SchemaVersion(header.schema_version));
        }
        let records = lines
            .map(|(i, line)| serde_json::from_str::<GifRecord>(line).map_err(|e| parse_err(i, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let manifest = DatasetManifest {
            schema_version: header.schema_version,
            created_at: Utc::now(),
            records,
            excluded: header.excluded,
        };
        let tally = manifest.counts();
        if tally != header.counts || header.total != tally.total() {
            return Err(ManifestError::CountMismatch { header: header.counts, tally });
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes `path` and a `<path>.meta.json` sidecar holding the timestamp.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(path, self.to_jsonl().as_bytes())?;
        let meta = ManifestMeta { created_at: self.created_at };
        write_atomic(&meta_path(path), serde_json::to_string_pretty(&meta).expect("meta").as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path)?;
        let mut manifest = Self::from_jsonl(path, &text)?;
        if let Ok(meta) = fs::read_to_string(meta_path(path)) {
            if let Ok(meta) = serde_json::from_str::<ManifestMeta>(&meta) {
                manifest.created_at = meta.created_at;
            }
        }
        Ok(manifest)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Reads a JSON Lines file into typed rows, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
