//! Content-addressed media store with per-record JSON sidecars.
//!
//! Layout under the data root:
//! `gifs/<aa>/<sha256>.gif`, `records/<id>.json`, `excluded.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use gifguard_core::manifest::{write_atomic, ExcludedEntry};
use gifguard_core::preprocess::{count_frames, safe_component};
use gifguard_core::{DatasetManifest, GifRecord, GifStatus};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::IngestError;

pub const GIFS_DIR: &str = "gifs";
pub const RECORDS_DIR: &str = "records";
pub const EXCLUDED_FILE: &str = "excluded.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Sidecar written next to each stored GIF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub record: GifRecord,
    pub downloaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoreOutcome {
    Stored(GifRecord),
    Duplicate { id: String, existing: String },
    Excluded { id: String, reason: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn is_gif(bytes: &[u8]) -> bool {
    bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a")
}

/// Relative media path for a digest.
pub fn media_relpath(sha256: &str) -> String {
    format!("{GIFS_DIR}/{}/{sha256}.gif", &sha256[..2])
}

pub struct MediaStore {
    root: PathBuf,
    /// sha256 → id of the record holding it. Also serializes writers.
    index: Mutex<HashMap<String, String>>,
}

impl MediaStore {
    /// Opens (creating if needed) a store and indexes existing sidecars.
    pub fn open(root: &Path) -> Result<Self, IngestError> {
        for dir in [root.join(GIFS_DIR), root.join(RECORDS_DIR)] {
            fs::create_dir_all(&dir).map_err(|e| IngestError::io(&dir, e))?;
        }
        let mut index = HashMap::new();
        for (_, parsed) in read_sidecars(root)? {
            if let Ok(stored) = parsed {
                if let Some(sha) = stored.record.sha256 {
                    index.entry(sha).or_insert(stored.record.id);
                }
            }
        }
        Ok(MediaStore { root: root.to_path_buf(), index: Mutex::new(index) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.sidecar_path(id).exists()
    }

    fn sidecar_path(&self, id: &str) -> PathBuf {
        self.root.join(RECORDS_DIR).join(format!("{}.json", safe_component(id)))
    }

    /// Validates, hashes and persists fetched media for `record`.
    pub fn store(&self, record: &GifRecord, bytes: &[u8]) -> Result<StoreOutcome, IngestError> {
        if !is_gif(bytes) {
            return self.exclude(&record.id, "not a GIF");
        }
        let frames = match count_frames(bytes) {
            Ok(n) if n >= 1 => n,
            Ok(_) => return self.exclude(&record.id, "no frames"),
            Err(e) => return self.exclude(&record.id, &format!("undecodable GIF: {e}")),
        };
        let sha = sha256_hex(bytes);
        let mut index = self.index.lock().expect("store index poisoned");
        if let Some(existing) = index.get(&sha) {
            tracing::info!(id = %record.id, %existing, "duplicate media");
            return Ok(StoreOutcome::Duplicate { id: record.id.clone(), existing: existing.clone() });
        }
        let rel = media_relpath(&sha);
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
        }
        write_atomic(&path, bytes).map_err(|e| IngestError::io(&path, e))?;

        let mut stored = record.clone();
        stored.media_path = Some(rel);
        stored.sha256 = Some(sha.clone());
        stored.frame_count = Some(frames);
        stored.status = GifStatus::Downloaded;
        let sidecar = StoredRecord { record: stored.clone(), downloaded_at: Utc::now() };
        let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        let side = self.sidecar_path(&record.id);
        write_atomic(&side, &json).map_err(|e| IngestError::io(&side, e))?;
        index.insert(sha, record.id.clone());
        Ok(StoreOutcome::Stored(stored))
    }

    fn exclude(&self, id: &str, reason: &str) -> Result<StoreOutcome, IngestError> {
        let _guard = self.index.lock().expect("store index poisoned");
        append_excluded(&self.root, &ExcludedEntry { source: id.to_string(), reason: reason.to_string() })?;
        Ok(StoreOutcome::Excluded { id: id.to_string(), reason: reason.to_string() })
    }
}

fn append_excluded(root: &Path, entry: &ExcludedEntry) -> Result<(), IngestError> {
    let path = root.join(EXCLUDED_FILE);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| IngestError::io(&path, e))?;
    let mut line = serde_json::to_string(entry).expect("entry serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| IngestError::io(&path, e))
}

type Sidecar = (String, Result<StoredRecord, String>);

/// Every `records/*.json`, sorted by file name.
fn read_sidecars(root: &Path) -> Result<Vec<Sidecar>, IngestError> {
    let dir = root.join(RECORDS_DIR);
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(IngestError::io(&dir, e)),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = format!("{RECORDS_DIR}/{}", p.file_name().unwrap_or_default().to_string_lossy());
            let parsed = fs::read(&p)
                .map_err(|e| e.to_string())
                .and_then(|b| serde_json::from_slice::<StoredRecord>(&b).map_err(|e| format!("corrupt sidecar: {e}")));
            (name, parsed)
        })
        .collect())
}

/// Assembles a manifest from the sidecars under `root`.
///
/// Records sharing a digest collapse to the earliest download. Corrupt
/// sidecars and records whose media no longer matches their digest are
/// listed as excluded. The result does not depend on directory order.
pub fn build_manifest(root: &Path) -> Result<DatasetManifest, IngestError> {
    let mut excluded: Vec<ExcludedEntry> = match gifguard_core::manifest::read_jsonl(&root.join(EXCLUDED_FILE)) {
        Ok(rows) => rows,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(IngestError::io(&root.join(EXCLUDED_FILE), e)),
    };
    let mut candidates = Vec::new();
    for (name, parsed) in read_sidecars(root)? {
        match parsed {
            Err(reason) => excluded.push(ExcludedEntry { source: name, reason }),
            Ok(stored) => match verify(root, &stored.record) {
                Ok(()) => candidates.push(stored),
                Err(reason) => excluded.push(ExcludedEntry { source: stored.record.id.clone(), reason }),
            },
        }
    }
    candidates.sort_by(|a, b| (a.downloaded_at, &a.record.id).cmp(&(b.downloaded_at, &b.record.id)));

    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    let mut records = Vec::new();
    for stored in candidates {
        let sha = stored.record.sha256.clone().expect("verified records carry a digest");
        if let Some(first) = seen.get(&sha) {
            excluded.push(ExcludedEntry { source: stored.record.id.clone(), reason: format!("duplicate of {first}") });
            continue;
        }
        seen.insert(sha, stored.record.id.clone());
        records.push(stored.record);
    }
    excluded.sort_by(|a, b| (&a.source, &a.reason).cmp(&(&b.source, &b.reason)));
    excluded.dedup();

    let mut manifest = DatasetManifest::new(records).map_err(|e| IngestError::Manifest(e.to_string()))?;
    manifest.excluded = excluded;
    Ok(manifest)
}

fn verify(root: &Path, record: &GifRecord) -> Result<(), String> {
    let (Some(rel), Some(sha)) = (&record.media_path, &record.sha256) else {
        return Err("missing media_path or sha256".into());
    };
    if record.frame_count.is_none_or(|n| n < 1) {
        return Err("frame_count below 1".into());
    }
    let bytes = fs::read(root.join(rel)).map_err(|e| format!("media unreadable: {e}"))?;
    if &sha256_hex(&bytes) != sha {
        return Err("sha256 does not match stored media".into());
    }
    Ok(())
}

/// Builds the manifest and writes it to `<root>/manifest.jsonl`.
pub fn write_manifest(root: &Path) -> Result<DatasetManifest, IngestError> {
    let manifest = build_manifest(root)?;
    let path = root.join(MANIFEST_FILE);
    manifest.save(&path).map_err(|e| IngestError::Manifest(e.to_string()))?;
    Ok(manifest)
}
