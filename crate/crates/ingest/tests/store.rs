use std::path::Path;
use std::process::Command;

use chrono::{TimeZone, Utc};
use gifguard_core::preprocess::encode_gif;
use gifguard_core::{GifRecord, GifStatus, Label};
use gifguard_ingest::store::{media_relpath, sha256_hex, EXCLUDED_FILE, RECORDS_DIR};
use gifguard_ingest::{build_manifest, MediaStore, StoreOutcome, StoredRecord};
use image::{Rgb, RgbImage};

/// A distinct GIF per `(seed, frames)`.
fn gif(seed: u8, frames: usize) -> Vec<u8> {
    let images: Vec<RgbImage> = (0..frames)
        .map(|f| RgbImage::from_fn(8, 8, |x, y| Rgb([seed, (x * 30) as u8, (y * 30 + f as u32 * 7) as u8])))
        .collect();
    encode_gif(&images, 10).unwrap()
}

fn pending(id: &str, label: Label) -> GifRecord {
    GifRecord::pending(id, format!("https://media.test/{id}.gif"), "tag", label)
}

#[test]
fn stored_gif_gets_digest_and_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let store = MediaStore::open(dir.path()).unwrap();
    let bytes = gif(1, 3);
    let StoreOutcome::Stored(rec) = store.store(&pending("a", Label::Cyberbullying), &bytes).unwrap() else {
        panic!("expected stored");
    };
    assert_eq!(rec.frame_count, Some(3));
    assert_eq!(rec.status, GifStatus::Downloaded);

    let media = dir.path().join(rec.media_path.as_ref().unwrap());
    assert_eq!(std::fs::read(&media).unwrap(), bytes);
    let sha = rec.sha256.clone().unwrap();
    assert_eq!(rec.media_path.as_deref(), Some(format!("gifs/{}/{sha}.gif", &sha[..2]).as_str()));

    // Independent digest via the system tool.
    if let Ok(out) = Command::new("sha256sum").arg(&media).output() {
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.split_whitespace().next().unwrap(), sha);
    }
}

#[test]
fn identical_payload_is_a_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let store = MediaStore::open(dir.path()).unwrap();
    let bytes = gif(2, 2);
    assert!(matches!(store.store(&pending("a", Label::Cyberbullying), &bytes).unwrap(), StoreOutcome::Stored(_)));
    let again = store.store(&pending("b", Label::NonCyberbullying), &bytes).unwrap();
    assert_eq!(again, StoreOutcome::Duplicate { id: "b".into(), existing: "a".into() });

    // The index survives reopening.
    let reopened = MediaStore::open(dir.path()).unwrap();
    assert!(matches!(reopened.store(&pending("c", Label::Cyberbullying), &bytes).unwrap(), StoreOutcome::Duplicate { .. }));
    assert_eq!(build_manifest(dir.path()).unwrap().records.len(), 1);
}

#[test]
fn non_gif_payload_is_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let store = MediaStore::open(dir.path()).unwrap();
    let png = b"\x89PNG\r\n\x1a\nrest".to_vec();
    let out = store.store(&pending("p", Label::Cyberbullying), &png).unwrap();
    assert_eq!(out, StoreOutcome::Excluded { id: "p".into(), reason: "not a GIF".into() });
    assert_eq!(std::fs::read_dir(dir.path().join("gifs")).unwrap().count(), 0);

    let manifest = build_manifest(dir.path()).unwrap();
    assert!(manifest.records.is_empty());
    assert_eq!(manifest.excluded.len(), 1);
    assert_eq!(manifest.excluded[0].reason, "not a GIF");
    assert!(dir.path().join(EXCLUDED_FILE).exists());
}

#[test]
fn empty_dir_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_manifest(dir.path()).unwrap();
    assert!(manifest.records.is_empty());
    assert_eq!(manifest.counts().total(), 0);
}

/// Writes media and sidecar directly, bypassing the store's duplicate check.
fn plant(root: &Path, id: &str, bytes: &[u8], minute: u32, label: Label) {
    let sha = sha256_hex(bytes);
    let rel = media_relpath(&sha);
    std::fs::create_dir_all(root.join(&rel).parent().unwrap()).unwrap();
    std::fs::write(root.join(&rel), bytes).unwrap();
    let mut record = pending(id, label);
    record.media_path = Some(rel);
    record.sha256 = Some(sha);
    record.frame_count = Some(1);
    record.status = GifStatus::Downloaded;
    let stored = StoredRecord { record, downloaded_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, minute, 0).unwrap() };
    std::fs::create_dir_all(root.join(RECORDS_DIR)).unwrap();
    std::fs::write(root.join(RECORDS_DIR).join(format!("{id}.json")), serde_json::to_vec(&stored).unwrap()).unwrap();
}

#[test]
fn shared_digest_keeps_earliest() {
    let dir = tempfile::tempdir().unwrap();
    let shared = gif(9, 1);
    plant(dir.path(), "a", &gif(3, 1), 0, Label::Cyberbullying);
    plant(dir.path(), "z_first", &shared, 1, Label::Cyberbullying);
    plant(dir.path(), "b", &gif(4, 1), 2, Label::NonCyberbullying);
    plant(dir.path(), "c_later", &shared, 3, Label::NonCyberbullying);
    plant(dir.path(), "d", &gif(5, 1), 4, Label::NonCyberbullying);

    let manifest = build_manifest(dir.path()).unwrap();
    let ids: Vec<_> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "z_first", "b", "d"]);
    assert!(manifest.excluded.iter().any(|e| e.source == "c_later" && e.reason.contains("duplicate")));
}

#[test]
fn corrupt_sidecar_and_tampered_media_are_excluded() {
    let dir = tempfile::tempdir().unwrap();
    plant(dir.path(), "good", &gif(6, 1), 0, Label::Cyberbullying);
    plant(dir.path(), "tampered", &gif(7, 1), 1, Label::Cyberbullying);
    std::fs::write(dir.path().join(RECORDS_DIR).join("broken.json"), b"{ not json").unwrap();
    let sha = sha256_hex(&gif(7, 1));
    std::fs::write(dir.path().join(media_relpath(&sha)), b"GIF89a changed").unwrap();

    let manifest = build_manifest(dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 1);
    assert_eq!(manifest.records[0].id, "good");
    let reasons: Vec<_> = manifest.excluded.iter().map(|e| (e.source.as_str(), e.reason.as_str())).collect();
    assert!(reasons.iter().any(|(s, r)| *s == "records/broken.json" && r.starts_with("corrupt sidecar")));
    assert!(reasons.iter().any(|(s, r)| *s == "tampered" && r.contains("sha256")));
}

#[test]
fn scaled_table_one_counts() {
    // One hundredth of 1,669 / 2,431, rounded: 17 cyberbullying, 24 non.
    let dir = tempfile::tempdir().unwrap();
    let store = MediaStore::open(dir.path()).unwrap();
    for i in 0..41u8 {
        let label = if i < 17 { Label::Cyberbullying } else { Label::NonCyberbullying };
        store.store(&pending(&format!("g{i:02}"), label), &gif(i, 1 + (i as usize % 3))).unwrap();
    }
    let manifest = build_manifest(dir.path()).unwrap();
    let counts = manifest.counts();
    let tally_cb = manifest.records.iter().filter(|r| r.query_label == Label::Cyberbullying).count();
    assert_eq!((counts.cyberbullying, counts.non_cyberbullying, counts.total()), (17, 24, 41));
    assert_eq!(tally_cb, 17);
}

#[test]
fn build_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = MediaStore::open(dir.path()).unwrap();
    for i in 0..6u8 {
        store.store(&pending(&format!("g{i}"), Label::Cyberbullying), &gif(i, 2)).unwrap();
    }
    store.store(&pending("png", Label::Cyberbullying), b"PNG").unwrap();
    let first = build_manifest(dir.path()).unwrap();
    let second = build_manifest(dir.path()).unwrap();
    assert_eq!(first.to_jsonl(), second.to_jsonl());

    let path = dir.path().join("manifest.jsonl");
    first.save(&path).unwrap();
    let loaded = gifguard_core::DatasetManifest::load(&path).unwrap();
    assert_eq!(loaded.to_jsonl(), first.to_jsonl());
}
