use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use gifguard_annotate::{router, AnnotationStore, AppState, AssignmentSpec, Assignments, Block, Round};
use gifguard_core::{DatasetManifest, GifRecord, Label};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn manifest(n: usize, data_root: &Path) -> DatasetManifest {
    let records = (0..n)
        .map(|i| {
            let id = format!("g{i:03}");
            let mut r = GifRecord::pending(&id, format!("https://x.test/{id}"), "t", Label::Cyberbullying);
            let rel = format!("gifs/{id}.gif");
            std::fs::create_dir_all(data_root.join("gifs")).unwrap();
            std::fs::write(data_root.join(&rel), format!("GIF89a{id}")).unwrap();
            r.media_path = Some(rel);
            r.sha256 = Some(format!("{i:064x}"));
            r.frame_count = Some(1);
            r
        })
        .collect();
    DatasetManifest::new(records).unwrap()
}

struct Harness {
    app: Router,
    root: tempfile::TempDir,
}

impl Harness {
    fn new(n: usize, assignments: Assignments) -> Self {
        let root = tempfile::tempdir().unwrap();
        let app = Self::build(root.path(), n, &assignments);
        Harness { app, root }
    }

    fn build(root: &Path, n: usize, assignments: &Assignments) -> Router {
        let m = manifest(n, root);
        let store = AnnotationStore::open(&root.join("annotations"), m, assignments).unwrap();
        let state = Arc::new(AppState {
            store: Mutex::new(store),
            data_root: root.to_path_buf(),
            manifest_out: root.join("manifest.labeled.jsonl"),
        });
        router(state, None)
    }

    async fn call(&self, req: Request<Body>) -> (StatusCode, Value, Vec<u8>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value, bytes)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, v, _) = self.call(Request::get(uri).body(Body::empty()).unwrap()).await;
        (s, v)
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        let req = Request::post(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let (s, v, _) = self.call(req).await;
        (s, v)
    }

    async fn next(&self, who: &str, round: &str) -> Option<String> {
        let (s, v) = self.get(&format!("/api/next?annotator={who}&round={round}")).await;
        match s {
            StatusCode::OK => Some(v["id"].as_str().unwrap().to_string()),
            StatusCode::NO_CONTENT => None,
            other => panic!("unexpected {other}: {v}"),
        }
    }

    async fn label(&self, gif: &str, who: &str, round: &str, label: &str) -> (StatusCode, Value) {
        let criteria = if label == "cyberbullying" { json!(["directed_bullying"]) } else { json!([]) };
        self.post(
            "/api/label",
            json!({"gif_id": gif, "annotator_id": who, "round": round, "label": label, "criteria_flags": criteria}),
        )
        .await
    }
}

fn pair_block(n: usize) -> Assignments {
    Assignments::shared_block(&["a1", "a2"], Round::Round1, Block { start: 0, len: n })
}

#[tokio::test]
async fn queue_exhausts_after_assignment() {
    let h = Harness::new(5, Assignments::shared_block(&["a1"], Round::Round1, Block { start: 0, len: 3 }));
    let mut seen = Vec::new();
    for _ in 0..3 {
        seen.push(h.next("a1", "round1").await.unwrap());
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 3);
    assert_eq!(h.next("a1", "round1").await, None);
}

#[tokio::test]
async fn labeled_annotator_gets_nothing_more() {
    let h = Harness::new(2, Assignments::shared_block(&["a1"], Round::Round1, Block { start: 0, len: 2 }));
    while let Some(id) = h.next("a1", "round1").await {
        assert_eq!(h.label(&id, "a1", "round1", "non_cyberbullying").await.0, StatusCode::OK);
    }
    assert_eq!(h.next("a1", "round1").await, None);
}

#[tokio::test]
async fn overlapping_blocks_are_served_independently() {
    let h = Harness::new(250, pair_block(250));
    for who in ["a1", "a2"] {
        let mut ids = Vec::new();
        while let Some(id) = h.next(who, "round1").await {
            ids.push(id);
        }
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 250, "{who}");
    }
}

#[tokio::test]
async fn unknown_annotator_and_inactive_round() {
    let h = Harness::new(3, pair_block(3));
    let (s, v) = h.get("/api/next?annotator=nobody&round=round1").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_annotator")));
    let (s, v) = h.get("/api/next?annotator=a1&round=round2").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("round_inactive")));
    let (s, v) = h.get("/api/next?annotator=a1&round=round9").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
}

#[tokio::test]
async fn label_validation_and_overwrite() {
    let h = Harness::new(3, pair_block(3));
    let g = h.next("a1", "round1").await.unwrap();

    let (s, v) = h
        .post(
            "/api/label",
            json!({"gif_id": g, "annotator_id": "a1", "round": "round1", "label": "cyberbullying", "criteria_flags": ["hate_speech_or_remarks"]}),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["gif_id"], json!(g));
    assert_eq!(v["criteria_flags"], json!(["hate_speech_or_remarks"]));
    let first_ts = v["timestamp"].as_str().unwrap().to_string();

    let (s, v) = h
        .post("/api/label", json!({"gif_id": g, "annotator_id": "a1", "round": "round1", "label": "cyberbullying", "criteria_flags": []}))
        .await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("criteria_required")));

    let (s, v) = h.label(&g, "a1", "round1", "non_cyberbullying").await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["timestamp"].as_str().unwrap() > first_ts.as_str());

    let (s, v) = h.label("nope", "a1", "round1", "non_cyberbullying").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_gif")));

    let unserved = ["g000", "g001", "g002"].into_iter().find(|id| *id != g).unwrap();
    let (s, v) = h.label(unserved, "a1", "round1", "non_cyberbullying").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("not_served")));

    let (s, v) = h.post("/api/label", json!({"gif_id": g})).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));

    // Replay keeps exactly one record for the key, holding the latest label.
    let store = AnnotationStore::open(&h.root.path().join("annotations"), manifest(3, h.root.path()), &pair_block(3)).unwrap();
    let records = store.records();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].label, Label::NonCyberbullying);
    let log = std::fs::read_to_string(h.root.path().join("annotations/annotations.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[tokio::test]
async fn served_items_are_not_reserved_after_restart() {
    let h = Harness::new(3, pair_block(3));
    let first = h.next("a1", "round1").await.unwrap();
    let again = Harness::build(h.root.path(), 3, &pair_block(3));
    let h2 = Harness { app: again, root: h.root };
    let second = h2.next("a1", "round1").await.unwrap();
    assert_ne!(first, second);
}

#[tokio::test]
async fn agreement_over_overlap() {
    let h = Harness::new(5, pair_block(4));
    let a = ["cyberbullying", "cyberbullying", "non_cyberbullying", "cyberbullying"];
    let b = ["cyberbullying", "cyberbullying", "non_cyberbullying", "non_cyberbullying"];
    for (who, labels) in [("a1", a), ("a2", b)] {
        for (i, l) in labels.iter().enumerate() {
            let id = h.next(who, "round1").await.unwrap();
            assert_eq!(id, format!("g{i:03}"));
            h.label(&id, who, "round1", l).await;
        }
    }
    let (s, v) = h.get("/api/agreement?round=round1&a=a1&b=a2").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["n_items"], json!(4));
    assert!((v["percent_agreement"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((v["cohens_kappa"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["disagreement_ids"], json!(["g003"]));

    let (_, swapped) = h.get("/api/agreement?round=round1&a=a2&b=a1").await;
    assert_eq!(swapped["cohens_kappa"], v["cohens_kappa"]);

    let (s, v) = h.get("/api/agreement?round=round2&a=a1&b=a2").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("empty_overlap")));
}

#[tokio::test]
async fn adjudication_and_finalize() {
    let mut assignments = pair_block(3);
    assignments.assignments.push(AssignmentSpec {
        annotator: "lead".into(),
        round: Round::Round2,
        gif_ids: Vec::new(),
        block: None,
        adjudicate: true,
    });
    let h = Harness::new(3, assignments);
    // g000 agreed, g001 and g002 split.
    for (who, labels) in [
        ("a1", ["cyberbullying", "cyberbullying", "non_cyberbullying"]),
        ("a2", ["cyberbullying", "non_cyberbullying", "cyberbullying"]),
    ] {
        for l in labels {
            let id = h.next(who, "round1").await.unwrap();
            h.label(&id, who, "round1", l).await;
        }
    }
    let (_, list) = h.get("/api/disagreements?round=round1").await;
    assert_eq!(list.as_array().unwrap().len(), 2);

    let (s, v) = h.post("/api/finalize", json!({})).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("unresolved")));
    assert_eq!(v["ids"], json!(["g001", "g002"]));

    let id = h.next("lead", "round2").await.unwrap();
    assert_eq!(id, "g001");
    h.label(&id, "lead", "round2", "non_cyberbullying").await;
    let (_, list) = h.get("/api/disagreements?round=round1").await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let id = h.next("lead", "round2").await.unwrap();
    h.label(&id, "lead", "round2", "cyberbullying").await;
    assert_eq!(h.next("lead", "round2").await, None);
    let (_, list) = h.get("/api/disagreements?round=round1").await;
    assert!(list.as_array().unwrap().is_empty());

    let (s, v) = h.post("/api/finalize", json!({})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v, json!({"total": 3, "cyberbullying": 2, "non_cyberbullying": 1, "unanimous": 1, "adjudicated": 2}));
    let labeled = DatasetManifest::load(&h.root.path().join("manifest.labeled.jsonl")).unwrap();
    let labels: Vec<_> = labeled.records.iter().map(|r| r.label).collect();
    assert_eq!(labels, [Some(Label::Cyberbullying), Some(Label::NonCyberbullying), Some(Label::Cyberbullying)]);

    let (s, again) = h.post("/api/finalize", json!({})).await;
    assert_eq!((s, &again), (StatusCode::OK, &v));
}

#[tokio::test]
async fn media_is_served_as_gif() {
    let h = Harness::new(2, pair_block(2));
    let (s, _, bytes) = h.call(Request::get("/api/gif/g001/media").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bytes, b"GIF89ag001");
    let resp = h.app.clone().oneshot(Request::get("/api/gif/g001/media").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/gif");
    let (s, v) = h.get("/api/gif/zzz/media").await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_gif")));
}

#[tokio::test]
async fn concurrent_annotators_do_not_collide() {
    let names: Vec<String> = (0..8).map(|i| format!("r{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let h = Arc::new(Harness::new(20, Assignments::shared_block(&refs, Round::Round1, Block { start: 0, len: 20 })));
    let mut tasks = Vec::new();
    for who in names.clone() {
        let h = h.clone();
        tasks.push(tokio::spawn(async move {
            let mut n = 0;
            while let Some(id) = h.next(&who, "round1").await {
                let (s, _) = h.label(&id, &who, "round1", "non_cyberbullying").await;
                assert_eq!(s, StatusCode::OK);
                n += 1;
            }
            n
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), 20);
    }
    let log = std::fs::read_to_string(h.root.path().join("annotations/annotations.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 160);
}
