use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use gifguard_core::Label;
use gifguard_ingest::{ClientConfig, FixtureMode, GiphyClient, HashtagSeed, IngestError, RetryPolicy};
use serde_json::json;

#[derive(Default)]
struct Mock {
    /// tag → ids available for that tag.
    hits: HashMap<String, Vec<String>>,
    search_calls: AtomicUsize,
    page_sizes: std::sync::Mutex<Vec<usize>>,
    flaky_calls: AtomicUsize,
    limited_calls: AtomicUsize,
    broken_calls: AtomicUsize,
}

async fn search(State(mock): State<Arc<Mock>>, Query(q): Query<HashMap<String, String>>) -> Response {
    mock.search_calls.fetch_add(1, Ordering::SeqCst);
    if q.get("api_key").map(String::as_str) == Some("bad") {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    let limit: usize = q["limit"].parse().unwrap();
    let offset: usize = q["offset"].parse().unwrap();
    mock.page_sizes.lock().unwrap().push(limit);
    let ids = mock.hits.get(&q["q"]).cloned().unwrap_or_default();
    let page: Vec<_> = ids
        .iter()
        .skip(offset)
        .take(limit.min(50))
        .map(|id| json!({"id": id, "url": format!("https://giphy.test/{id}"), "images": {"original": {"url": format!("/media/{id}")}}}))
        .collect();
    axum::Json(json!({"data": page, "pagination": {"total_count": ids.len(), "offset": offset}})).into_response()
}

async fn flaky(State(mock): State<Arc<Mock>>) -> Response {
    if mock.flaky_calls.fetch_add(1, Ordering::SeqCst) < 2 {
        StatusCode::SERVICE_UNAVAILABLE.into_response()
    } else {
        (StatusCode::OK, b"GIF89a-ok".to_vec()).into_response()
    }
}

async fn limited(State(mock): State<Arc<Mock>>) -> Response {
    if mock.limited_calls.fetch_add(1, Ordering::SeqCst) == 0 {
        (StatusCode::TOO_MANY_REQUESTS, [(header::RETRY_AFTER, "1")]).into_response()
    } else {
        (StatusCode::OK, b"GIF89a-ok".to_vec()).into_response()
    }
}

async fn broken(State(mock): State<Arc<Mock>>) -> Response {
    mock.broken_calls.fetch_add(1, Ordering::SeqCst);
    StatusCode::INTERNAL_SERVER_ERROR.into_response()
}

async fn media(Path(id): Path<String>) -> Response {
    (StatusCode::OK, format!("GIF89a{id}").into_bytes()).into_response()
}

async fn serve(mock: Arc<Mock>) -> String {
    let app = Router::new()
        .route("/v1/gifs/search", get(search))
        .route("/flaky", get(flaky))
        .route("/limited", get(limited))
        .route("/broken", get(broken))
        .route("/media/{id}", get(media))
        .with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn config(base_url: &str, fixtures: FixtureMode) -> ClientConfig {
    ClientConfig {
        base_url: base_url.to_string(),
        api_key: Some("test-key".into()),
        requests_per_second: 1000,
        retry: RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(2), max_delay: Duration::from_millis(10) },
        fixtures,
        timeout: Duration::from_secs(5),
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

fn mock_with(tag: &str, n: usize) -> Arc<Mock> {
    let mut mock = Mock::default();
    mock.hits.insert(tag.to_string(), ids(tag, n));
    Arc::new(mock)
}

#[tokio::test]
async fn limit_caps_results_and_carries_seed() {
    let mock = mock_with("bullyingiscool", 120);
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let seed = HashtagSeed::new("bullyingiscool", Label::Cyberbullying).unwrap();

    let hits = client.search_gifs(&seed, 25).await.unwrap();
    assert_eq!(hits.len(), 25);
    assert!(hits.iter().all(|r| r.query_label == Label::Cyberbullying && r.tag == "bullyingiscool"));

    let hits = client.search_gifs(&seed, 110).await.unwrap();
    assert_eq!(hits.len(), 110);
    let got: Vec<_> = hits.iter().map(|r| r.id.clone()).collect();
    assert_eq!(got, ids("bullyingiscool", 110));
    assert!(mock.page_sizes.lock().unwrap().iter().all(|&p| p <= 50));
    assert!(hits[0].source_url.ends_with("/media/bullyingiscool000"));
}

#[tokio::test]
async fn pagination_stops_at_exhaustion() {
    let mock = mock_with("racist", 30);
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let seed = HashtagSeed::new("racist", Label::Cyberbullying).unwrap();
    assert_eq!(client.search_gifs(&seed, 100).await.unwrap().len(), 30);
    assert_eq!(mock.search_calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn zero_limit_makes_no_request() {
    let mock = mock_with("goodwork", 10);
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let seed = HashtagSeed::new("goodwork", Label::NonCyberbullying).unwrap();
    assert!(client.search_gifs(&seed, 0).await.unwrap().is_empty());
    assert_eq!(mock.search_calls.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn replayed_fixture_yields_recorded_ids_in_order() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/goodwork");
    // Unroutable base URL: replay must not touch the network.
    let mut cfg = config("http://127.0.0.1:9", FixtureMode::Replay(dir.clone()));
    cfg.api_key = None;
    let client = GiphyClient::new(cfg).unwrap();
    let seed = HashtagSeed::new("goodwork", Label::NonCyberbullying).unwrap();
    let hits = client.search_gifs(&seed, 10).await.unwrap();

    let got: String = hits.iter().map(|r| format!("{}\n", r.id)).collect();
    let expected = std::fs::read_to_string(dir.join("ids.txt")).unwrap();
    assert_eq!(got.as_bytes(), expected.as_bytes());
    assert!(hits.iter().all(|r| r.query_label == Label::NonCyberbullying));
}

#[tokio::test]
async fn missing_fixture_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let client = GiphyClient::new(config("http://127.0.0.1:9", FixtureMode::Replay(dir.path().into()))).unwrap();
    let seed = HashtagSeed::new("awesome", Label::NonCyberbullying).unwrap();
    assert!(matches!(client.search_gifs(&seed, 5).await, Err(IngestError::FixtureMissing(_))));
}

#[tokio::test]
async fn recorded_responses_replay_identically() {
    let mock = mock_with("whitetrash", 60);
    let base = serve(mock).await;
    let dir = tempfile::tempdir().unwrap();
    let seed = HashtagSeed::new("whitetrash", Label::Cyberbullying).unwrap();

    let live = GiphyClient::new(config(&base, FixtureMode::Record(dir.path().into()))).unwrap();
    let recorded = live.search_gifs(&seed, 60).await.unwrap();
    let bytes = live.fetch_media(&recorded[0]).await.unwrap();
    assert!(dir.path().join("search/whitetrash/offset_0.json").exists());
    assert!(dir.path().join("search/whitetrash/offset_50.json").exists());

    let offline = GiphyClient::new(config("http://127.0.0.1:9", FixtureMode::Replay(dir.path().into()))).unwrap();
    assert_eq!(offline.search_gifs(&seed, 60).await.unwrap(), recorded);
    assert_eq!(offline.fetch_media(&recorded[0]).await.unwrap(), bytes);
}

#[tokio::test]
async fn rejected_key_fails_without_retry() {
    let mock = mock_with("bullying", 5);
    let base = serve(mock.clone()).await;
    let mut cfg = config(&base, FixtureMode::Live);
    cfg.api_key = Some("bad".into());
    let client = GiphyClient::new(cfg).unwrap();
    let seed = HashtagSeed::new("bullying", Label::Cyberbullying).unwrap();
    assert!(matches!(client.search_gifs(&seed, 5).await, Err(IngestError::AuthRejected)));
    assert_eq!(mock.search_calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn missing_key_is_an_error() {
    let mut cfg = config("http://127.0.0.1:9", FixtureMode::Live);
    cfg.api_key = None;
    let client = GiphyClient::new(cfg).unwrap();
    let seed = HashtagSeed::new("bullying", Label::Cyberbullying).unwrap();
    assert!(matches!(client.search_gifs(&seed, 5).await, Err(IngestError::MissingCredentials)));
}

fn record_at(url: String) -> gifguard_core::GifRecord {
    gifguard_core::GifRecord::pending("x", url, "tag", Label::Cyberbullying)
}

#[tokio::test]
async fn server_errors_are_retried() {
    let mock = Arc::new(Mock::default());
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let bytes = client.fetch_media(&record_at(format!("{base}/flaky"))).await.unwrap();
    assert_eq!(bytes, b"GIF89a-ok");
    assert_eq!(mock.flaky_calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn retries_stop_after_five_attempts() {
    let mock = Arc::new(Mock::default());
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let err = client.fetch_media(&record_at(format!("{base}/broken"))).await.unwrap_err();
    assert!(matches!(err, IngestError::Http { status: 500 }));
    assert_eq!(mock.broken_calls.load(Ordering::SeqCst), 5);
}

#[tokio::test]
async fn rate_limit_waits_for_retry_after() {
    let mock = Arc::new(Mock::default());
    let base = serve(mock.clone()).await;
    let client = GiphyClient::new(config(&base, FixtureMode::Live)).unwrap();
    let start = Instant::now();
    let bytes = client.fetch_media(&record_at(format!("{base}/limited"))).await.unwrap();
    assert_eq!(bytes, b"GIF89a-ok");
    assert!(start.elapsed() >= Duration::from_secs(1));
    assert_eq!(mock.limited_calls.load(Ordering::SeqCst), 2);
}
