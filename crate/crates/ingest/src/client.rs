//! Search and media fetches against a GIPHY-compatible API, with a token
//! bucket, bounded retries, and an on-disk fixture cache for offline runs.

use std::num::NonZeroU32;
use std::path::{Path, PathBuf};
use std::time::Duration;

use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use gifguard_core::manifest::write_atomic;
use gifguard_core::GifRecord;
use rand::Rng;
use reqwest::StatusCode;
use serde::Deserialize;

use crate::seeds::HashtagSeed;
use crate::IngestError;

pub const DEFAULT_BASE_URL: &str = "https://api.giphy.com";
pub const API_KEY_ENV: &str = "GIFGUARD_API_KEY";
/// Largest page the search endpoint serves.
pub const MAX_PAGE: usize = 50;

/// Where responses come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixtureMode {
    /// Network only.
    Live,
    /// Network, with every response also written under the directory.
    Record(PathBuf),
    /// Directory only; a missing fixture is an error.
    Replay(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Exponential backoff for the given 1-based failed attempt, with the
    /// upper half jittered.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (attempt - 1).min(16));
        let capped = exp.min(self.max_delay);
        capped.mul_f64(rand::rng().random_range(0.5..=1.0))
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub requests_per_second: u32,
    pub retry: RetryPolicy,
    pub fixtures: FixtureMode,
    pub timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key: None,
            requests_per_second: 4,
            retry: RetryPolicy::default(),
            fixtures: FixtureMode::Live,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Picks the API key: the explicit flag wins over the environment.
pub fn resolve_api_key(flag: Option<&str>) -> Option<String> {
    flag.map(str::to_string)
        .or_else(|| std::env::var(API_KEY_ENV).ok())
        .filter(|k| !k.trim().is_empty())
}

#[derive(Debug, Deserialize)]
struct SearchResponse {
    #[serde(default)]
    data: Vec<Item>,
    pagination: Option<Pagination>,
}

#[derive(Debug, Deserialize)]
struct Pagination {
    total_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Item {
    id: String,
    #[serde(default)]
    url: String,
    images: Option<Images>,
}

#[derive(Debug, Deserialize)]
struct Images {
    original: Option<Rendition>,
}

#[derive(Debug, Deserialize)]
struct Rendition {
    url: Option<String>,
}

impl Item {
    fn media_url(&self) -> String {
        self.images
            .as_ref()
            .and_then(|i| i.original.as_ref())
            .and_then(|o| o.url.clone())
            .unwrap_or_else(|| self.url.clone())
    }
}

pub struct GiphyClient {
    http: reqwest::Client,
    config: ClientConfig,
    limiter: DefaultDirectRateLimiter,
}

enum Attempt {
    Done(Vec<u8>),
    Retry { error: IngestError, after: Option<Duration> },
}

impl GiphyClient {
    pub fn new(config: ClientConfig) -> Result<Self, IngestError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| IngestError::Network(e.to_string()))?;
        let rps = NonZeroU32::new(config.requests_per_second.max(1)).expect("non-zero");
        let limiter = RateLimiter::direct(Quota::per_second(rps));
        Ok(GiphyClient { http, config, limiter })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn fixture_dir(&self) -> Option<&Path> {
        match &self.config.fixtures {
            FixtureMode::Live => None,
            FixtureMode::Record(d) | FixtureMode::Replay(d) => Some(d),
        }
    }

    fn search_fixture(dir: &Path, tag: &str, offset: usize) -> PathBuf {
        dir.join("search").join(tag).join(format!("offset_{offset}.json"))
    }

    fn media_fixture(dir: &Path, id: &str) -> PathBuf {
        dir.join("media").join(format!("{}.gif", gifguard_core::preprocess::safe_component(id)))
    }

    /// GET with rate limiting and the retry contract. 401/403 fail at once;
    /// 429 waits for `Retry-After` when given.
    async fn get(&self, url: &str) -> Result<Vec<u8>, IngestError> {
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.until_ready().await;
            let outcome = match self.http.get(url).send().await {
                Err(e) => Attempt::Retry { error: IngestError::Network(e.to_string()), after: None },
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match resp.bytes().await {
                            Ok(b) => Attempt::Done(b.to_vec()),
                            Err(e) => Attempt::Retry { error: IngestError::Network(e.to_string()), after: None },
                        }
                    } else if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                        return Err(IngestError::AuthRejected);
                    } else if status == StatusCode::TOO_MANY_REQUESTS {
                        let after = resp
                            .headers()
                            .get(reqwest::header::RETRY_AFTER)
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.trim().parse::<u64>().ok())
                            .map(Duration::from_secs);
                        Attempt::Retry { error: IngestError::RateLimited { retry_after: after }, after }
                    } else if status.is_server_error() {
                        Attempt::Retry { error: IngestError::Http { status: status.as_u16() }, after: None }
                    } else {
                        return Err(IngestError::Http { status: status.as_u16() });
                    }
                }
            };
            match outcome {
                Attempt::Done(bytes) => return Ok(bytes),
                Attempt::Retry { error, after } => {
                    if attempt >= policy.max_attempts {
                        return Err(error);
                    }
                    let delay = after.unwrap_or_else(|| policy.backoff(attempt));
                    tracing::warn!(%url, attempt, ?delay, %error, "retrying");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    async fn search_page(&self, seed: &HashtagSeed, offset: usize, page: usize) -> Result<SearchResponse, IngestError> {
        let fixture = self.fixture_dir().map(|d| Self::search_fixture(d, &seed.tag, offset));
        let bytes = match (&self.config.fixtures, &fixture) {
            (FixtureMode::Replay(_), Some(path)) => {
                std::fs::read(path).map_err(|_| IngestError::FixtureMissing(path.display().to_string()))?
            }
            _ => {
                let key = self.config.api_key.as_deref().ok_or(IngestError::MissingCredentials)?;
                let mut url = url::Url::parse(&self.config.base_url)
                    .and_then(|u| u.join("/v1/gifs/search"))
                    .map_err(|e| IngestError::Network(e.to_string()))?;
                url.query_pairs_mut()
                    .append_pair("api_key", key)
                    .append_pair("q", &seed.tag)
                    .append_pair("limit", &page.to_string())
                    .append_pair("offset", &offset.to_string());
                let bytes = self.get(url.as_str()).await?;
                if let (FixtureMode::Record(_), Some(path)) = (&self.config.fixtures, &fixture) {
                    store_fixture(path, &bytes)?;
                }
                bytes
            }
        };
        serde_json::from_slice(&bytes).map_err(|e| IngestError::Decode(e.to_string()))
    }

    /// Up to `limit` search hits for `seed`, following pagination.
    pub async fn search_gifs(&self, seed: &HashtagSeed, limit: usize) -> Result<Vec<GifRecord>, IngestError> {
        let mut out = Vec::new();
        let mut offset = 0;
        while out.len() < limit {
            let page = (limit - out.len()).min(MAX_PAGE);
            let resp = self.search_page(seed, offset, page).await?;
            if resp.data.is_empty() {
                break;
            }
            offset += resp.data.len();
            for item in resp.data {
                if out.len() == limit {
                    break;
                }
                let url = item.media_url();
                out.push(GifRecord::pending(item.id, url, seed.tag.clone(), seed.query_label));
            }
            if resp.pagination.and_then(|p| p.total_count).is_some_and(|total| offset >= total) {
                break;
            }
        }
        Ok(out)
    }

    /// Raw media bytes for a search hit. Relative URLs resolve against the
    /// configured base.
    pub async fn fetch_media(&self, record: &GifRecord) -> Result<Vec<u8>, IngestError> {
        let fixture = self.fixture_dir().map(|d| Self::media_fixture(d, &record.id));
        match (&self.config.fixtures, fixture) {
            (FixtureMode::Replay(_), Some(path)) => {
                std::fs::read(&path).map_err(|_| IngestError::FixtureMissing(path.display().to_string()))
            }
            (mode, fixture) => {
                let url = url::Url::parse(&self.config.base_url)
                    .and_then(|base| base.join(&record.source_url))
                    .map_err(|e| IngestError::Network(e.to_string()))?;
                let bytes = self.get(url.as_str()).await?;
                if let (FixtureMode::Record(_), Some(path)) = (mode, fixture) {
                    store_fixture(&path, &bytes)?;
                }
                Ok(bytes)
            }
        }
    }
}

fn store_fixture(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
    }
    write_atomic(path, bytes).map_err(|e| IngestError::io(path, e))
}
