//! Collection of GIFs from a hashtag search API into a local,
//! content-addressed store, and assembly of the dataset manifest.

use std::path::Path;
use std::time::Duration;

pub mod client;
pub mod collect;
pub mod seeds;
pub mod store;

pub use client::{resolve_api_key, ClientConfig, FixtureMode, GiphyClient, RetryPolicy};
pub use collect::{collect, CollectOptions, CollectSummary};
pub use seeds::{load_seeds, parse_seeds, HashtagSeed, SeedError};
pub use store::{build_manifest, write_manifest, MediaStore, StoreOutcome, StoredRecord};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("no API key; set GIFGUARD_API_KEY or pass --api-key")]
    MissingCredentials,
    #[error("API key rejected")]
    AuthRejected,
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("HTTP status {status}")]
    Http { status: u16 },
    #[error("network: {0}")]
    Network(String),
    #[error("malformed API response: {0}")]
    Decode(String),
    #[error("no recorded fixture at {0}")]
    FixtureMissing(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl IngestError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        IngestError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
