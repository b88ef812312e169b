use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::client::GiphyClient;
use crate::seeds::HashtagSeed;
use crate::store::{MediaStore, StoreOutcome};
use crate::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectOptions {
    pub per_seed_limit: usize,
    /// Concurrent media downloads.
    pub parallelism: usize,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions { per_seed_limit: 100, parallelism: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub searched: usize,
    pub already_stored: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub excluded: usize,
    /// Downloads that failed after retries; they are retried on the next run.
    pub failed: usize,
}

/// Searches every seed, then downloads and stores the hits.
///
/// A rejected API key aborts the run; other per-GIF failures are counted and
/// skipped.
pub async fn collect(
    client: &GiphyClient,
    store: &MediaStore,
    seeds: &[HashtagSeed],
    options: CollectOptions,
) -> Result<CollectSummary, IngestError> {
    let mut summary = CollectSummary::default();
    let mut pending = Vec::new();
    for seed in seeds {
        let hits = client.search_gifs(seed, options.per_seed_limit).await?;
        tracing::info!(tag = %seed.tag, hits = hits.len(), "search complete");
        summary.searched += hits.len();
        for hit in hits {
            if store.contains_id(&hit.id) || pending.iter().any(|p: &gifguard_core::GifRecord| p.id == hit.id) {
                summary.already_stored += 1;
            } else {
                pending.push(hit);
            }
        }
    }

    let mut results = stream::iter(pending)
        .map(|record| async move {
            let bytes = client.fetch_media(&record).await;
            (record, bytes)
        })
        .buffer_unordered(options.parallelism.max(1));
    while let Some((record, bytes)) = results.next().await {
        match bytes {
            Err(IngestError::AuthRejected) => return Err(IngestError::AuthRejected),
            Err(e) => {
                tracing::warn!(id = %record.id, error = %e, "download failed");
                summary.failed += 1;
            }
            Ok(bytes) => match store.store(&record, &bytes)? {
                StoreOutcome::Stored(_) => summary.stored += 1,
                StoreOutcome::Duplicate { .. } => summary.duplicates += 1,
                StoreOutcome::Excluded { .. } => summary.excluded += 1,
            },
        }
    }
    Ok(summary)
}
