//! HTTP service for the two-round annotation workflow: per-annotator
//! queues, label submission, inter-annotator agreement, and finalization of
//! per-GIF labels into the dataset manifest.

use std::path::Path;

pub mod agreement;
pub mod finalize;
pub mod record;
pub mod server;
pub mod store;

pub use agreement::{cohens_kappa, AgreementReport};
pub use finalize::{finalize_labels, FinalizeSummary};
pub use record::{AnnotationRecord, Criterion, LabelSubmission, Round};
pub use server::{router, serve, AppState, SharedState};
pub use store::{AnnotationStore, AssignmentSpec, Assignments, Block};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown gif {0}")]
    UnknownGif(String),
    #[error("criteria required for a cyberbullying label")]
    CriteriaRequired,
    #[error("criteria must be empty for a non_cyberbullying label")]
    CriteriaForbidden,
    #[error("gif {gif_id} was not served to {annotator_id} in this round")]
    NotServed { gif_id: String, annotator_id: String },
    #[error("{annotator} has no assignment in {round}")]
    RoundInactive { annotator: String, round: Round },
    #[error("raters share no labeled items")]
    EmptyOverlap,
    #[error("{} gif(s) lack unanimity or adjudication: {}", .0.len(), .0.join(", "))]
    Unresolved(Vec<String>),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl AnnotateError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::UnknownAnnotator(_) => "unknown_annotator",
            AnnotateError::UnknownGif(_) => "unknown_gif",
            AnnotateError::CriteriaRequired => "criteria_required",
            AnnotateError::CriteriaForbidden => "criteria_forbidden",
            AnnotateError::NotServed { .. } => "not_served",
            AnnotateError::RoundInactive { .. } => "round_inactive",
            AnnotateError::EmptyOverlap => "empty_overlap",
            AnnotateError::Unresolved(_) => "unresolved",
            AnnotateError::BadRequest(_) => "bad_request",
            AnnotateError::Config(_) => "config",
            AnnotateError::Io(_) => "io",
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        AnnotateError::Io(format!("{}: {e}", path.display()))
    }
}
