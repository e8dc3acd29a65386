//! Recording-studio service: prompt sessions, WAV uploads with automatic
//! trimming and peak normalization, safe copies, display data and prompt
//! transcription over HTTP/JSON.

pub mod config;
pub mod prompts;
pub mod server;
pub mod session;
pub mod transcribe;

pub use config::SessionConfig;
pub use prompts::{attach_sidecar, load_prompts, parse_prompts, Prompt};
pub use server::{router, serve, AppState};
pub use session::{RecordingMeta, RecordingStatus, SafeCopy, Session};
pub use transcribe::{Provenance, Transcriber, WordTranscription};

#[derive(Debug, thiserror::Error)]
pub enum StudioError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error("sample rate {got} Hz does not match the session rate {expected} Hz")]
    RateMismatch { expected: u32, got: u32 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl StudioError {
    /// Stable machine-readable code used in error responses.
    pub fn code(&self) -> &'static str {
        match self {
            StudioError::Config(_) => "config",
            StudioError::NotFound(_) => "not_found",
            StudioError::UnsupportedMedia(_) => "unsupported_media",
            StudioError::RateMismatch { .. } => "rate_mismatch",
            StudioError::BadRequest(_) => "bad_request",
            StudioError::ServiceUnavailable(_) => "service_unavailable",
            StudioError::Storage(_) => "storage",
        }
    }
}

impl From<std::io::Error> for StudioError {
    fn from(e: std::io::Error) -> Self {
        StudioError::Storage(e.to_string())
    }
}
