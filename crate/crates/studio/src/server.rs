use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::RwLock;

use crate::session::Session;
use crate::transcribe::Transcriber;
use crate::StudioError;

/// Largest accepted upload.
pub const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;
pub const DEFAULT_WAVEFORM_POINTS: usize = 800;
const WAV_TYPES: [&str; 3] = ["audio/wav", "audio/x-wav", "audio/wave"];

pub struct AppState {
    pub session: RwLock<Session>,
    pub transcriber: Transcriber,
}

impl AppState {
    pub fn new(session: Session, transcriber: Transcriber) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            transcriber,
        })
    }
}

impl IntoResponse for StudioError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudioError::NotFound(_) => StatusCode::NOT_FOUND,
            StudioError::UnsupportedMedia(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            StudioError::RateMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            StudioError::BadRequest(_) => StatusCode::BAD_REQUEST,
            StudioError::ServiceUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            StudioError::Config(_) | StudioError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (
            status,
            Json(json!({ "error": self.code(), "message": self.to_string() })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, StudioError>;
type Shared = State<Arc<AppState>>;

async fn session_summary(State(st): Shared) -> Json<Value> {
    let session = st.session.read().await;
    let mut summary = session.summary();
    summary["languages"] = json!(st.transcriber.languages());
    Json(summary)
}

async fn list_prompts(State(st): Shared) -> ApiResult<Json<Value>> {
    let session = st.session.read().await;
    let views = (0..session.prompts.len())
        .map(|i| session.prompt_view(i))
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Json(json!(views)))
}

async fn get_prompt(State(st): Shared, Path(i): Path<usize>) -> ApiResult<Json<Value>> {
    let session = st.session.read().await;
    Ok(Json(json!(session.prompt_view(i)?)))
}

async fn put_recording(
    State(st): Shared,
    Path(i): Path<usize>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let mime = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| {
            v.split(';')
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_lowercase()
        })
        .unwrap_or_default();
    if !WAV_TYPES.contains(&mime.as_str()) {
        return Err(StudioError::UnsupportedMedia(format!(
            "content type {mime:?} is not WAV"
        )));
    }
    let mut session = st.session.write().await;
    let meta = session.record(i, &body)?;
    log::info!(
        "prompt {i}: stored {} samples, peak {:.2} dBFS",
        meta.samples,
        meta.peak_dbfs
    );
    Ok(Json(json!(meta)))
}

async fn get_recording(State(st): Shared, Path(i): Path<usize>) -> ApiResult<Json<Value>> {
    let session = st.session.read().await;
    Ok(Json(json!(session.recording(i)?)))
}

async fn get_audio(State(st): Shared, Path(i): Path<usize>) -> ApiResult<Response> {
    let bytes = st.session.read().await.recording_bytes(i)?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn safe_copy(
    State(st): Shared,
    Path(i): Path<usize>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut session = st.session.write().await;
    let copy = session.safe_copy(i)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "prompt_index": i, "file": copy.file, "created_at": copy.created_at })),
    ))
}

#[derive(Deserialize)]
struct WaveformQuery {
    points: Option<usize>,
}

async fn get_waveform(
    State(st): Shared,
    Path(i): Path<usize>,
    Query(q): Query<WaveformQuery>,
) -> ApiResult<Json<Value>> {
    let session = st.session.read().await;
    Ok(Json(json!(session.waveform(
        i,
        q.points.unwrap_or(DEFAULT_WAVEFORM_POINTS)
    )?)))
}

#[derive(Deserialize)]
struct SpectrogramQuery {
    window: Option<usize>,
    hop: Option<usize>,
}

async fn get_spectrogram(
    State(st): Shared,
    Path(i): Path<usize>,
    Query(q): Query<SpectrogramQuery>,
) -> ApiResult<Json<Value>> {
    let session = st.session.read().await;
    Ok(Json(session.spectrogram(i, q.window, q.hop)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscribeRequest {
    text: Option<String>,
    language: String,
    /// Saves the result onto this prompt; `text` defaults to the prompt text.
    prompt_index: Option<usize>,
}

async fn transcribe(
    State(st): Shared,
    Json(req): Json<TranscribeRequest>,
) -> ApiResult<Json<Value>> {
    let text = match (&req.text, req.prompt_index) {
        (Some(t), _) => t.clone(),
        (None, Some(i)) => st.session.read().await.prompt(i)?.text.clone(),
        (None, None) => {
            return Err(StudioError::BadRequest(
                "either text or prompt_index is required".into(),
            ))
        }
    };
    if let (Some(t), Some(i)) = (&req.text, req.prompt_index) {
        let session = st.session.read().await;
        if session.prompt(i)?.text != *t {
            return Err(StudioError::BadRequest(format!(
                "text differs from prompt {i}"
            )));
        }
    }
    let worker = st.clone();
    let language = req.language.clone();
    let words =
        tokio::task::spawn_blocking(move || worker.transcriber.transcribe(&text, &language))
            .await
            .map_err(|e| StudioError::Storage(format!("transcription task failed: {e}")))??;
    if let Some(i) = req.prompt_index {
        let mut session = st.session.write().await;
        session
            .prompt_mut(i)?
            .set_phonetic(words.iter().map(|w| w.phonemes.clone()).collect())?;
        session.write_manifest()?;
    }
    Ok(Json(
        json!({ "language": req.language, "prompt_index": req.prompt_index, "words": words }),
    ))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", get(session_summary))
        .route("/api/prompts", get(list_prompts))
        .route("/api/prompts/{i}", get(get_prompt))
        .route("/api/recordings/{i}", get(get_recording).put(put_recording))
        .route("/api/recordings/{i}/audio", get(get_audio))
        .route("/api/recordings/{i}/safe-copy", post(safe_copy))
        .route("/api/recordings/{i}/waveform", get(get_waveform))
        .route("/api/recordings/{i}/spectrogram", get(get_spectrogram))
        .route("/api/transcribe", post(transcribe))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state)).await
}
