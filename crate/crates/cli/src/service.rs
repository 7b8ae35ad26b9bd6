use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use atvc_scene::{render, Scene};
use atvc_text::{Vocabulary, QUESTION_LEN};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;
use tracing::info;

use crate::responder::{answer_kind, check_instruction, kind_name, RespondError, Responder, Turn};

pub const API_PREFIX: &str = "/api/v1";

/// Sessions live in memory only; a restart forgets them.
pub struct AppState {
    responder: Arc<dyn Responder>,
    vocab: Vocabulary,
    scenes: Vec<Scene>,
    image_size: usize,
    single_turn: bool,
    max_upload_bytes: usize,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

pub struct ServiceOptions {
    pub image_size: usize,
    pub single_turn: bool,
    pub max_upload_bytes: usize,
}

impl AppState {
    pub fn new(responder: Arc<dyn Responder>, scenes: Vec<Scene>, opts: ServiceOptions) -> Self {
        AppState {
            responder,
            vocab: Vocabulary::default(),
            scenes,
            image_size: opts.image_size,
            single_turn: opts.single_turn,
            max_upload_bytes: opts.max_upload_bytes,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }
}

struct Session {
    image: RgbImage,
    scene: Option<Scene>,
    history: Vec<HistoryTurn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub turn: usize,
    pub instruction: String,
    pub answer_text: String,
    pub answer_type: String,
    pub image_png_base64: Option<String>,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub thumbnail_png_base64: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    pub scene_id: Option<String>,
    pub image_png_base64: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub scene_id: Option<String>,
    pub image_png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub instruction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub answer_text: String,
    pub answer_type: String,
    pub image_png_base64: Option<String>,
    pub latency_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub turns: Vec<HistoryTurn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    /// The first word outside the vocabulary, for 422 responses.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
}

struct Failure(StatusCode, ApiError);

impl Failure {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Failure(
            status,
            ApiError {
                error: msg.into(),
                word: None,
            },
        )
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<RespondError> for Failure {
    fn from(e: RespondError) -> Self {
        match e {
            RespondError::Instruction { message, word } => {
                Failure(StatusCode::UNPROCESSABLE_ENTITY, ApiError { error: message, word })
            }
            RespondError::Unsupported(msg) => Failure::new(StatusCode::UNPROCESSABLE_ENTITY, msg),
            RespondError::Failed(e) => Failure::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        }
    }
}

type ApiResult<T> = std::result::Result<Json<T>, Failure>;

pub fn png_base64(img: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    B64.encode(buf.into_inner())
}

fn decode_upload(state: &AppState, data: &str) -> std::result::Result<RgbImage, Failure> {
    let bytes = B64
        .decode(data.trim())
        .map_err(|e| Failure::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid base64: {e}")))?;
    if bytes.len() > state.max_upload_bytes {
        return Err(Failure::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("upload of {} bytes exceeds {}", bytes.len(), state.max_upload_bytes),
        ));
    }
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Failure::new(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid PNG: {e}")))?
        .to_rgb8();
    let n = state.image_size as u32;
    if img.dimensions() != (n, n) {
        return Err(Failure::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("image must be {n}x{n}, got {}x{}", img.width(), img.height()),
        ));
    }
    Ok(img)
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> ApiResult<Vec<SceneSummary>> {
    let scenes = state
        .scenes
        .iter()
        .map(|s| {
            let img = render(s).map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            Ok(SceneSummary {
                scene_id: s.scene_id.clone(),
                thumbnail_png_base64: png_base64(&img),
            })
        })
        .collect::<std::result::Result<_, Failure>>()?;
    Ok(Json(scenes))
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<NewSession>) -> ApiResult<SessionCreated> {
    let (image, scene) = match (&req.scene_id, &req.image_png_base64) {
        (Some(id), None) => {
            let scene = state
                .scenes
                .iter()
                .find(|s| &s.scene_id == id)
                .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))?;
            let img = render(scene).map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            (img, Some(scene.clone()))
        }
        (None, Some(data)) => (decode_upload(&state, data)?, None),
        _ => {
            return Err(Failure::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "give exactly one of scene_id and image_png_base64",
            ))
        }
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let created = SessionCreated {
        session_id: id.clone(),
        scene_id: req.scene_id.clone(),
        image_png_base64: png_base64(&image),
    };
    let session = Session {
        image,
        scene,
        history: Vec::new(),
    };
    state.sessions.lock().await.insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(created))
}

async fn find_session(state: &AppState, id: &str) -> std::result::Result<Arc<Mutex<Session>>, Failure> {
    state
        .sessions
        .lock()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ChatRequest>,
) -> ApiResult<ChatResponse> {
    let session = find_session(&state, &id).await?;
    check_instruction(&state.vocab, &req.instruction, QUESTION_LEN)?;
    // Holding the session lock serializes turns within one session only.
    let mut session = session.lock().await;
    let start = Instant::now();
    let responder = state.responder.clone();
    let image = session.image.clone();
    let scene = session.scene.clone();
    let instruction = req.instruction.clone();
    let reply = tokio::task::spawn_blocking(move || {
        let turn = Turn {
            image: &image,
            instruction: &instruction,
            scene: scene.as_ref(),
            gold: None,
        };
        responder.respond(&turn)
    })
    .await
    .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let latency_ms = start.elapsed().as_millis() as u64;
    let image_png_base64 = reply.image.as_ref().map(png_base64);
    let response = ChatResponse {
        answer_type: kind_name(answer_kind(&reply.answer)).into(),
        answer_text: reply.answer,
        image_png_base64,
        latency_ms,
    };
    let turn = session.history.len() + 1;
    session.history.push(HistoryTurn {
        turn,
        instruction: req.instruction,
        answer_text: response.answer_text.clone(),
        answer_type: response.answer_type.clone(),
        image_png_base64: response.image_png_base64.clone(),
        latency_ms,
    });
    if !state.single_turn && response.answer_type == "can" {
        if let Some(img) = reply.image {
            session.image = img;
            session.scene = reply.scene;
        }
    }
    info!("session {id} turn {turn}: {} in {latency_ms} ms", response.answer_type);
    Ok(Json(response))
}

async fn history(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<History> {
    let session = find_session(&state, &id).await?;
    let turns = session.lock().await.history.clone();
    Ok(Json(History { session_id: id, turns }))
}

/// The `/api/v1` routes, plus static files from `static_dir` at `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    // Base64 inflates uploads by 4/3; leave room for the JSON wrapper.
    let body_limit = state.max_upload_bytes / 3 * 4 + 4096;
    let api = Router::new()
        .route("/scenes", get(list_scenes))
        .route("/session", post(create_session))
        .route("/session/{id}/chat", post(chat))
        .route("/session/{id}/history", get(history))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    let app = Router::new().nest(API_PREFIX, api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(addr: &str, app: Router) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await.context("serving HTTP")
}
