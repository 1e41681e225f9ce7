//! HTTP surface: the live websocket and the replay read endpoints.
//!
//! | route | reply kind |
//! |---|---|
//! | `GET /live` (websocket) | `snapshot`, then the live tail |
//! | `GET /api/live` | `snapshot` |
//! | `GET /api/sessions` | `session_list` |
//! | `GET /api/sessions/{id}/reps` | `rep_list` |
//! | `GET /api/sessions/{id}/reps/{rep}` | `rep_detail`; `{rep}` is a clip id or a rep number |

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use squat_core::diagnosis::GradedSquat;
use tracing::debug;

use crate::api::{ApiBody, ApiMessage, FeatureCurves, RepDetail};
use crate::archive::RepOutcome;
use crate::hub::Hub;
use crate::store::{PersistError, Store};

#[derive(Clone)]
pub struct AppState {
    pub hub: Option<Arc<Hub>>,
    pub store: Store,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/live", get(live_socket))
        .route("/api/live", get(live_snapshot))
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{id}/reps", get(list_reps))
        .route("/api/sessions/{id}/reps/{rep}", get(rep_detail))
        .with_state(state)
}

struct ApiError(PersistError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            PersistError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            PersistError::InvalidId(_) => (StatusCode::BAD_REQUEST, "invalid_id"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        let body = ApiMessage::reply(
            "",
            ApiBody::Error {
                code: code.to_string(),
                message: self.0.to_string(),
            },
        );
        (status, Json(body)).into_response()
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        ApiError(e)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, PersistError> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(PersistError::Storage {
            path: Default::default(),
            source: std::io::Error::other(e.to_string()),
            retry_after: None,
        })),
    }
}

async fn list_sessions(State(state): State<AppState>) -> Result<Json<ApiMessage>, ApiError> {
    let sessions = blocking(move || state.store.list_sessions()).await?;
    Ok(Json(ApiMessage::reply("", ApiBody::SessionList { sessions })))
}

async fn list_reps(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ApiMessage>, ApiError> {
    let sid = id.clone();
    let reps = blocking(move || state.store.list_reps(&sid)).await?;
    Ok(Json(ApiMessage::reply(id, ApiBody::RepList { reps })))
}

/// Detail of one stored rep, addressed by clip id or by rep number.
pub fn load_rep_detail(store: &Store, session_id: &str, rep: &str) -> Result<RepDetail, PersistError> {
    let clip_id = match rep.parse::<usize>() {
        Ok(n) => store
            .rep_metas(session_id)?
            .into_iter()
            .find(|m| m.rep == n)
            .map(|m| m.clip_id)
            .ok_or_else(|| PersistError::NotFound {
                kind: "rep",
                id: rep.to_string(),
            })?,
        Err(_) => rep.to_string(),
    };
    let archive = store.load_clip(session_id, &clip_id)?;
    let advice = match &archive.meta.outcome {
        RepOutcome::Graded {
            graded: GradedSquat { advice, .. },
        } => advice.clone(),
        _ => Vec::new(),
    };
    Ok(RepDetail {
        curves: FeatureCurves::from_frames(&archive.features),
        meta: archive.meta,
        advice,
        joints: archive.joints,
    })
}

async fn rep_detail(
    State(state): State<AppState>,
    Path((id, rep)): Path<(String, String)>,
) -> Result<Json<ApiMessage>, ApiError> {
    let sid = id.clone();
    let detail = blocking(move || load_rep_detail(&state.store, &sid, &rep)).await?;
    Ok(Json(ApiMessage::reply(
        id,
        ApiBody::RepDetail {
            detail: Box::new(detail),
        },
    )))
}

async fn live_snapshot(State(state): State<AppState>) -> Result<Json<ApiMessage>, ApiError> {
    match &state.hub {
        Some(hub) => Ok(Json(hub.snapshot())),
        None => Err(ApiError(PersistError::NotFound {
            kind: "live session",
            id: "live".into(),
        })),
    }
}

async fn live_socket(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    match state.hub {
        Some(hub) => ws.on_upgrade(move |socket| pump(socket, hub)),
        None => ApiError(PersistError::NotFound {
            kind: "live session",
            id: "live".into(),
        })
        .into_response(),
    }
}

/// Forwards the subscription to the socket until either side ends. Inbound
/// text is not interpreted; the channel is read only to notice closes.
async fn pump(socket: WebSocket, hub: Arc<Hub>) {
    let sub = hub.subscribe();
    let (mut tx, mut rx) = socket.split();
    loop {
        tokio::select! {
            msg = sub.recv() => match msg {
                Some(m) => {
                    if tx.send(Message::Text(m.to_json().into())).await.is_err() {
                        break;
                    }
                }
                None => {
                    let _ = tx.send(Message::Close(None)).await;
                    break;
                }
            },
            inbound = rx.next() => match inbound {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(other)) => debug!(?other, "ignoring inbound message"),
            },
        }
    }
}
