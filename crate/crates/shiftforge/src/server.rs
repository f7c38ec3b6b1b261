//! HTTP service behind the review UI.
//!
//! | Route | Result |
//! |---|---|
//! | `GET /api/queue?offset&limit` | `{items, total}` |
//! | `GET /api/image/{sample_id}` | image bytes |
//! | `POST /api/decision` | the stored `ReviewDecision` |
//! | `GET /api/decisions` | every decision, in arrival order |
//! | `GET /api/progress` | `{decided, total}` |

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use shiftforge_core::record::Manifest;
use shiftforge_core::review::{effective_decisions, Action, ReviewDecision, ReviewItem};
use tower_http::services::ServeDir;

use crate::images::{content_type, DiskImageSource};
use crate::review_io::DecisionLog;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug)]
struct Inner {
    queue: Vec<ReviewItem>,
    /// Readability of each queued image, checked at start-up.
    available: BTreeSet<String>,
    images: BTreeMap<String, PathBuf>,
    decisions: Vec<ReviewDecision>,
    log: DecisionLog,
}

/// Shared state of one review session.
#[derive(Debug, Clone)]
pub struct ReviewService {
    inner: Arc<Mutex<Inner>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueEntry {
    #[serde(flatten)]
    pub item: ReviewItem,
    /// False when the image could not be read; the UI shows a placeholder.
    pub image_available: bool,
    /// The effective decision so far, if any.
    pub decision: Option<ReviewDecision>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueuePage {
    pub items: Vec<QueueEntry>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressCounts {
    pub decided: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecisionRequest {
    pub sample_id: String,
    pub action: Action,
    #[serde(default)]
    pub reviewer_id: Option<String>,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

fn readable(path: &Path) -> bool {
    std::fs::File::open(path).is_ok_and(|f| f.metadata().is_ok_and(|m| m.is_file()))
}

impl ReviewService {
    /// Opens the decisions file (replaying earlier decisions) and checks
    /// which queued images can be read.
    pub fn new(
        queue: Vec<ReviewItem>,
        manifest: &Manifest,
        source: &DiskImageSource,
        decisions_path: &Path,
    ) -> anyhow::Result<Self> {
        let (log, decisions) = DecisionLog::open(decisions_path)?;
        let images: BTreeMap<String, PathBuf> = manifest
            .records
            .iter()
            .map(|r| (r.sample_id.clone(), source.resolve(r)))
            .collect();
        let mut available = BTreeSet::new();
        for item in &queue {
            let path = source.resolve_path(&item.image_path);
            if readable(&path) {
                available.insert(item.sample_id.clone());
            } else {
                log::warn!("image for `{}` is unreadable: {}", item.sample_id, path.display());
            }
        }
        Ok(ReviewService {
            inner: Arc::new(Mutex::new(Inner {
                queue,
                available,
                images,
                decisions,
                log,
            })),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn page(&self, offset: usize, limit: usize) -> QueuePage {
        let inner = self.lock();
        let effective = effective_decisions(&inner.decisions);
        let items = inner
            .queue
            .iter()
            .skip(offset)
            .take(limit.min(MAX_PAGE))
            .map(|item| QueueEntry {
                image_available: inner.available.contains(&item.sample_id),
                decision: effective.get(item.sample_id.as_str()).map(|d| (*d).clone()),
                item: item.clone(),
            })
            .collect();
        QueuePage {
            items,
            total: inner.queue.len(),
        }
    }

    pub fn progress(&self) -> ProgressCounts {
        let inner = self.lock();
        let effective = effective_decisions(&inner.decisions);
        ProgressCounts {
            decided: inner
                .queue
                .iter()
                .filter(|i| effective.contains_key(i.sample_id.as_str()))
                .count(),
            total: inner.queue.len(),
        }
    }

    pub fn decisions(&self) -> Vec<ReviewDecision> {
        self.lock().decisions.clone()
    }

    /// Persists and records a decision. `Ok(None)` means the sample id is
    /// not in the manifest.
    pub fn decide(&self, req: DecisionRequest) -> std::io::Result<Option<ReviewDecision>> {
        let mut inner = self.lock();
        if !inner.images.contains_key(&req.sample_id) {
            return Ok(None);
        }
        let decision = ReviewDecision {
            sample_id: req.sample_id,
            action: req.action,
            reviewer_id: req.reviewer_id.unwrap_or_else(|| String::from("anonymous")),
            timestamp: req.timestamp.unwrap_or_else(now_ms),
        };
        inner.log.append(&decision)?;
        inner.decisions.push(decision.clone());
        Ok(Some(decision))
    }

    fn image_path(&self, sample_id: &str) -> Option<PathBuf> {
        self.lock().images.get(sample_id).cloned()
    }
}

async fn queue(State(svc): State<ReviewService>, Query(q): Query<PageQuery>) -> Json<QueuePage> {
    Json(svc.page(q.offset.unwrap_or(0), q.limit.unwrap_or(DEFAULT_PAGE)))
}

async fn progress(State(svc): State<ReviewService>) -> Json<ProgressCounts> {
    Json(svc.progress())
}

async fn decisions(State(svc): State<ReviewService>) -> Json<Vec<ReviewDecision>> {
    Json(svc.decisions())
}

async fn decide(State(svc): State<ReviewService>, body: Result<Json<DecisionRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let id = req.sample_id.clone();
    let result = tokio::task::spawn_blocking(move || svc.decide(req)).await;
    match result {
        Ok(Ok(Some(d))) => Json(d).into_response(),
        Ok(Ok(None)) => error(StatusCode::NOT_FOUND, format!("unknown sample_id `{id}`")),
        Ok(Err(e)) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("cannot record decision: {e}"),
        ),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn image(State(svc): State<ReviewService>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(path) = svc.image_path(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample_id `{id}`"));
    };
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) => return error(StatusCode::NOT_FOUND, format!("image for `{id}` is unavailable: {e}")),
    };
    if let Some(ct) = content_type(&path) {
        return ([(header::CONTENT_TYPE, ct)], bytes).into_response();
    }
    // Other formats are re-encoded as PNG.
    match image::load_from_memory(&bytes) {
        Ok(img) => {
            let mut out = Cursor::new(Vec::new());
            match img.write_to(&mut out, image::ImageFormat::Png) {
                Ok(()) => ([(header::CONTENT_TYPE, "image/png")], out.into_inner()).into_response(),
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            }
        }
        Err(e) => error(StatusCode::NOT_FOUND, format!("image for `{id}` is unavailable: {e}")),
    }
}

/// The API routes, plus static files from `ui_dir` for every other path.
pub fn router(service: ReviewService, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/image/{sample_id}", get(image))
        .route("/api/decision", post(decide))
        .route("/api/decisions", get(decisions))
        .route("/api/progress", get(progress))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn bind(addr: SocketAddr) -> anyhow::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))
}

/// Serves until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> anyhow::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("review server failed")
}
