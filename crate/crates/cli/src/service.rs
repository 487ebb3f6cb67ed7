//! HTTP prediction service. Models load in the background; until they are
//! ready every model-backed endpoint answers 503.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use urbanwind::flowsim::FlowConfig;
use urbanwind::interface::wire::{
    oracle_response, rasterize_response, surrogate_response, ModelMeta, PredictRequest, RasterizeRequest,
};
use urbanwind::surrogate::ModelBundle;
use urbanwind::Error;

pub const U_MODEL_FILE: &str = "u.ufnm";
pub const V_MODEL_FILE: &str = "v.ufnm";

/// The immutable pair of models every request reads.
#[derive(Debug)]
pub struct Models {
    pub u: ModelBundle,
    pub v: ModelBundle,
}

impl Models {
    pub fn load_dir(dir: &Path) -> urbanwind::Result<Self> {
        let u = ModelBundle::load(&dir.join(U_MODEL_FILE))?;
        let v = ModelBundle::load(&dir.join(V_MODEL_FILE))?;
        if u.component != urbanwind::raster::Component::U || v.component != urbanwind::raster::Component::V {
            return Err(Error::Validation(format!(
                "{} must hold a U model and {} a V model",
                U_MODEL_FILE, V_MODEL_FILE
            )));
        }
        Ok(Models { u, v })
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta::of(&self.u, &self.v)
    }
}

#[derive(Debug, Clone)]
enum LoadState {
    Loading,
    Ready(Arc<Models>),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct AppState {
    models: Arc<RwLock<LoadState>>,
    flow: Arc<FlowConfig>,
}

impl AppState {
    pub fn loading(flow: FlowConfig) -> Self {
        AppState {
            models: Arc::new(RwLock::new(LoadState::Loading)),
            flow: Arc::new(flow),
        }
    }

    pub fn ready(models: Models, flow: FlowConfig) -> Self {
        let s = Self::loading(flow);
        s.finish(Ok(models));
        s
    }

    /// Publishes the outcome of a load.
    pub fn finish(&self, outcome: urbanwind::Result<Models>) {
        let next = match outcome {
            Ok(m) => LoadState::Ready(Arc::new(m)),
            Err(e) => {
                log::error!("model load failed: {e}");
                LoadState::Failed(e.to_string())
            }
        };
        *self.models.write().expect("model state poisoned") = next;
    }

    /// Loads `dir` on a blocking thread and publishes the result.
    pub fn load_in_background(&self, dir: PathBuf) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || state.finish(Models::load_dir(&dir)))
    }

    fn current(&self) -> LoadState {
        self.models.read().expect("model state poisoned").clone()
    }

    fn require_models(&self) -> Result<Arc<Models>, ApiError> {
        match self.current() {
            LoadState::Ready(m) => Ok(m),
            LoadState::Loading => Err(ApiError::unavailable("models are still loading")),
            LoadState::Failed(e) => Err(ApiError::unavailable(&format!("model load failed: {e}"))),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn unavailable(message: &str) -> Self {
        ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            kind: "unavailable",
            message: message.into(),
        }
    }

    fn bad_body(e: serde_json::Error) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "parse",
            message: format!("malformed request body: {e}"),
        }
    }
}

/// Maps core errors onto HTTP statuses.
pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::Parse(_) | Error::Shape(_) => StatusCode::BAD_REQUEST,
        Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::BlockedDomain => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError {
            status: status_for(&e),
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::bad_body)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> urbanwind::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: format!("worker failed: {e}"),
        })?
        .map_err(ApiError::from)
}

fn ok_json<T: Serialize>(value: T) -> Response {
    (StatusCode::OK, Json(value)).into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    match state.current() {
        LoadState::Ready(m) => ok_json(json!({ "status": "ok", "model": m.meta() })),
        LoadState::Loading => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
        LoadState::Failed(e) => {
            (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "failed", "error": e }))).into_response()
        }
    }
}

async fn model_meta(State(state): State<AppState>) -> Result<Response, ApiError> {
    Ok(ok_json(state.require_models()?.meta()))
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let models = state.require_models()?;
    let req: PredictRequest = parse_body(&body)?;
    let resp = blocking(move || surrogate_response(&models.u, &models.v, &req)).await?;
    Ok(ok_json(resp))
}

/// Full flow solve for the same request shape. Does not need the models,
/// except to pick a default cell size.
async fn oracle(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    let cell_size = match state.current() {
        LoadState::Ready(m) => m.u.training.cell_size,
        _ => urbanwind::geomodel::SamplerConfig::default().side / req.heights.len().max(1) as f64,
    };
    let flow = state.flow.clone();
    let resp = blocking(move || oracle_response(&flow, &req, cell_size)).await?;
    Ok(ok_json(resp))
}

async fn rasterize(body: Bytes) -> Result<Response, ApiError> {
    let req: RasterizeRequest = parse_body(&body)?;
    Ok(ok_json(rasterize_response(&req)?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/meta", get(model_meta))
        .route("/predict", post(predict))
        .route("/oracle", post(oracle))
        .route("/debug/rasterize", post(rasterize))
        .with_state(state)
}

/// Binds `addr`, starts loading `models_dir` and serves until the process exits.
pub async fn serve(addr: &str, models_dir: PathBuf, flow: FlowConfig) -> urbanwind::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr, e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr, e))?;
    log::info!("listening on http://{local}, loading models from {}", models_dir.display());
    let state = AppState::loading(flow);
    state.load_in_background(models_dir);
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
