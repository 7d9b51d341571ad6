//! JSON-over-HTTP facade for the operator console.
//!
//! Models and units are loaded once and shared read-only. Each session holds
//! the sticky overrides of one operator on one unit; cycles are 1-based.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prognostics_core::datagen::UnitTrajectory;
use prognostics_core::experiment::{self, ExperimentConfig};
use prognostics_core::intervene::{overrides_by_name, whatif_cycle, GroundTruthOracle, InspectionOracle, InterventionSession, SessionCycle};
use prognostics_core::models::{Family, Model};
use prognostics_core::{Error, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

/// Failure of one request, rendered as `{"error": {"kind", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn not_found(message: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, kind: "not_found", message: message.into() }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, kind: "malformed", message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Usage(_) => StatusCode::CONFLICT,
            Error::Input(_) | Error::Shape(_) | Error::UnsupportedFamily(_) | Error::Config(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, kind: e.kind(), message: e.to_string() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::unprocessable(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::unprocessable(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "kind": self.kind, "message": self.message } }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// A loaded checkpoint, addressed by `name`.
pub struct ServedModel {
    pub name: String,
    pub model: Model<f64>,
}

struct SessionEntry {
    model: usize,
    unit: usize,
    windows: Vec<Tensor>,
    session: InterventionSession,
    last_used: Instant,
}

/// Shared state of the service.
pub struct AppState {
    models: Vec<ServedModel>,
    units: Vec<UnitTrajectory>,
    oracles: Vec<GroundTruthOracle>,
    threshold: f64,
    ttl: Duration,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionEntry>>>>,
}

impl AppState {
    pub fn new(models: Vec<ServedModel>, units: Vec<UnitTrajectory>, threshold: f64, ttl: Duration) -> prognostics_core::Result<Self> {
        let mut names = std::collections::HashSet::new();
        for m in &models {
            if !names.insert(m.name.clone()) {
                return Err(Error::Config(format!("duplicate model name {:?}", m.name)));
            }
        }
        let oracles = models
            .iter()
            .map(|m| GroundTruthOracle::new(&units, m.model.concepts(), m.model.preprocess().tau))
            .collect::<prognostics_core::Result<_>>()?;
        Ok(Self { models, units, oracles, threshold, ttl, sessions: Mutex::new(HashMap::new()) })
    }

    /// Loads the configured checkpoints, or every trained family, and the unit split.
    pub fn from_config(cfg: &ExperimentConfig) -> prognostics_core::Result<Self> {
        let paths: Vec<PathBuf> = if cfg.service.checkpoints.is_empty() {
            Family::ALL.iter().map(|&f| cfg.checkpoint_path(f)).filter(|p| p.is_file()).collect()
        } else {
            cfg.service.checkpoints.clone()
        };
        if paths.is_empty() {
            return Err(Error::Input(format!("no checkpoints under {} (run train first)", cfg.models_dir().display())));
        }
        let mut models = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::Input(format!("cannot read checkpoint {}: {e}", p.display())))?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            models.push(ServedModel { name, model: Model::from_checkpoint(&text)? });
        }
        let scenario = experiment::load_scenario(cfg)?;
        let units = experiment::split_units(&scenario, cfg.service.split);
        Self::new(models, units, cfg.intervention.policy.detection_threshold, Duration::from_secs(cfg.service.session_ttl_secs))
    }

    fn model(&self, name: &str) -> Result<usize, ApiError> {
        self.models
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| ApiError::not_found(format!("unknown model {name:?}")))
    }

    fn unit(&self, id: &str) -> Result<usize, ApiError> {
        self.units
            .iter()
            .position(|u| u.id() == id)
            .ok_or_else(|| ApiError::not_found(format!("unknown unit {id:?}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        let mut map = self.sessions.lock().unwrap();
        let now = Instant::now();
        map.retain(|_, s| now.duration_since(s.lock().unwrap().last_used) <= self.ttl);
        let entry = map.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))?;
        entry.lock().unwrap().last_used = now;
        Ok(entry)
    }

    fn concept_index(&self, model: usize, concept: &ConceptRef) -> Result<usize, ApiError> {
        let names = self.models[model].model.concepts();
        match concept {
            ConceptRef::Index(i) if *i < names.len() => Ok(*i),
            ConceptRef::Index(i) => Err(ApiError::unprocessable(format!("concept index {i} outside 0..{}", names.len()))),
            ConceptRef::Name(n) => names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| ApiError::unprocessable(format!("model has no concept {n:?}"))),
        }
    }
}

/// A concept given by index or by name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ConceptRef {
    Index(usize),
    Name(String),
}

#[derive(Serialize)]
struct ModelInfo {
    name: String,
    family: Family,
    label: String,
    k: usize,
    concepts: Vec<String>,
    intervenable: bool,
}

async fn list_models(State(s): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(
        s.models
            .iter()
            .map(|m| ModelInfo {
                name: m.name.clone(),
                family: m.model.family(),
                label: m.model.family().to_string(),
                k: m.model.k(),
                concepts: m.model.concepts().to_vec(),
                intervenable: m.model.family().is_bottleneck(),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
struct UnitsQuery {
    #[serde(default)]
    reveal: bool,
}

#[derive(Serialize)]
struct UnitInfo {
    unit: String,
    fleet: String,
    n_cycles: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    faults: Option<Vec<String>>,
}

async fn list_units(State(s): State<Arc<AppState>>, q: Result<Query<UnitsQuery>, QueryRejection>) -> ApiResult<Vec<UnitInfo>> {
    let reveal = q?.reveal;
    let tau = s.models.first().map_or(prognostics_core::preprocess::DEFAULT_TAU, |m| m.model.preprocess().tau);
    Ok(Json(
        s.units
            .iter()
            .map(|u| UnitInfo {
                unit: u.id(),
                fleet: u.fleet.clone(),
                n_cycles: u.n_cycles(),
                faults: reveal.then(|| u.faulty_components(tau)),
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct NewSession {
    model: String,
    unit: String,
}

#[derive(Serialize)]
struct SessionInfo {
    session: String,
    model: String,
    unit: String,
    n_cycles: usize,
    concepts: Vec<String>,
}

async fn create_session(
    State(s): State<Arc<AppState>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let Json(req) = body?;
    let m = s.model(&req.model)?;
    let u = s.unit(&req.unit)?;
    let model = &s.models[m].model;
    let unit = &s.units[u];
    let windows = model.unit_windows(unit)?;
    let id = uuid::Uuid::new_v4().to_string();
    let entry = SessionEntry {
        model: m,
        unit: u,
        windows,
        session: InterventionSession::new(model, unit.n_cycles()),
        last_used: Instant::now(),
    };
    s.sessions.lock().unwrap().insert(id.clone(), Arc::new(Mutex::new(entry)));
    Ok((
        StatusCode::CREATED,
        Json(SessionInfo {
            session: id,
            model: req.model,
            unit: req.unit,
            n_cycles: unit.n_cycles(),
            concepts: model.concepts().to_vec(),
        }),
    ))
}

#[derive(Deserialize)]
struct StateQuery {
    upto: Option<usize>,
}

#[derive(Serialize)]
struct Override {
    concept: usize,
    name: String,
    from_cycle: usize,
}

#[derive(Serialize)]
struct StateResponse {
    session: String,
    model: String,
    unit: String,
    n_cycles: usize,
    upto: usize,
    cycles: Vec<SessionCycle>,
    overrides: Vec<Override>,
}

fn overrides(model: &Model<f64>, session: &InterventionSession) -> Vec<Override> {
    session
        .overrides()
        .iter()
        .map(|(&concept, &from_cycle)| Override { concept, name: model.concepts()[concept].clone(), from_cycle })
        .collect()
}

async fn session_state(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<StateQuery>, QueryRejection>,
) -> ApiResult<StateResponse> {
    let q = q?;
    let entry = s.session(&id)?;
    let e = entry.lock().unwrap();
    let model = &s.models[e.model];
    let n = e.session.n_cycles();
    let upto = q.upto.unwrap_or(n);
    let cycles = e.session.trajectory(&model.model, &e.windows, 1, upto, s.threshold)?;
    Ok(Json(StateResponse {
        session: id,
        model: model.name.clone(),
        unit: s.units[e.unit].id(),
        n_cycles: n,
        upto,
        cycles,
        overrides: overrides(&model.model, &e.session),
    }))
}

#[derive(Deserialize)]
struct CycleConcept {
    cycle: usize,
    concept: ConceptRef,
}

#[derive(Serialize)]
struct Inspection {
    cycle: usize,
    concept: usize,
    name: String,
    degraded: bool,
}

async fn inspect(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<CycleConcept>, JsonRejection>,
) -> ApiResult<Inspection> {
    let Json(req) = body?;
    let entry = s.session(&id)?;
    let e = entry.lock().unwrap();
    e.session.check_cycle(req.cycle)?;
    let concept = s.concept_index(e.model, &req.concept)?;
    let degraded = s.oracles[e.model].inspect(&s.units[e.unit].id(), req.cycle, concept)?;
    Ok(Json(Inspection {
        cycle: req.cycle,
        concept,
        name: s.models[e.model].model.concepts()[concept].clone(),
        degraded,
    }))
}

#[derive(Serialize)]
struct InterventionResponse {
    session: String,
    concept: usize,
    name: String,
    from_cycle: usize,
    cycles: Vec<SessionCycle>,
    overrides: Vec<Override>,
}

async fn intervene(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<CycleConcept>, JsonRejection>,
) -> ApiResult<InterventionResponse> {
    let Json(req) = body?;
    let entry = s.session(&id)?;
    let mut e = entry.lock().unwrap();
    let concept = s.concept_index(e.model, &req.concept)?;
    let model = &s.models[e.model].model;
    e.session.intervene(model, req.cycle, concept)?;
    let n = e.session.n_cycles();
    let cycles = e.session.trajectory(model, &e.windows, req.cycle, n, s.threshold)?;
    Ok(Json(InterventionResponse {
        session: id,
        concept,
        name: model.concepts()[concept].clone(),
        from_cycle: req.cycle,
        cycles,
        overrides: overrides(model, &e.session),
    }))
}

#[derive(Deserialize)]
struct WhatIf {
    model: String,
    unit: String,
    cycle: usize,
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct WhatIfResponse {
    model: String,
    unit: String,
    cycle: usize,
    rul: f64,
}

async fn whatif(State(s): State<Arc<AppState>>, body: Result<Json<WhatIf>, JsonRejection>) -> ApiResult<WhatIfResponse> {
    let Json(req) = body?;
    let m = s.model(&req.model)?;
    let u = s.unit(&req.unit)?;
    let model = &s.models[m].model;
    let values = overrides_by_name(model, &req.overrides)?;
    let rul = whatif_cycle(model, &s.units[u], req.cycle, &values)?;
    Ok(Json(WhatIfResponse { model: req.model, unit: req.unit, cycle: req.cycle, rul }))
}

/// Routes under `/api`, with CORS for `cors_origin` (any origin when `None`).
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> prognostics_core::Result<Router> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|e| Error::Config(format!("invalid CORS origin {o:?}: {e}")))?,
        ),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Ok(Router::new()
        .route("/api/models", get(list_models))
        .route("/api/units", get(list_units))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/state", get(session_state))
        .route("/api/sessions/{id}/inspect", post(inspect))
        .route("/api/sessions/{id}/intervene", post(intervene))
        .route("/api/whatif", post(whatif))
        .layer(cors)
        .with_state(state))
}

/// Loads the configured models and serves until interrupted.
pub async fn serve(cfg: &ExperimentConfig) -> prognostics_core::Result<()> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let app = router(state, cfg.service.cors_origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(&cfg.service.bind).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
