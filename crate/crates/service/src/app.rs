use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use aicare_advisory::{advise, Advisor, ClientConfig, Narrative, ValidationReport, DEFAULT_TOP_K};
use aicare_core::analytics::{population_aggregate, DEFAULT_SAMPLE_SIZE};
use aicare_core::data::{LabeledCohort, LabeledRecord};
use aicare_core::model::{predict_trajectory, Checkpoint};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tower_http::cors::{Any, CorsLayer};

use crate::assess::{assessment_response, task_definition};
use crate::events::EventRecord;
use crate::store::{calibration_key, AssessmentKey, PopulationKey, Store};
use crate::ServiceError;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    /// Allowed dashboard origin; any origin when unset.
    pub cors_origin: Option<String>,
    pub llm: ClientConfig,
}

impl ServiceConfig {
    pub fn new(checkpoint: PathBuf, store: PathBuf) -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            checkpoint,
            store,
            cors_origin: None,
            llm: ClientConfig::from_env(),
        }
    }
}

struct Inner {
    ckpt: Checkpoint,
    model_hash: String,
    cohort: LabeledCohort,
    store: Mutex<Store>,
    advisor: Advisor,
    task_def: String,
}

/// Immutable model snapshot plus the store; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Refuses a checkpoint whose schema differs from the store's.
    pub fn new(ckpt: Checkpoint, store: Store, advisor: Advisor) -> Result<Self, ServiceError> {
        let store_hash = store
            .schema_hash()?
            .ok_or_else(|| ServiceError::Startup("store holds no cohort".into()))?;
        if store_hash != ckpt.schema_hash {
            return Err(ServiceError::SchemaMismatch { checkpoint: ckpt.schema_hash.clone(), store: store_hash });
        }
        let cohort = store.load_cohort()?;
        Ok(Self(Arc::new(Inner {
            model_hash: ckpt.model_hash(),
            task_def: task_definition(&ckpt.meta.task),
            ckpt,
            cohort,
            store: Mutex::new(store),
            advisor,
        })))
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let ckpt = Checkpoint::load(&config.checkpoint).map_err(|e| ServiceError::Startup(e.to_string()))?;
        if !config.store.exists() {
            return Err(ServiceError::Startup(format!("store {} does not exist", config.store.display())));
        }
        let store = Store::open(&config.store)?;
        let advisor = Advisor::new(config.llm.clone()).map_err(|e| ServiceError::Startup(e.to_string()))?;
        Self::new(ckpt, store, advisor)
    }

    pub fn model_hash(&self) -> &str {
        &self.0.model_hash
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.0.ckpt
    }

    pub fn cohort(&self) -> &LabeledCohort {
        &self.0.cohort
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        // a panic while holding the lock cannot leave SQLite inconsistent
        self.0.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn record(&self, id: &str) -> Result<&LabeledRecord, ServiceError> {
        check_id(id)?;
        self.0.cohort.find(id).ok_or_else(|| ServiceError::NotFound(format!("unknown patient `{id}`")))
    }
}

fn check_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Unprocessable(format!("malformed patient id `{id}`")))
    }
}

fn json_body(body: String) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => CorsLayer::new().allow_origin(origin),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model/info", get(model_info))
        .route("/api/patients", get(list_patients))
        .route("/api/patients/{id}", get(get_patient))
        .route("/api/patients/{id}/assessment", get(get_assessment))
        .route("/api/patients/{id}/advice", post(post_advice))
        .route("/api/population/{feature}", get(get_population))
        .route("/api/events", post(post_event).get(list_events))
        .layer(cors)
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_hash": s.model_hash() }))
}

async fn model_info(State(s): State<AppState>) -> Json<Value> {
    let c = s.checkpoint();
    Json(json!({
        "model_hash": s.model_hash(),
        "schema_hash": c.schema_hash,
        "task": c.meta.task,
        "fold": c.meta.fold,
        "seed": c.meta.seed,
        "hyper": c.params.hyper,
        "calibration": c.calibration.as_ref().map(|k| json!({
            "temperature": k.temperature,
            "threshold": k.threshold,
            "beta": k.beta,
        })),
        "features": c.schema.channels(),
        "n_patients": s.cohort().records.len(),
    }))
}

#[derive(Serialize)]
struct PatientSummary<'a> {
    patient_id: &'a str,
    n_visits: usize,
    first_time: f64,
    last_time: f64,
}

async fn list_patients(State(s): State<AppState>) -> Json<Value> {
    let list: Vec<PatientSummary> = s
        .cohort()
        .records
        .iter()
        .map(|r| PatientSummary {
            patient_id: &r.record.patient_id,
            n_visits: r.record.visits.len(),
            first_time: r.record.visits.first().map_or(0.0, |v| v.time),
            last_time: r.record.visits.last().map_or(0.0, |v| v.time),
        })
        .collect();
    Json(json!(list))
}

async fn get_patient(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ServiceError> {
    let r = s.record(&id)?;
    let schema = &s.cohort().schema;
    Ok(Json(json!({
        "patient_id": r.record.patient_id,
        "static_features": schema.static_features().map(|f| &f.name).collect::<Vec<_>>(),
        "dynamic_features": schema.dynamic().map(|f| &f.name).collect::<Vec<_>>(),
        "static_values": r.record.static_values,
        "visits": r.record.visits,
        "labels": r.labels,
    })))
}

#[derive(Deserialize)]
struct AssessmentQuery {
    top_k: Option<usize>,
    /// Bypasses the cache in both directions.
    #[serde(default)]
    fresh: bool,
}

async fn get_assessment(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AssessmentQuery>,
) -> Result<Response, ServiceError> {
    s.record(&id)?;
    let top_k = q.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        return Err(ServiceError::Unprocessable("top_k must be positive".into()));
    }
    let calib = s.checkpoint().calibration.as_ref();
    let key = AssessmentKey {
        patient_id: id.clone(),
        model_hash: s.model_hash().to_string(),
        temperature: calibration_key(calib.map(|c| c.temperature)),
        threshold: calibration_key(calib.map(|c| c.threshold)),
        top_k,
    };
    let body = blocking(move || {
        if !q.fresh {
            if let Some(body) = s.store().cached_assessment(&key)? {
                return Ok(body);
            }
        }
        let resp = assessment_response(s.checkpoint(), s.model_hash(), s.cohort(), &id, top_k)?;
        let body = serde_json::to_string(&resp)?;
        if !q.fresh {
            s.store().put_assessment(&key, &body)?;
        }
        Ok(body)
    })
    .await?;
    Ok(json_body(body))
}

#[derive(Deserialize)]
struct PopulationQuery {
    n: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    fresh: bool,
}

async fn get_population(
    State(s): State<AppState>,
    Path(feature): Path<String>,
    Query(q): Query<PopulationQuery>,
) -> Result<Response, ServiceError> {
    if s.checkpoint().schema.channel_index(&feature).is_none() {
        return Err(ServiceError::NotFound(format!("unknown feature `{feature}`")));
    }
    let n = q.n.unwrap_or(DEFAULT_SAMPLE_SIZE);
    if n == 0 {
        return Err(ServiceError::Unprocessable("n must be positive".into()));
    }
    let seed = q.seed.unwrap_or(0);
    let key = PopulationKey {
        feature: feature.clone(),
        n,
        seed,
        model_hash: s.model_hash().to_string(),
        temperature: calibration_key(s.checkpoint().calibration.as_ref().map(|c| c.temperature)),
    };
    let body = blocking(move || {
        if !q.fresh {
            if let Some(body) = s.store().cached_population(&key)? {
                return Ok(body);
            }
        }
        let summary = population_aggregate(s.checkpoint(), s.cohort(), &feature, n, seed)?;
        let body = serde_json::to_string(&summary)?;
        if !q.fresh {
            s.store().put_population(&key, &body)?;
        }
        Ok(body)
    })
    .await?;
    Ok(json_body(body))
}

#[derive(Deserialize)]
struct AdviceQuery {
    visit: Option<usize>,
    top_k: Option<usize>,
}

#[derive(Serialize)]
struct AdviceBody {
    patient_id: String,
    visit: usize,
    #[serde(flatten)]
    narrative: Narrative,
    fallback_reason: Option<String>,
    validation: Option<ValidationReport>,
}

async fn post_advice(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AdviceQuery>,
) -> Result<Json<AdviceBody>, ServiceError> {
    s.record(&id)?;
    let top_k = q.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        return Err(ServiceError::Unprocessable("top_k must be positive".into()));
    }
    let state = s.clone();
    let pid = id.clone();
    let assessment = blocking(move || {
        let ckpt = state.checkpoint();
        let tensor = ckpt.prepare(state.cohort(), &pid)?;
        Ok(predict_trajectory(&ckpt.params, &tensor, ckpt.calibration.as_ref())?)
    })
    .await?;
    let n_visits = assessment.visits.len();
    let visit = q.visit.unwrap_or(n_visits.saturating_sub(1));
    if visit >= n_visits {
        return Err(ServiceError::NotFound(format!("patient `{id}` has no visit {visit}")));
    }
    let ckpt = s.checkpoint();
    let outcome = advise(&s.0.advisor, &s.0.task_def, &assessment, &ckpt.schema, &ckpt.preprocessor, visit, top_k)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(Json(AdviceBody {
        patient_id: id,
        visit,
        narrative: outcome.narrative,
        fallback_reason: outcome.fallback_reason,
        validation: outcome.validation,
    }))
}

async fn post_event(State(s): State<AppState>, Json(body): Json<Value>) -> Result<Response, ServiceError> {
    let event: EventRecord = serde_json::from_value(body).map_err(|e| ServiceError::Unprocessable(format!("invalid event: {e}")))?;
    if event.session_id.is_empty() {
        return Err(ServiceError::Unprocessable("session_id must not be empty".into()));
    }
    let id = blocking(move || s.store().append_event(&event)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    session: Option<String>,
}

async fn list_events(State(s): State<AppState>, Query(q): Query<EventsQuery>) -> Result<Json<Value>, ServiceError> {
    blocking(move || {
        let store = s.store();
        let session = q.session.as_deref();
        Ok(Json(json!({
            "events": store.events(session)?,
            "counts": store.event_counts(session)?,
        })))
    })
    .await
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.shutdown.send(());
        join(self.task).await
    }

    pub async fn wait(self) -> Result<(), ServiceError> {
        join(self.task).await
    }
}

async fn join(task: tokio::task::JoinHandle<std::io::Result<()>>) -> Result<(), ServiceError> {
    task.await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map_err(|e| ServiceError::Internal(e.to_string()))
}

/// Loads the checkpoint and store once and starts serving. The server
/// also stops on Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<ServerHandle, ServiceError> {
    let cfg = config.clone();
    let state = tokio::task::spawn_blocking(move || AppState::from_config(&cfg))
        .await
        .map_err(|e| ServiceError::Startup(e.to_string()))??;
    let app = router(state.clone(), config.cors_origin.as_deref());
    let listener = tokio::net::TcpListener::bind((config.bind, config.port))
        .await
        .map_err(|e| ServiceError::Startup(format!("bind {}:{}: {e}", config.bind, config.port)))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Startup(e.to_string()))?;
    log::info!(
        "serving {} patients with model {} on http://{addr} (advice {})",
        state.cohort().records.len(),
        state.model_hash(),
        if config.llm.is_offline() { "offline" } else { "online" }
    );
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                tokio::select! {
                    _ = rx => {}
                    _ = tokio::signal::ctrl_c() => {}
                }
            })
            .await
    });
    Ok(ServerHandle { addr, shutdown: tx, task })
}

