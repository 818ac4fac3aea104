#![allow(dead_code)]

use aicare_advisory::{Advisor, ClientConfig};
use aicare_core::analytics::{confusion_metrics, CalibrationArtifact};
use aicare_core::data::{assign_mortality_labels, fit_preprocessor, generate_synthetic_cohort, LabeledCohort, SyntheticSpec};
use aicare_core::model::{init_model, Checkpoint, CheckpointMeta, ModelHyper};
use aicare_service::{router, AppState, Store};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub fn cohort() -> LabeledCohort {
    let spec = SyntheticSpec {
        n_patients: 40,
        n_dynamic: 4,
        n_static: 2,
        min_visits: 3,
        max_visits: 8,
        planted: vec![0, 1],
        weights: vec![1.0, 1.0],
        seed: 11,
        ..SyntheticSpec::default()
    };
    assign_mortality_labels(&generate_synthetic_cohort(&spec).unwrap(), 365.0).unwrap()
}

pub fn checkpoint(cohort: &LabeledCohort) -> Checkpoint {
    let ids: Vec<String> = cohort.records.iter().map(|r| r.record.patient_id.clone()).collect();
    let pre = fit_preprocessor(cohort, &ids, None).unwrap();
    let (s, d) = cohort.schema.counts();
    let hyper = ModelHyper { hidden_dim: 8, n_heads: 2, seed: 5, ..ModelHyper::xy(d, s) };
    let params = init_model(&cohort.schema, &hyper).unwrap();
    let meta = CheckpointMeta { fold: Some(0), seed: 5, task: "mortality".into() };
    let mut ckpt = Checkpoint::new(cohort.schema.clone(), pre, params, meta);
    let validation = confusion_metrics(&[0.2, 0.7, 0.4], &[0, 1, 1], 0.45, 1.0).unwrap();
    ckpt.calibration = Some(CalibrationArtifact { temperature: 1.3, threshold: 0.45, beta: 1.0, validation });
    ckpt
}

pub fn state_with(llm: ClientConfig) -> (AppState, Checkpoint, LabeledCohort) {
    let cohort = cohort();
    let ckpt = checkpoint(&cohort);
    let mut store = Store::open_in_memory().unwrap();
    store.import_cohort(&cohort).unwrap();
    let state = AppState::new(ckpt.clone(), store, Advisor::new(llm).unwrap()).unwrap();
    (state, ckpt, cohort)
}

pub fn app(llm: ClientConfig) -> (Router, Checkpoint, LabeledCohort) {
    let (state, ckpt, cohort) = state_with(llm);
    (router(state, None), ckpt, cohort)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    call(app, "GET", uri, None).await
}
