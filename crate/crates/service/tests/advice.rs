mod common;

use aicare_advisory::ClientConfig;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use common::{app, call};

async fn mock_llm(status: StatusCode, content: &'static str) -> String {
    let app = Router::new().route(
        "/chat",
        post(move || async move {
            (status, Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})))
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/chat", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    url
}

const GOOD: &str = "Key Feature Identification\nAlbumin and WBC weigh most.\n\nRisk Analysis\nThe risk is moderate.\n\nPersonalized Advice\nReview at the next visit.";
const LEAKY: &str = "Key Feature Identification\nAlbumin is 31 g/L.\n\nRisk Analysis\nThe risk is moderate.\n\nPersonalized Advice\nReview at the next visit.";

async fn advice(llm: ClientConfig, query: &str) -> (StatusCode, Value) {
    let (app, _, cohort) = app(llm);
    let id = &cohort.records[0].record.patient_id;
    let (status, body) = call(&app, "POST", &format!("/api/patients/{id}/advice{query}"), None).await;
    (status, serde_json::from_str(&body).unwrap())
}

#[tokio::test]
async fn offline_serves_the_fallback() {
    let (status, v) = advice(ClientConfig::offline(), "?visit=1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["source"], "fallback");
    assert_eq!(v["visit"], 1);
    for s in ["key_features", "risk_analysis", "advice"] {
        assert!(!v["sections"][s].as_str().unwrap().is_empty());
    }
}

#[tokio::test]
async fn failing_llm_degrades_to_fallback() {
    let url = mock_llm(StatusCode::INTERNAL_SERVER_ERROR, "").await;
    let (status, v) = advice(ClientConfig::endpoint(&url, "m"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["source"], "fallback");
    assert!(v["fallback_reason"].as_str().unwrap().contains("500"));

    let dead = ClientConfig { timeout_secs: 2, ..ClientConfig::endpoint("http://127.0.0.1:9/chat", "m") };
    let (status, v) = advice(dead, "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["source"], "fallback");
}

#[tokio::test]
async fn valid_reply_is_served_and_leaky_reply_replaced() {
    let url = mock_llm(StatusCode::OK, GOOD).await;
    let (status, v) = advice(ClientConfig::endpoint(&url, "m"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["source"], "llm");
    assert_eq!(v["sections"]["advice"], "Review at the next visit.");
    assert_eq!(v["validation"]["passed"], true);

    let url = mock_llm(StatusCode::OK, LEAKY).await;
    let (_, v) = advice(ClientConfig::endpoint(&url, "m"), "").await;
    assert_eq!(v["source"], "fallback");
    assert_eq!(v["validation"]["violations"][0]["kind"], "numeric_leak");
}

#[tokio::test]
async fn advice_errors() {
    let (status, _) = advice(ClientConfig::offline(), "?visit=999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (app, _, _) = app(ClientConfig::offline());
    assert_eq!(call(&app, "POST", "/api/patients/NOPE/advice", None).await.0, StatusCode::NOT_FOUND);
}
