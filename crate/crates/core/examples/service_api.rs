//! Drives the chat HTTP API in process, without opening a socket.
//!
//! ```text
//! cargo run --example service_api
//! ```

use std::sync::Arc;

use http_body_util::BodyExt;
use persona_esc::corpus::Vocabulary;
use persona_esc::decode::DecodeConfig;
use persona_esc::model::{Model, ModelConfig};
use persona_esc::persona::RuleExtractor;
use persona_esc::service::{router, ChatService, MemoryStore};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> anyhow::Result<(u16, Value)> {
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(axum::body::Body::from(body.map(|b| b.to_string()).unwrap_or_default()))?;
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await?.to_bytes();
    Ok((status, serde_json::from_slice(&bytes)?))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    // An untrained model keeps the example fast; replies are noise.
    let vocab = Vocabulary::from_tokens(["i", "am", "a", "teacher", "feel", "tired", "you", "."]);
    let model = Model::new(ModelConfig { d_model: 16, d_ff: 32, ..Default::default() }, vocab)?;
    let decode = DecodeConfig { max_new_tokens: 8, ..Default::default() };
    let svc = ChatService::new(Arc::new(model), Arc::new(RuleExtractor), Arc::new(MemoryStore::default()), decode, "untrained")?;
    let app = router(Arc::new(svc));

    println!("{:?}", call(&app, "GET", "/healthz", None).await?);
    let (status, session) = call(&app, "POST", "/sessions", Some(json!({"alpha_override": 0.5}))).await?;
    let id = session["id"].as_str().unwrap_or_default().to_string();
    println!("created {id} ({status})");

    for (msg, strategy) in [("I am a teacher.", None), ("I feel tired all the time.", Some("Self-disclosure"))] {
        let (status, reply) = call(&app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"message": msg, "seed": 1, "strategy": strategy}))).await?;
        println!("{status} {}", serde_json::to_string_pretty(&reply)?);
    }
    let (_, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await?;
    println!("persona now {}", session["persona"]);
    println!("{:?}", call(&app, "POST", "/sessions/nope/turns", Some(json!({"message": "hi"}))).await?);
    Ok(())
}
