//! Fixtures and scenario checks shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{ensure, Context};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use parking_lot::Mutex;
use serde_json::{json, Value};
use tower::ServiceExt;

use persona_esc::corpus::Vocabulary;
use persona_esc::decode::DecodeConfig;
use persona_esc::model::{Example, Model, ModelConfig};
use persona_esc::persona::{PersonaExtractor, PersonaSet, RuleExtractor};
use persona_esc::service::{router, ChatService, MemoryStore, Session, SessionOverrides, SessionStore};
use persona_esc::Strategy;

pub const JOBS: [&str; 16] = [
    "plumber", "teacher", "nurse", "student", "pharmacist", "driver", "chef", "farmer", "painter", "lawyer", "baker", "pilot", "doctor",
    "writer", "singer", "tailor",
];

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        max_len: 96,
        layernorm_eps: 1e-5,
        seed: 11,
    }
}

pub fn tiny_model() -> Arc<Model> {
    let mut words = vec!["i", "am", "a", "feel", "sad", "about", "my", "you", "."];
    words.extend(JOBS);
    Arc::new(Model::new(tiny_config(), Vocabulary::from_tokens(words)).unwrap())
}

pub fn tiny_decode() -> DecodeConfig {
    DecodeConfig {
        max_new_tokens: 6,
        ..Default::default()
    }
}

pub fn service(store: Arc<dyn SessionStore>, extractor: Arc<dyn PersonaExtractor>) -> Arc<ChatService> {
    Arc::new(ChatService::new(tiny_model(), extractor, store, tiny_decode(), "tiny.ckpt").unwrap())
}

pub fn memory_service() -> (Arc<ChatService>, Arc<MemoryStore>) {
    let store = Arc::new(MemoryStore::default());
    (service(store.clone(), Arc::new(RuleExtractor)), store)
}

/// A memory store whose saves can be made to fail.
#[derive(Default)]
pub struct FlakyStore {
    pub inner: MemoryStore,
    pub fail: AtomicBool,
}

impl SessionStore for FlakyStore {
    fn load(&self, id: &str) -> persona_esc::Result<Option<Session>> {
        self.inner.load(id)
    }

    fn save(&self, session: &Session) -> persona_esc::Result<()> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(persona_esc::Error::Io(std::io::Error::other("disk full")));
        }
        self.inner.save(session)
    }

    fn list(&self) -> persona_esc::Result<Vec<String>> {
        self.inner.list()
    }
}

/// Records every utterance the service hands to the extractor.
#[derive(Default)]
pub struct SpyExtractor {
    pub seen: Mutex<Vec<String>>,
}

impl PersonaExtractor for SpyExtractor {
    fn extract(&self, seeker_utterances: &[String]) -> PersonaSet {
        self.seen.lock().extend(seeker_utterances.iter().cloned());
        RuleExtractor.extract(seeker_utterances)
    }
}

pub async fn call(app: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let (status, _, value) = call_full(app, method, uri, body).await;
    (status, value)
}

pub async fn call_full(app: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, axum::http::HeaderMap, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, headers, value)
}

pub fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

// Service scenarios. Each returns an error describing the first violated
// expectation, so they can back both plain tests and the acceptance report.

fn expect_error(status: StatusCode, body: &Value, want: StatusCode, code: &str) -> anyhow::Result<()> {
    ensure!(status == want, "expected {want}, got {status}: {body}");
    ensure!(body["error"] == code, "expected error code {code}: {body}");
    ensure!(body["detail"].is_string(), "error without detail: {body}");
    Ok(())
}

pub async fn contract_sessions() -> anyhow::Result<()> {
    let (svc, _) = memory_service();
    let app = router(svc);

    let (status, created) = call(&app, "POST", "/sessions", "").await;
    ensure!(status == StatusCode::CREATED, "create returned {status}");
    let id = created["id"].as_str().context("session id")?.to_string();
    ensure!(created["dialogue"] == json!([]), "new session has dialogue {}", created["dialogue"]);
    ensure!(created["persona"]["sentences"] == json!([]), "new session has persona");

    let (status, fetched) = call(&app, "GET", &format!("/sessions/{id}"), "").await;
    ensure!(status == StatusCode::OK && fetched == created, "GET differs from POST: {fetched}");

    let (status, custom) = call(&app, "POST", "/sessions", r#"{"alpha_override": 0.5, "top_k": 3}"#).await;
    ensure!(status == StatusCode::CREATED, "create with overrides returned {status}");
    ensure!(custom["overrides"]["alpha_override"] == 0.5 && custom["overrides"]["top_k"] == 3, "overrides not stored: {custom}");

    let (status, body) = call(&app, "POST", "/sessions", r#"{"alpha": 0.5}"#).await;
    expect_error(status, &body, StatusCode::BAD_REQUEST, "invalid_request")?;
    let (status, body) = call(&app, "POST", "/sessions", r#"{"top_k": 0}"#).await;
    expect_error(status, &body, StatusCode::BAD_REQUEST, "invalid_request")?;
    let (status, body) = call(&app, "POST", "/sessions", "{not json").await;
    expect_error(status, &body, StatusCode::BAD_REQUEST, "invalid_request")?;
    let (status, body) = call(&app, "GET", "/sessions/doesnotexist", "").await;
    expect_error(status, &body, StatusCode::NOT_FOUND, "not_found")?;
    Ok(())
}

pub async fn contract_turns() -> anyhow::Result<()> {
    let (svc, _) = memory_service();
    let app = router(svc);
    let (_, created) = call(&app, "POST", "/sessions", "").await;
    let id = created["id"].as_str().context("session id")?.to_string();
    let turns = format!("/sessions/{id}/turns");

    let (status, first) = call(&app, "POST", &turns, r#"{"message": "i am a plumber .", "seed": 4}"#).await;
    ensure!(status == StatusCode::OK, "turn returned {status}: {first}");
    for key in ["response", "strategy", "alpha_used", "forced", "persona", "top_strategies", "seed", "turn"] {
        ensure!(!first[key].is_null(), "missing {key} in {first}");
    }
    ensure!(first["turn"] == 1 && first["seed"] == 4 && first["forced"] == false, "bad turn metadata: {first}");
    let top = first["top_strategies"].as_array().context("top_strategies")?;
    ensure!(top.len() == 3, "expected 3 ranked strategies, got {}", top.len());
    let probs: Vec<f64> = top.iter().filter_map(|r| r["probability"].as_f64()).collect();
    ensure!(probs.windows(2).all(|w| w[0] >= w[1]), "ranking not descending: {probs:?}");
    ensure!(first["strategy"].as_str().context("strategy")?.parse::<Strategy>().is_ok(), "strategy is not a known name");
    // persona appears only from the third utterance on
    ensure!(first["persona"]["sentences"] == json!([]), "persona before third utterance: {first}");

    let (status, second) = call(&app, "POST", &turns, r#"{"message": "i feel sad about my job .", "strategy": "Providing Suggestions"}"#).await;
    ensure!(status == StatusCode::OK, "forced turn returned {status}: {second}");
    ensure!(second["strategy"] == "Providing Suggestions" && second["forced"] == true, "forced strategy ignored: {second}");
    ensure!(second["alpha_used"] == 0.75, "alpha for Providing Suggestions is {}", second["alpha_used"]);
    ensure!(second["turn"] == 3, "second reply should be utterance 3: {}", second["turn"]);
    let persona = second["persona"]["sentences"].as_array().context("persona")?;
    ensure!(persona.iter().any(|s| s == "i am a plumber"), "persona missing plumber: {persona:?}");

    let (_, session) = call(&app, "GET", &format!("/sessions/{id}"), "").await;
    let dialogue = session["dialogue"].as_array().context("dialogue")?;
    ensure!(dialogue.len() == 4, "dialogue has {} utterances", dialogue.len());
    ensure!(dialogue[3]["forced"] == true && dialogue[3]["strategy"] == "Providing Suggestions", "stored turn: {}", dialogue[3]);

    for bad in [r#"{"message": "   "}"#, r#"{"message": "hi", "strategy": "Flattery"}"#, r#"{"seed": 1}"#, r#"{"message": "hi", "mood": 1}"#, "nope"] {
        let (status, body) = call(&app, "POST", &turns, bad).await;
        expect_error(status, &body, StatusCode::BAD_REQUEST, "invalid_request").with_context(|| format!("body {bad}"))?;
    }
    let (status, body) = call(&app, "POST", "/sessions/missing/turns", r#"{"message": "hi"}"#).await;
    expect_error(status, &body, StatusCode::NOT_FOUND, "not_found")?;
    let (_, unchanged) = call(&app, "GET", &format!("/sessions/{id}"), "").await;
    ensure!(unchanged == session, "rejected requests modified the session");
    Ok(())
}

pub async fn contract_misc() -> anyhow::Result<()> {
    let (svc, _) = memory_service();
    let app = router(svc);
    let (status, health) = call(&app, "GET", "/healthz", "").await;
    ensure!(status == StatusCode::OK && health == json!({"status": "ok", "checkpoint": "tiny.ckpt"}), "healthz: {health}");

    let (status, body) = call(&app, "GET", "/nowhere", "").await;
    expect_error(status, &body, StatusCode::NOT_FOUND, "not_found")?;

    let (status, headers, _) = call_full(&app, "OPTIONS", "/sessions", "").await;
    ensure!(status == StatusCode::NO_CONTENT, "preflight returned {status}");
    ensure!(headers.get("access-control-allow-origin").is_some_and(|v| v == "*"), "missing CORS origin header");
    let (_, headers, _) = call_full(&app, "GET", "/healthz", "").await;
    ensure!(headers.get("access-control-allow-origin").is_some(), "CORS header missing on GET");
    Ok(())
}

/// A failed save leaves both the stored document and the live session untouched.
pub fn atomic_turn_failure() -> anyhow::Result<()> {
    let store = Arc::new(FlakyStore::default());
    let svc = service(store.clone(), Arc::new(RuleExtractor));
    let id = svc.create_session(SessionOverrides::default())?.id;
    svc.chat_turn(&id, "i am a nurse .", Some(1), None)?;
    let stored = store.inner.raw(&id).context("stored document")?;
    let live = svc.get_session(&id)?;

    store.fail.store(true, Ordering::SeqCst);
    ensure!(svc.chat_turn(&id, "i feel sad about my job .", Some(2), None).is_err(), "turn succeeded despite failing store");
    ensure!(store.inner.raw(&id).as_deref() == Some(stored.as_str()), "stored bytes changed after failed turn");
    ensure!(svc.get_session(&id)? == live, "in-memory session changed after failed turn");

    store.fail.store(false, Ordering::SeqCst);
    let reply = svc.chat_turn(&id, "i feel sad about my job .", Some(2), None)?;
    ensure!(reply.turn == 3, "retry produced turn {}", reply.turn);
    ensure!(svc.get_session(&id)?.dialogue.len() == 4, "retry did not append exactly one exchange");
    Ok(())
}

/// 16 sessions, 10 turns each, on parallel threads.
pub fn concurrent_sessions() -> anyhow::Result<()> {
    let (svc, store) = memory_service();
    let ids: Vec<String> = (0..JOBS.len()).map(|_| svc.create_session(SessionOverrides::default()).map(|s| s.id)).collect::<Result<_, _>>()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = ids
            .iter()
            .zip(JOBS)
            .map(|(id, job)| {
                let svc = svc.clone();
                scope.spawn(move || -> anyhow::Result<()> {
                    for k in 0..10 {
                        let msg = if k % 2 == 0 { format!("i am a {job} .") } else { format!("i feel sad about my {job} .") };
                        let reply = svc.chat_turn(id, &msg, None, None)?;
                        ensure!(reply.turn == 2 * k + 1, "session {job}: turn {} at step {k}", reply.turn);
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("worker panicked"))
    })?;

    for (id, job) in ids.iter().zip(JOBS) {
        let s = svc.get_session(id)?;
        ensure!(s.dialogue.len() == 20, "session {job} has {} utterances", s.dialogue.len());
        for (i, t) in s.dialogue.iter().enumerate().step_by(2) {
            ensure!(t.text.split_whitespace().any(|w| w == job), "session {job} utterance {i} leaked: {}", t.text);
        }
        ensure!(!s.persona.is_empty(), "session {job} has no persona");
        for sentence in s.persona.sentences() {
            ensure!(sentence.contains(job), "session {job} persona leaked: {sentence}");
        }
        let stored: Session = serde_json::from_str(&store.raw(id).context("stored")?)?;
        ensure!(stored == s, "stored session {job} differs from live state");
    }
    Ok(())
}

/// Two fresh services fed the same messages and seeds give identical transcripts.
pub fn reproducible_transcripts() -> anyhow::Result<()> {
    let script = [("i am a baker .", 10), ("i feel sad about my baker .", 11), ("you am a i .", 12), ("i feel sad .", 13)];
    let run = || -> anyhow::Result<Vec<String>> {
        let (svc, _) = memory_service();
        let id = svc.create_session(SessionOverrides::default())?.id;
        let mut out = Vec::new();
        for (msg, seed) in script {
            out.push(serde_json::to_string(&svc.chat_turn(&id, msg, Some(seed), None)?)?);
        }
        Ok(out)
    };
    let (a, b) = (run()?, run()?);
    ensure!(a == b, "transcripts differ:\n{a:#?}\n{b:#?}");
    Ok(())
}

/// Maximum relative error between analytic and central-difference
/// gradients over the largest entries of every parameter tensor.
pub fn gradient_check(model: &mut Model, ex: &Example, step: f64, per_tensor: usize) -> anyhow::Result<(f64, String)> {
    let (_, grads) = model.loss_and_grad(ex)?;
    let names = model.params.names().to_vec();
    let mut worst = (0.0, String::new());
    for (t, name) in names.iter().enumerate() {
        let analytic = grads.tensors[t].data().to_vec();
        let mut order: Vec<usize> = (0..analytic.len()).collect();
        order.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
        for &i in order.iter().take(per_tensor) {
            let orig = model.params.tensors()[t].data()[i];
            model.params.tensors_mut()[t].data_mut()[i] = orig + step;
            let up = model.forward_loss(ex)?;
            model.params.tensors_mut()[t].data_mut()[i] = orig - step;
            let down = model.forward_loss(ex)?;
            model.params.tensors_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i];
            let err = if a.abs().max(numeric.abs()) < 1e-9 { 0.0 } else { (a - numeric).abs() / a.abs().max(numeric.abs()) };
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Ok(worst)
}

pub fn gradcheck_model() -> (Model, Example) {
    let m = Model::new(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            max_len: 32,
            layernorm_eps: 1e-5,
            seed: 5,
        },
        Vocabulary::from_tokens(["i", "am", "a", "plumber", "feel", "sad", "you", "."]),
    )
    .unwrap();
    let v = &m.vocab;
    let sep = v.sep();
    let ex = Example {
        dialogue: persona_esc::model::join_with_sep(&[v.encode("i am sad"), v.encode("you feel sad .")], sep),
        persona: persona_esc::model::join_with_sep(&[v.encode("i am a plumber"), v.encode("i feel sad")], sep),
        strategy: Strategy::ReflectionOfFeelings,
        response: v.encode("you feel sad ."),
    };
    (m, ex)
}
