use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use convrec_core::config::EngineConfig;
use convrec_core::corpus::Vocab;
use convrec_core::engine::{Engine, EngineBundle};
use convrec_core::synth::{template_dialogues, template_movies};
use convrec_server::{router, AppState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn bundle() -> Arc<EngineBundle> {
    let mut c = EngineConfig::default();
    c.sentiment.model.utterance.embedding_dim = 16;
    c.sentiment.model.utterance.hidden = 16;
    c.sentiment.model.conversation_hidden = 16;
    c.dialogue.model.utterance.embedding_dim = 16;
    c.dialogue.model.utterance.hidden = 16;
    c.dialogue.model.conversation_hidden = 16;
    c.dialogue.model.decoder.embedding_dim = 16;
    c.recommender.model.hidden = 8;
    c.generation.beam_width = 2;
    c.generation.max_len = 6;
    let db = template_movies(12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let convs = template_dialogues(20, &db, 2, &mut rng).unwrap();
    let vocab = Vocab::build(&convs, 1).unwrap();
    Arc::new(EngineBundle::new(c, vocab, db, &mut rng).unwrap())
}

fn app(bundle: Arc<EngineBundle>) -> Router {
    let state = AppState {
        engine: Arc::new(Engine::new(bundle)),
        model_loaded: true,
    };
    router(state, &[])
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri).header(header::ORIGIN, "http://localhost:5173");
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn health_reports_model_state() {
    let (status, body) = call(&app(bundle()), Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "modelLoaded": true}));
}

#[tokio::test]
async fn sessions_follow_the_schema() {
    let app = app(bundle());
    let (status, created) = call(&app, Method::POST, "/api/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    let id = created["sessionId"].as_str().unwrap().to_string();

    let (_, d) = call(&app, Method::GET, &format!("/api/sessions/{id}/diagnostics"), None).await;
    assert_eq!(d["movies"], json!([]));
    assert_eq!(d["turns"], 0);
    assert_eq!(d["topK"].as_array().unwrap().len(), 10);

    let uri = format!("/api/sessions/{id}/messages");
    let (status, turn) = call(&app, Method::POST, &uri, Some(json!({"text": "i loved @102 !"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert!(turn["reply"]["text"].is_string());
    let m = &turn["diagnostics"]["movies"][0];
    for key in ["id", "title", "suggested", "seen", "liked"] {
        assert!(m.get(key).is_some(), "{key}");
    }
    assert_eq!(m["seen"].as_array().unwrap().len(), 3);
    let top = &turn["diagnostics"]["topK"][0];
    assert!(top["score"].is_number() && top["title"].is_string());
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let app = app(bundle());
    let (status, body) = call(&app, Method::GET, "/api/sessions/missing/diagnostics", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    let (status, _) = call(&app, Method::POST, "/api/sessions/missing/messages", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn movies_autocomplete() {
    let app = app(bundle());
    let (_, all) = call(&app, Method::GET, "/api/movies?limit=2", None).await;
    assert_eq!(all.as_array().unwrap().len(), 2);
    assert_eq!(all[0]["id"], 100);
    assert!(all[0].get("year").is_some());
    let (_, none) = call(&app, Method::GET, "/api/movies?q=zzzz", None).await;
    assert_eq!(none, json!([]));
}

#[tokio::test]
async fn replay_matches_the_library() {
    let b = bundle();
    let lines = ["hi there !", "i have seen @101 and i loved it .", "what about @104 ?"];
    let lib = Engine::new(b.clone());
    let s = lib.create_session().unwrap();
    let expected: Vec<String> = lines
        .iter()
        .map(|l| serde_json::to_string(&lib.post_utterance(&s, l).unwrap()).unwrap())
        .collect();

    let app = app(b);
    let (_, created) = call(&app, Method::POST, "/api/sessions", None).await;
    let uri = format!("/api/sessions/{}/messages", created["sessionId"].as_str().unwrap());
    for (line, want) in lines.iter().zip(&expected) {
        let (_, got) = call(&app, Method::POST, &uri, Some(json!({"text": line}))).await;
        assert_eq!(got.to_string(), serde_json::from_str::<Value>(want).unwrap().to_string());
    }
}
