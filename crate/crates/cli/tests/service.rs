//! The session API driven in-process against the bundled fixture.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use genkb::commands::cmd_fixture;
use genkb::service::{router, AppState, InferredView, SessionStatus, SessionView};
use genkb::RunConfig;
use genkb_core::active::Provenance;
use genkb_core::guidance::schema_consistent;
use genkb_core::{load_kb, Background};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    cmd_fixture(dir.path()).unwrap();
    let mut cfg = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    cfg.train.epochs = 60;
    Fixture { _dir: dir, cfg }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn create(app: &Router, entity: &str, budget: usize) -> SessionView {
    let (s, v) = call(app, "POST", "/sessions", Some(json!({ "entity": entity, "budget": budget }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    serde_json::from_value(v).unwrap()
}

/// Answers every question from the ground truth.
async fn answer_all(app: &Router, view: &SessionView, truth_path: &Path) {
    let truth = load_kb(truth_path).unwrap().named_facts();
    let body: serde_json::Map<String, Value> = view
        .questions
        .iter()
        .map(|q| {
            let l = truth.get(&q.triple).copied().unwrap_or(genkb_core::QuantLabel::None);
            (q.fact_id.clone(), json!(l.as_str()))
        })
        .collect();
    let (s, v) = call(app, "POST", &format!("/sessions/{}/annotations", view.record.id), Some(Value::Object(body))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
}

async fn wait_done(app: &Router, id: &str) -> InferredView {
    let start = Instant::now();
    loop {
        let (s, v) = call(app, "GET", &format!("/sessions/{id}/inferred"), None).await;
        assert_eq!(s, StatusCode::OK);
        let view: InferredView = serde_json::from_value(v).unwrap();
        assert!(view.error.is_none(), "refit failed: {:?}", view.error);
        if view.status == SessionStatus::Done {
            return view;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "refit did not finish");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

fn background(cfg: &RunConfig) -> Background {
    cfg.load_background().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn create_annotate_refit_inferred() {
    let fx = fixture();
    let app = router(AppState::open(&fx.cfg).unwrap());
    let view = create(&app, "g0_m0", 5).await;
    assert_eq!(view.record.status, SessionStatus::AwaitingAnnotation);
    assert_eq!(view.questions.len(), 5);
    assert_eq!(view.pending, 5);
    for q in &view.questions {
        assert!(q.question.starts_with("is it true that all g0_m0 ") || q.question.contains(" some g0_m0?"));
        assert_eq!(q.options.len(), 3);
    }
    let id = view.record.id.clone();

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/refit"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["pending"], 5);

    answer_all(&app, &view, fx.cfg.paths.truth.as_ref().unwrap()).await;
    let (s, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let after: SessionView = serde_json::from_value(v).unwrap();
    assert_eq!(after.pending, 0);
    assert_eq!(after.answered, 5);

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/refit"), None).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let inferred = wait_done(&app, &id).await;
    assert!(!inferred.facts.is_empty());
    assert!(inferred.facts.iter().any(|f| f.provenance == Provenance::Factorization));
    let bg = background(&fx.cfg);
    for f in inferred.facts.iter().filter(|f| f.provenance == Provenance::Factorization) {
        let t = &f.triple;
        assert!(schema_consistent(&t.source, &t.relation, &t.target, &bg.schema, &bg.typemap).consistent);
    }
    assert!(inferred.facts.windows(2).all(|w| w[0].probability >= w[1].probability));
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/refit"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/annotations"), Some(json!({ "f0": "all" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn validation_errors_and_idempotence() {
    let fx = fixture();
    let app = router(AppState::open(&fx.cfg).unwrap());
    let (s, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions/nope/refit", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({ "entity": "g1_m0", "mode": "psychic" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    // A value has no taxonomy parent, so sibling guidance has nothing to go on.
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({ "entity": "v0" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert!(v["error"].as_str().unwrap().contains("schema-consistent"));

    let view = create(&app, "g1_m0", 3).await;
    let id = &view.record.id;
    let first = &view.questions[0].fact_id;
    let uri = format!("/sessions/{id}/annotations");
    let (s, _) = call(&app, "POST", &uri, Some(json!({ first.clone(): "maybe" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", &uri, Some(json!({ "f99": "all" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    // A bad entry rejects the whole batch.
    let (s, _) = call(&app, "POST", &uri, Some(json!({ first.clone(): "all", "f99": "all" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["answered"], 0);

    let (s, v) = call(&app, "POST", &uri, Some(json!({ first.clone(): "some" }))).await;
    assert_eq!(s, StatusCode::OK);
    let once: SessionView = serde_json::from_value(v).unwrap();
    let (s, v) = call(&app, "POST", &uri, Some(json!({ first.clone(): "some" }))).await;
    assert_eq!(s, StatusCode::OK);
    let twice: SessionView = serde_json::from_value(v).unwrap();
    assert_eq!(once, twice);
    // Changing an answer overwrites it.
    let (_, v) = call(&app, "POST", &uri, Some(json!({ first.clone(): "none" }))).await;
    assert_eq!(v["questions"][0]["answer"], "none");
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/refit"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["pending"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_survive_a_restart() {
    let fx = fixture();
    let state = AppState::open(&fx.cfg).unwrap();
    let sessions = state.session_dir().to_path_buf();
    let app = router(state);
    let done = create(&app, "g2_m0", 3).await;
    answer_all(&app, &done, fx.cfg.paths.truth.as_ref().unwrap()).await;
    call(&app, "POST", &format!("/sessions/{}/refit", done.record.id), None).await;
    let finished = wait_done(&app, &done.record.id).await;

    let waiting = create(&app, "g1_m0", 2).await;
    let (_, v) = call(
        &app,
        "POST",
        &format!("/sessions/{}/annotations", waiting.record.id),
        Some(json!({ waiting.questions[0].fact_id.clone(): "all" })),
    )
    .await;
    let waiting: SessionView = serde_json::from_value(v).unwrap();

    // Simulate a crash in the middle of a refit.
    let crashed = create(&app, "g0_m0", 2).await;
    answer_all(&app, &crashed, fx.cfg.paths.truth.as_ref().unwrap()).await;
    let path = sessions.join(format!("{}.json", crashed.record.id));
    let mut rec: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    rec["status"] = json!("refitting");
    fs::write(&path, rec.to_string()).unwrap();
    drop(app);

    let state = AppState::open(&fx.cfg).unwrap();
    state.resume().await;
    let app = router(state);
    let (_, v) = call(&app, "GET", &format!("/sessions/{}", done.record.id), None).await;
    let reloaded: SessionView = serde_json::from_value(v).unwrap();
    assert_eq!(reloaded.record.status, SessionStatus::Done);
    let again = wait_done(&app, &done.record.id).await;
    assert_eq!(again, finished);
    let (_, v) = call(&app, "GET", &format!("/sessions/{}", waiting.record.id), None).await;
    let reloaded: SessionView = serde_json::from_value(v).unwrap();
    assert_eq!(reloaded, waiting);
    let resumed = wait_done(&app, &crashed.record.id).await;
    assert!(!resumed.facts.is_empty());
    assert!(!sessions.read_dir().unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "tmp")));
}
