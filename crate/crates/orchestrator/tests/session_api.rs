use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cts_core::agent::{AgentError, Trainer};
use cts_core::encoding::{EncoderCache, HashedNGramEncoder};
use cts_core::graph::parse_graph;
use cts_core::simulator::{DialogMode, Observation};
use cts_orchestrator::api::{build_state, router, AppState};
use cts_orchestrator::live::{AgentContext, LivePolicy};
use cts_orchestrator::run::{env_factory, read_split, Dataset};
use cts_orchestrator::session::{AuditLog, GoalTexts};
use cts_orchestrator::RunConfig;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// Shows each node once, then takes its first answer.
struct AskThenFirst;

impl LivePolicy for AskThenFirst {
    fn decide(&self, obs: &Observation<f32>) -> Result<(usize, DialogMode), AgentError> {
        Ok((if obs.asked_here { 1 } else { 0 }, DialogMode::Guided))
    }
}

fn app(log: &Path) -> Router {
    let graph = parse_graph(&std::fs::read_to_string(data("fixture10/graph.json")).unwrap()).unwrap();
    let test = read_split(&data("fixture10/test.json")).unwrap();
    let ctx = AgentContext {
        graph: Arc::new(graph),
        cache: Arc::new(EncoderCache::new(Arc::new(HashedNGramEncoder::new(64, 0)))),
        policy: Arc::new(AskThenFirst),
        max_turns: 50,
    };
    let state = AppState::new(
        ctx,
        "scripted".into(),
        Arc::new(test),
        GoalTexts::default(),
        "test-salt".into(),
        3,
        AuditLog::open(log).unwrap(),
    )
    .unwrap();
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or_default().to_owned())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

fn events(log: &Path) -> Vec<Value> {
    std::fs::read_to_string(log)
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn count(events: &[Value], name: &str) -> usize {
    events.iter().filter(|e| e["event"] == name).count()
}

#[tokio::test]
async fn create_assigns_three_dialogs_covering_every_category() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let (status, body) = post(&app, "/api/sessions", json!({"username": "alice"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();
    assert_eq!(id.len(), 64);
    assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
    let dialogs = body["dialogs"].as_array().unwrap();
    assert_eq!(dialogs.len(), 3);
    let cats: BTreeSet<&str> = dialogs.iter().map(|d| d["category"].as_str().unwrap()).collect();
    assert_eq!(cats, BTreeSet::from(["easy", "hard", "open"]));
    assert!(dialogs.iter().all(|d| !d["goal_text"].as_str().unwrap().is_empty()));
    assert_eq!(body["stage"], "dialog");

    let raw = std::fs::read_to_string(&log).unwrap();
    assert!(!raw.contains("alice"), "username leaked into the log");
    assert_eq!(count(&events(&log), "session_created"), 1);
}

#[tokio::test]
async fn hard_goal_tells_the_user_its_variable_value() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let (_, body) = post(&app, "/api/sessions", json!({"username": "carol"})).await;
    let id = body["session_id"].as_str().unwrap();
    let (_, t) = call(&app, "GET", &format!("/api/sessions/{id}/transcript"), None).await;
    let hard = t["dialogs"].as_array().unwrap().iter().find(|d| d["goal"]["category"] == "hard").unwrap();
    assert!(["long_trip", "short_trip"].contains(&hard["goal"]["node"].as_str().unwrap()));
    assert!(hard["goal"]["facts"]["trip_length"].is_string());
    assert!(hard["goal"]["text"].as_str().unwrap().contains("trip length"));
}

#[tokio::test]
async fn categories_rotate_across_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("sessions.jsonl"));
    let mut firsts = Vec::new();
    for name in ["u1", "u2", "u3", "u4"] {
        let (_, body) = post(&app, "/api/sessions", json!({ "username": name })).await;
        firsts.push(body["dialogs"][0]["category"].as_str().unwrap().to_owned());
    }
    assert_eq!(firsts, ["open", "easy", "hard", "open"]);
}

#[tokio::test]
async fn same_username_resumes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let (_, first) = post(&app, "/api/sessions", json!({"username": "bob"})).await;
    let id = first["session_id"].as_str().unwrap().to_owned();
    let (status, _) = post(&app, &format!("/api/sessions/{id}/utterances"), json!({"text": "I have a question"})).await;
    assert_eq!(status, StatusCode::OK);

    let (status, again) = post(&app, "/api/sessions", json!({"username": "bob"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["session_id"], id.as_str());
    assert_eq!(again["resumed"], true);
    assert!(!again["dialogs"][0]["messages"].as_array().unwrap().is_empty());
    assert_eq!(again["dialogs"][0]["goal_text"], first["dialogs"][0]["goal_text"]);

    let (_, other) = post(&app, "/api/sessions", json!({"username": "bob2"})).await;
    assert_ne!(other["session_id"], id.as_str());
    let ev = events(&log);
    assert_eq!(count(&ev, "session_created"), 2);
    assert_eq!(count(&ev, "session_resumed"), 1);
}

#[tokio::test]
async fn full_study_flow_logs_every_mutation_once() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let (_, body) = post(&app, "/api/sessions", json!({"username": "dana"})).await;
    let id = body["session_id"].as_str().unwrap().to_owned();
    let base = format!("/api/sessions/{id}");

    // survey before the dialog is complete
    let (status, err) = post(&app, &format!("{base}/surveys"), json!({"perceived_length": 3, "satisfaction": 3})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "wrong_stage");

    // start -> prompt for the first branch
    let (status, r) = post(&app, &format!("{base}/utterances"), json!({"text": "I need help"})).await;
    assert_eq!(status, StatusCode::OK);
    let turns = r["turns"].as_array().unwrap();
    assert_eq!(turns[0]["kind"], "node");
    assert_eq!(turns[0]["node"], "start");
    assert_eq!(turns.last().unwrap()["kind"], "prompt");
    assert_eq!(turns.last().unwrap()["options"].as_array().unwrap().len(), 3);
    assert_eq!(r["awaiting_input"], true);

    // trip question
    let (_, r) = post(&app, &format!("{base}/utterances"), json!({"text": "a business trip"})).await;
    assert_eq!(r["turns"][0]["node"], "trip");
    assert_eq!(r["awaiting_input"], true);

    // variable node asks for a number
    let (_, r) = post(&app, &format!("{base}/utterances"), json!({"text": "inside the country"})).await;
    assert_eq!(r["turns"][0]["node"], "days");
    assert_eq!(r["turns"][1]["text"], "Please enter a number.");

    // unreadable value is asked again without moving on
    let (_, r) = post(&app, &format!("{base}/utterances"), json!({"text": "quite a while"})).await;
    assert_eq!(r["turns"][0]["kind"], "notice");
    assert_eq!(r["awaiting_input"], true);

    // 21 > 14 takes the long branch, a leaf
    let (_, r) = post(&app, &format!("{base}/utterances"), json!({"text": "21 days"})).await;
    assert_eq!(r["turns"][0]["node"], "long_trip");
    assert_eq!(r["complete"], true);
    assert_eq!(r["ended"], "leaf");
    assert_eq!(r["stage"], "dialog_survey");

    let (status, _) = post(&app, &format!("{base}/utterances"), json!({"text": "more?"})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // survey range checks
    let (status, err) = post(&app, &format!("{base}/surveys"), json!({"perceived_length": 6, "satisfaction": 3})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["message"].as_str().unwrap().contains("perceived_length"));
    let (status, _) = post(&app, &format!("{base}/surveys"), json!({"perceived_length": 3, "satisfaction": 5})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post(&app, &format!("{base}/surveys"), json!({"dialog": 2, "perceived_length": 3, "satisfaction": 4})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, r) = post(&app, &format!("{base}/surveys"), json!({"dialog": 0, "perceived_length": 3, "satisfaction": 4})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["current"], 1);

    // final survey is gated on all dialogs
    let (status, _) = post(&app, &format!("{base}/final-survey"), json!({"usability": [4], "trust": [4]})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // dialogs 2 and 3 end with the "found my answer" button
    for _ in 1..3 {
        let (status, _) = post(&app, &format!("{base}/utterances"), json!({"text": "Hotel costs please"})).await;
        assert_eq!(status, StatusCode::OK);
        let (status, r) = post(&app, &format!("{base}/found"), json!({})).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(r["stage"], "dialog_survey");
        let (status, _) = post(&app, &format!("{base}/surveys"), json!({"perceived_length": 2, "satisfaction": 2})).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = post(&app, &format!("{base}/found"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = post(&app, &format!("{base}/final-survey"), json!({"usability": [1, 6], "trust": [4]})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, r) = post(&app, &format!("{base}/final-survey"), json!({"usability": [4, 5, 3], "trust": [4, 2]})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["stage"], "done");
    let (status, _) = post(&app, &format!("{base}/final-survey"), json!({"usability": [4], "trust": [4]})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, t) = call(&app, "GET", &format!("{base}/transcript"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t["stage"], "done");
    let d0 = &t["dialogs"][0];
    let users = d0["messages"].as_array().unwrap().iter().filter(|m| m["speaker"] == "user").count();
    assert_eq!(users, 5);
    assert_eq!(d0["survey"], json!({"perceived_length": 3, "satisfaction": 4}));
    assert_eq!(t["final_survey"]["trust"], json!([4, 2]));

    let ev = events(&log);
    let expected: HashMap<&str, usize> = HashMap::from([
        ("session_created", 1),
        ("utterance", 7),
        ("found_answer", 2),
        ("dialog_survey", 3),
        ("final_survey", 1),
    ]);
    for (name, n) in &expected {
        assert_eq!(count(&ev, name), *n, "{name}");
    }
    assert_eq!(ev.len(), expected.values().sum::<usize>());
    let seqs: Vec<u64> = ev.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..ev.len() as u64).collect::<Vec<_>>());
    assert!(ev.iter().all(|e| e["session_id"] == id.as_str()));
}

#[tokio::test]
async fn unknown_sessions_and_malformed_bodies_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let (status, err) = post(&app, "/api/sessions/deadbeef/utterances", json!({"text": "hi"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_session");
    let (status, _) = call(&app, "GET", "/api/sessions/deadbeef/transcript", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    for body in ["{not json", r#"{"name": "x"}"#, r#"{"username": 5}"#] {
        let (status, err) = call(&app, "POST", "/api/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["error"], "malformed_body");
    }
    let (status, _) = post(&app, "/api/sessions", json!({"username": "  "})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, body) = post(&app, "/api/sessions", json!({"username": "eve"})).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, _) = post(&app, &format!("/api/sessions/{id}/surveys"), json!({"perceived_length": "long", "satisfaction": 1})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, &format!("/api/sessions/{id}/utterances"), json!({"text": ""})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    // rejected requests are not mutations
    let ev = events(&log);
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0]["event"], "session_created");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_are_serialized_per_session() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sessions.jsonl");
    let app = app(&log);
    let mut ids = Vec::new();
    for k in 0..4 {
        let (_, body) = post(&app, "/api/sessions", json!({ "username": format!("p{k}") })).await;
        ids.push(body["session_id"].as_str().unwrap().to_owned());
    }
    let mut tasks = Vec::new();
    for id in &ids {
        for i in 0..6 {
            let app = app.clone();
            let uri = format!("/api/sessions/{id}/utterances");
            tasks.push(tokio::spawn(async move {
                post(&app, &uri, json!({ "text": format!("message {i}") })).await.0
            }));
        }
    }
    let mut ok = 0;
    for t in tasks {
        let status = t.await.unwrap();
        assert!(status == StatusCode::OK || status == StatusCode::CONFLICT, "{status}");
        ok += usize::from(status == StatusCode::OK);
    }
    let ev = events(&log);
    assert_eq!(count(&ev, "utterance"), ok);
    for id in &ids {
        let (_, t) = call(&app, "GET", &format!("/api/sessions/{id}/transcript"), None).await;
        let users = t["dialogs"][0]["messages"].as_array().unwrap().iter().filter(|m| m["speaker"] == "user").count();
        let logged = ev.iter().filter(|e| e["event"] == "utterance" && e["session_id"] == id.as_str()).count();
        assert_eq!(users, logged);
    }
}

fn small_config(dir: &Path) -> RunConfig {
    let text = format!(
        r#"{{"run_id": "api", "output_dir": "{}", "seed": 3,
            "dataset": {{"graph": "{g}/graph.json", "train": "{g}/train.json", "test": "{g}/test.json"}},
            "encoder": {{"kind": "hashed", "dim": 32}},
            "trainer": {{"network": {{"embedding_dim": 32, "hidden1": 8, "hidden2": 8, "action_dim": 4, "head_hidden": 4}}}}}}"#,
        dir.display(),
        g = data("fixture10").display()
    );
    RunConfig::parse(&text).unwrap()
}

#[tokio::test]
async fn server_state_loads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let data = Dataset::load(&config).unwrap();
    let factory = env_factory::<f32>(&config, &data).unwrap();
    let trainer = Trainer::new(config.trainer.clone(), factory, 3).unwrap();
    let ckpt = dir.path().join("ckpt.json");
    trainer.checkpoint().save(&ckpt).unwrap();

    let app = router(Arc::new(build_state(&config, &ckpt).unwrap()));
    let (status, health) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["checkpoint"], "ckpt.json@0");
    let (_, body) = post(&app, "/api/sessions", json!({"username": "frank"})).await;
    let id = body["session_id"].as_str().unwrap();
    let (status, r) = post(&app, &format!("/api/sessions/{id}/utterances"), json!({"text": "hotel receipts"})).await;
    assert_eq!(status, StatusCode::OK);
    assert!(r["complete"].as_bool().unwrap() || r["awaiting_input"].as_bool().unwrap());
    assert!(config.run_dir().join("logs/sessions.jsonl").is_file());
    assert!(config.run_dir().join("session_salt").is_file());

    let mut wrong = config.clone();
    wrong.encoder = cts_core::encoding::EncoderConfig::Hashed { dim: 16, seed: 0 };
    let err = build_state(&wrong, &ckpt).err().unwrap().to_string();
    assert!(err.contains("32-dimensional"), "{err}");
}
