use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use whodunit_core::behavior::{all_missions, scenario};
use whodunit_core::inference::InferenceTrial;
use whodunit_core::procgen::{generate_instances, DatasetSpec, EnvConfig, Split};
use whodunit_core::world::Grid;
use whodunit_study::server::Shared;
use whodunit_study::{router, AppState, Store, StudyTrial, Suite};

fn synthetic_trial(i: usize, steps: usize) -> StudyTrial {
    let frame = |k: usize| {
        let mut g = Grid::zeros(3, 3);
        g.data[0] = k as i16;
        g
    };
    StudyTrial {
        id: format!("t{i}"),
        question: "Which agent is more likely to have toggled-on the light?".into(),
        frames_a: (0..=steps).map(frame).collect(),
        frames_b: (0..=steps / 2).map(frame).collect(),
    }
}

fn synthetic_suite(n: usize, steps: usize) -> Suite {
    Suite {
        trials: (0..n).map(|i| synthetic_trial(i, steps)).collect(),
    }
}

fn real_suite() -> Suite {
    let sc = scenario("shower").unwrap();
    let spec = DatasetSpec {
        n_envs: 2,
        per_env: 2,
        ..DatasetSpec::for_split("shower", Split::Test, 3)
    };
    let insts = generate_instances(&spec, &EnvConfig::builtin("shower").unwrap()).unwrap();
    let trials: Vec<InferenceTrial> = insts
        .iter()
        .map(|i| InferenceTrial::from_instance(i, &sc).unwrap())
        .collect();
    Suite::from_trials(&trials)
}

async fn call(app: &Shared, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn create(app: &Shared, seed: u64) -> Value {
    let (s, v) = call(app, "POST", "/sessions", Some(json!({"participant": "p1", "seed": seed}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

async fn respond(app: &Shared, id: &str, trial: usize, checkpoint: usize, slider: i64) -> (StatusCode, Value) {
    call(
        app,
        "POST",
        &format!("/sessions/{id}/responses"),
        Some(json!({"trial": trial, "checkpoint": checkpoint, "slider": slider})),
    )
    .await
}

/// Step through one trial, answering each checkpoint with `slider`.
async fn complete_trial(app: &Shared, id: &str, trial: usize, slider: i64) -> usize {
    let (_, first) = call(app, "GET", &format!("/sessions/{id}/trials/{trial}/steps/0"), None).await;
    let last = first["last_step"].as_u64().unwrap() as usize;
    let mut answered = 0;
    for k in 0..=last {
        let (s, p) = call(app, "GET", &format!("/sessions/{id}/trials/{trial}/steps/{k}"), None).await;
        assert_eq!(s, StatusCode::OK, "{p}");
        let cps: Vec<usize> = serde_json::from_value(p["checkpoints"].clone()).unwrap();
        if !cps.is_empty() && k < last {
            let (s, _) = call(app, "GET", &format!("/sessions/{id}/trials/{trial}/steps/{}", k + 1), None).await;
            assert_eq!(s, StatusCode::FORBIDDEN, "advanced past checkpoint at step {k}");
        }
        for c in cps {
            let (s, ack) = respond(app, id, trial, c, slider).await;
            assert_eq!(s, StatusCode::OK, "{ack}");
            answered += 1;
        }
    }
    answered
}

#[tokio::test]
async fn default_session_has_fifty_trials_in_seeded_order() {
    let app = AppState::new(synthetic_suite(60, 20), Store::in_memory());
    let a = create(&app, 7).await;
    assert_eq!(a["trials"], 50);
    assert_eq!(a["checkpoints"], 11);
    let store = app.store.lock().unwrap();
    let s1 = store.sessions[a["id"].as_str().unwrap()].order.clone();
    drop(store);
    let b = create(&app, 7).await;
    let c = create(&app, 8).await;
    let store = app.store.lock().unwrap();
    assert_eq!(store.sessions[b["id"].as_str().unwrap()].order, s1);
    assert_ne!(store.sessions[c["id"].as_str().unwrap()].order, s1);
}

#[tokio::test]
async fn empty_suite_is_an_error() {
    let app = AppState::new(Suite::default(), Store::in_memory());
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"participant": "p"}))).await;
    assert!(s.is_server_error());
}

#[tokio::test]
async fn checkpoints_fall_on_the_tenths() {
    let app = AppState::new(synthetic_suite(3, 20), Store::in_memory());
    let id = create(&app, 0).await["id"].as_str().unwrap().to_string();
    let (s, p) = call(&app, "GET", &format!("/sessions/{id}/trials/0/steps/0"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(p["checkpoints"], json!([0]));
    assert_eq!(p["step"], 0);
    let t = synthetic_trial(0, 20);
    let steps: Vec<usize> = (0..11).map(|c| t.checkpoint_step(c)).collect();
    assert_eq!(steps, vec![0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20]);
}

#[tokio::test]
async fn peeking_ahead_is_forbidden() {
    let app = AppState::new(synthetic_suite(3, 20), Store::in_memory());
    let id = create(&app, 0).await["id"].as_str().unwrap().to_string();
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/trials/0/steps/5"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/trials/1/steps/0"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/trials/0/steps/1"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "checkpoint 0 must be answered first");
    assert_eq!(respond(&app, &id, 0, 0, 40).await.0, StatusCode::OK);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/trials/0/steps/1"), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn responses_are_validated() {
    let app = AppState::new(synthetic_suite(3, 20), Store::in_memory());
    let id = create(&app, 0).await["id"].as_str().unwrap().to_string();
    assert_eq!(respond(&app, &id, 0, 0, 101).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(respond(&app, &id, 0, 0, -1).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(respond(&app, &id, 0, 1, 50).await.0, StatusCode::CONFLICT);
    let (s, ack) = respond(&app, &id, 0, 0, 0).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["stored"], true);
    let (s, ack) = respond(&app, &id, 0, 0, 0).await;
    assert_eq!(s, StatusCode::OK, "identical retry is acknowledged");
    assert_eq!(ack["stored"], false);
    assert_eq!(respond(&app, &id, 0, 0, 10).await.0, StatusCode::CONFLICT);
    assert_eq!(respond(&app, &id, 0, 1, 10).await.0, StatusCode::CONFLICT, "checkpoint 1 not reached");
    let (s, _) = call(&app, "GET", "/sessions/nope/export", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_trial_flow_and_export() {
    let app = AppState::new(real_suite(), Store::in_memory());
    let info = create(&app, 1).await;
    let id = info["id"].as_str().unwrap().to_string();
    let hab = info["habituation"].as_u64().unwrap() as usize;
    assert_eq!(hab, 2);
    for t in 0..hab {
        assert_eq!(complete_trial(&app, &id, t, 50).await, 11);
    }
    let (_, e) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(e["records"].as_array().unwrap().len(), 0, "habituation is not exported");
    assert_eq!(complete_trial(&app, &id, hab, 25).await, 11);
    let (s, e) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let records = e["records"].as_array().unwrap();
    assert_eq!(records.len(), 11);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["checkpoint"], i);
        assert_eq!(r["p_a"].as_f64().unwrap(), 0.75);
    }
    assert_eq!(e["partial"], true, "one scored trial is unfinished");
    assert_eq!(e["curve"]["accuracy"].as_array().unwrap().len(), 11);
}

#[tokio::test]
async fn payloads_hide_missions() {
    let app = AppState::new(real_suite(), Store::in_memory());
    let id = create(&app, 2).await["id"].as_str().unwrap().to_string();
    let (_, p) = call(&app, "GET", &format!("/sessions/{id}/trials/0/steps/0"), None).await;
    let text = p.to_string();
    for m in all_missions() {
        assert!(!text.contains(&m.name), "payload leaks {}", m.name);
    }
    assert!(p["agent_a"]["data"].is_array());
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("study.jsonl");
    let suite = synthetic_suite(4, 10);
    let app = AppState::new(suite.clone(), Store::open(&log).unwrap());
    let id = create(&app, 3).await["id"].as_str().unwrap().to_string();
    assert_eq!(complete_trial(&app, &id, 0, 30).await, 11);
    respond(&app, &id, 1, 0, 60).await;
    let before = app.store.lock().unwrap().sessions[&id].clone();
    drop(app);

    let app = AppState::new(suite, Store::open(&log).unwrap());
    let after = app.store.lock().unwrap().sessions[&id].clone();
    assert_eq!(before, after);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/trials/1/steps/1"), None).await;
    assert_eq!(s, StatusCode::OK, "cursor resumes in trial 1");
    let (_, e1) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    let (_, e2) = call(&app, "GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(e1, e2);
}
