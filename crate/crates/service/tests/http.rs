mod common;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use common::{call, manager, trained_workdir};
use iterec_core::agent::{run_episode, EpisodeLog, StepRecord, StopRule};
use iterec_core::data::Split;
use iterec_service::api::router;
use iterec_service::session::{Engine, Journal, SessionConfig, SessionManager};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn offline(engine: &Engine, user: &str, top: &str, n: usize) -> EpisodeLog {
    let mut src = engine.scorer.as_ref().unwrap();
    run_episode(
        &engine.policy,
        &engine.catalog,
        &engine.dataset,
        &mut src,
        user,
        top,
        n,
        StopRule::interactive(),
        &mut ChaCha8Rng::seed_from_u64(99),
    )
    .unwrap()
}

fn history(view: &Value) -> Vec<StepRecord> {
    serde_json::from_value(view["history"].clone()).unwrap()
}

fn assert_bitwise(a: &[StepRecord], b: &[StepRecord]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!((x.step, x.action, &x.bottom_id), (y.step, y.action, &y.bottom_id));
        for (u, v) in [(x.raw_score, y.raw_score), (x.normalized_score, y.normalized_score), (x.reward, y.reward)] {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[tokio::test]
async fn proxy_sessions_replay_offline_episodes_bit_for_bit() {
    let (_dir, wd) = trained_workdir(3);
    let m = manager(&wd, None);
    let app = router(m.clone());
    let reference = Engine::from_workdir(&wd, true).unwrap();
    let n = m.config().max_steps;
    for (user, top) in reference.dataset.episode_keys(Split::Test).into_iter().take(5) {
        let (s, created) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "proxy", "user_tag": user}))).await;
        assert_eq!(s, StatusCode::CREATED, "{created}");
        let id = created["session_id"].as_str().unwrap().to_owned();
        assert_eq!(created["step"], 1);
        let mut proposed = vec![created["bottom"]["id"].as_str().unwrap().to_owned()];
        loop {
            let (s, r) = call(&app, Method::POST, &format!("/sessions/{id}/feedback"), Some(json!({}))).await;
            assert_eq!(s, StatusCode::OK, "{r}");
            if r["done"].as_bool().unwrap() {
                assert!(r["bottom"].is_null());
                break;
            }
            proposed.push(r["bottom"]["id"].as_str().unwrap().to_owned());
        }
        let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        let want = offline(&reference, &user, &top, n);
        let got = history(&view);
        assert_bitwise(&got, &want.steps);
        assert_eq!(view["history_summary"]["satisfied"], want.satisfied);
        let offered: Vec<&str> = want.steps.iter().map(|s| s.bottom_id.as_str()).collect();
        assert_eq!(proposed, offered);
    }
}

#[tokio::test]
async fn interleaved_sessions_stay_isolated() {
    let (_dir, wd) = trained_workdir(4);
    let m = manager(&wd, None);
    let app = router(m.clone());
    let reference = Engine::from_workdir(&wd, true).unwrap();
    let keys: Vec<(String, String)> = reference.dataset.episode_keys(Split::Train).into_iter().take(4).collect();
    let mut ids = Vec::new();
    for (user, top) in &keys {
        let (_, c) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "proxy", "user_tag": user}))).await;
        ids.push(c["session_id"].as_str().unwrap().to_owned());
    }
    let mut open: Vec<bool> = vec![true; ids.len()];
    while open.iter().any(|&o| o) {
        for (i, id) in ids.iter().enumerate().rev() {
            if open[i] {
                let (s, r) = call(&app, Method::POST, &format!("/sessions/{id}/feedback"), Some(json!({}))).await;
                assert_eq!(s, StatusCode::OK);
                open[i] = !r["done"].as_bool().unwrap();
            }
        }
    }
    for ((user, top), id) in keys.iter().zip(&ids) {
        let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(view["top_id"], top.as_str());
        assert_bitwise(&history(&view), &offline(&reference, user, top, m.config().max_steps).steps);
    }
}

#[tokio::test]
async fn human_sessions_validate_scores_and_finish() {
    let (_dir, wd) = trained_workdir(5);
    let app = router(manager(&wd, None));
    let top = wd.dataset().unwrap().tops[0].clone();
    let (s, c) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "human"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = c["session_id"].as_str().unwrap();
    let fb = format!("/sessions/{id}/feedback");
    for bad in [json!({"score": 1.5}), json!({"score": -0.1}), json!({})] {
        let (s, e) = call(&app, Method::POST, &fb, Some(bad)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_eq!(e["code"], "invalid_score");
        assert!(e["message"].is_string());
    }
    let (s, r) = call(&app, Method::POST, &fb, Some(json!({"score": 0.25}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["done"], false);
    assert_eq!(r["step"], 2);
    assert_eq!(r["history_summary"]["steps"], 1);
    assert_eq!(r["history_summary"]["total_reward"], -0.25);
    let (_, r) = call(&app, Method::POST, &fb, Some(json!({"score": 1.0}))).await;
    assert_eq!(r["done"], true);
    assert_eq!(r["history_summary"]["satisfied"], true);
    assert_eq!(r["history_summary"]["total_reward"], 0.5);
    let (s, e) = call(&app, Method::POST, &fb, Some(json!({"score": 0.5}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["code"], "no_pending");
    let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["done"], true);
    assert!(view["pending"].is_null());
    assert_eq!(view["history"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn idempotency_keys_apply_feedback_once() {
    let (_dir, wd) = trained_workdir(6);
    let app = router(manager(&wd, None));
    let top = wd.dataset().unwrap().tops[1].clone();
    let (_, c) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "human"}))).await;
    let fb = format!("/sessions/{}/feedback", c["session_id"].as_str().unwrap());
    let body = json!({"score": 0.4, "idempotency_key": "k1"});
    let (_, first) = call(&app, Method::POST, &fb, Some(body.clone())).await;
    let (s, again) = call(&app, Method::POST, &fb, Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first, again);
    let (_, second) = call(&app, Method::POST, &fb, Some(json!({"score": 0.4, "idempotency_key": "k2"}))).await;
    assert_eq!(second["history_summary"]["steps"], 2);
    assert_ne!(second["bottom"], first["bottom"]);
}

#[tokio::test]
async fn errors_carry_codes_and_statuses() {
    let (_dir, wd) = trained_workdir(7);
    let app = router(manager(&wd, None));
    let top = wd.dataset().unwrap().tops[0].clone();
    let cases = [
        (Method::POST, "/sessions".to_owned(), Some(json!({"top_id": "nope", "mode": "human"})), StatusCode::NOT_FOUND, "unknown_top"),
        (Method::POST, "/sessions".to_owned(), Some(json!({"top_id": top, "mode": "proxy"})), StatusCode::BAD_REQUEST, "bad_request"),
        (Method::POST, "/sessions".to_owned(), Some(json!({"top": 1})), StatusCode::BAD_REQUEST, "bad_request"),
        (Method::GET, "/sessions/missing".to_owned(), None, StatusCode::NOT_FOUND, "unknown_session"),
        (Method::POST, "/sessions/missing/feedback".to_owned(), Some(json!({"score": 0.5})), StatusCode::NOT_FOUND, "unknown_session"),
        (Method::GET, "/catalog/tops?limit=0".to_owned(), None, StatusCode::BAD_REQUEST, "bad_request"),
        (Method::GET, "/catalog/tops?limit=abc".to_owned(), None, StatusCode::BAD_REQUEST, "bad_request"),
    ];
    for (method, uri, body, status, code) in cases {
        let (s, e) = call(&app, method, &uri, body).await;
        assert_eq!(s, status, "{uri}: {e}");
        assert_eq!(e["code"], code, "{uri}");
        assert!(!e["message"].as_str().unwrap().is_empty());
    }
    let (_, c) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "proxy", "user_tag": "u0"}))).await;
    let (s, e) = call(
        &app,
        Method::POST,
        &format!("/sessions/{}/feedback", c["session_id"].as_str().unwrap()),
        Some(json!({"score": 0.5})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "bad_request");
}

#[tokio::test]
async fn capacity_counts_unfinished_sessions() {
    let (_dir, wd) = trained_workdir(8);
    let cfg = SessionConfig {
        capacity: 2,
        ..SessionConfig::new(3)
    };
    let app = router(manager(&wd, Some(cfg)));
    let top = wd.dataset().unwrap().tops[0].clone();
    let create = json!({"top_id": top, "mode": "human"});
    let (_, a) = call(&app, Method::POST, "/sessions", Some(create.clone())).await;
    call(&app, Method::POST, "/sessions", Some(create.clone())).await;
    let (s, e) = call(&app, Method::POST, "/sessions", Some(create.clone())).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(e["code"], "capacity");
    let fb = format!("/sessions/{}/feedback", a["session_id"].as_str().unwrap());
    call(&app, Method::POST, &fb, Some(json!({"score": 1.0}))).await;
    let (s, _) = call(&app, Method::POST, "/sessions", Some(create)).await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, h) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(h["status"], "ok");
    assert_eq!(h["active_sessions"], 2);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let (_dir, wd) = trained_workdir(9);
    let now = Arc::new(Mutex::new(Instant::now()));
    let clock = {
        let now = Arc::clone(&now);
        Arc::new(move || *now.lock().unwrap())
    };
    let cfg = SessionConfig {
        ttl: Duration::from_secs(60),
        ..SessionConfig::new(3)
    };
    let m = Arc::new(SessionManager::with_clock(
        Arc::new(Engine::from_workdir(&wd, false).unwrap()),
        cfg,
        None,
        clock,
    ));
    let app = router(m.clone());
    let top = wd.dataset().unwrap().tops[0].clone();
    let (_, a) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "human"}))).await;
    let (_, b) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "human"}))).await;
    *now.lock().unwrap() += Duration::from_secs(45);
    let b_uri = format!("/sessions/{}/feedback", b["session_id"].as_str().unwrap());
    let (s, _) = call(&app, Method::POST, &b_uri, Some(json!({"score": 0.3}))).await;
    assert_eq!(s, StatusCode::OK);
    *now.lock().unwrap() += Duration::from_secs(30);
    let (s, e) = call(&app, Method::GET, &format!("/sessions/{}", a["session_id"].as_str().unwrap()), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["code"], "unknown_session");
    assert_eq!(m.len(), 1, "the recently used session survives");
    *now.lock().unwrap() += Duration::from_secs(60);
    assert_eq!(m.evict_expired().unwrap(), 1);
    assert!(m.is_empty());
}

#[tokio::test]
async fn proxy_mode_can_be_disabled() {
    let (_dir, wd) = trained_workdir(10);
    let cfg = SessionConfig::new(3);
    let m = Arc::new(SessionManager::new(Arc::new(Engine::from_workdir(&wd, false).unwrap()), cfg, None));
    let app = router(m);
    let top = wd.dataset().unwrap().tops[0].clone();
    let (s, e) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "proxy", "user_tag": "u"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["code"], "bad_request");
    let (_, h) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(h["proxy_mode"], false);
}

#[tokio::test]
async fn catalog_pages_cover_every_top_once() {
    let (_dir, wd) = trained_workdir(11);
    let app = router(manager(&wd, None));
    let tops = wd.dataset().unwrap().tops;
    let mut seen = Vec::new();
    let mut offset = 0;
    loop {
        let (s, page) = call(&app, Method::GET, &format!("/catalog/tops?offset={offset}&limit=5"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(page["total"], tops.len());
        let items = page["items"].as_array().unwrap();
        if items.is_empty() {
            break;
        }
        assert!(items.len() <= 5);
        for it in items {
            seen.push(it["id"].as_str().unwrap().to_owned());
            assert!(it["swatch"].as_str().unwrap().starts_with('#'));
        }
        offset += items.len();
    }
    assert_eq!(seen, tops);
    let (_, page) = call(&app, Method::GET, "/catalog/tops", None).await;
    assert_eq!(page["limit"], 50);
    assert_eq!(page["offset"], 0);
}

#[tokio::test]
async fn journal_records_every_event() {
    let (dir, wd) = trained_workdir(12);
    let path = dir.path().join("journal/sessions.jsonl");
    let engine = Arc::new(Engine::from_workdir(&wd, true).unwrap());
    let m = Arc::new(SessionManager::new(engine, SessionConfig::new(3), Some(Journal::open(&path).unwrap())));
    let app = router(m);
    let top = wd.dataset().unwrap().tops[0].clone();
    let (_, c) = call(&app, Method::POST, "/sessions", Some(json!({"top_id": top, "mode": "human"}))).await;
    let fb = format!("/sessions/{}/feedback", c["session_id"].as_str().unwrap());
    for p in [0.25, 0.5, 0.75] {
        call(&app, Method::POST, &fb, Some(json!({"score": p}))).await;
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let events: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(
        kinds,
        ["created", "proposed", "feedback", "proposed", "feedback", "proposed", "feedback"]
    );
    assert!(events.iter().all(|e| e["session_id"] == c["session_id"] && e["ts_ms"].is_u64()));
    assert_eq!(events[6]["done"], true);
    assert_eq!(events[6]["normalized_score"], 0.75);
}
