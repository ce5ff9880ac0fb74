#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use iterec_core::agent::PolicyKind;
use iterec_core::pipeline::Profile;
use iterec_service::artifacts::Workdir;
use iterec_service::session::{Engine, SessionConfig, SessionManager};
use iterec_service::stages;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

/// A tiny profile trained through the agent stage.
pub fn trained_workdir(seed: u64) -> (TempDir, Workdir) {
    let dir = tempfile::tempdir().unwrap();
    let wd = Workdir::new(dir.path());
    stages::synth(&wd, &Profile::tiny(), seed).unwrap();
    stages::preprocess(&wd, None, seed).unwrap();
    stages::train_proxy(&wd, None, seed).unwrap();
    stages::train_agent(&wd, None, seed, &[PolicyKind::Rl]).unwrap();
    (dir, wd)
}

pub fn manager(wd: &Workdir, cfg: Option<SessionConfig>) -> Arc<SessionManager> {
    let engine = Engine::from_workdir(wd, true).unwrap();
    let cfg = cfg.unwrap_or_else(|| SessionConfig::new(wd.profile().unwrap().agent.episode_len));
    Arc::new(SessionManager::new(Arc::new(engine), cfg, None))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}
