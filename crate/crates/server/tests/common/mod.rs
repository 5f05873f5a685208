//! A small installation on disk: the I/O judge, a local exercise
//! repository and one course.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, Response, StatusCode};
use axum::Router;
use forge_judge::services::Services;
use forge_judge::settings::Settings;
use forge_judge::tokens::{parse_scopes, Scope};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const REPO: &str = "fixture";
pub const SECRET: &str = "hook-secret";

pub fn squares_suite() -> Value {
    json!({
        "run_command": ["/bin/sh", "{submission}"],
        "tabs": [{
            "name": "Squares",
            "contexts": [
                {"description": "small", "cases": [
                    {"stdin": "3\n", "expected_stdout": "9\n"},
                    {"stdin": "4\n", "expected_stdout": "16\n"}
                ]},
                {"cases": [{"stdin": "12\n", "expected_stdout": "144\n"}]}
            ]
        }]
    })
}

fn greet_suite() -> Value {
    json!({
        "run_command": ["/bin/sh", "{submission}"],
        "tabs": [{"name": "Greeting", "contexts": [{"cases": [
            {"stdin": "Ada\n", "expected_stdout": "Hello, Ada!", "match": "trimmed"}
        ]}]}]
    })
}

fn countdown_suite() -> Value {
    json!({
        "run_command": ["/bin/sh", "{submission}", "3"],
        "tabs": [{"contexts": [{"cases": [{"expected_stdout": "3 2 1", "match": "tokens"}]}]}]
    })
}

fn open(path: &Path) {
    let mode = if path.is_dir() { 0o755 } else { 0o644 };
    fs::set_permissions(path, fs::Permissions::from_mode(mode)).unwrap();
}

fn write(path: &Path, bytes: &[u8]) {
    let mut missing = Vec::new();
    let mut dir = path.parent();
    while let Some(d) = dir.filter(|d| !d.exists()) {
        missing.push(d.to_path_buf());
        dir = d.parent();
    }
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    for d in missing {
        open(&d);
    }
    fs::write(path, bytes).unwrap();
    open(path);
}

fn exercise(repo: &Path, rel: &str, config: Value, suite: Value) {
    let dir = repo.join(rel);
    write(&dir.join("config.json"), &serde_json::to_vec_pretty(&config).unwrap());
    write(&dir.join("description/description.en.md"), format!("# {rel}\n").as_bytes());
    write(&dir.join("evaluation/suite.json"), &serde_json::to_vec_pretty(&suite).unwrap());
}

/// Three exercises under one directory config selecting the I/O judge.
pub fn write_repo(repo: &Path) {
    write(&repo.join("dirconfig.json"), br#"{"judge": "io", "programming_language": "sh"}"#);
    exercise(repo, "week1/squares", json!({"labels": ["arithmetic"]}), squares_suite());
    exercise(repo, "week1/greet", json!({"time_limit": 5}), greet_suite());
    exercise(repo, "week1/countdown", json!({"time_limit": 2}), countdown_suite());
    write(&repo.join("notes/config.json"), br#"{"type": "reading"}"#);
    write(&repo.join("notes/description/description.en.md"), b"Read me.\n");
}

/// Installs the built-in judge binary as a judge bundle.
pub fn write_judges(judges: &Path) {
    let dir = judges.join("io");
    fs::create_dir_all(&dir).unwrap();
    fs::copy(env!("CARGO_BIN_EXE_forge-io-judge"), dir.join("run")).unwrap();
    fs::set_permissions(dir.join("run"), fs::Permissions::from_mode(0o755)).unwrap();
    write(&dir.join("judge.json"), br#"{"feedback_mode": "strict"}"#);
    open(judges);
    open(&dir);
}

pub struct Install {
    pub dir: tempfile::TempDir,
    pub settings: Settings,
}

impl Install {
    pub fn repo_dir(&self) -> std::path::PathBuf {
        self.dir.path().join("repo")
    }
}

pub fn install(extra: &str) -> Install {
    let dir = tempfile::tempdir().unwrap();
    open(dir.path());
    write_repo(&dir.path().join("repo"));
    write_judges(&dir.path().join("judges"));
    let config = format!(
        r#"
data_dir = "data"
judges_dir = "judges"
pseudonym_key = "pseudonyms"
{extra}

[[repos]]
id = "{REPO}"
source = "repo"
secret = "{SECRET}"
fetch = "local"

[[courses]]
id = "prog"
name = "Programming"
timezone = "Europe/Brussels"

[[courses.series]]
id = "w1"
name = "Week 1"
deadline = "2030-10-01T21:59:00Z"
activities = ["{REPO}:week1/squares", "{REPO}:week1/greet", "{REPO}:week1/countdown"]

[[courses.series]]
id = "bonus"
name = "Bonus"
visible = false
access_token = "open-sesame"
activities = ["{REPO}:week1/squares"]

[[courses]]
id = "drafts"
name = "Drafts"
visibility = "hidden"

[users.alice]
language = "nl"
"#
    );
    let path = dir.path().join("forge-judge.toml");
    fs::write(&path, config).unwrap();
    let settings = Settings::load(&path).unwrap();
    Install { dir, settings }
}

pub fn services(install: &Install) -> Services {
    let services = Services::build(install.settings.clone()).unwrap();
    services.sync_all();
    services
}

pub fn token(services: &Services, user: &str, scopes: &str) -> String {
    let scopes: BTreeSet<Scope> = parse_scopes(scopes).unwrap();
    services.tokens.create(user, scopes).unwrap().header_value()
}

pub fn activity_id(rel: &str) -> String {
    forge_judge_core::repo::ActivityId::derive(REPO, rel).0
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Response<()>, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    let bytes = body.collect().await.unwrap().to_bytes().to_vec();
    (parts.status, Response::from_parts(parts, ()), bytes)
}

pub fn get(uri: &str, auth: Option<&str>) -> Request<Body> {
    let mut b = Request::get(uri);
    if let Some(a) = auth {
        b = b.header("authorization", a);
    }
    b.body(Body::empty()).unwrap()
}

pub fn post_json(uri: &str, auth: Option<&str>, body: &Value) -> Request<Body> {
    let mut b = Request::post(uri).header("content-type", "application/json");
    if let Some(a) = auth {
        b = b.header("authorization", a);
    }
    b.body(Body::from(serde_json::to_vec(body).unwrap())).unwrap()
}

pub fn submission(rel: &str, code: &str) -> Value {
    json!({"activity_id": activity_id(rel), "course_id": "prog", "series_id": "w1", "code": code})
}

/// Polls a submission until it is assessed.
pub async fn wait_assessed(app: &Router, id: u64, auth: &str, limit: Duration) -> Value {
    let start = Instant::now();
    loop {
        let (status, _, body) = send(app, get(&format!("/api/submissions/{id}"), Some(auth))).await;
        assert_eq!(status, StatusCode::OK);
        let doc: Value = serde_json::from_slice(&body).unwrap();
        if doc["lifecycle"] == "assessed" {
            return doc;
        }
        assert!(start.elapsed() < limit, "submission {id} not assessed within {limit:?}: {doc}");
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
}
