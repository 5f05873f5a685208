mod support;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use forge_judge_core::repo::{
    sign_payload, ActivityConfig, ActivityRegistry, ContentService, EngineDefaults, GitCliFetcher, LocalFetcher,
    RepoSpec, SyncError, WebhookError,
};
use serde_json::{json, Value};
use support::{judges, write_exercise, write_json};

fn scan_defaults() -> EngineDefaults {
    EngineDefaults::default()
}

fn service(root: &Path, registry: Arc<ActivityRegistry>) -> ContentService {
    ContentService::new(
        vec![RepoSpec {
            id: "fixture".into(),
            source: root.to_string_lossy().into_owned(),
            default_branch: "main".into(),
            secret: "hook-secret".into(),
        }],
        Arc::new(LocalFetcher),
        registry,
        Arc::new(judges()),
        scan_defaults(),
    )
}

#[test]
fn nested_defaults_match_the_reference_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let chains = support::write_chain_repo(root, 0xc0f1, 200);
    let registry = Arc::new(ActivityRegistry::default());
    let svc = service(root, Arc::clone(&registry));
    let report = svc.sync("fixture").unwrap();
    let seen = support::compare_with_reference(&chains, &registry.all(), &report, &scan_defaults()).unwrap();
    assert_eq!(seen.values().sum::<usize>(), 200);
    // The generator reaches every outcome.
    assert!(seen.len() == 3 && seen["exercise"] > 100, "{seen:?}");
    assert_eq!(report.added.len(), registry.all().len());
}

#[test]
fn second_sync_is_an_empty_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(&root.join("dirconfig.json"), &json!({"judge": "io"}));
    write_exercise(&root.join("a/ex1"), &ActivityConfig::default());
    write_exercise(&root.join("a/ex2"), &ActivityConfig::default());
    let registry = Arc::new(ActivityRegistry::default());
    let svc = service(root, Arc::clone(&registry));
    let first = svc.sync("fixture").unwrap();
    assert_eq!(first.added.len(), 2);
    let second = svc.sync("fixture").unwrap();
    assert!(second.is_empty_diff(), "{second:?}");

    fs::write(root.join("a/ex1/description/description.en.md"), "# Changed\n").unwrap();
    fs::remove_dir_all(root.join("a/ex2")).unwrap();
    let third = svc.sync("fixture").unwrap();
    assert_eq!((third.added.len(), third.updated.len(), third.removed.len()), (0, 1, 1));
}

#[test]
fn bad_signature_mutates_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(&root.join("dirconfig.json"), &json!({"judge": "io"}));
    write_exercise(&root.join("ex1"), &ActivityConfig::default());
    let registry = Arc::new(ActivityRegistry::default());
    let svc = service(root, Arc::clone(&registry));
    svc.sync("fixture").unwrap();
    let before = registry.snapshot("fixture");

    // New content on disk that a successful hook would publish.
    write_exercise(&root.join("ex2"), &ActivityConfig::default());
    let payload = br#"{"ref":"refs/heads/main"}"#;
    for sig in [sign_payload(b"wrong-secret", payload), "sha256=00".into(), String::new()] {
        let err = svc.handle_webhook("fixture", payload, &sig).unwrap_err();
        assert!(matches!(err, SyncError::Webhook(WebhookError::BadSignature)));
    }
    assert_eq!(*registry.snapshot("fixture"), *before);

    let good = sign_payload(b"hook-secret", payload);
    let other_branch = br#"{"ref":"refs/heads/feature"}"#;
    let skipped = svc
        .handle_webhook("fixture", other_branch, &sign_payload(b"hook-secret", other_branch))
        .unwrap();
    assert!(!skipped.performed);
    assert_eq!(*registry.snapshot("fixture"), *before);
    let report = svc.handle_webhook("fixture", payload, &good).unwrap();
    assert_eq!(report.added.len(), 1);
}

#[test]
fn malformed_entries_become_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    write_json(&root.join("dirconfig.json"), &json!({"judge": "io"}));
    write_exercise(&root.join("good"), &ActivityConfig::default());
    fs::create_dir_all(root.join("broken")).unwrap();
    fs::write(root.join("broken/config.json"), "{not json").unwrap();
    write_exercise(&root.join("unknown_key"), &ActivityConfig::default());
    write_json(&root.join("unknown_key/config.json"), &json!({"tiem_limit": 3}));
    write_exercise(&root.join("no_description"), &ActivityConfig::default());
    fs::remove_dir_all(root.join("no_description/description")).unwrap();

    let registry = Arc::new(ActivityRegistry::default());
    let report = service(root, Arc::clone(&registry)).sync("fixture").unwrap();
    let names: BTreeSet<String> = registry.all().iter().map(|a| a.rel_path.clone()).collect();
    assert_eq!(names, BTreeSet::from(["good".to_string()]));
    assert_eq!(report.diagnostics.len(), 3, "{:?}", report.diagnostics);
}

fn git(dir: &Path, args: &[&str]) {
    let status = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["-c", "user.name=t", "-c", "user.email=t@example.org", "-c", "commit.gpgsign=false"])
        .args(args)
        .output()
        .unwrap();
    assert!(status.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn git_fetcher_follows_the_default_branch() {
    if Command::new("git").arg("--version").output().is_err() {
        eprintln!("git not installed; skipped");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let origin = tmp.path().join("origin");
    fs::create_dir_all(&origin).unwrap();
    git(&origin, &["init", "--quiet", "-b", "main"]);
    write_json(&origin.join("dirconfig.json"), &json!({"judge": "io"}));
    write_exercise(&origin.join("ex1"), &ActivityConfig::default());
    git(&origin, &["add", "-A"]);
    git(&origin, &["commit", "--quiet", "-m", "first"]);

    let registry = Arc::new(ActivityRegistry::default());
    let svc = ContentService::new(
        vec![RepoSpec {
            id: "remote".into(),
            source: origin.to_string_lossy().into_owned(),
            default_branch: "main".into(),
            secret: "s".into(),
        }],
        Arc::new(GitCliFetcher {
            checkout_root: tmp.path().join("checkouts"),
        }),
        Arc::clone(&registry),
        Arc::new(judges()),
        scan_defaults(),
    );
    assert_eq!(svc.sync("remote").unwrap().added.len(), 1);

    write_exercise(&origin.join("ex2"), &ActivityConfig::default());
    git(&origin, &["add", "-A"]);
    git(&origin, &["commit", "--quiet", "-m", "second"]);
    let report = svc.sync("remote").unwrap();
    assert_eq!(report.added.len(), 1);
    assert!(svc.sync("remote").unwrap().is_empty_diff());
    let value: Value = serde_json::to_value(&*registry.all()[0]).unwrap();
    assert_eq!(value["repo_id"], "remote");
}
