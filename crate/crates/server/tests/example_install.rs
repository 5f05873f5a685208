//! The configuration, judge bundle and exercises shipped in the repository.

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use forge_judge::services::Services;
use forge_judge::settings::Settings;
use forge_judge_core::feedback::Status;
use forge_judge_core::repo::ActivityId;
use forge_judge_core::scheduler::{Lifecycle, NewSubmission};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn example_config_loads() {
    let settings = Settings::load(&root().join("forge-judge.example.toml")).unwrap();
    assert_eq!(settings.repos.len(), 1);
    assert_eq!(settings.courses[0].series[0].activities[0], ActivityId::derive("sample", "week1/squares"));
    assert_eq!(settings.engine_defaults().output_limit, 1 << 20);
    assert_eq!(settings.language_of("alice"), "nl");
}

#[test]
fn shipped_bundle_assesses_the_sample_exercises() {
    let tmp = tempfile::tempdir().unwrap();
    fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o755)).unwrap();
    // The bundle as shipped, with the judge binary installed next to it.
    let judges = tmp.path().join("judges");
    let bundle = judges.join("io");
    fs::create_dir_all(&bundle).unwrap();
    for f in ["run", "judge.json"] {
        fs::copy(root().join("judges/io").join(f), bundle.join(f)).unwrap();
    }
    fs::copy(env!("CARGO_BIN_EXE_forge-io-judge"), bundle.join("forge-io-judge")).unwrap();
    for d in [&judges, &bundle] {
        fs::set_permissions(d, fs::Permissions::from_mode(0o755)).unwrap();
    }

    let mut settings = Settings::load(&root().join("forge-judge.example.toml")).unwrap();
    settings.data_dir = tmp.path().join("data");
    settings.judges_dir = judges;
    let services = Services::build(settings).unwrap();
    let report = services.content.sync("sample").unwrap();
    assert!(report.diagnostics.is_empty(), "{:?}", report.diagnostics);
    assert_eq!(report.added.len(), 4);

    let solutions = [
        ("week1/squares", "read n; echo $((n * n))\n", Status::Correct),
        ("week1/greet", "read n; echo \"Hello, $n!\"\n", Status::Correct),
        ("week1/countdown", "i=$1; while [ $i -gt 0 ]; do echo $i; i=$((i - 1)); done\n", Status::Correct),
        ("week1/countdown", "echo 3 2\n", Status::Wrong),
    ];
    for (rel, code, _) in &solutions {
        services
            .scheduler
            .enqueue(NewSubmission {
                user_id: "alice".into(),
                course_id: "prog".into(),
                series_id: "week1".into(),
                activity_id: ActivityId::derive("sample", rel),
                natural_language: "nl".into(),
                code: code.as_bytes().to_vec(),
            })
            .unwrap();
    }
    assert_eq!(services.scheduler.drain("example").unwrap(), solutions.len());
    let records = services.scheduler.store().list(&Default::default()).unwrap();
    for (r, (rel, _, expected)) in records.iter().zip(&solutions) {
        assert_eq!(r.lifecycle, Lifecycle::Assessed);
        assert_eq!(r.result_status, Some(*expected), "{rel}: {:?}", r.feedback);
    }
}
