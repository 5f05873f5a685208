//! Independent reference implementations and generators shared by the
//! integration tests. Nothing here calls into the code it checks.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use chrono_tz::Tz;
use forge_judge_core::feedback::{Context, FeedbackTree, Message, MessageFormat, Status, Tab, Test, TestCase, Visibility};
use forge_judge_core::judge::{JudgeBundle, JudgeRegistry};
use forge_judge_core::repo::{Access, Activity, ActivityConfig, ActivityId, ActivityKind, EngineDefaults, SyncReport};
use forge_judge_core::sandbox::ImageRef;
use forge_judge_core::scheduler::{Lifecycle, SubmissionId, SubmissionRecord};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

/// Insert/delete edit distance by the textbook quadratic DP.
pub fn indel_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1]
            } else {
                1 + dp[i - 1][j].min(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

/// Severity ranking written out by hand, mildest first.
pub const SEVERITY_TABLE: [&str; 8] = [
    "correct",
    "wrong",
    "output-limit-exceeded",
    "time-limit-exceeded",
    "memory-limit-exceeded",
    "runtime-error",
    "compilation-error",
    "internal-error",
];

pub fn table_rank(name: &str) -> usize {
    SEVERITY_TABLE.iter().position(|s| *s == name).expect("known status")
}

pub fn table_worse<'a>(a: &'a str, b: &'a str) -> &'a str {
    if table_rank(a) >= table_rank(b) {
        a
    } else {
        b
    }
}

/// Field-by-field fold over the JSON form of a configuration chain: for each
/// key, the value from the deepest directory that sets it, then defaults.
pub fn reference_config(
    chain: &[ActivityConfig],
    judge_default_images: &BTreeMap<String, String>,
    defaults: &Value,
) -> Option<Value> {
    let mut merged: Map<String, Value> = Map::new();
    for c in chain {
        let Value::Object(m) = serde_json::to_value(c).unwrap() else {
            unreachable!()
        };
        for (k, v) in m {
            merged.insert(k, v);
        }
    }
    let judge = merged.get("judge")?.as_str()?.to_string();
    let default_image = judge_default_images.get(&judge)?;
    let get = |k: &str| merged.get(k).cloned().unwrap_or_else(|| defaults[k].clone());
    for limit in ["time_limit", "memory_limit", "output_limit"] {
        if get(limit) == json!(0) {
            return None;
        }
    }
    Some(json!({
        "programming_language": get("programming_language"),
        "judge": judge,
        "image": merged.get("image").cloned().unwrap_or_else(|| json!(default_image)),
        "time_limit": get("time_limit"),
        "memory_limit": get("memory_limit"),
        "output_limit": get("output_limit"),
        "network_allowed": get("network_allowed"),
        "boilerplate": merged.get("boilerplate").cloned().unwrap_or(Value::Null),
        "labels": merged.get("labels").cloned().unwrap_or_else(|| json!([])),
    }))
}

/// Exhaustive scan: for each (user, activity) pair, look at every submission
/// and keep the one with the greatest (millisecond timestamp, id) strictly
/// before the deadline.
pub fn brute_force_selection(
    series_id: &str,
    activities: &[ActivityId],
    subs: &[SubmissionRecord],
    deadline: Option<DateTime<Utc>>,
) -> BTreeMap<(String, ActivityId), SubmissionId> {
    let mut users: Vec<&str> = subs.iter().map(|s| s.user_id.as_str()).collect();
    users.sort();
    users.dedup();
    let mut out = BTreeMap::new();
    for user in users {
        for act in activities {
            let mut chosen: Option<&SubmissionRecord> = None;
            for s in subs {
                if s.user_id != user || &s.activity_id != act || s.series_id != series_id {
                    continue;
                }
                if let Some(d) = deadline {
                    if s.submitted_at.timestamp_millis() >= d.timestamp_millis() {
                        continue;
                    }
                }
                let better = match chosen {
                    None => true,
                    Some(c) => {
                        let (a, b) = (s.submitted_at.timestamp_millis(), c.submitted_at.timestamp_millis());
                        a > b || (a == b && s.id.0 > c.id.0)
                    }
                };
                if better {
                    chosen = Some(s);
                }
            }
            if let Some(c) = chosen {
                out.insert((user.to_string(), act.clone()), c.id);
            }
        }
    }
    out
}

pub fn record(id: u64, user: &str, series: &str, activity: &str, at: DateTime<Utc>, status: Option<Status>) -> SubmissionRecord {
    SubmissionRecord {
        id: SubmissionId(id),
        user_id: user.into(),
        course_id: "course".into(),
        series_id: series.into(),
        activity_id: ActivityId(activity.into()),
        natural_language: "en".into(),
        code: Vec::new(),
        submitted_at: at,
        lifecycle: if status.is_some() {
            Lifecycle::Assessed
        } else {
            Lifecycle::Queued
        },
        result_status: status,
        feedback: status.map(|s| FeedbackTree::verdict(s, vec![])),
        attempt_count: 1,
        enqueued_at: Some(at),
        worker_id: None,
        started_at: None,
        assessed_at: None,
        stall_after: Duration::from_secs(90),
    }
}

const TEXT_POOL: &[&str] = &[
    "",
    "42",
    "hello\nworld",
    "tab\there",
    "quote \" and backslash \\",
    "naïve café",
    "日本語",
    "🎉",
    "<b>bold</b>",
    "\u{0007}bell",
    "trailing space ",
];

fn text(rng: &mut StdRng) -> String {
    let mut s = String::new();
    for _ in 0..rng.random_range(0..3) {
        s.push_str(TEXT_POOL.choose(rng).unwrap());
    }
    s
}

fn opt_text(rng: &mut StdRng) -> Option<String> {
    rng.random_bool(0.5).then(|| text(rng))
}

fn messages(rng: &mut StdRng) -> Vec<Message> {
    (0..rng.random_range(0..3))
        .map(|_| Message {
            format: *[MessageFormat::Plain, MessageFormat::Html, MessageFormat::Markdown, MessageFormat::Code]
                .choose(rng)
                .unwrap(),
            body: text(rng),
            visibility: if rng.random_bool(0.3) {
                Visibility::Staff
            } else {
                Visibility::Student
            },
        })
        .collect()
}

fn status(rng: &mut StdRng) -> Status {
    *Status::ALL.choose(rng).unwrap()
}

fn test(rng: &mut StdRng) -> Test {
    let accepted = rng.random_bool(0.5);
    let status = match (accepted, rng.random_bool(0.5)) {
        (_, false) => None,
        (true, true) => Some(Status::Correct),
        (false, true) => Some(loop {
            let s = status(rng);
            if s != Status::Correct {
                break s;
            }
        }),
    };
    Test {
        description: opt_text(rng),
        generated: text(rng),
        expected: text(rng),
        accepted,
        status,
        messages: messages(rng),
    }
}

/// A random tree that satisfies every validity rule, including a top-level
/// status no milder than the worst test.
pub fn random_tree(rng: &mut StdRng) -> FeedbackTree {
    let tabs = (0..rng.random_range(0..4))
        .map(|_| Tab {
            description: opt_text(rng),
            messages: messages(rng),
            contexts: (0..rng.random_range(0..3))
                .map(|_| Context {
                    description: opt_text(rng),
                    messages: messages(rng),
                    testcases: (0..rng.random_range(0..3))
                        .map(|_| TestCase {
                            description: opt_text(rng),
                            messages: messages(rng),
                            tests: (0..rng.random_range(0..3)).map(|_| test(rng)).collect(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let mut tree = FeedbackTree {
        status: Status::Correct,
        description: opt_text(rng),
        messages: messages(rng),
        tabs,
    };
    let worst = tree.tests().map(|t| match (t.status, t.accepted) {
        (Some(s), _) => s,
        (None, true) => Status::Correct,
        (None, false) => Status::Wrong,
    });
    let worst = worst.fold("correct", |acc, s| table_worse(acc, s.as_str())).parse::<Status>().unwrap();
    let chosen = status(rng);
    tree.status = table_worse(chosen.as_str(), worst.as_str()).parse().unwrap();
    tree
}

/// Paths of every node of a JSON feedback document, with the node kind.
pub fn node_paths(doc: &Value) -> Vec<(String, &'static str)> {
    fn join(parent: &str, field: &str, i: usize) -> String {
        if parent.is_empty() {
            format!("{field}[{i}]")
        } else {
            format!("{parent}/{field}[{i}]")
        }
    }
    fn walk(v: &Value, path: String, kind: &'static str, out: &mut Vec<(String, &'static str)>) {
        out.push((path.clone(), kind));
        if let Some(ms) = v.get("messages").and_then(Value::as_array) {
            for (i, _) in ms.iter().enumerate() {
                out.push((join(&path, "messages", i), "message"));
            }
        }
        let child = match kind {
            "tree" => Some(("tabs", "tab")),
            "tab" => Some(("contexts", "context")),
            "context" => Some(("testcases", "testcase")),
            "testcase" => Some(("tests", "test")),
            _ => None,
        };
        if let Some((field, child_kind)) = child {
            if let Some(items) = v.get(field).and_then(Value::as_array) {
                for (i, item) in items.iter().enumerate() {
                    walk(item, join(&path, field, i), child_kind, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(doc, String::new(), "tree", &mut out);
    out
}

pub fn node_at<'a>(doc: &'a mut Value, path: &str) -> &'a mut Value {
    let mut cur = doc;
    if path.is_empty() {
        return cur;
    }
    for seg in path.split('/') {
        let (field, idx) = seg.trim_end_matches(']').split_once('[').unwrap();
        cur = &mut cur[field][idx.parse::<usize>().unwrap()];
    }
    cur
}

/// Breaks one node of a valid document so that it violates exactly one
/// rule. Returns the path a validator must report.
pub fn mutate(doc: &mut Value, rng: &mut StdRng) -> String {
    let nodes = node_paths(doc);
    let (path, kind) = nodes.choose(rng).unwrap().clone();
    let node = node_at(doc, &path);
    let choice = rng.random_range(0..4);
    match (kind, choice) {
        ("test", 0) => {
            node.as_object_mut().unwrap().remove("expected");
        }
        ("test", 1) => node["accepted"] = json!("yes"),
        ("test", 2) => {
            let accepted = node["accepted"].as_bool().unwrap();
            node["status"] = json!(if accepted { "wrong" } else { "correct" });
        }
        ("message", 0) => node["format"] = json!("pdf"),
        ("message", 1) => node["visibility"] = json!("public"),
        ("message", 2) => {
            node.as_object_mut().unwrap().remove("body");
        }
        ("message", _) => node["body"] = json!(17),
        ("tree", 0) => node["status"] = json!("almost-correct"),
        (_, 0) => node["messages"] = json!("not a list"),
        (_, 1) => node["description"] = json!(["x"]),
        _ => node["unexpected_field"] = json!(true),
    }
    path
}

/// A published exercise that exists only in memory.
pub fn exercise(repo: &str, rel: &str, time_limit: u64) -> forge_judge_core::repo::Activity {
    use forge_judge_core::repo::{Activity, ActivityKind, EffectiveConfig};
    use forge_judge_core::sandbox::ImageRef;
    Activity {
        id: ActivityId::derive(repo, rel),
        kind: ActivityKind::Exercise,
        repo_id: repo.into(),
        rel_path: rel.into(),
        name: rel.into(),
        descriptions: Default::default(),
        labels: Default::default(),
        access: Default::default(),
        config_chain: vec![],
        config: Some(EffectiveConfig {
            programming_language: "generic".into(),
            judge: "io".into(),
            image: ImageRef::host_process(),
            time_limit,
            memory_limit: 1 << 28,
            output_limit: 1 << 20,
            network_allowed: false,
            boilerplate: None,
            labels: Default::default(),
        }),
        dir: "/nonexistent".into(),
        resources_dir: "/nonexistent".into(),
        fingerprint: String::new(),
    }
}

pub fn judges() -> JudgeRegistry {
    let mut r = JudgeRegistry::default();
    r.insert(JudgeBundle::new("io", "/opt/judges/io", ImageRef("forge/io:1".into())));
    r.insert(JudgeBundle::new("py", "/opt/judges/py", ImageRef("forge/python:3.12".into())));
    r
}

pub fn default_images() -> BTreeMap<String, String> {
    [("io", "forge/io:1"), ("py", "forge/python:3.12")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

pub fn random_config(rng: &mut StdRng) -> ActivityConfig {
    let mut c = ActivityConfig::default();
    let p = 0.3;
    if rng.random_bool(0.05) {
        c.kind = Some(if rng.random_bool(0.5) { ActivityKind::Reading } else { ActivityKind::Exercise });
    }
    if rng.random_bool(p) {
        c.access = Some(if rng.random_bool(0.5) { Access::Public } else { Access::Restricted });
    }
    if rng.random_bool(p) {
        c.programming_language = Some(["python", "java", "haskell"][rng.random_range(0..3)].into());
    }
    if rng.random_bool(p) {
        c.judge = Some(["io", "py", "missing"][rng.random_range(0..3)].into());
    }
    if rng.random_bool(p) {
        c.image = Some(ImageRef(format!("img/{}", rng.random_range(0..5))));
    }
    if rng.random_bool(p) {
        c.time_limit = Some(rng.random_range(0..60));
    }
    if rng.random_bool(p) {
        c.memory_limit = Some(rng.random_range(1..4) << 20);
    }
    if rng.random_bool(p) {
        c.output_limit = Some(rng.random_range(1..4) << 10);
    }
    if rng.random_bool(p) {
        c.network_allowed = Some(rng.random_bool(0.5));
    }
    if rng.random_bool(p) {
        c.boilerplate = Some(format!("# start {}\n", rng.random_range(0..9)));
    }
    if rng.random_bool(p) {
        c.labels = Some((0..rng.random_range(0..3)).map(|i| format!("l{i}")).collect());
    }
    c
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

pub fn write_exercise(dir: &Path, config: &ActivityConfig) {
    write_json(&dir.join("config.json"), config);
    fs::create_dir_all(dir.join("description")).unwrap();
    fs::write(dir.join("description/description.en.md"), "# Task\n").unwrap();
}

/// Writes `n` exercises below a top-level directory config, each under a
/// random stack of directory configs. Returns the chain per exercise path.
pub fn write_chain_repo(root: &Path, seed: u64, n: usize) -> BTreeMap<String, Vec<ActivityConfig>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let top = ActivityConfig {
        judge: Some("io".into()),
        time_limit: Some(10),
        ..Default::default()
    };
    write_json(&root.join("dirconfig.json"), &top);
    let mut chains = BTreeMap::new();
    for i in 0..n {
        let depth = rng.random_range(0..4);
        let mut dir = root.join(format!("unit{i:03}"));
        let mut chain = vec![top.clone()];
        for level in 0..depth {
            let c = random_config(&mut rng);
            write_json(&dir.join("dirconfig.json"), &c);
            chain.push(c);
            dir = dir.join(format!("level{level}"));
        }
        let leaf = random_config(&mut rng);
        write_exercise(&dir, &leaf);
        chain.push(leaf);
        let rel = dir.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
        chains.insert(rel, chain);
    }
    chains
}

/// Checks every published activity against the reference fold. Returns how
/// often each outcome (exercise, reading, rejected) occurred.
pub fn compare_with_reference(
    chains: &BTreeMap<String, Vec<ActivityConfig>>,
    published: &[Arc<Activity>],
    report: &SyncReport,
    defaults: &EngineDefaults,
) -> Result<BTreeMap<&'static str, usize>, String> {
    let published: BTreeMap<&str, &Activity> = published.iter().map(|a| (a.rel_path.as_str(), &**a)).collect();
    let defaults = serde_json::to_value(defaults).unwrap();
    let mut seen = BTreeMap::<&'static str, usize>::new();
    for (rel, chain) in chains {
        let merged_kind = chain.iter().rev().find_map(|c| c.kind).unwrap_or_default();
        let expected = reference_config(chain, &default_images(), &defaults);
        match (merged_kind, expected, published.get(rel.as_str())) {
            (ActivityKind::Reading, _, Some(a)) => {
                if a.config.is_some() {
                    return Err(format!("{rel}: reading with an execution config"));
                }
                *seen.entry("reading").or_default() += 1;
            }
            (ActivityKind::Exercise, Some(expected), Some(a)) => {
                *seen.entry("exercise").or_default() += 1;
                let actual = serde_json::to_value(a.config.as_ref().unwrap()).unwrap();
                if actual != expected {
                    return Err(format!("{rel}: got {actual}, reference {expected}"));
                }
                let access = chain.iter().rev().find_map(|c| c.access).unwrap_or_default();
                if a.access != access {
                    return Err(format!("{rel}: access {:?}, reference {access:?}", a.access));
                }
            }
            (ActivityKind::Exercise, None, None) => {
                if !report.diagnostics.iter().any(|d| &d.path == rel) {
                    return Err(format!("{rel} dropped silently"));
                }
                *seen.entry("rejected").or_default() += 1;
            }
            (kind, expected, got) => {
                return Err(format!("{rel}: kind {kind:?}, reference {expected:?}, published {}", got.is_some()))
            }
        }
    }
    Ok(seen)
}

pub const ZONE: Tz = chrono_tz::Europe::Brussels;

pub fn local(d: NaiveDate, secs: u32) -> DateTime<Utc> {
    ZONE.from_local_datetime(&d.and_hms_opt(0, 0, 0).unwrap())
        .earliest()
        .unwrap()
        .with_timezone(&Utc)
        + chrono::Duration::seconds(secs as i64)
}

/// 10 000 submissions over eight weeks: a uniform background plus four
/// deadline days with a burst each.
pub fn synthetic_log() -> (Vec<SubmissionRecord>, Vec<NaiveDate>, NaiveDate, NaiveDate) {
    let mut rng = StdRng::seed_from_u64(10_000);
    let start = NaiveDate::from_ymd_opt(2024, 9, 16).unwrap();
    let end = start + chrono::Duration::days(56);
    let spikes: Vec<NaiveDate> = [10, 24, 38, 52].iter().map(|d| start + chrono::Duration::days(*d)).collect();
    let mut subs = Vec::new();
    let mut push = |day: NaiveDate, secs: u32, rng: &mut StdRng| {
        let id = subs.len() as u64 + 1;
        let status = [Status::Correct, Status::Wrong, Status::RuntimeError][rng.random_range(0..3)];
        subs.push(record(
            id,
            &format!("u{}", rng.random_range(0..120)),
            "s1",
            &format!("a{}", rng.random_range(0..5)),
            local(day, secs),
            Some(status),
        ));
    };
    for _ in 0..4000 {
        let day = start + chrono::Duration::days(rng.random_range(0..56));
        let secs = rng.random_range(0..86_400);
        push(day, secs, &mut rng);
    }
    for i in 0..6000 {
        // Bursts build up in the evening before a 23:59 deadline.
        let secs = rng.random_range(12 * 3600..86_399);
        push(spikes[i % 4], secs, &mut rng);
    }
    (subs, spikes, start, end)
}

/// 50 users by 10 activities with up to 7 submissions per pair, clustered
/// around the deadline, plus one exact duplicate timestamp.
pub fn random_timelines(seed: u64) -> (Vec<SubmissionRecord>, Vec<ActivityId>, DateTime<Utc>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let deadline = Utc.with_ymd_and_hms(2024, 12, 1, 22, 59, 59).unwrap() + chrono::Duration::milliseconds(500);
    let activities: Vec<ActivityId> = (0..10).map(|i| ActivityId(format!("a{i}"))).collect();
    let mut ids: Vec<u64> = (1..=10_000).collect();
    ids.shuffle(&mut rng);
    let mut ids = ids.into_iter();
    let mut subs = Vec::new();
    let mut pairs = 0;
    for u in 0..50 {
        for a in &activities {
            pairs += 1;
            for _ in 0..rng.random_range(0..8) {
                let offset_us = match rng.random_range(0..4) {
                    // Exactly on the deadline, or within the same millisecond.
                    0 => rng.random_range(-2_000..2_000),
                    1 => 0,
                    _ => rng.random_range(-86_400_000_000i64..3_600_000_000),
                };
                let at = deadline + chrono::Duration::microseconds(offset_us);
                let series = if rng.random_bool(0.05) { "other" } else { "s1" };
                subs.push(record(ids.next().unwrap(), &format!("u{u}"), series, &a.0, at, None));
            }
        }
    }
    // Identical timestamps must tie-break on id.
    let dup = subs[3].clone();
    subs.push(SubmissionRecord { id: SubmissionId(20_000), ..dup });
    assert_eq!(pairs, 500);
    (subs, activities, deadline)

}
