mod support;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use forge_judge_core::analytics::{
    final_score, heatmap_by_day, progression, punchcard, select_for_evaluation, status_distribution, unit_score,
    Course, Scope, ScoreError, Series,
};
use forge_judge_core::feedback::Status;
use forge_judge_core::repo::ActivityId;
use forge_judge_core::scheduler::SubmissionId;
use forge_judge_core::ExactScore;
use support::{local, synthetic_log, ZONE};

#[test]
fn synthetic_log_totals_and_spikes() {
    let (subs, spikes, start, end) = synthetic_log();
    let scope = Scope::everything();
    let card = punchcard(&subs, ZONE, &scope);
    assert_eq!(card.total(), 10_000);
    let days = heatmap_by_day(&subs, ZONE, &scope);
    assert_eq!(days.values().sum::<u64>(), 10_000);
    assert!(days.keys().all(|d| *d >= start && *d < end));
    for spike in &spikes {
        let at = |d: NaiveDate| days.get(&d).copied().unwrap_or(0);
        let here = at(*spike);
        assert!(here > at(*spike - Duration::days(1)) && here > at(*spike + Duration::days(1)), "{spike}");
    }
    // Evening hours dominate in local time.
    let evening: u64 = card.0.iter().map(|day| day[12..].iter().sum::<u64>()).sum();
    assert!(evening > 7000);
}

#[test]
fn late_submissions_excluded_unless_requested() {
    let (subs, spikes, ..) = synthetic_log();
    let deadline = local(spikes[0], 86_399 - 3600);
    let course = Course {
        id: "course".into(),
        name: "C".into(),
        visibility: Default::default(),
        timezone: ZONE.name().into(),
        series: vec![Series {
            id: "s1".into(),
            name: "S1".into(),
            deadline: Some(deadline),
            activities: (0..5).map(|i| ActivityId(format!("a{i}"))).collect(),
            visible: true,
            access_token: None,
        }],
    };
    let on_time = subs.iter().filter(|s| s.submitted_at < deadline).count() as u64;
    assert_eq!(punchcard(&subs, ZONE, &Scope::for_course(&course, false)).total(), on_time);
    assert_eq!(punchcard(&subs, ZONE, &Scope::for_course(&course, true)).total(), 10_000);

    let dist = status_distribution(&course.series[0], &subs, &Scope::for_course(&course, true));
    assert_eq!(dist.len(), 5);
    assert_eq!(dist.values().flat_map(|m| m.values()).sum::<u64>(), 10_000);
    assert!(dist.values().all(|m| m.len() == Status::ALL.len()));

    let students: BTreeSet<String> = (0..120).map(|i| format!("u{i}")).collect();
    let samples = [local(spikes[0], 0), local(spikes[3], 86_399)];
    let curves = progression(&course.series[0], &subs, &students, &samples, &Scope::everything());
    for curve in curves.values() {
        assert!(curve[0] <= curve[1] && curve[1] <= 1.0);
    }
}

#[test]
fn selection_matches_brute_force_on_random_timelines() {
    let (subs, activities, deadline) = support::random_timelines(500);

    let series = Series {
        id: "s1".into(),
        name: "S1".into(),
        deadline: Some(deadline),
        activities: activities.clone(),
        visible: true,
        access_token: None,
    };
    let got = select_for_evaluation(&series, &subs, None, &BTreeMap::new());
    assert_eq!(got, support::brute_force_selection("s1", &activities, &subs, Some(deadline)));

    let extended = deadline + Duration::hours(1);
    let got = select_for_evaluation(&series, &subs, Some(extended), &BTreeMap::new());
    assert_eq!(got, support::brute_force_selection("s1", &activities, &subs, Some(extended)));

    let open = Series { deadline: None, ..series.clone() };
    let got = select_for_evaluation(&open, &subs, None, &BTreeMap::new());
    assert_eq!(got, support::brute_force_selection("s1", &activities, &subs, None));

    let key = ("u0".to_string(), activities[0].clone());
    let removed = ("u1".to_string(), activities[1].clone());
    let overrides = BTreeMap::from([(key.clone(), Some(SubmissionId(77_777))), (removed.clone(), None)]);
    let got = select_for_evaluation(&series, &subs, None, &overrides);
    assert_eq!(got.get(&key), Some(&SubmissionId(77_777)));
    assert!(!got.contains_key(&removed));
}

#[test]
fn score_table() {
    let r = |n: i64, d: i64| ExactScore::new(n, d);
    // (s, f, unit)
    let units = [
        (0.9, 0.0, 0.0),
        (0.9, 1.0, 0.9),
        (1.0, 1.0, 1.0),
        (0.0, 1.0, 0.0),
        (0.5, 0.5, 0.25),
    ];
    for (s, f, expected) in units {
        assert_eq!(unit_score(s, f).unwrap(), expected, "s={s} f={f}");
    }
    assert_eq!(final_score(1.0, &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(final_score(0.0, &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(final_score(1.0, &[0.0, 0.0]).unwrap(), 0.8);
    assert_eq!(final_score(r(1, 1), &[r(1, 1), r(1, 1)]).unwrap(), r(1, 1));
    assert_eq!(final_score(r(1, 2), &[r(1, 1), r(0, 1)]).unwrap(), r(1, 2));
    assert_eq!(final_score(r(3, 4), &[r(1, 2), r(1, 4)]).unwrap(), r(27, 40));
    assert_eq!(unit_score(r(4, 5), r(0, 1)).unwrap(), r(0, 1));
    assert_eq!(final_score(1.2, &[1.0, 1.0]), Err(ScoreError::OutOfRange("exam")));
    assert_eq!(final_score(1.0, &[1.0, 1.0, 1.0]), Err(ScoreError::UnitCount(3)));
}
