//! Courses, series and deadlines, plus the aggregations and exports built
//! on stored submissions.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::feedback::Status;
use crate::repo::ActivityId;
use crate::scheduler::{Lifecycle, SubmissionId, SubmissionRecord};

mod export;
mod grading;
mod ical;

pub use export::{export_csv, pseudonym, CSV_HEADER};
pub use grading::{final_score, unit_score, ScoreError, EXAM_WEIGHT, UNITS, UNIT_WEIGHT};
pub use ical::{fold_line, ical_feed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CourseVisibility {
    #[default]
    Public,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Series {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub deadline: Option<DateTime<Utc>>,
    #[serde(default)]
    pub activities: Vec<ActivityId>,
    #[serde(default = "yes")]
    pub visible: bool,
    /// Shared secret that unlocks a hidden series.
    #[serde(default)]
    pub access_token: Option<String>,
}

fn yes() -> bool {
    true
}

fn utc() -> String {
    "UTC".into()
}

impl Series {
    /// Visible series are always accessible; hidden ones only with their token.
    pub fn accessible_with(&self, token: Option<&str>) -> bool {
        if self.visible {
            return true;
        }
        match (&self.access_token, token) {
            (Some(secret), Some(given)) => constant_time_eq(secret.as_bytes(), given.as_bytes()),
            _ => false,
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Course {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub visibility: CourseVisibility,
    /// IANA zone name used for day and hour bucketing.
    #[serde(default = "utc")]
    pub timezone: String,
    /// In authored order.
    #[serde(default)]
    pub series: Vec<Series>,
}

impl Course {
    /// The course zone; UTC if the name is not a known zone.
    pub fn tz(&self) -> Tz {
        self.timezone.parse().unwrap_or(Tz::UTC)
    }

    pub fn series(&self, id: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.id == id)
    }
}

/// Truncates to whole milliseconds, the precision of deadline comparisons.
pub fn to_millis(t: DateTime<Utc>) -> i64 {
    t.timestamp_millis()
}

/// Strictly-before comparison at millisecond precision.
pub fn before_deadline(t: DateTime<Utc>, deadline: DateTime<Utc>) -> bool {
    to_millis(t) < to_millis(deadline)
}

/// Which submissions an aggregation sees. Late means at or after the
/// deadline of the submission's series.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub include_late: bool,
    pub deadlines: BTreeMap<String, DateTime<Utc>>,
}

impl Scope {
    pub fn everything() -> Self {
        Scope {
            include_late: true,
            deadlines: BTreeMap::new(),
        }
    }

    pub fn for_course(course: &Course, include_late: bool) -> Self {
        Scope {
            include_late,
            deadlines: course
                .series
                .iter()
                .filter_map(|s| s.deadline.map(|d| (s.id.clone(), d)))
                .collect(),
        }
    }

    pub fn is_late(&self, s: &SubmissionRecord) -> bool {
        self.deadlines
            .get(&s.series_id)
            .is_some_and(|d| !before_deadline(s.submitted_at, *d))
    }

    pub fn admits(&self, s: &SubmissionRecord) -> bool {
        self.include_late || !self.is_late(s)
    }
}

/// Submission counts per local weekday (Monday = 0) and hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Punchcard(pub [[u64; 24]; 7]);

impl Punchcard {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }
}

pub fn punchcard(submissions: &[SubmissionRecord], tz: Tz, scope: &Scope) -> Punchcard {
    let mut grid = [[0u64; 24]; 7];
    for s in submissions.iter().filter(|s| scope.admits(s)) {
        let local = s.submitted_at.with_timezone(&tz);
        grid[local.weekday().num_days_from_monday() as usize][local.hour() as usize] += 1;
    }
    Punchcard(grid)
}

/// Submission counts per local calendar day.
pub fn heatmap_by_day(submissions: &[SubmissionRecord], tz: Tz, scope: &Scope) -> BTreeMap<NaiveDate, u64> {
    let mut days = BTreeMap::new();
    for s in submissions.iter().filter(|s| scope.admits(s)) {
        *days.entry(s.submitted_at.with_timezone(&tz).date_naive()).or_insert(0) += 1;
    }
    days
}

fn in_series<'a>(series: &'a Series, submissions: &'a [SubmissionRecord]) -> impl Iterator<Item = &'a SubmissionRecord> {
    submissions
        .iter()
        .filter(move |s| s.series_id == series.id && series.activities.contains(&s.activity_id))
}

/// Top-level statuses of assessed submissions, per activity of the series.
/// Every activity and every status is present, possibly with count zero.
pub fn status_distribution(
    series: &Series,
    submissions: &[SubmissionRecord],
    scope: &Scope,
) -> BTreeMap<ActivityId, BTreeMap<Status, u64>> {
    let mut out: BTreeMap<ActivityId, BTreeMap<Status, u64>> = series
        .activities
        .iter()
        .map(|a| (a.clone(), Status::ALL.iter().map(|s| (*s, 0)).collect()))
        .collect();
    for s in in_series(series, submissions).filter(|s| scope.admits(s)) {
        if let (Lifecycle::Assessed, Some(status)) = (s.lifecycle, s.result_status) {
            *out.entry(s.activity_id.clone())
                .or_default()
                .entry(status)
                .or_insert(0) += 1;
        }
    }
    out
}

/// For each activity, the fraction of `students` with at least one correct
/// submission at or before each sample time.
pub fn progression(
    series: &Series,
    submissions: &[SubmissionRecord],
    students: &BTreeSet<String>,
    sample_times: &[DateTime<Utc>],
    scope: &Scope,
) -> BTreeMap<ActivityId, Vec<f64>> {
    // First correct submission per (activity, student).
    let mut first: BTreeMap<(&ActivityId, &str), DateTime<Utc>> = BTreeMap::new();
    for s in in_series(series, submissions).filter(|s| scope.admits(s)) {
        if s.result_status == Some(Status::Correct) && students.contains(&s.user_id) {
            first
                .entry((&s.activity_id, s.user_id.as_str()))
                .and_modify(|t| *t = (*t).min(s.submitted_at))
                .or_insert(s.submitted_at);
        }
    }
    let n = students.len();
    series
        .activities
        .iter()
        .map(|a| {
            let mut solved: Vec<DateTime<Utc>> = first
                .iter()
                .filter(|((act, _), _)| *act == a)
                .map(|(_, t)| *t)
                .collect();
            solved.sort();
            let curve = sample_times
                .iter()
                .map(|t| {
                    if n == 0 {
                        0.0
                    } else {
                        solved.partition_point(|x| x <= t) as f64 / n as f64
                    }
                })
                .collect();
            (a.clone(), curve)
        })
        .collect()
}

pub type SelectionKey = (String, ActivityId);

/// For every (user, activity) of the series, the last submission strictly
/// before the deadline. Equal timestamps are broken toward the higher id.
/// An override of `Some(id)` replaces the automatic choice; `None` removes
/// the pair. Without any deadline every submission counts.
pub fn select_for_evaluation(
    series: &Series,
    submissions: &[SubmissionRecord],
    deadline: Option<DateTime<Utc>>,
    overrides: &BTreeMap<SelectionKey, Option<SubmissionId>>,
) -> BTreeMap<SelectionKey, SubmissionId> {
    let deadline = deadline.or(series.deadline);
    let mut best: BTreeMap<SelectionKey, (i64, SubmissionId)> = BTreeMap::new();
    for s in in_series(series, submissions) {
        if deadline.is_some_and(|d| !before_deadline(s.submitted_at, d)) {
            continue;
        }
        let candidate = (to_millis(s.submitted_at), s.id);
        best.entry((s.user_id.clone(), s.activity_id.clone()))
            .and_modify(|cur| *cur = (*cur).max(candidate))
            .or_insert(candidate);
    }
    let mut selected: BTreeMap<_, _> = best.into_iter().map(|(k, (_, id))| (k, id)).collect();
    for (key, choice) in overrides {
        match choice {
            Some(id) => selected.insert(key.clone(), *id),
            None => selected.remove(key),
        };
    }
    selected
}
