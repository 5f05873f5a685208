mod support;

use std::io::BufReader;
use std::time::Duration as StdDuration;

use chrono::{Duration, TimeZone, Utc};
use forge_judge_core::analytics::{export_csv, ical_feed, pseudonym, Course, CourseVisibility, Series, CSV_HEADER};
use forge_judge_core::feedback::{FeedbackTree, Message, Status};
use forge_judge_core::scheduler::{NewSubmission, SqliteStore, SubmissionFilter, SubmissionStore};

fn course() -> Course {
    let d = |day| Some(Utc.with_ymd_and_hms(2024, 10, day, 21, 59, 0).unwrap());
    let series = |id: &str, name: &str, deadline, visible| Series {
        id: id.into(),
        name: name.into(),
        deadline,
        activities: vec![],
        visible,
        access_token: None,
    };
    Course {
        id: "prog-2024".into(),
        name: "Programming, first year; Ghent".into(),
        visibility: CourseVisibility::Public,
        timezone: "Europe/Brussels".into(),
        series: vec![
            series("w1", "Week 1: variables", d(1), true),
            series("w2", "Week 2", None, true),
            series("w3", &format!("Week 3 {}", "λ".repeat(60)), d(15), true),
            series("hidden", "Secret", d(20), false),
            series("w4", "Loops\nand, more\\", d(22), true),
        ],
    }
}

fn parse(feed: &str) -> Vec<ical::parser::ical::component::IcalCalendar> {
    ical::IcalParser::new(BufReader::new(feed.as_bytes()))
        .collect::<Result<Vec<_>, _>>()
        .expect("feed parses")
}

fn prop<'a>(props: &'a [ical::property::Property], name: &str) -> Option<&'a str> {
    props.iter().find(|p| p.name == name).and_then(|p| p.value.as_deref())
}

#[test]
fn feed_parses_with_an_independent_parser() {
    let c = course();
    let stamp = Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap();
    let feed = ical_feed(&c, stamp);
    let cals = parse(&feed);
    assert_eq!(cals.len(), 1);
    let events = &cals[0].events;
    assert_eq!(events.len(), 3);
    let uids: Vec<&str> = events.iter().map(|e| prop(&e.properties, "UID").unwrap()).collect();
    assert_eq!(uids, ["w1@prog-2024.forge-judge", "w3@prog-2024.forge-judge", "w4@prog-2024.forge-judge"]);
    assert_eq!(prop(&events[0].properties, "DTSTART"), Some("20241001T215900Z"));
    assert_eq!(prop(&events[1].properties, "SUMMARY").map(|s| s.chars().filter(|c| *c == 'λ').count()), Some(60));
    for line in feed.split("\r\n") {
        assert!(line.len() <= 75, "{line}");
    }
    assert!(feed.ends_with("END:VCALENDAR\r\n"));
}

#[test]
fn uids_survive_edits_and_dtstamp_changes() {
    let mut c = course();
    let a = ical_feed(&c, Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap());
    c.series[0].name = "Renamed".into();
    c.series[0].deadline = c.series[0].deadline.map(|d| d + Duration::days(2));
    c.series.swap(0, 2);
    let b = ical_feed(&c, Utc.with_ymd_and_hms(2024, 9, 5, 0, 0, 0).unwrap());
    let uids = |feed: &str| {
        let mut u: Vec<String> = parse(feed)[0]
            .events
            .iter()
            .map(|e| prop(&e.properties, "UID").unwrap().to_string())
            .collect();
        u.sort();
        u
    };
    assert_eq!(uids(&a), uids(&b));
}

#[test]
fn csv_reexport_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let db = tmp.path().join("s.db");
    let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap();
    let mut subs = Vec::new();
    for i in 0..40u64 {
        // Still-queued submissions last, so claims below take them in id order.
        let status = if i >= 32 { None } else { [Some(Status::Correct), Some(Status::Wrong)][i as usize % 2] };
        let mut r = support::record(
            i + 1,
            &format!("user, \"{}\"", i % 7),
            &format!("series{}", i % 2),
            "act",
            t0 + Duration::microseconds(i as i64 * 1_234_567),
            status,
        );
        r.code = format!("print({i})\n").into_bytes();
        subs.push(r);
    }
    let key = b"export-key";
    let direct = export_csv(&subs, key);
    let mut reversed = subs.clone();
    reversed.reverse();
    assert_eq!(export_csv(&reversed, key), direct);

    let store = SqliteStore::open(&db).unwrap();
    for (i, s) in subs.iter().enumerate() {
        let new = NewSubmission {
            user_id: s.user_id.clone(),
            course_id: s.course_id.clone(),
            series_id: s.series_id.clone(),
            activity_id: s.activity_id.clone(),
            natural_language: s.natural_language.clone(),
            code: s.code.clone(),
        };
        let rec = store.insert(&new, s.submitted_at, StdDuration::from_secs(60)).unwrap();
        if let Some(status) = s.result_status {
            let entry = store.claim_next("w", s.submitted_at).unwrap().unwrap();
            assert_eq!(entry.submission_id, rec.id);
            let tree = FeedbackTree::verdict(status, vec![Message::plain(format!("run {i}"))]);
            assert!(store.complete(rec.id, "w", &tree, s.submitted_at).unwrap());
        }
    }
    let loaded = store.list(&SubmissionFilter::default()).unwrap();
    assert_eq!(loaded.len(), 40);
    // Ids are assigned in insertion order, so the store round trip is
    // invisible in the export apart from sub-millisecond precision.
    assert_eq!(export_csv(&loaded, key), direct);
    let first = export_csv(&loaded, key);
    drop(store);
    let reopened = SqliteStore::open(&db).unwrap().list(&SubmissionFilter::default()).unwrap();
    assert_eq!(export_csv(&reopened, key), first);

    let mut reader = csv::ReaderBuilder::new().from_reader(&first[..]);
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(&rows[3][1], pseudonym(key, "course", "user, \"3\""));
    assert!(first.windows(2).filter(|w| w == b"\r\n").count() == 41);
    assert!(!String::from_utf8_lossy(&first).contains("user, "));
}
