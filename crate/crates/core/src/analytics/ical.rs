//! Deadline calendar feeds (RFC 5545).

use chrono::{DateTime, Utc};

use super::Course;

const PRODID: &str = "-//forge-judge//Course deadlines//EN";
const MAX_OCTETS: usize = 75;

fn stamp(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ';' => out.push_str("\\;"),
            ',' => out.push_str("\\,"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

/// Splits a content line into 75-octet pieces joined by CRLF and a space,
/// never inside a UTF-8 sequence. The result ends with CRLF.
pub fn fold_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut width = 0;
    for c in line.chars() {
        let n = c.len_utf8();
        if width + n > MAX_OCTETS {
            out.push_str("\r\n ");
            width = 1;
        }
        out.push(c);
        width += n;
    }
    out.push_str("\r\n");
    out
}

/// One event per visible series with a deadline. UIDs depend only on the
/// course and series ids; `dtstamp` is passed in so output is reproducible.
pub fn ical_feed(course: &Course, dtstamp: DateTime<Utc>) -> String {
    let mut lines = vec![
        "BEGIN:VCALENDAR".to_string(),
        "VERSION:2.0".to_string(),
        format!("PRODID:{PRODID}"),
        "CALSCALE:GREGORIAN".to_string(),
        "METHOD:PUBLISH".to_string(),
        format!("X-WR-CALNAME:{}", escape(&course.name)),
    ];
    for series in course.series.iter().filter(|s| s.visible) {
        let Some(deadline) = series.deadline else {
            continue;
        };
        lines.extend([
            "BEGIN:VEVENT".to_string(),
            format!("UID:{}@{}.forge-judge", escape(&series.id), escape(&course.id)),
            format!("DTSTAMP:{}", stamp(dtstamp)),
            format!("DTSTART:{}", stamp(deadline)),
            format!("SUMMARY:{}", escape(&format!("Deadline: {}", series.name))),
            format!("DESCRIPTION:{}", escape(&format!("{} - {}", course.name, series.name))),
            "TRANSP:TRANSPARENT".to_string(),
            "END:VEVENT".to_string(),
        ]);
    }
    lines.push("END:VCALENDAR".to_string());
    lines.iter().map(|l| fold_line(l)).collect()
}
