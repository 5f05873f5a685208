use chrono::SecondsFormat;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::scheduler::SubmissionRecord;

pub const CSV_HEADER: [&str; 8] = [
    "id",
    "user",
    "course",
    "series",
    "activity",
    "lifecycle",
    "result_status",
    "submitted_at",
];

/// Stable per-course pseudonym of a user: keyed hash, 16 hex digits.
pub fn pseudonym(key: &[u8], course_id: &str, user_id: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts keys of any length");
    mac.update(course_id.as_bytes());
    mac.update(&[0]);
    mac.update(user_id.as_bytes());
    hex::encode(&mac.finalize().into_bytes()[..8])
}

/// RFC 4180 CSV, one row per submission in id order, users pseudonymized.
pub fn export_csv(submissions: &[SubmissionRecord], pseudonym_key: &[u8]) -> Vec<u8> {
    let mut rows: Vec<&SubmissionRecord> = submissions.iter().collect();
    rows.sort_by_key(|s| s.id);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("write to memory");
    for s in rows {
        w.write_record([
            s.id.to_string(),
            pseudonym(pseudonym_key, &s.course_id, &s.user_id),
            s.course_id.clone(),
            s.series_id.clone(),
            s.activity_id.0.clone(),
            s.lifecycle.as_str().to_string(),
            s.result_status.map(|st| st.as_str().to_string()).unwrap_or_default(),
            s.submitted_at.to_rfc3339_opts(SecondsFormat::Millis, true),
        ])
        .expect("write to memory");
    }
    w.into_inner().expect("flush to memory")
}
