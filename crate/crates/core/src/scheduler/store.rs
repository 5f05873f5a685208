//! Durable submission storage. The default implementation is a single
//! SQLite file; see `docs/storage.md` for the schema.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row, TransactionBehavior};
use thiserror::Error;

use super::{Lifecycle, LifecycleCounts, NewSubmission, QueueEntry, SubmissionFilter, SubmissionId, SubmissionRecord};
use crate::feedback::{parse_feedback, FeedbackTree, ParseMode, Status, ValidationError};
use crate::repo::ActivityId;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("stored feedback of submission {id} no longer validates: {source}")]
    CorruptFeedback { id: u64, source: ValidationError },
    #[error("corrupt row for submission {id}: {message}")]
    CorruptRow { id: u64, message: String },
}

/// Storage operations the scheduler needs. Every state transition is atomic.
pub trait SubmissionStore: Send + Sync {
    /// Persists a new queued submission at the tail of the queue.
    fn insert(
        &self,
        submission: &NewSubmission,
        submitted_at: DateTime<Utc>,
        stall_after: Duration,
    ) -> Result<SubmissionRecord, StoreError>;

    fn get(&self, id: SubmissionId) -> Result<Option<SubmissionRecord>, StoreError>;

    /// Moves the head of the queue to running, bound to `worker_id`.
    fn claim_next(&self, worker_id: &str, now: DateTime<Utc>) -> Result<Option<QueueEntry>, StoreError>;

    /// Stores the result of a running submission still bound to `worker_id`.
    /// Returns false (and changes nothing) if the claim was lost, for
    /// instance because the reaper took the entry back.
    fn complete(
        &self,
        id: SubmissionId,
        worker_id: &str,
        feedback: &FeedbackTree,
        now: DateTime<Utc>,
    ) -> Result<bool, StoreError>;

    /// Returns a running submission to the head of the queue and counts one
    /// more attempt. With `worker_id` set, only if still bound to it.
    fn requeue_head(&self, id: SubmissionId, worker_id: Option<&str>, now: DateTime<Utc>) -> Result<bool, StoreError>;

    /// Finalizes a running submission without a worker binding check.
    fn finalize(&self, id: SubmissionId, feedback: &FeedbackTree, now: DateTime<Utc>) -> Result<bool, StoreError>;

    /// Running submissions whose stall deadline lies before `now`.
    fn stalled(&self, now: DateTime<Utc>) -> Result<Vec<SubmissionRecord>, StoreError>;

    fn counts(&self) -> Result<LifecycleCounts, StoreError>;

    /// Matching submissions ordered by id.
    fn list(&self, filter: &SubmissionFilter) -> Result<Vec<SubmissionRecord>, StoreError>;
}

const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS submissions (
    id               INTEGER PRIMARY KEY AUTOINCREMENT,
    user_id          TEXT    NOT NULL,
    course_id        TEXT    NOT NULL,
    series_id        TEXT    NOT NULL,
    activity_id      TEXT    NOT NULL,
    natural_language TEXT    NOT NULL,
    code             BLOB    NOT NULL,
    submitted_at     INTEGER NOT NULL,
    lifecycle        TEXT    NOT NULL CHECK (lifecycle IN ('queued', 'running', 'assessed')),
    result_status    TEXT,
    feedback         BLOB,
    attempt_count    INTEGER NOT NULL,
    queue_pos        INTEGER,
    enqueued_at      INTEGER,
    worker_id        TEXT,
    started_at       INTEGER,
    assessed_at      INTEGER,
    stall_after_ms   INTEGER NOT NULL,
    CHECK ((lifecycle = 'assessed') = (feedback IS NOT NULL AND result_status IS NOT NULL)),
    CHECK ((lifecycle = 'queued') = (queue_pos IS NOT NULL))
);
CREATE INDEX IF NOT EXISTS submissions_queue ON submissions (queue_pos) WHERE lifecycle = 'queued';
CREATE INDEX IF NOT EXISTS submissions_running ON submissions (lifecycle, started_at);
CREATE INDEX IF NOT EXISTS submissions_course ON submissions (course_id, series_id);
CREATE INDEX IF NOT EXISTS submissions_started ON submissions (started_at);
";

const COLUMNS: &str = "id, user_id, course_id, series_id, activity_id, natural_language, code, submitted_at, \
    lifecycle, result_status, feedback, attempt_count, enqueued_at, worker_id, started_at, assessed_at, stall_after_ms";

fn to_millis(t: DateTime<Utc>) -> i64 {
    t.timestamp_millis()
}

fn from_millis(ms: i64) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(ms).single().unwrap_or_default()
}

/// SQLite-backed store. Safe to share between threads, and between
/// processes opening the same file.
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for SqliteStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqliteStore").finish_non_exhaustive()
    }
}

impl SqliteStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        // Acknowledged submissions must survive a crash.
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.busy_timeout(Duration::from_secs(10))?;
        conn.execute_batch(SCHEMA)?;
        conn.pragma_update(None, "user_version", SCHEMA_VERSION)?;
        Ok(SqliteStore { conn: Mutex::new(conn) })
    }

    fn with<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut conn)
    }
}

struct RawRow {
    id: i64,
    user_id: String,
    course_id: String,
    series_id: String,
    activity_id: String,
    natural_language: String,
    code: Vec<u8>,
    submitted_at: i64,
    lifecycle: String,
    result_status: Option<String>,
    feedback: Option<Vec<u8>>,
    attempt_count: u32,
    enqueued_at: Option<i64>,
    worker_id: Option<String>,
    started_at: Option<i64>,
    assessed_at: Option<i64>,
    stall_after_ms: i64,
}

fn raw_row(row: &Row<'_>) -> rusqlite::Result<RawRow> {
    Ok(RawRow {
        id: row.get(0)?,
        user_id: row.get(1)?,
        course_id: row.get(2)?,
        series_id: row.get(3)?,
        activity_id: row.get(4)?,
        natural_language: row.get(5)?,
        code: row.get(6)?,
        submitted_at: row.get(7)?,
        lifecycle: row.get(8)?,
        result_status: row.get(9)?,
        feedback: row.get(10)?,
        attempt_count: row.get(11)?,
        enqueued_at: row.get(12)?,
        worker_id: row.get(13)?,
        started_at: row.get(14)?,
        assessed_at: row.get(15)?,
        stall_after_ms: row.get(16)?,
    })
}

impl RawRow {
    fn into_record(self) -> Result<SubmissionRecord, StoreError> {
        let id = self.id as u64;
        let corrupt = |message: String| StoreError::CorruptRow { id, message };
        let lifecycle = match self.lifecycle.as_str() {
            "queued" => Lifecycle::Queued,
            "running" => Lifecycle::Running,
            "assessed" => Lifecycle::Assessed,
            other => return Err(corrupt(format!("lifecycle '{other}'"))),
        };
        let result_status = self
            .result_status
            .map(|s| s.parse::<Status>().map_err(|e| corrupt(e.to_string())))
            .transpose()?;
        let feedback = self
            .feedback
            .map(|blob| parse_feedback(&blob, ParseMode::Strict))
            .transpose()
            .map_err(|source| StoreError::CorruptFeedback { id, source })?;
        Ok(SubmissionRecord {
            id: SubmissionId(id),
            user_id: self.user_id,
            course_id: self.course_id,
            series_id: self.series_id,
            activity_id: ActivityId(self.activity_id),
            natural_language: self.natural_language,
            code: self.code,
            submitted_at: from_millis(self.submitted_at),
            lifecycle,
            result_status,
            feedback,
            attempt_count: self.attempt_count,
            enqueued_at: self.enqueued_at.map(from_millis),
            worker_id: self.worker_id,
            started_at: self.started_at.map(from_millis),
            assessed_at: self.assessed_at.map(from_millis),
            stall_after: Duration::from_millis(self.stall_after_ms.max(0) as u64),
        })
    }
}

fn fetch_one(conn: &Connection, id: u64) -> Result<Option<SubmissionRecord>, StoreError> {
    let sql = format!("SELECT {COLUMNS} FROM submissions WHERE id = ?1");
    conn.query_row(&sql, [id as i64], raw_row)
        .optional()?
        .map(RawRow::into_record)
        .transpose()
}

fn fetch_many(
    conn: &Connection,
    where_clause: &str,
    params: &[&dyn rusqlite::ToSql],
) -> Result<Vec<SubmissionRecord>, StoreError> {
    let sql = format!("SELECT {COLUMNS} FROM submissions WHERE {where_clause} ORDER BY id");
    let mut stmt = conn.prepare(&sql)?;
    let rows = stmt.query_map(params, raw_row)?;
    rows.map(|r| r.map_err(StoreError::from).and_then(RawRow::into_record))
        .collect()
}

fn write_result(tree: &FeedbackTree) -> (String, Vec<u8>) {
    (tree.status.as_str().to_string(), tree.to_canonical_json())
}

impl SubmissionStore for SqliteStore {
    fn insert(
        &self,
        s: &NewSubmission,
        submitted_at: DateTime<Utc>,
        stall_after: Duration,
    ) -> Result<SubmissionRecord, StoreError> {
        self.with(|conn| {
            let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
            let at = to_millis(submitted_at);
            tx.execute(
                "INSERT INTO submissions (user_id, course_id, series_id, activity_id, natural_language, code,
                     submitted_at, lifecycle, attempt_count, queue_pos, enqueued_at, stall_after_ms)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 'queued', 1, 0, ?7, ?8)",
                params![
                    s.user_id,
                    s.course_id,
                    s.series_id,
                    s.activity_id.0,
                    s.natural_language,
                    s.code,
                    at,
                    stall_after.as_millis() as i64
                ],
            )?;
            let id = tx.last_insert_rowid();
            tx.execute("UPDATE submissions SET queue_pos = ?1 WHERE id = ?1", [id])?;
            let record = fetch_one(&tx, id as u64)?.expect("row just inserted");
            tx.commit()?;
            Ok(record)
        })
    }

    fn get(&self, id: SubmissionId) -> Result<Option<SubmissionRecord>, StoreError> {
        self.with(|conn| fetch_one(conn, id.0))
    }

    fn claim_next(&self, worker_id: &str, now: DateTime<Utc>) -> Result<Option<QueueEntry>, StoreError> {
        self.with(|conn| {
            let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
            let head: Option<(i64, Option<i64>)> = tx
                .query_row(
                    "SELECT id, enqueued_at FROM submissions WHERE lifecycle = 'queued'
                     ORDER BY queue_pos LIMIT 1",
                    [],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()?;
            let Some((id, enqueued_at)) = head else {
                return Ok(None);
            };
            // Start stamps never go backwards, even when callers race on `now`
            // or clocks differ between processes, so they also record claim order.
            tx.execute(
                "UPDATE submissions SET lifecycle = 'running', queue_pos = NULL, worker_id = ?2,
                     started_at = MAX(?3, COALESCE((SELECT MAX(started_at) FROM submissions), ?3))
                 WHERE id = ?1 AND lifecycle = 'queued'",
                params![id, worker_id, to_millis(now)],
            )?;
            tx.commit()?;
            Ok(Some(QueueEntry {
                submission_id: SubmissionId(id as u64),
                enqueued_at: enqueued_at.map(from_millis).unwrap_or(now),
            }))
        })
    }

    fn complete(
        &self,
        id: SubmissionId,
        worker_id: &str,
        feedback: &FeedbackTree,
        now: DateTime<Utc>,
    ) -> Result<bool, StoreError> {
        let (status, blob) = write_result(feedback);
        self.with(|conn| {
            let n = conn.execute(
                "UPDATE submissions SET lifecycle = 'assessed', result_status = ?3, feedback = ?4, assessed_at = ?5
                 WHERE id = ?1 AND lifecycle = 'running' AND worker_id = ?2",
                params![id.0 as i64, worker_id, status, blob, to_millis(now)],
            )?;
            Ok(n == 1)
        })
    }

    fn requeue_head(&self, id: SubmissionId, worker_id: Option<&str>, now: DateTime<Utc>) -> Result<bool, StoreError> {
        self.with(|conn| {
            let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
            let head: i64 = tx.query_row(
                "SELECT COALESCE(MIN(queue_pos), 1) FROM submissions WHERE lifecycle = 'queued'",
                [],
                |r| r.get(0),
            )?;
            let n = tx.execute(
                "UPDATE submissions SET lifecycle = 'queued', queue_pos = ?2, enqueued_at = ?3, worker_id = NULL,
                     started_at = NULL, attempt_count = attempt_count + 1
                 WHERE id = ?1 AND lifecycle = 'running' AND (?4 IS NULL OR worker_id = ?4)",
                params![id.0 as i64, head - 1, to_millis(now), worker_id],
            )?;
            tx.commit()?;
            Ok(n == 1)
        })
    }

    fn finalize(&self, id: SubmissionId, feedback: &FeedbackTree, now: DateTime<Utc>) -> Result<bool, StoreError> {
        let (status, blob) = write_result(feedback);
        self.with(|conn| {
            let n = conn.execute(
                "UPDATE submissions SET lifecycle = 'assessed', result_status = ?2, feedback = ?3, assessed_at = ?4
                 WHERE id = ?1 AND lifecycle = 'running'",
                params![id.0 as i64, status, blob, to_millis(now)],
            )?;
            Ok(n == 1)
        })
    }

    fn stalled(&self, now: DateTime<Utc>) -> Result<Vec<SubmissionRecord>, StoreError> {
        self.with(|conn| {
            fetch_many(
                conn,
                "lifecycle = 'running' AND started_at + stall_after_ms < ?1",
                &[&to_millis(now)],
            )
        })
    }

    fn counts(&self) -> Result<LifecycleCounts, StoreError> {
        self.with(|conn| {
            let mut counts = LifecycleCounts::default();
            let mut stmt = conn.prepare("SELECT lifecycle, COUNT(*) FROM submissions GROUP BY lifecycle")?;
            let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?;
            for row in rows {
                let (lifecycle, n) = row?;
                match lifecycle.as_str() {
                    "queued" => counts.queued = n,
                    "running" => counts.running = n,
                    "assessed" => counts.assessed = n,
                    _ => {}
                }
            }
            let mut stmt = conn.prepare(
                "SELECT result_status, COUNT(*) FROM submissions WHERE lifecycle = 'assessed' GROUP BY result_status",
            )?;
            let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?;
            for row in rows {
                let (status, n) = row?;
                if let Ok(status) = status.parse::<Status>() {
                    counts.by_status.insert(status, n);
                }
            }
            Ok(counts)
        })
    }

    fn list(&self, filter: &SubmissionFilter) -> Result<Vec<SubmissionRecord>, StoreError> {
        let from = filter.from.map(to_millis);
        let until = filter.until.map(to_millis);
        self.with(|conn| {
            fetch_many(
                conn,
                "(?1 IS NULL OR course_id = ?1) AND (?2 IS NULL OR series_id = ?2) AND (?3 IS NULL OR user_id = ?3)
                 AND (?4 IS NULL OR activity_id = ?4)
                 AND (?5 IS NULL OR submitted_at >= ?5) AND (?6 IS NULL OR submitted_at < ?6)",
                &[
                    &filter.course_id,
                    &filter.series_id,
                    &filter.user_id,
                    &filter.activity_id.as_ref().map(|a| a.0.clone()),
                    &from,
                    &until,
                ],
            )
        })
    }
}
