//! Submission lifecycle: durable intake, a single FIFO queue, worker
//! dispatch, retries of infrastructure failures and result persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{FeedbackTree, Message, Status};
use crate::judge::HardCap;
use crate::repo::{ActivityId, ActivityKind, ActivityRegistry};

mod pipeline;
mod pool;
mod store;

pub use pipeline::JudgePipeline;
pub use pool::{PoolConfig, WorkerPool};
pub use store::{SqliteStore, StoreError, SubmissionStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubmissionId(pub u64);

impl fmt::Display for SubmissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    Queued,
    Running,
    Assessed,
}

impl Lifecycle {
    pub fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Queued => "queued",
            Lifecycle::Running => "running",
            Lifecycle::Assessed => "assessed",
        }
    }
}

/// What a client hands in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewSubmission {
    pub user_id: String,
    pub course_id: String,
    pub series_id: String,
    pub activity_id: ActivityId,
    /// The submitter's preferred language, passed on to the judge.
    pub natural_language: String,
    pub code: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionRecord {
    pub id: SubmissionId,
    pub user_id: String,
    pub course_id: String,
    pub series_id: String,
    pub activity_id: ActivityId,
    pub natural_language: String,
    pub code: Vec<u8>,
    pub submitted_at: DateTime<Utc>,
    pub lifecycle: Lifecycle,
    /// Set once assessed.
    pub result_status: Option<Status>,
    /// Set once assessed.
    pub feedback: Option<FeedbackTree>,
    /// 1 for the first attempt; grows with every requeue.
    pub attempt_count: u32,
    pub enqueued_at: Option<DateTime<Utc>>,
    pub worker_id: Option<String>,
    pub started_at: Option<DateTime<Utc>>,
    pub assessed_at: Option<DateTime<Utc>>,
    /// How long a running attempt may take before the reaper requeues it.
    pub stall_after: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueEntry {
    pub submission_id: SubmissionId,
    pub enqueued_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LifecycleCounts {
    pub queued: u64,
    pub running: u64,
    pub assessed: u64,
    pub by_status: BTreeMap<Status, u64>,
}

impl LifecycleCounts {
    pub fn total(&self) -> u64 {
        self.queued + self.running + self.assessed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubmissionFilter {
    pub course_id: Option<String>,
    pub series_id: Option<String>,
    pub user_id: Option<String>,
    pub activity_id: Option<ActivityId>,
    /// Inclusive.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive.
    pub until: Option<DateTime<Utc>>,
}

#[derive(Debug, Error)]
pub enum EnqueueError {
    #[error("unknown activity '{0}'")]
    UnknownActivity(String),
    #[error("activity '{0}' is not an exercise")]
    NotAnExercise(String),
    #[error("code is {size} bytes, the maximum is {max}")]
    TooLarge { size: usize, max: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum AssessError {
    /// The execution environment is unavailable; the attempt is retried.
    #[error("infrastructure failure: {0}")]
    Infrastructure(String),
}

/// Produces feedback for one submission.
pub trait Assessor: Send + Sync {
    fn assess(&self, submission: &SubmissionRecord) -> Result<FeedbackTree, AssessError>;
}

#[derive(Debug, Clone, Copy)]
pub struct SchedulerConfig {
    pub max_code_size: usize,
    pub max_attempts: u32,
    pub hard_cap: HardCap,
    /// Added to the hard cap to get the stall threshold.
    pub stall_grace: Duration,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            max_code_size: 64 * 1024,
            max_attempts: 3,
            hard_cap: HardCap::default(),
            stall_grace: Duration::from_secs(60),
        }
    }
}

/// What happened to a claimed entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssessOutcome {
    Assessed(Box<SubmissionRecord>),
    Requeued(SubmissionId),
    /// The claim was lost in the meantime, e.g. to the reaper.
    Abandoned(SubmissionId),
}

// Wakes idle workers when work arrives.
#[derive(Debug, Default)]
pub(crate) struct Signal {
    generation: Mutex<u64>,
    cond: Condvar,
}

impl Signal {
    fn notify(&self) {
        *self.generation.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.cond.notify_all();
    }

    pub(crate) fn wait(&self, timeout: Duration) {
        let guard = self.generation.lock().unwrap_or_else(|p| p.into_inner());
        let seen = *guard;
        let _ = self
            .cond
            .wait_timeout_while(guard, timeout, |g| *g == seen);
    }
}

pub struct Scheduler {
    store: Arc<dyn SubmissionStore>,
    activities: Arc<ActivityRegistry>,
    assessor: Arc<dyn Assessor>,
    config: SchedulerConfig,
    workers: Mutex<BTreeSet<String>>,
    signal: Signal,
}

fn internal_error(detail: &str) -> FeedbackTree {
    FeedbackTree::verdict(
        Status::InternalError,
        vec![
            Message::plain("The submission could not be assessed."),
            Message::plain(detail).staff(),
        ],
    )
}

impl Scheduler {
    pub fn new(
        store: Arc<dyn SubmissionStore>,
        activities: Arc<ActivityRegistry>,
        assessor: Arc<dyn Assessor>,
        config: SchedulerConfig,
    ) -> Self {
        Scheduler {
            store,
            activities,
            assessor,
            config,
            workers: Mutex::new(BTreeSet::new()),
            signal: Signal::default(),
        }
    }

    pub fn store(&self) -> &Arc<dyn SubmissionStore> {
        &self.store
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub(crate) fn signal(&self) -> &Signal {
        &self.signal
    }

    /// Validates and durably queues a submission.
    pub fn enqueue(&self, submission: NewSubmission) -> Result<SubmissionRecord, EnqueueError> {
        let activity = self
            .activities
            .get(&submission.activity_id)
            .ok_or_else(|| EnqueueError::UnknownActivity(submission.activity_id.0.clone()))?;
        let config = match (&activity.kind, &activity.config) {
            (ActivityKind::Exercise, Some(config)) => config,
            _ => return Err(EnqueueError::NotAnExercise(submission.activity_id.0.clone())),
        };
        if submission.code.len() > self.config.max_code_size {
            return Err(EnqueueError::TooLarge {
                size: submission.code.len(),
                max: self.config.max_code_size,
            });
        }
        let stall_after = self.config.hard_cap.for_limit(config.time_limit) + self.config.stall_grace;
        let record = self.store.insert(&submission, Utc::now(), stall_after)?;
        self.signal.notify();
        Ok(record)
    }

    pub fn register_worker(&self, worker_id: &str) {
        self.workers
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(worker_id.to_string());
    }

    pub fn deregister_worker(&self, worker_id: &str) {
        self.workers
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .remove(worker_id);
    }

    /// Claims the oldest queued entry. Unregistered workers get nothing.
    pub fn claim_next(&self, worker_id: &str) -> Result<Option<QueueEntry>, StoreError> {
        if !self
            .workers
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .contains(worker_id)
        {
            return Ok(None);
        }
        self.store.claim_next(worker_id, Utc::now())
    }

    /// Runs the assessor for a claimed entry and persists the outcome.
    pub fn assess(&self, entry: &QueueEntry, worker_id: &str) -> Result<AssessOutcome, StoreError> {
        let id = entry.submission_id;
        let Some(record) = self.store.get(id)? else {
            return Ok(AssessOutcome::Abandoned(id));
        };
        if record.lifecycle != Lifecycle::Running || record.worker_id.as_deref() != Some(worker_id) {
            return Ok(AssessOutcome::Abandoned(id));
        }
        match self.assessor.assess(&record) {
            Ok(tree) => {
                if self.store.complete(id, worker_id, &tree, Utc::now())? {
                    let done = self.store.get(id)?.expect("assessed submission exists");
                    Ok(AssessOutcome::Assessed(Box::new(done)))
                } else {
                    Ok(AssessOutcome::Abandoned(id))
                }
            }
            Err(AssessError::Infrastructure(reason)) => {
                tracing::warn!(submission = id.0, attempt = record.attempt_count, "{reason}");
                if record.attempt_count >= self.config.max_attempts {
                    let tree = internal_error(&format!(
                        "gave up after {} attempts: {reason}",
                        record.attempt_count
                    ));
                    if self.store.complete(id, worker_id, &tree, Utc::now())? {
                        let done = self.store.get(id)?.expect("assessed submission exists");
                        return Ok(AssessOutcome::Assessed(Box::new(done)));
                    }
                    return Ok(AssessOutcome::Abandoned(id));
                }
                if self.store.requeue_head(id, Some(worker_id), Utc::now())? {
                    self.signal.notify();
                    Ok(AssessOutcome::Requeued(id))
                } else {
                    Ok(AssessOutcome::Abandoned(id))
                }
            }
        }
    }

    /// Requeues running entries past their stall threshold; entries that
    /// already used all attempts are finalized as internal errors instead.
    pub fn reap_stalled(&self, now: DateTime<Utc>) -> Result<Vec<SubmissionId>, StoreError> {
        let mut requeued = Vec::new();
        for record in self.store.stalled(now)? {
            if record.attempt_count >= self.config.max_attempts {
                let tree = internal_error(&format!(
                    "attempt {} stalled on worker {}",
                    record.attempt_count,
                    record.worker_id.as_deref().unwrap_or("?")
                ));
                self.store.finalize(record.id, &tree, now)?;
            } else if self.store.requeue_head(record.id, None, now)? {
                tracing::warn!(submission = record.id.0, worker = ?record.worker_id, "requeued stalled submission");
                requeued.push(record.id);
            }
        }
        if !requeued.is_empty() {
            self.signal.notify();
        }
        Ok(requeued)
    }

    pub fn counts(&self) -> Result<LifecycleCounts, StoreError> {
        self.store.counts()
    }

    /// Claims and assesses entries on the calling thread until the queue is
    /// empty. Returns the number of entries handled.
    pub fn drain(&self, worker_id: &str) -> Result<usize, StoreError> {
        self.register_worker(worker_id);
        let mut n = 0;
        while let Some(entry) = self.claim_next(worker_id)? {
            self.assess(&entry, worker_id)?;
            n += 1;
        }
        self.deregister_worker(worker_id);
        Ok(n)
    }
}
