//! Engine side of the judge contract.
//!
//! A judge is a directory with an executable `run`. It receives one JSON
//! [`JudgeMetadata`] document on standard input and must print one JSON
//! feedback document on standard output. Whatever the judge does, an
//! invocation yields a well-formed [`FeedbackTree`]; only failures of the
//! execution backend itself surface as errors.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{aggregate_status, parse_feedback, FeedbackTree, Message, ParseMode, Status};
use crate::repo::EffectiveConfig;
use crate::sandbox::{
    ExecutionBackend, ExecutionOutcome, ExecutionSpec, ImageRef, LayoutPaths, SandboxError, StdinSource, Violation,
    Workspace,
};
use crate::scheduler::SubmissionRecord;

pub const JUDGE_ENTRY: &str = "run";
pub const JUDGE_MANIFEST: &str = "judge.json";

// Captured judge output embedded in staff messages is cut at this size.
const EMBED_LIMIT: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeBundle {
    pub name: String,
    pub root_path: PathBuf,
    /// Relative to `root_path`.
    pub entry: PathBuf,
    pub default_image: ImageRef,
    /// How strictly feedback from this judge is validated.
    pub feedback_mode: ParseMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    default_image: Option<ImageRef>,
    #[serde(default)]
    feedback_mode: Option<ParseMode>,
}

#[derive(Debug, Error)]
pub enum JudgeLoadError {
    #[error("{0}: missing executable '{JUDGE_ENTRY}'")]
    MissingEntry(PathBuf),
    #[error("{path}: bad {JUDGE_MANIFEST}: {message}")]
    BadManifest { path: PathBuf, message: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl JudgeBundle {
    /// A third-party judge with lenient feedback validation.
    pub fn new(name: impl Into<String>, root: impl Into<PathBuf>, default_image: ImageRef) -> Self {
        JudgeBundle {
            name: name.into(),
            root_path: root.into(),
            entry: PathBuf::from(JUDGE_ENTRY),
            default_image,
            feedback_mode: ParseMode::Lenient,
        }
    }

    /// Loads a bundle directory; its name is the directory name. An optional
    /// `judge.json` sets `default_image` and `feedback_mode`.
    pub fn load(dir: &Path) -> Result<Self, JudgeLoadError> {
        let entry = dir.join(JUDGE_ENTRY);
        let executable = fs::metadata(&entry)
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false);
        if !executable {
            return Err(JudgeLoadError::MissingEntry(dir.to_path_buf()));
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut bundle = JudgeBundle::new(name, dir, ImageRef::host_process());
        let manifest_path = dir.join(JUDGE_MANIFEST);
        if manifest_path.is_file() {
            let manifest: Manifest =
                serde_json::from_slice(&fs::read(&manifest_path)?).map_err(|e| JudgeLoadError::BadManifest {
                    path: manifest_path.clone(),
                    message: e.to_string(),
                })?;
            if let Some(image) = manifest.default_image {
                bundle.default_image = image;
            }
            if let Some(mode) = manifest.feedback_mode {
                bundle.feedback_mode = mode;
            }
        }
        Ok(bundle)
    }
}

/// Installed judges by name.
#[derive(Debug, Clone, Default)]
pub struct JudgeRegistry {
    judges: BTreeMap<String, JudgeBundle>,
}

impl JudgeRegistry {
    pub fn insert(&mut self, bundle: JudgeBundle) {
        self.judges.insert(bundle.name.clone(), bundle);
    }

    pub fn get(&self, name: &str) -> Option<&JudgeBundle> {
        self.judges.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.judges.keys().map(String::as_str)
    }

    /// Loads every subdirectory of `dir` as a bundle; broken bundles are
    /// reported and skipped.
    pub fn load_dir(dir: &Path) -> io::Result<(Self, Vec<JudgeLoadError>)> {
        let mut registry = JudgeRegistry::default();
        let mut errors = Vec::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            match JudgeBundle::load(&d) {
                Ok(b) => registry.insert(b),
                Err(e) => errors.push(e),
            }
        }
        Ok((registry, errors))
    }
}

/// The document a judge reads from standard input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeMetadata {
    pub submission_path: PathBuf,
    pub resources_path: PathBuf,
    pub judge_path: PathBuf,
    pub workdir_path: PathBuf,
    pub programming_language: String,
    pub natural_language: String,
    /// Seconds.
    pub time_limit: u64,
    /// Bytes.
    pub memory_limit: u64,
    /// Bytes.
    pub output_limit: u64,
}

pub fn build_judge_metadata(
    submission: &SubmissionRecord,
    config: &EffectiveConfig,
    layout: &LayoutPaths,
) -> JudgeMetadata {
    JudgeMetadata {
        submission_path: layout.submission.clone(),
        resources_path: layout.resources.clone(),
        judge_path: layout.judge.clone(),
        workdir_path: layout.workdir.clone(),
        programming_language: config.programming_language.clone(),
        natural_language: submission.natural_language.clone(),
        time_limit: config.time_limit,
        memory_limit: config.memory_limit,
        output_limit: config.output_limit,
    }
}

/// Wall-clock cap for a whole judge run: `time_limit * factor + headroom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardCap {
    pub factor: u32,
    pub headroom: Duration,
}

impl Default for HardCap {
    fn default() -> Self {
        HardCap {
            factor: 2,
            headroom: Duration::from_secs(30),
        }
    }
}

impl HardCap {
    pub fn for_limit(&self, time_limit_secs: u64) -> Duration {
        Duration::from_secs(time_limit_secs) * self.factor + self.headroom
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InvokeOptions {
    pub network_allowed: bool,
    pub hard_cap: HardCap,
}

fn lossy_prefix(bytes: &[u8]) -> String {
    let cut = &bytes[..bytes.len().min(EMBED_LIMIT)];
    let mut text = String::from_utf8_lossy(cut).into_owned();
    if bytes.len() > EMBED_LIMIT {
        text.push_str("\n[truncated]");
    }
    text
}

fn violation_status(violations: &std::collections::BTreeSet<Violation>) -> Option<Status> {
    let statuses = violations.iter().map(|v| match v {
        Violation::Timeout => Status::TimeLimitExceeded,
        Violation::Memory => Status::MemoryLimitExceeded,
        Violation::Output => Status::OutputLimitExceeded,
    });
    (!violations.is_empty()).then(|| aggregate_status(statuses))
}

fn limit_message(status: Status) -> &'static str {
    match status {
        Status::TimeLimitExceeded => "Assessment did not complete within the given time.",
        Status::MemoryLimitExceeded => "The memory limit was exceeded during assessment.",
        Status::OutputLimitExceeded => "Too much output was generated during assessment.",
        _ => "Assessment was interrupted.",
    }
}

/// Turns a finished judge process into feedback.
pub fn interpret_outcome(outcome: &ExecutionOutcome, mode: ParseMode) -> FeedbackTree {
    let stderr_msg = || Message::code(lossy_prefix(&outcome.stderr)).staff();
    if let Some(status) = violation_status(&outcome.violations) {
        let mut messages = vec![Message::plain(limit_message(status))];
        if !outcome.stderr.is_empty() {
            messages.push(stderr_msg());
        }
        return FeedbackTree::verdict(status, messages);
    }
    match parse_feedback(&outcome.stdout, mode) {
        Ok(mut tree) => {
            if tree.test_count() == 0 && tree.status == Status::Correct {
                tracing::warn!("judge reported a correct verdict without any tests");
            }
            if let Some(code) = outcome.exit_code.filter(|c| *c != 0) {
                tree.messages
                    .push(Message::plain(format!("judge exited with status {code}")).staff());
            }
            if !outcome.stderr.is_empty() {
                tree.messages.push(stderr_msg());
            }
            tree
        }
        Err(e) => {
            let exit = outcome
                .exit_code
                .map_or_else(|| "killed".to_string(), |c| c.to_string());
            let detail = format!(
                "judge produced invalid feedback: {e}\nexit status: {exit}\n--- stdout ---\n{}\n--- stderr ---\n{}",
                lossy_prefix(&outcome.stdout),
                lossy_prefix(&outcome.stderr)
            );
            FeedbackTree::verdict(
                Status::InternalError,
                vec![
                    Message::plain("The judge failed to assess this submission."),
                    Message::code(detail).staff(),
                ],
            )
        }
    }
}

/// Runs a judge inside a provisioned workspace.
///
/// Returns `Err` only for infrastructure failures that the caller should
/// retry; every judge-caused failure is folded into the returned tree.
pub fn invoke_judge(
    bundle: &JudgeBundle,
    metadata: &JudgeMetadata,
    backend: &dyn ExecutionBackend,
    workspace: &Workspace,
    options: &InvokeOptions,
) -> Result<FeedbackTree, SandboxError> {
    let entry = workspace.sandbox_paths().judge.join(&bundle.entry);
    let spec = ExecutionSpec {
        image: workspace.image().clone(),
        command: vec![entry.to_string_lossy().into_owned()],
        stdin: StdinSource::Bytes(serde_json::to_vec(metadata).expect("metadata serializes")),
        workdir: metadata.workdir_path.clone(),
        mounts: workspace.mounts(),
        time_limit: options.hard_cap.for_limit(metadata.time_limit),
        memory_limit: metadata.memory_limit,
        output_limit: metadata.output_limit,
        network_allowed: options.network_allowed,
    };
    match backend.execute(&spec) {
        Ok(outcome) => Ok(interpret_outcome(&outcome, bundle.feedback_mode)),
        Err(e) if e.is_infrastructure() => Err(e),
        Err(e) => Ok(FeedbackTree::verdict(
            Status::InternalError,
            vec![
                Message::plain("The judge could not be started."),
                Message::plain(e.to_string()).staff(),
            ],
        )),
    }
}
