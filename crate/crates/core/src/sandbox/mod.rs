//! Isolated execution workspaces and resource-limited command execution.
//!
//! Every assessment gets its own [`Workspace`] with a fixed layout:
//!
//! ```text
//! /submission/source   the submitted code (read-only)
//! /judge/              the judge bundle (read-only)
//! /resources/          assessment resources of the activity (read-only)
//! /workdir/            empty and writable
//! ```
//!
//! Two backends implement [`ExecutionBackend`]: [`ContainerBackend`] shells out
//! to an OCI container runtime and [`HostProcessBackend`] runs plain monitored
//! subprocesses (used by CI and tests; its memory limit is polled and
//! therefore best-effort, and it cannot restrict network access).

mod container;
mod host;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{ContainerBackend, ContainerConfig};
pub use host::{HostProcessBackend, HostProcessConfig, ProcessLauncher, ENV_ALLOWLIST};

/// Time between the soft limit (SIGTERM) and the hard kill (SIGKILL).
pub const GRACE: Duration = Duration::from_secs(2);

/// Image reference, or the pseudo-image `host-process`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub const HOST_PROCESS: &'static str = "host-process";

    pub fn host_process() -> Self {
        ImageRef(Self::HOST_PROCESS.to_string())
    }

    pub fn is_host_process(&self) -> bool {
        self.0 == Self::HOST_PROCESS
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mount {
    pub host: PathBuf,
    pub sandbox: PathBuf,
    pub read_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StdinSource {
    Bytes(Vec<u8>),
    File(PathBuf),
}

impl Default for StdinSource {
    fn default() -> Self {
        StdinSource::Bytes(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionSpec {
    pub image: ImageRef,
    pub command: Vec<String>,
    pub stdin: StdinSource,
    pub workdir: PathBuf,
    pub mounts: Vec<Mount>,
    pub time_limit: Duration,
    pub memory_limit: u64,
    pub output_limit: u64,
    pub network_allowed: bool,
}

impl ExecutionSpec {
    /// Spec with the given command and engine-default limits, running on the
    /// host in `workdir`.
    pub fn host(command: Vec<String>, workdir: impl Into<PathBuf>) -> Self {
        ExecutionSpec {
            image: ImageRef::host_process(),
            command,
            stdin: StdinSource::default(),
            workdir: workdir.into(),
            mounts: Vec::new(),
            time_limit: Duration::from_secs(30),
            memory_limit: 256 * 1024 * 1024,
            output_limit: 10 * 1024 * 1024,
            network_allowed: false,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.command.is_empty() {
            return Err(SandboxError::InvalidSpec("empty command".into()));
        }
        if self.time_limit.is_zero() || self.memory_limit == 0 || self.output_limit == 0 {
            return Err(SandboxError::InvalidSpec("limits must be positive".into()));
        }
        for (i, a) in self.mounts.iter().enumerate() {
            for b in &self.mounts[i + 1..] {
                if a.sandbox.starts_with(&b.sandbox) || b.sandbox.starts_with(&a.sandbox) {
                    return Err(SandboxError::InvalidSpec(format!(
                        "mounts {} and {} overlap",
                        a.sandbox.display(),
                        b.sandbox.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    Timeout,
    Memory,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    /// `None` when the engine killed the process. A process that died from a
    /// signal on its own reports `128 + signal`.
    pub exit_code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_time: Duration,
    /// Informational only; limits are enforced on wall time.
    pub cpu_time: Option<Duration>,
    pub max_memory: Option<u64>,
    pub violations: BTreeSet<Violation>,
}

impl ExecutionOutcome {
    pub fn succeeded(&self) -> bool {
        self.exit_code == Some(0) && self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("unknown image '{0}'")]
    UnknownImage(ImageRef),
    #[error("provisioning failed: {0}")]
    Provision(#[source] io::Error),
    #[error("invalid execution spec: {0}")]
    InvalidSpec(String),
    #[error("could not start '{command}': {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("execution backend unavailable: {0}")]
    BackendUnavailable(String),
}

impl SandboxError {
    /// Infrastructure failures are retried by the scheduler; everything else
    /// becomes part of the assessment result.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, SandboxError::BackendUnavailable(_))
    }
}

/// Paths of the four layout roots, either as seen from inside the sandbox or
/// on the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPaths {
    pub submission: PathBuf,
    pub judge: PathBuf,
    pub resources: PathBuf,
    pub workdir: PathBuf,
}

impl LayoutPaths {
    fn under(root: &Path) -> Self {
        LayoutPaths {
            submission: root.join("submission").join("source"),
            judge: root.join("judge"),
            resources: root.join("resources"),
            workdir: root.join("workdir"),
        }
    }

    /// The in-container layout.
    pub fn container() -> Self {
        Self::under(Path::new("/"))
    }
}

/// A provisioned workspace. The host directory is removed on drop.
#[derive(Debug)]
pub struct Workspace {
    root: tempfile::TempDir,
    image: ImageRef,
    host: LayoutPaths,
    sandbox: LayoutPaths,
}

impl Workspace {
    pub fn image(&self) -> &ImageRef {
        &self.image
    }

    /// Host-side locations.
    pub fn host_paths(&self) -> &LayoutPaths {
        &self.host
    }

    /// Locations as seen by processes running inside the sandbox.
    pub fn sandbox_paths(&self) -> &LayoutPaths {
        &self.sandbox
    }

    pub fn root(&self) -> &Path {
        self.root.path()
    }

    /// Bind mounts realizing the layout.
    pub fn mounts(&self) -> Vec<Mount> {
        let submission_dir = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
        vec![
            Mount {
                host: submission_dir(&self.host.submission),
                sandbox: submission_dir(&self.sandbox.submission),
                read_only: true,
            },
            Mount {
                host: self.host.judge.clone(),
                sandbox: self.sandbox.judge.clone(),
                read_only: true,
            },
            Mount {
                host: self.host.resources.clone(),
                sandbox: self.sandbox.resources.clone(),
                read_only: true,
            },
            Mount {
                host: self.host.workdir.clone(),
                sandbox: self.sandbox.workdir.clone(),
                read_only: false,
            },
        ]
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        // Read-only directories must become writable again before the
        // temporary directory can be removed by an unprivileged engine.
        let _ = make_writable(self.root.path());
    }
}

fn make_writable(path: &Path) -> io::Result<()> {
    let meta = fs::symlink_metadata(path)?;
    if meta.is_dir() {
        fs::set_permissions(path, fs::Permissions::from_mode(0o755))?;
        for entry in fs::read_dir(path)? {
            make_writable(&entry?.path())?;
        }
    }
    Ok(())
}

/// What to place in a new workspace.
#[derive(Debug, Clone, Copy)]
pub struct ProvisionRequest<'a> {
    pub image: &'a ImageRef,
    pub submission: &'a [u8],
    pub judge_dir: &'a Path,
    pub resources_dir: Option<&'a Path>,
}

pub trait ExecutionBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn provision(&self, request: &ProvisionRequest<'_>) -> Result<Workspace, SandboxError>;

    /// Runs a command to completion or forcible termination. Blocking.
    fn execute(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError>;
}

// Shared by both backends: builds the host directory tree and applies
// permissions. `owner` receives ownership of the writable workdir.
fn build_workspace(
    base: Option<&Path>,
    request: &ProvisionRequest<'_>,
    owner: Option<(u32, u32)>,
    sandbox_layout: impl FnOnce(&Path) -> LayoutPaths,
) -> Result<Workspace, SandboxError> {
    let mut builder = tempfile::Builder::new();
    builder.prefix("forge-ws-");
    let root = match base {
        Some(base) => builder.tempdir_in(base),
        None => builder.tempdir(),
    }
    .map_err(SandboxError::Provision)?;
    let host = LayoutPaths::under(root.path());
    let root_path = root.path().to_path_buf();

    let fill = || -> io::Result<()> {
        fs::set_permissions(&root_path, fs::Permissions::from_mode(0o755))?;
        let submission_dir = host.submission.parent().expect("submission has a parent");
        fs::create_dir_all(submission_dir)?;
        fs::write(&host.submission, request.submission)?;
        copy_tree(request.judge_dir, &host.judge)?;
        match request.resources_dir {
            Some(dir) if dir.is_dir() => copy_tree(dir, &host.resources)?,
            _ => fs::create_dir_all(&host.resources)?,
        }
        fs::create_dir_all(&host.workdir)?;
        if let Some((uid, gid)) = owner {
            std::os::unix::fs::chown(&host.workdir, Some(uid), Some(gid))?;
        }
        fs::set_permissions(&host.workdir, fs::Permissions::from_mode(0o755))?;
        // The submission is executable so self-contained scripts can run.
        fs::set_permissions(&host.submission, fs::Permissions::from_mode(0o555))?;
        seal(submission_dir)?;
        seal(&host.judge)?;
        seal(&host.resources)?;
        Ok(())
    };
    let sandbox = sandbox_layout(&root_path);
    let workspace = Workspace {
        root,
        image: request.image.clone(),
        host: host.clone(),
        sandbox,
    };
    fill().map_err(SandboxError::Provision)?;
    Ok(workspace)
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        let kind = entry.file_type()?;
        if kind.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else if kind.is_file() {
            fs::copy(entry.path(), &target)?;
        } else if kind.is_symlink() {
            // Resolve links so the workspace is self-contained.
            let resolved = fs::canonicalize(entry.path())?;
            if resolved.is_dir() {
                copy_tree(&resolved, &target)?;
            } else {
                fs::copy(&resolved, &target)?;
            }
        }
    }
    Ok(())
}

// Strips write permission everywhere below `path`; keeps execute bits.
fn seal(path: &Path) -> io::Result<()> {
    let meta = fs::symlink_metadata(path)?;
    if meta.is_dir() {
        for entry in fs::read_dir(path)? {
            seal(&entry?.path())?;
        }
        fs::set_permissions(path, fs::Permissions::from_mode(0o555))?;
    } else if meta.is_file() {
        let mode = meta.permissions().mode();
        let exec = if mode & 0o111 != 0 { 0o111 } else { 0 };
        fs::set_permissions(path, fs::Permissions::from_mode(0o444 | exec))?;
    }
    Ok(())
}
