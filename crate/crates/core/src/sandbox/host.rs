use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    build_workspace, ExecutionBackend, ExecutionOutcome, ExecutionSpec, LayoutPaths, ProvisionRequest, SandboxError,
    StdinSource, Violation, Workspace, GRACE,
};

/// Environment variables a sandboxed process receives. Nothing else from the
/// engine's environment leaks through.
pub const ENV_ALLOWLIST: &[&str] = &["PATH", "HOME", "TMPDIR", "LANG"];

const SANDBOX_PATH: &str = "/usr/local/bin:/usr/bin:/bin";
const NOBODY: u32 = 65534;

#[derive(Debug, Clone)]
pub struct HostProcessConfig {
    /// Parent directory for workspaces; the system temp dir when `None`.
    pub workspace_base: Option<PathBuf>,
    /// Credentials for sandboxed processes. Defaults to nobody when the
    /// engine runs as root, since root ignores read-only permission bits.
    pub run_as: Option<(u32, u32)>,
    pub grace: Duration,
    pub poll_interval: Duration,
    pub memory_poll_interval: Duration,
}

impl Default for HostProcessConfig {
    fn default() -> Self {
        // SAFETY: geteuid has no preconditions and cannot fail.
        let root = unsafe { libc::geteuid() } == 0;
        HostProcessConfig {
            workspace_base: None,
            run_as: root.then_some((NOBODY, NOBODY)),
            grace: GRACE,
            poll_interval: Duration::from_millis(5),
            memory_poll_interval: Duration::from_millis(50),
        }
    }
}

/// Runs commands as monitored subprocesses of the engine.
#[derive(Debug, Clone, Default)]
pub struct HostProcessBackend {
    config: HostProcessConfig,
}

/// Anything that can run an [`ExecutionSpec`]; judges use this to launch
/// submitted programs.
pub trait ProcessLauncher {
    fn launch(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError>;
}

impl<B: ExecutionBackend + ?Sized> ProcessLauncher for B {
    fn launch(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError> {
        self.execute(spec)
    }
}

impl HostProcessBackend {
    pub fn new(config: HostProcessConfig) -> Self {
        HostProcessBackend { config }
    }

    pub fn config(&self) -> &HostProcessConfig {
        &self.config
    }

    pub(super) fn run(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError> {
        spec.validate()?;
        let spawn_err = |source| SandboxError::Spawn {
            command: spec.command.join(" "),
            source,
        };

        let mut cmd = Command::new(&spec.command[0]);
        cmd.args(&spec.command[1..])
            .current_dir(&spec.workdir)
            .env_clear()
            .env("PATH", SANDBOX_PATH)
            .env("HOME", &spec.workdir)
            .env("TMPDIR", &spec.workdir)
            .env("LANG", "C.UTF-8")
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        match &spec.stdin {
            StdinSource::Bytes(_) => cmd.stdin(Stdio::piped()),
            StdinSource::File(path) => cmd.stdin(File::open(path).map_err(spawn_err)?),
        };
        if let Some((uid, gid)) = self.config.run_as {
            cmd.uid(uid).gid(gid);
        }

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(spawn_err)?;
        let pid = child.id() as libc::pid_t;

        if let (StdinSource::Bytes(bytes), Some(mut pipe)) = (&spec.stdin, child.stdin.take()) {
            let bytes = bytes.clone();
            thread::spawn(move || {
                // EPIPE when the child does not read its input is fine.
                let _ = pipe.write_all(&bytes);
            });
        }

        let (done_tx, done_rx) = mpsc::channel();
        let stdout = Capture::spawn(child.stdout.take(), spec.output_limit, done_tx.clone());
        let stderr = Capture::spawn(child.stderr.take(), spec.output_limit, done_tx);

        let mut violations = BTreeSet::new();
        let mut killed = false;
        let mut term_sent_at: Option<Instant> = None;
        let mut kill_sent = false;
        let mut max_memory: u64 = 0;
        let mut last_memory_poll = start;
        let mut status: libc::c_int = 0;
        // SAFETY: rusage is plain old data; zeroed is a valid value.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };

        loop {
            // SAFETY: pid is our own child; status and usage are valid for writes.
            let rc = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
            if rc == pid || rc < 0 {
                break;
            }
            let now = Instant::now();
            let elapsed = now - start;

            if !violations.contains(&Violation::Output) && (stdout.exceeded() || stderr.exceeded()) {
                violations.insert(Violation::Output);
                kill_group(pid, libc::SIGKILL);
                killed = true;
                kill_sent = true;
            }
            if term_sent_at.is_none() && elapsed >= spec.time_limit {
                violations.insert(Violation::Timeout);
                kill_group(pid, libc::SIGTERM);
                killed = true;
                term_sent_at = Some(now);
            }
            if let Some(sent) = term_sent_at {
                if !kill_sent && now - sent >= self.config.grace {
                    kill_group(pid, libc::SIGKILL);
                    kill_sent = true;
                }
            }
            if now - last_memory_poll >= self.config.memory_poll_interval {
                last_memory_poll = now;
                let rss = group_rss(pid);
                max_memory = max_memory.max(rss);
                if rss > spec.memory_limit && !violations.contains(&Violation::Memory) {
                    violations.insert(Violation::Memory);
                    kill_group(pid, libc::SIGKILL);
                    killed = true;
                    kill_sent = true;
                }
            }
            thread::sleep(self.config.poll_interval);
        }
        let wall_time = start.elapsed();
        // Descendants that outlived the main process.
        kill_group(pid, libc::SIGKILL);

        // Readers finish once every holder of the pipes is gone; do not wait
        // forever on a descendant that escaped the process group.
        let deadline = Instant::now() + Duration::from_secs(1);
        for _ in 0..2 {
            let left = deadline.saturating_duration_since(Instant::now());
            if done_rx.recv_timeout(left).is_err() {
                break;
            }
        }
        if stdout.exceeded() || stderr.exceeded() {
            violations.insert(Violation::Output);
        }

        let exit_code = if libc::WIFEXITED(status) {
            Some(libc::WEXITSTATUS(status))
        } else if libc::WIFSIGNALED(status) && !killed {
            Some(128 + libc::WTERMSIG(status))
        } else {
            None
        };
        let cpu = |tv: libc::timeval| Duration::new(tv.tv_sec as u64, tv.tv_usec as u32 * 1000);
        let max_memory = max_memory.max(usage.ru_maxrss as u64 * 1024);

        Ok(ExecutionOutcome {
            exit_code,
            stdout: stdout.take(),
            stderr: stderr.take(),
            wall_time,
            cpu_time: Some(cpu(usage.ru_utime) + cpu(usage.ru_stime)),
            max_memory: (max_memory > 0).then_some(max_memory),
            violations,
        })
    }
}

impl ExecutionBackend for HostProcessBackend {
    fn name(&self) -> &'static str {
        "host-process"
    }

    fn provision(&self, request: &ProvisionRequest<'_>) -> Result<Workspace, SandboxError> {
        build_workspace(
            self.config.workspace_base.as_deref(),
            request,
            self.config.run_as,
            LayoutPaths::under,
        )
    }

    fn execute(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError> {
        self.run(spec)
    }
}

fn kill_group(pgid: libc::pid_t, signal: libc::c_int) {
    // SAFETY: killpg only sends a signal; ESRCH for a vanished group is fine.
    unsafe {
        libc::killpg(pgid, signal);
    }
}

// Resident memory summed over the process group, from /proc.
fn group_rss(pgid: libc::pid_t) -> u64 {
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) }.max(4096) as u64;
    let Ok(entries) = fs::read_dir("/proc") else {
        return 0;
    };
    let mut total = 0;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if !name.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let Ok(stat) = fs::read_to_string(format!("/proc/{name}/stat")) else {
            continue;
        };
        // Fields after the parenthesized command name: state ppid pgrp ...
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else {
            continue;
        };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.get(2).and_then(|g| g.parse::<libc::pid_t>().ok()) != Some(pgid) {
            continue;
        }
        if let Some(rss) = fields.get(21).and_then(|r| r.parse::<u64>().ok()) {
            total += rss * page;
        }
    }
    total
}

// A pipe reader that keeps at most `limit` bytes and drains the rest.
struct Capture {
    buf: Arc<Mutex<Vec<u8>>>,
    exceeded: Arc<AtomicBool>,
}

impl Capture {
    fn spawn<R: Read + Send + 'static>(pipe: Option<R>, limit: u64, done: mpsc::Sender<()>) -> Self {
        let buf = Arc::new(Mutex::new(Vec::new()));
        let exceeded = Arc::new(AtomicBool::new(false));
        let (b, e) = (buf.clone(), exceeded.clone());
        thread::spawn(move || {
            if let Some(mut pipe) = pipe {
                let limit = limit as usize;
                let mut chunk = vec![0u8; 64 * 1024];
                loop {
                    match pipe.read(&mut chunk) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            let mut buf = b.lock().expect("capture lock");
                            let room = limit.saturating_sub(buf.len());
                            if n > room {
                                e.store(true, Ordering::SeqCst);
                            }
                            buf.extend_from_slice(&chunk[..n.min(room)]);
                        }
                    }
                }
            }
            let _ = done.send(());
        });
        Capture { buf, exceeded }
    }

    fn exceeded(&self) -> bool {
        self.exceeded.load(Ordering::SeqCst)
    }

    fn take(&self) -> Vec<u8> {
        std::mem::take(&mut *self.buf.lock().expect("capture lock"))
    }
}
