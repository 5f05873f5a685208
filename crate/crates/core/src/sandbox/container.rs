use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::{
    build_workspace, ExecutionBackend, ExecutionOutcome, ExecutionSpec, HostProcessBackend, HostProcessConfig,
    LayoutPaths, ProvisionRequest, SandboxError, Violation, Workspace,
};

#[derive(Debug, Clone)]
pub struct ContainerConfig {
    /// Runtime CLI, e.g. `docker` or `podman`.
    pub runtime: String,
    pub cpus: f64,
    pub pids_limit: u32,
    /// Size of the tmpfs backing the writable workdir.
    pub workspace_quota: u64,
    /// Extra time allowed for container start-up on top of the execution time limit.
    pub startup_allowance: Duration,
    pub workspace_base: Option<std::path::PathBuf>,
}

impl Default for ContainerConfig {
    fn default() -> Self {
        ContainerConfig {
            runtime: "docker".into(),
            cpus: 1.0,
            pids_limit: 256,
            workspace_quota: 1 << 30,
            startup_allowance: Duration::from_secs(5),
            workspace_base: None,
        }
    }
}

/// Runs each execution in a fresh container via the runtime CLI.
#[derive(Debug)]
pub struct ContainerBackend {
    config: ContainerConfig,
    cli: HostProcessBackend,
    counter: AtomicU64,
}

// Exit status the docker CLI uses when the daemon itself failed.
const RUNTIME_FAILURE: i32 = 125;

impl ContainerBackend {
    pub fn new(config: ContainerConfig) -> Self {
        let cli = HostProcessBackend::new(HostProcessConfig {
            run_as: None,
            ..HostProcessConfig::default()
        });
        ContainerBackend {
            config,
            cli,
            counter: AtomicU64::new(0),
        }
    }

    /// Whether the runtime CLI is installed and its daemon answers.
    pub fn available(&self) -> bool {
        Command::new(&self.config.runtime)
            .arg("version")
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    fn image_exists(&self, image: &str) -> Result<bool, SandboxError> {
        let status = Command::new(&self.config.runtime)
            .args(["image", "inspect", image])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(|e| SandboxError::BackendUnavailable(e.to_string()))?;
        Ok(status.success())
    }

    /// Arguments for `<runtime> run`, excluding the runtime itself.
    pub fn run_args(&self, spec: &ExecutionSpec, name: &str) -> Vec<String> {
        let mut args: Vec<String> = vec![
            "run".into(),
            "--interactive".into(),
            "--name".into(),
            name.into(),
            "--network".into(),
            if spec.network_allowed { "bridge" } else { "none" }.into(),
            "--memory".into(),
            spec.memory_limit.to_string(),
            "--memory-swap".into(),
            spec.memory_limit.to_string(),
            "--cpus".into(),
            format!("{}", self.config.cpus),
            "--pids-limit".into(),
            self.config.pids_limit.to_string(),
            "--security-opt".into(),
            "no-new-privileges".into(),
            "--workdir".into(),
            spec.workdir.display().to_string(),
        ];
        for mount in &spec.mounts {
            if !mount.read_only && mount.sandbox == spec.workdir {
                args.push("--mount".into());
                args.push(format!(
                    "type=tmpfs,destination={},tmpfs-size={}",
                    mount.sandbox.display(),
                    self.config.workspace_quota
                ));
                continue;
            }
            args.push("--volume".into());
            args.push(format!(
                "{}:{}{}",
                mount.host.display(),
                mount.sandbox.display(),
                if mount.read_only { ":ro" } else { "" }
            ));
        }
        args.push("--env".into());
        args.push("LANG=C.UTF-8".into());
        args.push("--env".into());
        args.push(format!("HOME={}", spec.workdir.display()));
        args.push(spec.image.0.clone());
        args.extend(spec.command.iter().cloned());
        args
    }

    fn cli(&self, args: &[&str]) -> Option<String> {
        Command::new(&self.config.runtime)
            .args(args)
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
    }
}

impl ExecutionBackend for ContainerBackend {
    fn name(&self) -> &'static str {
        "container"
    }

    fn provision(&self, request: &ProvisionRequest<'_>) -> Result<Workspace, SandboxError> {
        if request.image.is_host_process() || !self.image_exists(&request.image.0)? {
            return Err(SandboxError::UnknownImage(request.image.clone()));
        }
        build_workspace(self.config.workspace_base.as_deref(), request, None, |_: &Path| {
            LayoutPaths::container()
        })
    }

    fn execute(&self, spec: &ExecutionSpec) -> Result<ExecutionOutcome, SandboxError> {
        spec.validate()?;
        let name = format!(
            "forge-{}-{}",
            std::process::id(),
            self.counter.fetch_add(1, Ordering::Relaxed)
        );
        let mut command = vec![self.config.runtime.clone()];
        command.extend(self.run_args(spec, &name));
        let cli_spec = ExecutionSpec {
            command,
            workdir: std::env::temp_dir(),
            time_limit: spec.time_limit + self.config.startup_allowance,
            mounts: Vec::new(),
            ..spec.clone()
        };
        let result = self.cli.run(&cli_spec);
        let oom = self
            .cli(&["inspect", "--format", "{{.State.OOMKilled}}", &name])
            .is_some_and(|s| s == "true");
        let timed_out = result
            .as_ref()
            .map(|o| o.violations.contains(&Violation::Timeout))
            .unwrap_or(false);
        if timed_out {
            let _ = self.cli(&["kill", &name]);
        }
        let _ = self.cli(&["rm", "--force", &name]);

        let mut outcome = result.map_err(|e| match e {
            SandboxError::Spawn { source, .. } => SandboxError::BackendUnavailable(source.to_string()),
            other => other,
        })?;
        if outcome.exit_code == Some(RUNTIME_FAILURE) && outcome.violations.is_empty() {
            return Err(SandboxError::BackendUnavailable(
                String::from_utf8_lossy(&outcome.stderr).into_owned(),
            ));
        }
        if oom {
            outcome.violations.insert(Violation::Memory);
            outcome.exit_code = None;
        }
        Ok(outcome)
    }
}
