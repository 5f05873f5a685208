use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context as _};
use chrono::Utc;
use clap::{Parser, Subcommand};
use forge_judge::api;
use forge_judge::services::{backend_for, Services};
use forge_judge::settings::{BackendKind, Settings};
use forge_judge::tokens::parse_scopes;
use forge_judge_core::feedback::Status;
use forge_judge_core::judge::{InvokeOptions, JudgeRegistry};
use forge_judge_core::repo::{Activity, ActivityRegistry, EngineDefaults, Scanner};
use forge_judge_core::scheduler::{JudgePipeline, Lifecycle, PoolConfig, SubmissionId, SubmissionRecord, WorkerPool};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "forge-judge", version, about = "Automated assessment of programming exercises")]
struct Cli {
    /// Service configuration file.
    #[arg(long, short, global = true, default_value = "forge-judge.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API, with a worker pool unless disabled.
    Serve {
        #[arg(long)]
        no_workers: bool,
    },
    /// Run only a worker pool against the shared store.
    Worker,
    /// Fetch and rescan one repository and print what changed.
    Sync { repo: String },
    /// Assess a local file against one exercise without the service.
    Assess {
        /// Activity id, or a path relative to the repository root with --repo.
        activity: String,
        file: PathBuf,
        /// Scan this directory instead of the configured repositories.
        #[arg(long)]
        repo: Option<PathBuf>,
        /// Judge bundles directory; overrides the configured one.
        #[arg(long)]
        judges: Option<PathBuf>,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, value_enum, default_value = "host")]
        backend: BackendArg,
    },
    /// Manage API tokens.
    Token {
        #[command(subcommand)]
        action: TokenAction,
    },
    /// Print the OpenAPI description of the HTTP API.
    Openapi,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BackendArg {
    Host,
    Container,
}

#[derive(Subcommand)]
enum TokenAction {
    /// Create a token; the secret is printed once.
    Create {
        #[arg(long)]
        user: String,
        /// Comma-separated subset of submit, read, admin.
        #[arg(long)]
        scopes: String,
    },
    List,
    Revoke { id: String },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { no_workers } => serve(&cli.config, !no_workers),
        Command::Worker => worker(&cli.config),
        Command::Sync { repo } => {
            let services = Services::build(Settings::load(&cli.config)?)?;
            let report = services.content.sync(&repo)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Assess {
            activity,
            file,
            repo,
            judges,
            language,
            backend,
        } => assess(&cli.config, &activity, &file, repo.as_deref(), judges, &language, backend),
        Command::Token { action } => token(&cli.config, action),
        Command::Openapi => {
            print!("{}", forge_judge::openapi::yaml());
            Ok(())
        }
    }
}

fn pool_config(settings: &Settings) -> PoolConfig {
    let mut config = PoolConfig::default();
    if let Some(n) = settings.workers {
        config.workers = n;
    }
    config
}

fn serve(config: &Path, with_workers: bool) -> anyhow::Result<()> {
    let services = Services::build(Settings::load(config)?)?;
    services.sync_all();
    let listen = services.settings.listen.clone();
    let pool = with_workers.then(|| WorkerPool::start(Arc::clone(&services.scheduler), pool_config(&services.settings)));
    let app = api::router(services);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        tracing::info!("listening on {listen}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    if let Some(pool) = pool {
        pool.shutdown();
    }
    Ok(())
}

fn worker(config: &Path) -> anyhow::Result<()> {
    let services = Services::build(Settings::load(config)?)?;
    services.sync_all();
    let pool = WorkerPool::start(Arc::clone(&services.scheduler), pool_config(&services.settings));
    tracing::info!(workers = pool.alive(), "worker pool started");
    // Webhooks reach the API process; a standalone worker rescans on a timer
    // to pick up repository changes.
    let interval = Duration::from_secs(services.settings.resync_interval.max(1));
    loop {
        std::thread::sleep(interval);
        if pool.alive() == 0 {
            bail!("all workers exited");
        }
        services.sync_all();
    }
}

fn find_activity(registry: &ActivityRegistry, key: &str) -> Option<Arc<Activity>> {
    registry.all().into_iter().find(|a| {
        a.id.0 == key || a.rel_path == key || format!("{}:{}", a.repo_id, a.rel_path) == key
    })
}

#[allow(clippy::too_many_arguments)]
fn assess(
    config: &Path,
    key: &str,
    file: &Path,
    repo: Option<&Path>,
    judges_dir: Option<PathBuf>,
    language: &str,
    backend: BackendArg,
) -> anyhow::Result<()> {
    let settings = if repo.is_some() && !config.exists() {
        None
    } else {
        Some(Settings::load(config)?)
    };
    let judges_dir = judges_dir
        .or_else(|| settings.as_ref().map(|s| s.judges_dir.clone()))
        .ok_or_else(|| anyhow!("no judges directory: pass --judges or a configuration file"))?;
    let (judges, errors) = JudgeRegistry::load_dir(&judges_dir)
        .with_context(|| format!("reading judges from {}", judges_dir.display()))?;
    for e in errors {
        tracing::warn!("skipping judge: {e}");
    }
    let judges = Arc::new(judges);
    let registry = Arc::new(ActivityRegistry::default());
    match (repo, &settings) {
        (Some(dir), _) => {
            let defaults = settings.as_ref().map(Settings::engine_defaults).unwrap_or_else(EngineDefaults::default);
            let scan = Scanner {
                repo_id: "local",
                judges: &judges,
                defaults: &defaults,
                mode: Default::default(),
            }
            .scan(dir)?;
            for d in &scan.diagnostics {
                eprintln!("{}: {}", d.path, d.message);
            }
            registry.replace("local", scan.activities);
        }
        (None, Some(s)) => {
            let services = Services::build(s.clone())?;
            services.sync_all();
            registry.replace("all", services.content.registry().all().iter().map(|a| (**a).clone()).collect());
        }
        (None, None) => unreachable!("settings are loaded unless --repo is given"),
    }
    let activity = find_activity(&registry, key).ok_or_else(|| anyhow!("no activity '{key}'"))?;
    let code = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let pipeline = JudgePipeline {
        activities: Arc::clone(&registry),
        judges,
        backend: backend_for(match backend {
            BackendArg::Host => BackendKind::Host,
            BackendArg::Container => BackendKind::Container,
        }),
        options: InvokeOptions::default(),
    };
    let now = Utc::now();
    let record = SubmissionRecord {
        id: SubmissionId(0),
        user_id: "local".into(),
        course_id: String::new(),
        series_id: String::new(),
        activity_id: activity.id.clone(),
        natural_language: language.to_string(),
        code,
        submitted_at: now,
        lifecycle: Lifecycle::Running,
        result_status: None,
        feedback: None,
        attempt_count: 1,
        enqueued_at: Some(now),
        worker_id: None,
        started_at: Some(now),
        assessed_at: None,
        stall_after: Duration::ZERO,
    };
    let tree = pipeline
        .assess_activity(&activity, &record)
        .map_err(|e| anyhow!("{e}"))?;
    println!("{}", serde_json::to_string_pretty(&tree)?);
    if tree.status != Status::Correct {
        std::process::exit(1);
    }
    Ok(())
}

fn token(config: &Path, action: TokenAction) -> anyhow::Result<()> {
    let settings = Settings::load(config)?;
    std::fs::create_dir_all(&settings.data_dir)?;
    let store = forge_judge::tokens::TokenStore::open(&settings.database_path())?;
    match action {
        TokenAction::Create { user, scopes } => {
            let scopes = parse_scopes(&scopes).map_err(|e| anyhow!(e))?;
            if scopes.is_empty() {
                bail!("at least one scope is required");
            }
            let issued = store.create(&user, scopes)?;
            println!("{}", issued.bearer());
        }
        TokenAction::List => {
            for t in store.list()? {
                let scopes: Vec<&str> = t.scopes.iter().map(|s| s.as_str()).collect();
                println!(
                    "{}\t{}\t{}\t{}{}",
                    t.id,
                    t.principal,
                    scopes.join(","),
                    t.created_at.to_rfc3339(),
                    if t.revoked { "\trevoked" } else { "" }
                );
            }
        }
        TokenAction::Revoke { id } => {
            if !store.revoke(&id)? {
                bail!("no token '{id}'");
            }
        }
    }
    Ok(())
}
