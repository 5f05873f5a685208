//! Wiring of the core services from settings.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use forge_judge_core::judge::{InvokeOptions, JudgeRegistry};
use forge_judge_core::repo::{
    ActivityRegistry, ContentService, FetchError, GitCliFetcher, LocalFetcher, RepoSpec, RepositoryFetcher,
};
use forge_judge_core::sandbox::{ContainerBackend, ContainerConfig, ExecutionBackend, HostProcessBackend};
use forge_judge_core::scheduler::{JudgePipeline, Scheduler, SchedulerConfig, SqliteStore};

use crate::settings::{BackendKind, FetchKind, Settings};
use crate::tokens::TokenStore;

/// Git for most repositories, in-place directories for those marked local.
pub struct SettingsFetcher {
    git: GitCliFetcher,
    local: BTreeSet<String>,
}

impl RepositoryFetcher for SettingsFetcher {
    fn fetch(&self, repo: &RepoSpec) -> Result<PathBuf, FetchError> {
        if self.local.contains(&repo.id) {
            LocalFetcher.fetch(repo)
        } else {
            self.git.fetch(repo)
        }
    }
}

pub struct Services {
    pub settings: Arc<Settings>,
    pub scheduler: Arc<Scheduler>,
    pub content: Arc<ContentService>,
    pub tokens: Arc<TokenStore>,
    pub pipeline: Arc<JudgePipeline>,
}

pub fn backend_for(kind: BackendKind) -> Arc<dyn ExecutionBackend> {
    match kind {
        BackendKind::Host => Arc::new(HostProcessBackend::default()),
        BackendKind::Container => Arc::new(ContainerBackend::new(ContainerConfig::default())),
    }
}

pub fn load_judges(settings: &Settings) -> anyhow::Result<JudgeRegistry> {
    let (judges, errors) = JudgeRegistry::load_dir(&settings.judges_dir)
        .with_context(|| format!("reading judges from {}", settings.judges_dir.display()))?;
    for e in errors {
        tracing::warn!("skipping judge: {e}");
    }
    Ok(judges)
}

impl Services {
    pub fn build(settings: Settings) -> anyhow::Result<Self> {
        Self::build_with(settings, SchedulerConfig::default(), None)
    }

    /// Like [`Services::build`], with an explicit scheduler configuration and
    /// optionally a backend other than the configured one.
    pub fn build_with(
        settings: Settings,
        mut scheduler_config: SchedulerConfig,
        backend: Option<Arc<dyn ExecutionBackend>>,
    ) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&settings.data_dir)
            .with_context(|| format!("creating {}", settings.data_dir.display()))?;
        let store = Arc::new(SqliteStore::open(&settings.database_path()).context("opening submission store")?);
        let tokens = Arc::new(TokenStore::open(&settings.database_path()).context("opening token store")?);
        let judges = Arc::new(load_judges(&settings)?);
        let registry = Arc::new(ActivityRegistry::default());
        let fetcher = SettingsFetcher {
            git: GitCliFetcher {
                checkout_root: settings.checkout_dir(),
            },
            local: settings
                .repos
                .iter()
                .filter(|r| r.fetch == FetchKind::Local)
                .map(|r| r.spec.id.clone())
                .collect(),
        };
        let content = Arc::new(ContentService::new(
            settings.repos.iter().map(|r| r.spec.clone()).collect(),
            Arc::new(fetcher),
            Arc::clone(&registry),
            Arc::clone(&judges),
            settings.engine_defaults(),
        ));
        scheduler_config.max_code_size = settings.max_code_size;
        let pipeline = Arc::new(JudgePipeline {
            activities: Arc::clone(&registry),
            judges,
            backend: backend.unwrap_or_else(|| backend_for(settings.backend)),
            options: InvokeOptions {
                network_allowed: false,
                hard_cap: scheduler_config.hard_cap,
            },
        });
        let scheduler = Arc::new(Scheduler::new(
            store,
            registry,
            Arc::clone(&pipeline) as _,
            scheduler_config,
        ));
        Ok(Services {
            settings: Arc::new(settings),
            scheduler,
            content,
            tokens,
            pipeline,
        })
    }

    /// Syncs every configured repository; failures are logged, not fatal.
    pub fn sync_all(&self) {
        let ids: Vec<String> = self.content.repo_ids().map(str::to_string).collect();
        for id in ids {
            match self.content.sync(&id) {
                Ok(report) => tracing::info!(
                    repo = %id,
                    added = report.added.len(),
                    updated = report.updated.len(),
                    removed = report.removed.len(),
                    "synced"
                ),
                Err(e) => tracing::error!(repo = %id, "sync failed: {e}"),
            }
        }
    }
}
