use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::webhook::{parse_push, verify_signature, WebhookError};
use super::{Activity, ActivityId, Diagnostic, EngineDefaults, ScanError, Scanner};
use crate::feedback::ParseMode;
use crate::judge::JudgeRegistry;

fn default_branch() -> String {
    "main".into()
}

/// A registered content repository.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSpec {
    pub id: String,
    /// Clone URL, or a local directory for [`LocalFetcher`].
    pub source: String,
    #[serde(default = "default_branch")]
    pub default_branch: String,
    /// Shared webhook secret.
    pub secret: String,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("git {args} failed: {stderr}")]
    Git { args: String, stderr: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Brings a local checkout of a repository up to date and returns its path.
pub trait RepositoryFetcher: Send + Sync {
    fn fetch(&self, repo: &RepoSpec) -> Result<PathBuf, FetchError>;
}

/// Uses `source` as an already checked-out directory.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalFetcher;

impl RepositoryFetcher for LocalFetcher {
    fn fetch(&self, repo: &RepoSpec) -> Result<PathBuf, FetchError> {
        Ok(PathBuf::from(&repo.source))
    }
}

/// Clones once into `checkout_root/<repo id>`, then fetches and hard-resets
/// to the default branch on every sync.
#[derive(Debug, Clone)]
pub struct GitCliFetcher {
    pub checkout_root: PathBuf,
}

impl GitCliFetcher {
    fn git(dir: Option<&Path>, args: &[&str]) -> Result<(), FetchError> {
        let mut cmd = Command::new("git");
        if let Some(dir) = dir {
            cmd.arg("-C").arg(dir);
        }
        let out = cmd.args(args).env("GIT_TERMINAL_PROMPT", "0").output()?;
        if out.status.success() {
            Ok(())
        } else {
            Err(FetchError::Git {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            })
        }
    }
}

impl RepositoryFetcher for GitCliFetcher {
    fn fetch(&self, repo: &RepoSpec) -> Result<PathBuf, FetchError> {
        let dest = self.checkout_root.join(&repo.id);
        if dest.join(".git").exists() {
            Self::git(Some(&dest), &["fetch", "--quiet", "origin", &repo.default_branch])?;
            Self::git(Some(&dest), &["reset", "--quiet", "--hard", "FETCH_HEAD"])?;
            Self::git(Some(&dest), &["clean", "--quiet", "-fdx"])?;
        } else {
            std::fs::create_dir_all(&self.checkout_root)?;
            let dest_str = dest.to_string_lossy().into_owned();
            Self::git(
                None,
                &[
                    "clone",
                    "--quiet",
                    "--single-branch",
                    "--branch",
                    &repo.default_branch,
                    &repo.source,
                    &dest_str,
                ],
            )?;
        }
        Ok(dest)
    }
}

type Snapshot = Arc<BTreeMap<ActivityId, Arc<Activity>>>;

/// Published activities of all repositories. Readers see either the old or
/// the new version of a repository, never a mix.
#[derive(Debug, Default)]
pub struct ActivityRegistry {
    repos: RwLock<BTreeMap<String, Snapshot>>,
}

impl ActivityRegistry {
    pub fn get(&self, id: &ActivityId) -> Option<Arc<Activity>> {
        let repos = self.repos.read().expect("registry lock");
        repos.values().find_map(|snap| snap.get(id).cloned())
    }

    /// All activities, ordered by repository then activity id.
    pub fn all(&self) -> Vec<Arc<Activity>> {
        let repos = self.repos.read().expect("registry lock");
        repos.values().flat_map(|s| s.values().cloned()).collect()
    }

    pub fn snapshot(&self, repo_id: &str) -> Snapshot {
        let repos = self.repos.read().expect("registry lock");
        repos.get(repo_id).cloned().unwrap_or_default()
    }

    /// Atomically swaps in a repository's new activity set.
    pub fn replace(&self, repo_id: &str, activities: Vec<Activity>) {
        let snap: BTreeMap<_, _> = activities
            .into_iter()
            .map(|a| (a.id.clone(), Arc::new(a)))
            .collect();
        self.repos
            .write()
            .expect("registry lock")
            .insert(repo_id.to_string(), Arc::new(snap));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyncReport {
    pub repo_id: String,
    /// False when the event did not require a sync (e.g. another branch).
    pub performed: bool,
    pub added: Vec<ActivityId>,
    pub updated: Vec<ActivityId>,
    pub removed: Vec<ActivityId>,
    pub diagnostics: Vec<Diagnostic>,
}

impl SyncReport {
    pub fn is_empty_diff(&self) -> bool {
        self.added.is_empty() && self.updated.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("unknown repository '{0}'")]
    UnknownRepo(String),
    #[error(transparent)]
    Webhook(#[from] WebhookError),
    #[error("fetch failed: {0}")]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

struct RepoEntry {
    spec: RepoSpec,
    lock: Mutex<()>,
}

/// Owns the registered repositories and keeps the registry in sync with
/// them. Syncs of one repository are serialized; different repositories
/// sync independently.
pub struct ContentService {
    repos: BTreeMap<String, RepoEntry>,
    fetcher: Arc<dyn RepositoryFetcher>,
    registry: Arc<ActivityRegistry>,
    judges: Arc<JudgeRegistry>,
    defaults: EngineDefaults,
    mode: ParseMode,
}

impl ContentService {
    pub fn new(
        repos: Vec<RepoSpec>,
        fetcher: Arc<dyn RepositoryFetcher>,
        registry: Arc<ActivityRegistry>,
        judges: Arc<JudgeRegistry>,
        defaults: EngineDefaults,
    ) -> Self {
        ContentService {
            repos: repos
                .into_iter()
                .map(|spec| {
                    (
                        spec.id.clone(),
                        RepoEntry {
                            spec,
                            lock: Mutex::new(()),
                        },
                    )
                })
                .collect(),
            fetcher,
            registry,
            judges,
            defaults,
            mode: ParseMode::Strict,
        }
    }

    pub fn registry(&self) -> &Arc<ActivityRegistry> {
        &self.registry
    }

    pub fn judges(&self) -> &Arc<JudgeRegistry> {
        &self.judges
    }

    pub fn defaults(&self) -> &EngineDefaults {
        &self.defaults
    }

    pub fn repo_ids(&self) -> impl Iterator<Item = &str> {
        self.repos.keys().map(String::as_str)
    }

    pub fn has_repo(&self, repo_id: &str) -> bool {
        self.repos.contains_key(repo_id)
    }

    /// Fetches, rescans and publishes one repository.
    pub fn sync(&self, repo_id: &str) -> Result<SyncReport, SyncError> {
        let entry = self
            .repos
            .get(repo_id)
            .ok_or_else(|| SyncError::UnknownRepo(repo_id.to_string()))?;
        let _guard = entry.lock.lock().expect("repo lock");
        let path = self.fetcher.fetch(&entry.spec)?;
        let scan = Scanner {
            repo_id,
            judges: &self.judges,
            defaults: &self.defaults,
            mode: self.mode,
        }
        .scan(&path)?;
        for d in &scan.diagnostics {
            tracing::warn!(repo = repo_id, path = %d.path, "{}", d.message);
        }

        let old = self.registry.snapshot(repo_id);
        let mut report = SyncReport {
            repo_id: repo_id.to_string(),
            performed: true,
            diagnostics: scan.diagnostics,
            ..SyncReport::default()
        };
        for a in &scan.activities {
            match old.get(&a.id) {
                None => report.added.push(a.id.clone()),
                Some(prev) if prev.fingerprint != a.fingerprint => report.updated.push(a.id.clone()),
                Some(_) => {}
            }
        }
        let current: std::collections::BTreeSet<&ActivityId> = scan.activities.iter().map(|a| &a.id).collect();
        report.removed = old
            .keys()
            .filter(|id| !current.contains(id))
            .cloned()
            .collect();
        self.registry.replace(repo_id, scan.activities);
        Ok(report)
    }

    /// Authenticates a webhook delivery. Returns whether the push targets
    /// the default branch and therefore needs a sync. Never has side
    /// effects.
    pub fn verify_webhook(&self, repo_id: &str, payload: &[u8], signature: &str) -> Result<bool, WebhookError> {
        let entry = self
            .repos
            .get(repo_id)
            .ok_or_else(|| WebhookError::UnknownRepo(repo_id.to_string()))?;
        if !verify_signature(entry.spec.secret.as_bytes(), payload, signature) {
            return Err(WebhookError::BadSignature);
        }
        let push = parse_push(payload)?;
        Ok(push.branch.as_deref() == Some(entry.spec.default_branch.as_str()))
    }

    pub fn handle_webhook(&self, repo_id: &str, payload: &[u8], signature: &str) -> Result<SyncReport, SyncError> {
        if self.verify_webhook(repo_id, payload, signature)? {
            self.sync(repo_id)
        } else {
            Ok(SyncReport {
                repo_id: repo_id.to_string(),
                ..SyncReport::default()
            })
        }
    }
}
