//! Learning activities ingested from content repositories.
//!
//! A repository is a directory tree. Any directory holding a `config.json`
//! is an activity; `dirconfig.json` files set defaults for everything below
//! them. Descriptions live in `description/description.<lang>.md` (or
//! `.html`), assessment resources in `evaluation/`, and files shared by all
//! activities in `public/` at the repository root.

mod config;
mod sync;
mod webhook;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feedback::ParseMode;
use crate::judge::JudgeRegistry;

pub use config::{resolve_chain, Access, ActivityConfig, ActivityKind, ConfigError, EffectiveConfig, EngineDefaults, MIB};
pub use sync::{
    ActivityRegistry, ContentService, FetchError, GitCliFetcher, LocalFetcher, RepoSpec, RepositoryFetcher,
    SyncError, SyncReport,
};
pub use webhook::{parse_push, sign_payload, verify_signature, PushEvent, WebhookError, SIGNATURE_HEADER};

pub const CONFIG_FILE: &str = "config.json";
pub const DIRCONFIG_FILE: &str = "dirconfig.json";
pub const DESCRIPTION_DIR: &str = "description";
pub const RESOURCES_DIR: &str = "evaluation";
pub const PUBLIC_DIR: &str = "public";

/// Content-addressed activity identifier: a moved directory is a new
/// activity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivityId(pub String);

impl ActivityId {
    pub fn derive(repo_id: &str, rel_path: &str) -> Self {
        let mut h = Sha256::new();
        h.update(repo_id.as_bytes());
        h.update([0u8]);
        h.update(rel_path.as_bytes());
        ActivityId(hex::encode(&h.finalize()[..16]))
    }
}

impl fmt::Display for ActivityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionFormat {
    Markdown,
    Html,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub format: DescriptionFormat,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub id: ActivityId,
    pub kind: ActivityKind,
    pub repo_id: String,
    /// `/`-separated path relative to the repository root.
    pub rel_path: String,
    pub name: String,
    pub descriptions: BTreeMap<String, Description>,
    pub labels: BTreeSet<String>,
    pub access: Access,
    /// Root-to-leaf configuration chain, ending with the activity's own.
    pub config_chain: Vec<ActivityConfig>,
    /// Resolved configuration; present for every published exercise.
    pub config: Option<EffectiveConfig>,
    pub dir: PathBuf,
    pub resources_dir: PathBuf,
    /// Digest of the activity's files and configuration chain.
    pub fingerprint: String,
}

impl Activity {
    pub fn resolve_config(
        &self,
        judges: &JudgeRegistry,
        defaults: &EngineDefaults,
    ) -> Result<EffectiveConfig, ConfigError> {
        resolve_chain(&self.config_chain, judges, defaults)
    }

    pub fn programming_language(&self) -> Option<&str> {
        self.config.as_ref().map(|c| c.programming_language.as_str())
    }
}

/// Preferred language, then English, then the lexicographically first
/// available description.
pub fn select_description<'a>(activity: &'a Activity, preferred: &str) -> Option<(&'a str, &'a Description)> {
    activity
        .descriptions
        .get_key_value(preferred)
        .or_else(|| activity.descriptions.get_key_value("en"))
        .or_else(|| activity.descriptions.iter().next())
        .map(|(k, v)| (k.as_str(), v))
}

/// A problem found while scanning; the offending entry is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScanResult {
    pub activities: Vec<Activity>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("repository root {0} is not a readable directory")]
    MissingRoot(PathBuf),
}

pub struct Scanner<'a> {
    pub repo_id: &'a str,
    pub judges: &'a JudgeRegistry,
    pub defaults: &'a EngineDefaults,
    pub mode: ParseMode,
}

impl Scanner<'_> {
    /// Scans the whole tree. Malformed entries become diagnostics; only a
    /// missing root aborts.
    pub fn scan(&self, root: &Path) -> Result<ScanResult, ScanError> {
        if !root.is_dir() {
            return Err(ScanError::MissingRoot(root.to_path_buf()));
        }
        let mut result = ScanResult::default();
        self.walk(root, root, &mut Vec::new(), &mut result);
        result.activities.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        Ok(result)
    }

    fn walk(&self, root: &Path, dir: &Path, chain: &mut Vec<ActivityConfig>, out: &mut ScanResult) {
        let rel = rel_path(root, dir);
        let diag = |out: &mut ScanResult, path: &str, message: String| {
            out.diagnostics.push(Diagnostic {
                path: path.to_string(),
                message,
            })
        };

        let mut pushed = false;
        let dirconfig = dir.join(DIRCONFIG_FILE);
        if dirconfig.is_file() {
            match read_config(&dirconfig, self.mode) {
                Ok(c) => {
                    chain.push(c);
                    pushed = true;
                }
                Err(e) => diag(out, &rel_join(&rel, DIRCONFIG_FILE), e.to_string()),
            }
        }

        let config = dir.join(CONFIG_FILE);
        if config.is_file() && dir != root {
            match read_config(&config, self.mode) {
                Ok(own) => {
                    chain.push(own);
                    match self.activity(dir, &rel, chain) {
                        Ok(a) => out.activities.push(a),
                        Err(message) => diag(out, &rel, message),
                    }
                    chain.pop();
                }
                Err(e) => diag(out, &rel_join(&rel, CONFIG_FILE), e.to_string()),
            }
        } else {
            let mut children: Vec<PathBuf> = match fs::read_dir(dir) {
                Ok(entries) => entries
                    .flatten()
                    .map(|e| e.path())
                    .filter(|p| p.is_dir())
                    .collect(),
                Err(e) => {
                    diag(out, &rel, e.to_string());
                    Vec::new()
                }
            };
            children.sort();
            for child in children {
                let name = child.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if name.starts_with('.') || (dir == root && name == PUBLIC_DIR) {
                    continue;
                }
                self.walk(root, &child, chain, out);
            }
        }
        if pushed {
            chain.pop();
        }
    }

    fn activity(&self, dir: &Path, rel: &str, chain: &[ActivityConfig]) -> Result<Activity, String> {
        let descriptions = read_descriptions(&dir.join(DESCRIPTION_DIR)).map_err(|e| e.to_string())?;
        if descriptions.is_empty() {
            return Err("activity has no description".into());
        }
        let merged = chain
            .iter()
            .fold(ActivityConfig::default(), |acc, c| acc.merge(c));
        let kind = merged.kind.unwrap_or_default();
        let config = match kind {
            ActivityKind::Exercise => Some(
                resolve_chain(chain, self.judges, self.defaults)
                    .map_err(|e| format!("exercise cannot be published: {e}"))?,
            ),
            ActivityKind::Reading => None,
        };
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(rel)
            .to_string();
        Ok(Activity {
            id: ActivityId::derive(self.repo_id, rel),
            kind,
            repo_id: self.repo_id.to_string(),
            rel_path: rel.to_string(),
            name,
            descriptions,
            labels: merged.labels.clone().unwrap_or_default(),
            access: merged.access.unwrap_or_default(),
            fingerprint: fingerprint(dir, chain).map_err(|e| e.to_string())?,
            config_chain: chain.to_vec(),
            config,
            resources_dir: dir.join(RESOURCES_DIR),
            dir: dir.to_path_buf(),
        })
    }
}

fn read_config(path: &Path, mode: ParseMode) -> Result<ActivityConfig, ConfigError> {
    let bytes = fs::read(path).map_err(|e| ConfigError::Syntax(serde_json::Error::io(e)))?;
    ActivityConfig::parse(&bytes, mode)
}

fn read_descriptions(dir: &Path) -> io::Result<BTreeMap<String, Description>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(file) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = file.strip_prefix("description.") else {
            continue;
        };
        let (lang, format) = if let Some(lang) = rest.strip_suffix(".md") {
            (lang, DescriptionFormat::Markdown)
        } else if let Some(lang) = rest.strip_suffix(".html") {
            (lang, DescriptionFormat::Html)
        } else {
            continue;
        };
        if lang.is_empty() {
            continue;
        }
        out.insert(
            lang.to_string(),
            Description {
                format,
                body: fs::read_to_string(&path)?,
            },
        );
    }
    Ok(out)
}

fn fingerprint(dir: &Path, chain: &[ActivityConfig]) -> io::Result<String> {
    let mut h = Sha256::new();
    for c in chain {
        h.update(serde_json::to_vec(c).expect("config serializes"));
        h.update([0u8]);
    }
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    for file in files {
        h.update(rel_path(dir, &file).as_bytes());
        h.update([0u8]);
        h.update(fs::read(&file)?);
        h.update([0u8]);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn rel_path(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn rel_join(rel: &str, file: &str) -> String {
    if rel.is_empty() {
        file.to_string()
    } else {
        format!("{rel}/{file}")
    }
}
