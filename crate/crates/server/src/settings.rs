//! Service configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use forge_judge_core::analytics::Course;
use forge_judge_core::repo::{ActivityId, EngineDefaults, RepoSpec};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Host,
    Container,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FetchKind {
    #[default]
    Git,
    /// `source` is a directory used in place.
    Local,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RepoSettings {
    #[serde(flatten)]
    pub spec: RepoSpec,
    #[serde(default)]
    pub fetch: FetchKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSettings {
    /// Preferred natural language, passed to judges.
    #[serde(default = "english")]
    pub language: String,
}

fn english() -> String {
    "en".into()
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_rate_limit() -> u32 {
    30
}

fn default_max_code_size() -> usize {
    64 * 1024
}

fn default_resync() -> u64 {
    60
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Worker threads; the number of processing units when unset.
    #[serde(default)]
    pub workers: Option<usize>,
    pub judges_dir: PathBuf,
    #[serde(default)]
    pub backend: BackendKind,
    /// Key for the pseudonyms in exports.
    pub pseudonym_key: String,
    #[serde(default = "default_max_code_size")]
    pub max_code_size: usize,
    /// Submissions per minute per token.
    #[serde(default = "default_rate_limit")]
    pub rate_limit_per_minute: u32,
    /// How often a standalone worker process rescans repositories, seconds.
    #[serde(default = "default_resync")]
    pub resync_interval: u64,
    #[serde(default)]
    pub defaults: Option<EngineDefaults>,
    #[serde(default)]
    pub repos: Vec<RepoSettings>,
    /// Series may list activities by id or as `<repo>:<path>`.
    #[serde(default)]
    pub courses: Vec<Course>,
    #[serde(default)]
    pub users: BTreeMap<String, UserSettings>,
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut settings: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative paths are relative to the configuration file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut settings.data_dir, &mut settings.judges_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for repo in &mut settings.repos {
            if repo.fetch == FetchKind::Local && Path::new(&repo.spec.source).is_relative() {
                repo.spec.source = base.join(&repo.spec.source).to_string_lossy().into_owned();
            }
        }
        settings.resolve_activity_refs();
        Ok(settings)
    }

    /// Replaces `<repo>:<path>` references in series with activity ids.
    pub fn resolve_activity_refs(&mut self) {
        for series in self.courses.iter_mut().flat_map(|c| c.series.iter_mut()) {
            for a in &mut series.activities {
                if let Some((repo, path)) = a.0.split_once(':') {
                    *a = ActivityId::derive(repo, path.trim_matches('/'));
                }
            }
        }
    }

    pub fn database_path(&self) -> PathBuf {
        self.data_dir.join("forge.db")
    }

    pub fn checkout_dir(&self) -> PathBuf {
        self.data_dir.join("repos")
    }

    pub fn engine_defaults(&self) -> EngineDefaults {
        self.defaults.clone().unwrap_or_default()
    }

    pub fn language_of(&self, user: &str) -> String {
        self.users
            .get(user)
            .map_or_else(english, |u| u.language.clone())
    }

    pub fn course(&self, id: &str) -> Option<&Course> {
        self.courses.iter().find(|c| c.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example() {
        let text = r#"
            data_dir = "/var/lib/forge"
            judges_dir = "judges"
            pseudonym_key = "k"

            [[repos]]
            id = "intro"
            source = "https://example.org/intro.git"
            secret = "s"

            [[courses]]
            id = "prog"
            name = "Programming"
            timezone = "Europe/Brussels"

            [[courses.series]]
            id = "week1"
            name = "Week 1"
            deadline = "2024-10-01T22:00:00Z"
            activities = ["intro:week1/hello", "0123abcd"]

            [users.alice]
            language = "nl"
        "#;
        let mut s: Settings = toml::from_str(text).unwrap();
        s.resolve_activity_refs();
        assert_eq!(
            s.courses[0].series[0].activities,
            [ActivityId::derive("intro", "week1/hello"), ActivityId("0123abcd".into())]
        );
        assert_eq!(s.repos[0].spec.default_branch, "main");
        assert_eq!(s.repos[0].fetch, FetchKind::Git);
        assert_eq!(s.courses[0].series[0].deadline.unwrap().to_rfc3339(), "2024-10-01T22:00:00+00:00");
        assert!(s.courses[0].series[0].visible);
        assert_eq!(s.language_of("alice"), "nl");
        assert_eq!(s.language_of("bob"), "en");
        assert_eq!(s.rate_limit_per_minute, 30);
    }
}
