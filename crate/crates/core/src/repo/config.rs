use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::feedback::ParseMode;
use crate::judge::JudgeRegistry;
use crate::sandbox::ImageRef;

pub const MIB: u64 = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityKind {
    Reading,
    #[default]
    Exercise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    #[default]
    Public,
    Restricted,
}

/// Raw per-directory configuration (`config.json` or `dirconfig.json`).
/// Every field is optional; unset fields inherit from enclosing directories.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActivityConfig {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub kind: Option<ActivityKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub access: Option<Access>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub programming_language: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    /// Seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<u64>,
    /// Bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_limit: Option<u64>,
    /// Bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_limit: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network_allowed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boilerplate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeSet<String>>,
}

const KNOWN_KEYS: &[&str] = &[
    "type",
    "access",
    "programming_language",
    "judge",
    "image",
    "time_limit",
    "memory_limit",
    "output_limit",
    "network_allowed",
    "boilerplate",
    "labels",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("configuration must be a JSON object")]
    NotAnObject,
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("no judge configured")]
    NoJudge,
    #[error("judge '{0}' is not installed")]
    UnknownJudge(String),
    #[error("{0} must be positive")]
    NonPositiveLimit(&'static str),
}

impl ActivityConfig {
    pub fn parse(bytes: &[u8], mode: ParseMode) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_slice(bytes)?;
        let Value::Object(map) = &value else {
            return Err(ConfigError::NotAnObject);
        };
        if mode == ParseMode::Strict {
            if let Some(key) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    /// `child` wins wherever it sets a field.
    pub fn merge(&self, child: &ActivityConfig) -> ActivityConfig {
        fn pick<T: Clone>(parent: &Option<T>, child: &Option<T>) -> Option<T> {
            child.clone().or_else(|| parent.clone())
        }
        ActivityConfig {
            kind: pick(&self.kind, &child.kind),
            access: pick(&self.access, &child.access),
            programming_language: pick(&self.programming_language, &child.programming_language),
            judge: pick(&self.judge, &child.judge),
            image: pick(&self.image, &child.image),
            time_limit: pick(&self.time_limit, &child.time_limit),
            memory_limit: pick(&self.memory_limit, &child.memory_limit),
            output_limit: pick(&self.output_limit, &child.output_limit),
            network_allowed: pick(&self.network_allowed, &child.network_allowed),
            boilerplate: pick(&self.boilerplate, &child.boilerplate),
            labels: pick(&self.labels, &child.labels),
        }
    }
}

/// Values used where no configuration in the chain sets a field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDefaults {
    pub time_limit: u64,
    pub memory_limit: u64,
    pub output_limit: u64,
    pub network_allowed: bool,
    pub programming_language: String,
}

impl Default for EngineDefaults {
    fn default() -> Self {
        EngineDefaults {
            time_limit: 30,
            memory_limit: 256 * MIB,
            output_limit: 10 * MIB,
            network_allowed: false,
            programming_language: "generic".into(),
        }
    }
}

/// Fully resolved assessment configuration of an exercise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub programming_language: String,
    pub judge: String,
    pub image: ImageRef,
    pub time_limit: u64,
    pub memory_limit: u64,
    pub output_limit: u64,
    pub network_allowed: bool,
    pub boilerplate: Option<String>,
    pub labels: BTreeSet<String>,
}

/// Merges the root-to-leaf chain and fills the gaps: engine defaults for
/// limits and language, the judge's default image when no image is set.
pub fn resolve_chain(
    chain: &[ActivityConfig],
    judges: &JudgeRegistry,
    defaults: &EngineDefaults,
) -> Result<EffectiveConfig, ConfigError> {
    let merged = chain
        .iter()
        .fold(ActivityConfig::default(), |acc, c| acc.merge(c));
    let judge = merged.judge.ok_or(ConfigError::NoJudge)?;
    let bundle = judges
        .get(&judge)
        .ok_or_else(|| ConfigError::UnknownJudge(judge.clone()))?;
    let positive = |v: Option<u64>, default: u64, name| match v {
        Some(0) => Err(ConfigError::NonPositiveLimit(name)),
        Some(v) => Ok(v),
        None => Ok(default),
    };
    Ok(EffectiveConfig {
        programming_language: merged
            .programming_language
            .unwrap_or_else(|| defaults.programming_language.clone()),
        image: merged.image.unwrap_or_else(|| bundle.default_image.clone()),
        time_limit: positive(merged.time_limit, defaults.time_limit, "time_limit")?,
        memory_limit: positive(merged.memory_limit, defaults.memory_limit, "memory_limit")?,
        output_limit: positive(merged.output_limit, defaults.output_limit, "output_limit")?,
        network_allowed: merged.network_allowed.unwrap_or(defaults.network_allowed),
        boilerplate: merged.boilerplate,
        labels: merged.labels.unwrap_or_default(),
        judge,
    })
}
