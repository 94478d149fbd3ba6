//! Flat `section.key = value` text format used for run configs, checkpoint
//! headers and dataset manifests. `#` starts a comment; keys are unique.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("{key}: {detail}")]
    Invalid { key: String, detail: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("missing required key {0}")]
    Missing(String),
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.into(),
            detail: detail.into(),
        }
    }

    /// The offending key, when the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Invalid { key, .. } | Self::UnknownKey(key) | Self::Missing(key) => Some(key),
            Self::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                detail: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    detail: format!("invalid key {key:?}"),
                });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    detail: format!("duplicate key {key}"),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Applies a `key=value` override; later values win.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            detail: format!("override {assignment:?} is not key=value"),
        })?;
        let k = k.trim();
        if !valid_key(k) {
            return Err(ConfigError::Syntax {
                line: 0,
                detail: format!("invalid key {k:?}"),
            });
        }
        self.entries.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Canonical text form: sorted keys, one per line.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn reader(&self) -> Reader<'_> {
        Reader {
            raw: self,
            used: BTreeSet::new(),
        }
    }
}

/// Typed access that remembers which keys were consumed so leftovers can be
/// rejected.
pub struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<String>,
}

impl Reader<'_> {
    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.raw.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| ConfigError::invalid(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn req<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let Some(v) = self.raw.get(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse()
                    .map_err(|e| ConfigError::invalid(key, format!("cannot parse {item:?}: {e}")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// A `[lo, hi]` pair written `lo,hi`.
    pub fn range(&mut self, key: &str, default: [f64; 2]) -> Result<[f64; 2], ConfigError> {
        match self.list::<f64>(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
            Some(v) => Err(ConfigError::invalid(
                key,
                format!("expected two comma-separated values, got {}", v.len()),
            )),
        }
    }

    /// Marks every key under `prefix` as consumed.
    pub fn ignore_prefix(&mut self, prefix: &str) {
        let keys: Vec<String> = self
            .raw
            .keys()
            .filter(|k| k.starts_with(prefix))
            .map(str::to_string)
            .collect();
        self.used.extend(keys);
    }

    /// Fails on the first key that was never requested.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.raw.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

pub fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
