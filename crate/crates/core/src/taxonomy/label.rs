use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Lowercases, turns punctuation into spaces, collapses runs of whitespace
/// and trims. Total and idempotent.
pub fn canonicalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AliasError {
    #[error("alias {alias:?} already maps to {existing:?}, refusing to remap to {requested:?}")]
    Conflict {
        alias: String,
        existing: String,
        requested: String,
    },
    #[error("alias target {0:?} is not in the reference label set")]
    UnknownTarget(String),
}

/// Human-curated mapping from canonical alias text to a canonical label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable {
    entries: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `alias -> label`. Re-adding the same pair is a no-op; remapping an
    /// alias to a different label is refused.
    pub fn insert(&mut self, alias: &str, label: &str) -> Result<(), AliasError> {
        let key = canonicalize_label(alias);
        match self.entries.get(&key) {
            Some(existing) if canonicalize_label(existing) != canonicalize_label(label) => {
                Err(AliasError::Conflict {
                    alias: key,
                    existing: existing.clone(),
                    requested: label.to_string(),
                })
            }
            Some(_) => Ok(()),
            None => {
                self.entries.insert(key, label.to_string());
                Ok(())
            }
        }
    }

    pub fn with(mut self, alias: &str, label: &str) -> Self {
        self.insert(alias, label).expect("conflicting alias");
        self
    }

    pub fn get(&self, raw: &str) -> Option<&str> {
        self.entries.get(&canonicalize_label(raw)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Checks that every target names a label in `reference`.
    pub fn check_targets(&self, reference: &[String]) -> Result<(), AliasError> {
        for target in self.entries.values() {
            let key = canonicalize_label(target);
            if !reference.iter().any(|r| canonicalize_label(r) == key) {
                return Err(AliasError::UnknownTarget(target.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "label", rename_all = "snake_case")]
pub enum Resolution {
    Resolved(String),
    /// Carries the canonical form, for queueing a human mapping task.
    Unresolved(String),
}

impl Resolution {
    pub fn label(&self) -> &str {
        match self {
            Resolution::Resolved(l) | Resolution::Unresolved(l) => l,
        }
    }

    pub fn is_resolved(&self) -> bool {
        matches!(self, Resolution::Resolved(_))
    }
}

/// Exact canonical match against `reference` first, then the alias table.
pub fn resolve_alias(raw: &str, aliases: &AliasTable, reference: &[String]) -> Resolution {
    let key = canonicalize_label(raw);
    let lookup = |k: &str| {
        reference
            .iter()
            .find(|r| canonicalize_label(r) == k)
            .cloned()
    };
    if let Some(hit) = lookup(&key) {
        return Resolution::Resolved(hit);
    }
    if let Some(target) = aliases.get(raw) {
        let target_key = canonicalize_label(target);
        return Resolution::Resolved(lookup(&target_key).unwrap_or_else(|| target.to_string()));
    }
    Resolution::Unresolved(key)
}
