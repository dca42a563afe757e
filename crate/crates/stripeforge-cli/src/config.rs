//! Flat `key = value` configuration with `[section]` headers.
//!
//! Keys are addressed as `section.key`. Every command starts from its own
//! table of defaults; a config file may only set keys present in that table,
//! and command-line flags are applied last. Sections named `run`, `inputs`,
//! `outputs` and `warnings` are skipped so that a run manifest can be fed back
//! as a config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

const MANIFEST_SECTIONS: [&str; 4] = ["run", "inputs", "outputs", "warnings"];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.reason)
    }
}

pub fn err(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Keys set by a file or a flag rather than left at their default.
    explicit: BTreeMap<String, String>,
}

impl Config {
    pub fn with_defaults<K: AsRef<str>, V: AsRef<str>>(defaults: &[(K, V)]) -> Self {
        Self {
            values: defaults
                .iter()
                .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
                .collect(),
            explicit: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                self.explicit.insert(key.to_string(), slot.clone());
                Ok(())
            }
            None => Err(err(key, "unknown key for this command")),
        }
    }

    /// `section.key=value`.
    pub fn set_assignment(&mut self, text: &str) -> Result<(), ConfigError> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| err(text, "expected section.key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
        self.load_str(&text)
    }

    pub fn load_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("config", format!("line {}: unterminated section header", no + 1)))?;
                section = Some(name.trim().to_string());
                continue;
            }
            let Some(sec) = &section else {
                return Err(err("config", format!("line {}: key outside any section", no + 1)));
            };
            if MANIFEST_SECTIONS.contains(&sec.as_str()) {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("config", format!("line {}: expected key = value", no + 1)))?;
            self.set(&format!("{sec}.{}", k.trim()), v)?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| err(key, format!("cannot parse {v:?}")))
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| err(key, format!("cannot parse list entry {s:?}"))))
            .collect()
    }

    /// Sectioned text in the same format the loader reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (k, v) in &self.values {
            let (sec, key) = k.split_once('.').unwrap_or(("", k));
            if sec != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }
}
