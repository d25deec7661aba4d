//! `key = value` text files used for intrinsics, training and run configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    entries.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => problems.push(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                )),
            }
        }
        if problems.is_empty() {
            Ok(KeyValues { entries })
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Parses `key` into `slot` if present, recording a problem on failure.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T, problems: &mut Vec<String>) {
        if let Some(v) = self.get_str(key) {
            match v.parse() {
                Ok(x) => *slot = x,
                Err(_) => problems.push(format!("{key}: cannot parse `{v}`")),
            }
        }
    }

    /// Like [`read_into`](Self::read_into) but a missing key is a problem too.
    pub fn require<T: FromStr + Default>(&self, key: &str, problems: &mut Vec<String>) -> T {
        let mut out = T::default();
        if self.contains(key) {
            self.read_into(key, &mut out, problems);
        } else {
            problems.push(format!("{key}: missing"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
