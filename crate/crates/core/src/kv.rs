//! Line-oriented `key = value` text with `#` comments.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One `key = value` line with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parsed entries in file order plus the path used in error messages.
#[derive(Debug, Clone)]
pub struct KvFile {
    pub path: PathBuf,
    pub entries: Vec<Entry>,
}

impl KvFile {
    /// Parses `text`; blank lines and everything after `#` are ignored.
    /// Duplicate keys are rejected.
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::Parse {
                    path,
                    line,
                    msg: format!("expected key = value, got {body:?}"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path,
                    line,
                    msg: "empty key".into(),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Parse {
                    path,
                    line,
                    msg: format!("duplicate key {key:?} (first set on line {})", prev.line),
                });
            }
            entries.push(Entry {
                line,
                key: key.to_string(),
                value: v.trim().to_string(),
            });
        }
        Ok(KvFile { path, entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Error for `entry` carrying its line number.
    pub fn error(&self, entry: &Entry, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: entry.line,
            msg: format!("{}: {}", entry.key, msg.into()),
        }
    }

    /// Parses `key` with `FromStr`, mapping failures to a line-numbered error.
    pub fn parse_value<V>(&self, key: &str) -> Result<Option<V>>
    where
        V: std::str::FromStr,
        V::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<V>()
                .map(Some)
                .map_err(|err| self.error(e, format!("{err} (value {:?})", e.value))),
        }
    }

    /// Like [`parse_value`](Self::parse_value) but the key must be present.
    pub fn require<V>(&self, key: &str) -> Result<V>
    where
        V: std::str::FromStr,
        V::Err: std::fmt::Display,
    {
        self.parse_value(key)?.ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            msg: format!("missing key {key:?}"),
        })
    }
}
