//! Flat `key = value` configuration files.
//!
//! Lines starting with `#` are comments. `include = other.cfg` splices in
//! another file, resolved relative to the including one; later assignments
//! override earlier ones. Every key must be consumed by the reader, so typos
//! surface as errors instead of silently falling back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    path: PathBuf,
    line: usize,
}

#[derive(Debug, Default, Clone)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
    /// Directory of the top-level file, for resolving relative paths.
    base: PathBuf,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Config {
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Default::default()
        };
        cfg.read_file(path, 0)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Config {
            base: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Default::default()
        };
        cfg.read_text(text, origin, 0)?;
        Ok(cfg)
    }

    fn read_file(&mut self, path: &Path, depth: usize) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingFiles(vec![path.to_path_buf()]));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.read_text(&text, path, depth)
    }

    fn read_text(&mut self, text: &str, path: &Path, depth: usize) -> Result<()> {
        if depth > MAX_INCLUDE_DEPTH {
            return Err(Error::Config(format!("include nesting too deep at {}", path.display())));
        }
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, value) = l.split_once('=').ok_or_else(|| Error::Parse {
                path: path.into(),
                line,
                message: format!("expected `key = value`, got {l:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: "empty key".into(),
                });
            }
            if key == "include" {
                let target = path.parent().unwrap_or(Path::new("")).join(value);
                self.read_file(&target, depth + 1)?;
                continue;
            }
            self.entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    path: path.into(),
                    line,
                },
            );
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                path: PathBuf::from("<override>"),
                line: 0,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|err: T::Err| {
                Error::Config(format!(
                    "{}:{}: `{key}`: {:?} ({err})",
                    e.path.display(),
                    e.line,
                    e.value
                ))
            }),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.typed(key)
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.typed(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|err: T::Err| {
                    Error::Config(format!("{}:{}: `{key}`: {s:?} ({err})", e.path.display(), e.line))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Path value resolved against the directory of the top-level file.
    pub fn get_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.typed::<String>(key)?.map(|s| self.resolve(&s)))
    }

    /// `path` relative to the directory of the top-level file.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        if p.is_absolute() {
            p
        } else {
            self.base.join(p)
        }
    }

    /// Count the keys read from `other`, typically a modified clone, as read
    /// here too.
    pub fn mark_used(&self, other: &Config) {
        self.used.borrow_mut().extend(other.used.borrow().iter().cloned());
    }

    /// Error on keys no reader asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, e)| format!("{k} ({}:{})", e.path.display(), e.line))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    /// Stable text form of all entries, for fingerprints and reports.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .map(|(k, e)| format!("{k}={}\n", e.value))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_access_and_unknown_keys() {
        let cfg = Config::parse_str("# c\na = 1.5\nb = x\nlist = 1, 2,3\n", Path::new("t.cfg")).unwrap();
        assert_eq!(cfg.get("a", 0.0).unwrap(), 1.5);
        assert_eq!(cfg.get("missing", 7u32).unwrap(), 7);
        assert_eq!(cfg.get_list::<u32>("list").unwrap(), Some(vec![1, 2, 3]));
        assert!(cfg.finish().is_err());
        assert_eq!(cfg.get("b", String::new()).unwrap(), "x");
        assert!(cfg.finish().is_ok());
        assert!(cfg.get("b", 0.0).is_err());
    }

    #[test]
    fn include_and_override() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "a = 1\nb = 2\n").unwrap();
        std::fs::write(dir.path().join("top.cfg"), "include = base.cfg\nb = 3\n").unwrap();
        let cfg = Config::load(&dir.path().join("top.cfg")).unwrap();
        assert_eq!(cfg.get("a", 0).unwrap(), 1);
        assert_eq!(cfg.get("b", 0).unwrap(), 3);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = Config::parse_str("a = 1\nnonsense\n", Path::new("t.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("self.cfg"), "include = self.cfg\n").unwrap();
        assert!(Config::load(&dir.path().join("self.cfg")).is_err());
    }
}
