//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    path: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_named(&fs::read_to_string(path)?, Some(path.to_path_buf()))
    }

    fn parse_named(text: &str, path: Option<PathBuf>) -> Result<Self> {
        let label = path.clone().unwrap_or_else(|| PathBuf::from("<config>"));
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: label.clone(),
                line: i as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("invalid key `{key}`")));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Config { values, path })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "config key `{key}` has invalid value `{v}` ({})",
                        std::any::type_name::<T>()
                    ))
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Errors on keys outside `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k))
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let source = self.path.as_ref().map_or("config".into(), |p| p.display().to_string());
        Err(Error::InvalidArgument(format!(
            "{source}: unknown key(s) {}; allowed: {}",
            unknown.join(", "),
            allowed.join(", ")
        )))
    }
}
