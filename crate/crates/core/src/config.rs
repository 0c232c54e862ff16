//! Flat `key = value` configuration with an explicit version line.
//!
//! ```text
//! irp-config 1
//! # comment
//! seed = 42
//! irp.n_samples = 128
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{IrpError, Result};

pub const CONFIG_MAGIC: &str = "irp-config";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| IrpError::format("config is empty; expected a version line"))?;
        let version = header
            .strip_prefix(CONFIG_MAGIC)
            .map(str::trim)
            .ok_or_else(|| IrpError::format(format!("config must start with '{CONFIG_MAGIC} <version>'")))?;
        if version.parse::<u32>().ok() != Some(CONFIG_VERSION) {
            return Err(IrpError::format(format!("unsupported config version '{version}'")));
        }
        let mut entries = BTreeMap::new();
        for (no, line) in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IrpError::format(format!("config line {no}: expected key = value")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(IrpError::format(format!("config line {no}: empty key")));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(IrpError::format(format!("config line {no}: duplicate key '{k}'")));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IrpError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| IrpError::io(path, e))
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is an error.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| IrpError::format(format!("config key '{key}': {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Entries of `other` override this one's.
    pub fn merged(&self, other: &Config) -> Config {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        Config { entries }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{CONFIG_MAGIC} {CONFIG_VERSION}")?;
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_types() {
        let c = Config::parse("# top\nirp-config 1\nseed = 42\n\nname = a b\nx=0.5\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(42));
        assert_eq!(c.raw("name"), Some("a b"));
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        assert!(c.get::<u64>("x").is_err());
        assert_eq!(Config::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Config::parse("").is_err());
        assert!(Config::parse("seed = 1").is_err());
        assert!(Config::parse("irp-config 2\n").is_err());
        assert!(Config::parse("irp-config 1\nnovalue\n").is_err());
        assert!(Config::parse("irp-config 1\na = 1\na = 2\n").is_err());
    }

    #[test]
    fn merge_overrides() {
        let mut a = Config::new();
        a.set("k", 1);
        a.set("j", 2);
        let mut b = Config::new();
        b.set("k", 9);
        let m = a.merged(&b);
        assert_eq!(m.raw("k"), Some("9"));
        assert_eq!(m.raw("j"), Some("2"));
    }
}
