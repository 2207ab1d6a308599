//! Flat `key = value` run configuration. Command-line flags override it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KEYS: &[&str] = &[
    "annotations",
    "arch",
    "batch_size",
    "data",
    "dictionary",
    "embedding_dim",
    "embeddings",
    "exclude",
    "k",
    "learning_rate",
    "lexicon",
    "max_epochs",
    "min_count",
    "models",
    "normalization",
    "out",
    "overrides",
    "patience",
    "predictions",
    "seed",
    "stoplist",
    "task",
    "threshold",
    "validation_fraction",
];

/// Values read from a config file. Keys a command does not use are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// Blank lines and lines starting with `#` are skipped; later duplicates
    /// replace earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", i + 1))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key {key:?}", i + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    /// The flag if given, else the parsed config value.
    pub fn get<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
            .transpose()
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| anyhow!("missing --{} (or `{key}` in the config file)", key.replace('_', "-")))
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// Repeated flags if any were given, else a comma-separated config value.
    pub fn list(&self, flags: Vec<String>, key: &str) -> Vec<String> {
        if !flags.is_empty() {
            return flags;
        }
        self.values
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Fails when a referenced input path does not exist.
pub fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        bail!("no such file: {}", path.display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win() {
        let c = ConfigFile::parse("seed = 7\n# note\nmax-epochs=3\n").unwrap();
        assert_eq!(c.get::<u64>(None, "seed").unwrap(), Some(7));
        assert_eq!(c.get(Some(9u64), "seed").unwrap(), Some(9));
        assert_eq!(c.or(None, "max_epochs", 50usize).unwrap(), 3);
        assert_eq!(c.or(None, "patience", 3usize).unwrap(), 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("just text").is_err());
        let c = ConfigFile::parse("seed = x").unwrap();
        assert!(c.get::<u64>(None, "seed").is_err());
        assert!(c.require::<String>(None, "data").unwrap_err().to_string().contains("--data"));
    }

    #[test]
    fn lists_split_on_commas() {
        let c = ConfigFile::parse("overrides = lol, smh,").unwrap();
        assert_eq!(c.list(vec![], "overrides"), ["lol", "smh"]);
        assert_eq!(c.list(vec!["x".into()], "overrides"), ["x"]);
    }
}
