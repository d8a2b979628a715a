//! Flat `key = value` settings files. Keys use the long flag names of the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{HubError, HubResult};

pub const DATA_DIR_ENV: &str = "GRAPHMIMIC_DATA_DIR";
/// Read from the data directory when no `--config` is given.
pub const DEFAULT_CONFIG_NAME: &str = "graphmimic.conf";

pub const KNOWN_KEYS: &[&str] = &[
    "arch",
    "augmentation",
    "batch-size",
    "c-e",
    "c-f",
    "clip",
    "decisions",
    "demos",
    "entropy",
    "episodes",
    "epochs",
    "explain-steps",
    "failure-rate",
    "gamma",
    "hidden-layers",
    "hidden-width",
    "interactions",
    "k",
    "k-base",
    "k-max",
    "lambda",
    "lambda-il",
    "lr",
    "port",
    "preference",
    "seed",
    "seeds",
    "stacks",
    "target",
    "trajectories",
    "weights",
    "world",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    source: String,
}

impl Settings {
    pub fn parse(text: &str, source: &str) -> HubResult<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HubError::Config { path: source.into(), line: n + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(err(format!("duplicate key {key:?}")));
            }
        }
        Ok(Self { values, source: source.into() })
    }

    pub fn load(path: &Path) -> HubResult<Self> {
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Explicit file if given, else `graphmimic.conf` in the data directory, else empty.
    pub fn discover(explicit: Option<&Path>) -> HubResult<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match data_dir().map(|d| d.join(DEFAULT_CONFIG_NAME)) {
            Some(p) if p.is_file() => Self::load(&p),
            _ => Ok(Self::default()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> HubResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| HubError::Usage(format!("{}: bad value {v:?} for {key}: {e}", self.source)))
            })
            .transpose()
    }

    /// Flag value if present, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> HubResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> HubResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Relative paths resolve against the data directory when one is set.
pub fn resolve(path: &Path) -> PathBuf {
    match data_dir() {
        Some(d) if path.is_relative() => d.join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let s = Settings::parse("# defaults\nepochs = 50\nlr=0.002  # faster\n\nhidden_width = 32\n", "t").unwrap();
        assert_eq!(s.get::<usize>("epochs").unwrap(), Some(50));
        assert_eq!(s.get::<f32>("lr").unwrap(), Some(0.002));
        assert_eq!(s.get::<usize>("hidden-width").unwrap(), Some(32));
        assert_eq!(s.get::<usize>("seed").unwrap(), None);
    }

    #[test]
    fn flags_win() {
        let s = Settings::parse("epochs = 50", "t").unwrap();
        assert_eq!(s.pick(Some(7usize), "epochs", 200).unwrap(), 7);
        assert_eq!(s.pick(None, "epochs", 200usize).unwrap(), 50);
        assert_eq!(s.pick(None, "seed", 3u64).unwrap(), 3);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(Settings::parse("epochs 50", "t"), Err(HubError::Config { line: 1, .. })));
        assert!(matches!(Settings::parse("\nepoch = 5", "t"), Err(HubError::Config { line: 2, .. })));
        assert!(matches!(Settings::parse("k = 1\nk = 2", "t"), Err(HubError::Config { line: 2, .. })));
        let s = Settings::parse("epochs = many", "t").unwrap();
        assert!(s.get::<usize>("epochs").is_err());
    }
}
