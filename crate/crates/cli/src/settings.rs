//! Flat `key=value` run configuration. Values come from command-line flags
//! first, then the `--config` file, then (for the seed) `XGBOT_SEED`, then
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may contain. Keys belonging to other subcommands
/// are accepted and ignored, so one file can drive a whole pipeline.
pub const KNOWN_KEYS: &[&str] = &[
    // generator
    "topology",
    "nodes",
    "bots",
    "avg_degree",
    "graphs",
    "feature_dim",
    "degree_k",
    // model and training
    "blocks",
    "groups",
    "channels",
    "lr",
    "epochs",
    "class_weight",
    "eval_threshold",
    // explainer
    "khop",
    "explain_epochs",
    "explain_lr",
    "lambda_size",
    "lambda_entropy",
    "feature_mask",
    // shared
    "seed",
];

pub const SEED_ENV: &str = "XGBOT_SEED";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    source: String,
    /// Resolved values in the order they were looked up.
    resolved: Vec<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::new(
                    "config",
                    format!("{source}:{}: expected key=value, got `{line}`", i + 1),
                ));
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::new("config", format!("{source}:{}: unknown key `{key}`", i + 1)));
            }
            if file.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::new("config", format!("{source}:{}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Settings {
            file,
            source: source.to_string(),
            resolved: Vec::new(),
        })
    }

    fn from_file<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::new("config", format!("{}: bad value `{raw}` for key {key}: {e}", self.source))
            }),
        }
    }

    /// Flag, then file, then `default`. Records the result.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Like [`get`](Self::get) with `XGBOT_SEED` consulted before the default.
    pub fn seed(&mut self, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        let value = match (flag, self.from_file::<u64>("seed")?) {
            (Some(v), _) | (None, Some(v)) => v,
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(raw) => raw.trim().parse().map_err(|e| {
                    CliError::new("config", format!("bad value `{raw}` in {SEED_ENV}: {e}"))
                })?,
                Err(_) => default,
            },
        };
        self.record("seed", &value);
        Ok(value)
    }

    pub fn record(&mut self, key: &str, value: &dyn Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    /// `key=value` lines of everything resolved so far.
    pub fn render(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
