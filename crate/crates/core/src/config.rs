//! Flat `key = value` run configuration.
//!
//! Keys are the [`TrainConfig`] field names plus the objective
//! hyperparameters. Layers are merged in order, later ones winning, so a
//! caller can stack defaults, a file and command-line overrides.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::losses::Objective;
use crate::policy::OptimizerKind;
use crate::trainer::TrainConfig;
use crate::world::{PairingMode, Scenario};

pub const KEYS: [&str; 22] = [
    "scenario",
    "objective",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "log_every",
    "optimizer",
    "hidden",
    "pairing",
    "fit_lr",
    "fit_max_steps",
    "fit_tol",
    "beta",
    "beta_plus",
    "beta_minus",
    "gamma",
    "eta",
    "delta",
    "margin_gamma",
    "len_plus",
    "len_minus",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
}

/// Ordered key/value overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            map.set(k.trim(), v.trim())?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let key = key.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        self.entries.insert(key, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Entries of `other` replace entries of `self`.
    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.to_string(),
                value: v.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    fn value_error(&self, key: &str, reason: &str) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            value: self.get(key).unwrap_or("").to_string(),
            reason: reason.to_string(),
        }
    }

    /// Builds the objective named by `objective`, filling unset hyperparameters
    /// with their defaults.
    pub fn objective(&self) -> Result<Objective, ConfigError> {
        let name = self.get("objective").unwrap_or("dpo").to_ascii_lowercase();
        let f = |k: &str, d: f64| self.parsed::<f64>(k, d);
        let u = |k: &str, d: u32| self.parsed::<u32>(k, d);
        Ok(match name.as_str() {
            "dpo" => Objective::Dpo {
                beta: f("beta", 0.1)?,
            },
            "flex-dpo" | "flex_dpo" | "flexdpo" => Objective::FlexDpo {
                beta_plus: f("beta_plus", 0.1)?,
                beta_minus: f("beta_minus", 0.05)?,
            },
            "sft-dpo" | "sft_dpo" | "sftdpo" => Objective::SftDpo {
                beta: f("beta", 0.1)?,
                gamma: f("gamma", 0.1)?,
            },
            "ipo" => Objective::Ipo {
                eta: f("eta", 0.1)?,
            },
            "slic" => Objective::Slic {
                delta: f("delta", 1.0)?,
                eta: f("eta", 0.1)?,
            },
            "simpo" => Objective::SimPo {
                beta: f("beta", 2.0)?,
                margin: f("margin_gamma", 0.5)?,
                len_plus: u("len_plus", 1)?,
                len_minus: u("len_minus", 1)?,
            },
            "rm" => Objective::Rm,
            _ => {
                return Err(self.value_error(
                    "objective",
                    &format!("expected one of {}", Objective::NAMES.join(", ")),
                ))
            }
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let d = TrainConfig::default();
        let scenario = match self.get("scenario") {
            None => d.scenario,
            Some(s) => Scenario::parse(s)
                .ok_or_else(|| self.value_error("scenario", "expected 1, 2, 3 or 4"))?,
        };
        let optimizer = match self.get("optimizer") {
            None => d.optimizer,
            Some(s) => OptimizerKind::parse(s)
                .ok_or_else(|| self.value_error("optimizer", "expected adam or sgd"))?,
        };
        let pairing = match self.get("pairing") {
            None => d.pairing,
            Some(s) => PairingMode::parse(s).ok_or_else(|| {
                self.value_error("pairing", "expected rejected-set or other-chosen")
            })?,
        };
        Ok(TrainConfig {
            scenario,
            objective: self.objective()?,
            epochs: self.parsed("epochs", d.epochs)?,
            batch_size: self.parsed("batch_size", d.batch_size)?,
            learning_rate: self.parsed("learning_rate", d.learning_rate)?,
            seed: self.parsed("seed", d.seed)?,
            log_every: self.parsed("log_every", d.log_every)?,
            optimizer,
            hidden: self.parsed("hidden", d.hidden)?,
            pairing,
            fit: crate::policy::FitConfig {
                lr: self.parsed("fit_lr", d.fit.lr)?,
                max_steps: self.parsed("fit_max_steps", d.fit.max_steps)?,
                tol: self.parsed("fit_tol", d.fit.tol)?,
            },
        })
    }
}

/// Renders a resolved config back to the file format.
pub fn to_text(config: &TrainConfig) -> String {
    config
        .describe()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_defaults() {
        let map = ConfigMap::parse(
            "# run\nscenario = 4\n\nobjective = flex-dpo  # regularised\nbeta_minus = 0.02\n",
        )
        .unwrap();
        let cfg = map.train_config().unwrap();
        assert_eq!(cfg.scenario, Scenario::S4);
        assert_eq!(
            cfg.objective,
            Objective::FlexDpo {
                beta_plus: 0.1,
                beta_minus: 0.02
            }
        );
        assert_eq!(cfg.epochs, 500);
    }

    #[test]
    fn later_layers_win() {
        let mut base = ConfigMap::parse("epochs = 100\nseed = 3").unwrap();
        let mut flags = ConfigMap::new();
        flags.set("epochs", "7").unwrap();
        base.merge(&flags);
        let cfg = base.train_config().unwrap();
        assert_eq!((cfg.epochs, cfg.seed), (7, 3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ConfigMap::parse("epochs 5"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ConfigMap::parse("colour = red"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(ConfigMap::parse("epochs = many")
            .unwrap()
            .train_config()
            .is_err());
        assert!(ConfigMap::parse("objective = ppo")
            .unwrap()
            .train_config()
            .is_err());
        assert!(ConfigMap::parse("scenario = 9")
            .unwrap()
            .train_config()
            .is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = TrainConfig {
            objective: Objective::SimPo {
                beta: 1.5,
                margin: 0.3,
                len_plus: 2,
                len_minus: 4,
            },
            seed: 11,
            ..TrainConfig::default()
        };
        let back = ConfigMap::parse(&to_text(&cfg))
            .unwrap()
            .train_config()
            .unwrap();
        assert_eq!(back, cfg);
    }
}
