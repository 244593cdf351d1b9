//! TOML run configuration.
//!
//! A config file picks a base profile and overrides any of its fields:
//!
//! ```toml
//! profile = "desk"
//! stage1_iters = 500
//!
//! [field]
//! trunk_width = 32
//!
//! [weights]
//! geometry = 0.0
//! ```
//!
//! Keys mirror [`TrainConfig`]; unknown keys are rejected.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use nfseg_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl Profile {
    pub fn config(self) -> TrainConfig {
        match self {
            Profile::Paper => TrainConfig::paper(),
            Profile::Desk => TrainConfig::desk(),
        }
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies the overrides in `text` to `profile` (or to the file's own
/// `profile` key when `profile` is `None`).
pub fn parse_config(text: &str, profile: Option<Profile>, path: &Path) -> Result<TrainConfig> {
    let err = |message: String| Error::Config {
        path: path.into(),
        message,
    };
    let mut top: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?;
    let own = match top.remove("profile") {
        Some(v) => Some(Profile::deserialize(v).map_err(|e| err(e.to_string()))?),
        None => None,
    };
    let base = profile.or(own).unwrap_or_default().config();
    let mut table = toml::Table::try_from(&base).map_err(|e| err(e.to_string()))?;
    overlay(&mut table, top);
    let config = TrainConfig::deserialize(table).map_err(|e| err(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// The profile config, overridden by the file at `path` when given.
pub fn load_config(path: Option<&Path>, profile: Option<Profile>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text, profile, p)
        }
        None => Ok(profile.unwrap_or_default().config()),
    }
}

/// The config as a TOML document that [`parse_config`] reads back unchanged.
pub fn to_toml(config: &TrainConfig) -> String {
    toml::to_string(config).expect("config serializes to toml")
}
