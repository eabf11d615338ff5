//! Layered configuration: built-in defaults, then a TOML file, then flags.
//!
//! The file has `[de]`, `[backbone]` and `[train]` tables. Keys at the top
//! level are read as `[train]` keys, so `beta = 1.5` and `[train] beta = 1.5`
//! mean the same thing.

use std::fs;
use std::path::Path;

use ldguid_core::backbones::{BackboneArchConfig, InputMode};
use ldguid_core::de::DeArchConfig;
use ldguid_core::trainer::{DeMode, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolvedConfig {
    pub de: DeArchConfig,
    pub backbone: BackboneArchConfig,
    pub train: TrainConfig,
}

/// Values given on the command line; `None` leaves the lower layers in place.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub de_mode: Option<DeMode>,
    pub input_mode: Option<InputMode>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ResolvedConfig) {
        let t = &mut c.train;
        macro_rules! set {
            ($($dst:expr => $src:expr),*) => { $(if let Some(v) = $src { $dst = v; })* };
        }
        set!(
            t.beta => self.beta,
            t.lambda => self.lambda,
            t.learning_rate => self.learning_rate,
            t.epochs => self.epochs,
            t.batch_size => self.batch_size,
            t.seed => self.seed,
            t.de_update_period_k => self.k,
            t.de_mode => self.de_mode,
            c.backbone.input_mode => self.input_mode
        );
    }
}

const SECTIONS: [&str; 3] = ["de", "backbone", "train"];

fn check_section<T: DeserializeOwned>(obj: &Map<String, Value>, section: &str, key: &str, path: &Path) -> Result<()> {
    serde_json::from_value::<T>(Value::Object(obj.clone()))
        .map(drop)
        .map_err(|e| Error::Parse(format!("{}: key {section}.{key}: {e}", path.display())))
}

/// Overlays the TOML document `text` on `base`.
pub fn apply_file(base: &ResolvedConfig, text: &str, path: &Path) -> Result<ResolvedConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let Value::Object(mut merged) = serde_json::to_value(base).expect("config serializes") else { unreachable!() };

    let mut entries: Vec<(&str, &str, &toml::Value)> = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(inner) if SECTIONS.contains(&key.as_str()) => {
                entries.extend(inner.iter().map(|(k, v)| (key.as_str(), k.as_str(), v)));
            }
            _ if merged["train"].get(key).is_some() => entries.push(("train", key, value)),
            _ => return Err(Error::UnknownKey(key.clone())),
        }
    }
    for (section, key, value) in entries {
        let obj = merged[section].as_object_mut().expect("sections are objects");
        if !obj.contains_key(key) {
            return Err(Error::UnknownKey(format!("{section}.{key}")));
        }
        let json = serde_json::to_value(value).map_err(|e| Error::Parse(format!("{}: key {section}.{key}: {e}", path.display())))?;
        obj.insert(key.to_string(), json);
        match section {
            "de" => check_section::<DeArchConfig>(obj, section, key, path)?,
            "backbone" => check_section::<BackboneArchConfig>(obj, section, key, path)?,
            _ => check_section::<TrainConfig>(obj, section, key, path)?,
        }
    }
    Ok(serde_json::from_value(Value::Object(merged)).expect("every key was checked"))
}

/// `base`, overlaid by the file at `file` if any, then by `flags`.
pub fn resolve(base: &ResolvedConfig, file: Option<&Path>, flags: &Overrides) -> Result<ResolvedConfig> {
    let mut c = match file {
        Some(p) => apply_file(base, &fs::read_to_string(p).map_err(Error::io(p))?, p)?,
        None => base.clone(),
    };
    flags.apply(&mut c);
    c.de.validate()?;
    c.backbone.validate()?;
    c.train.validate()?;
    Ok(c)
}

/// The configuration as a TOML document that [`apply_file`] reads back.
pub fn to_toml(c: &ResolvedConfig) -> String {
    toml::to_string(c).expect("config serializes to TOML")
}
