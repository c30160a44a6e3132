//! Run configuration: one TOML file, dotted-key overrides, schema
//! validation and a stable content hash.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::mixing::MixConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use crate::volume::PhantomConfig;

/// Environment variable supplying `data.root` when the config leaves it unset.
pub const DATA_ROOT_ENV: &str = "CMC_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    /// Every scan is resampled to this `(T, H, W)` before augmentation.
    pub resize: [usize; 3],
    /// Train and validation fractions.
    pub split: [f64; 2],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: None, resize: [128, 224, 224], split: [0.8, 0.2], split_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scans: usize,
    /// Fraction of class-1 scans, rounded to the nearest count.
    pub covid_fraction: f64,
    /// Per-scan seeds derive from `generator.seed` and the scan index.
    pub generator: PhantomConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { scans: 200, covid_fraction: 0.5, generator: PhantomConfig { seed: 1, ..PhantomConfig::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Total views per scan; 1 means the deterministic eval view only.
    pub tta_views: usize,
    pub batch_size: usize,
    /// Class whose activation map `cam` renders.
    pub cam_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tta_views: 1, batch_size: 8, cam_class: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub data: DataConfig,
    pub phantom: SynthConfig,
    pub augmentation: AugmentationPolicy,
    pub mixing: MixConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, bool)>) {
    match v {
        serde_json::Value::Object(map) => {
            if !prefix.is_empty() {
                out.push((prefix.to_string(), true));
            }
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), false)),
    }
}

/// Every settable dotted key with its default, in schema order.
pub fn override_keys() -> Vec<(String, String)> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut keys = Vec::new();
    flatten("", &defaults, &mut keys);
    keys.into_iter()
        .filter(|(_, table)| !table)
        .map(|(k, _)| {
            let v = k.split('.').fold(&defaults, |v, part| &v[part]);
            (k, v.to_string())
        })
        .collect()
}

/// Reject any key outside the schema, naming it.
fn check_keys(table: &toml::Table) -> Result<()> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut known = Vec::new();
    flatten("", &defaults, &mut known);
    let tables: BTreeSet<&str> = known.iter().filter(|(_, t)| *t).map(|(k, _)| k.as_str()).collect();
    let leaves: BTreeSet<&str> = known.iter().filter(|(_, t)| !*t).map(|(k, _)| k.as_str()).collect();
    fn walk(prefix: &str, t: &toml::Table, tables: &BTreeSet<&str>, leaves: &BTreeSet<&str>) -> Result<()> {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(sub) if tables.contains(key.as_str()) => walk(&key, sub, tables, leaves)?,
                _ if leaves.contains(key.as_str()) => {}
                _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
            }
        }
        Ok(())
    }
    walk("", table, &tables, &leaves)
}

fn parse_scalar(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `key=value`; the value is read as TOML, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override key `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides in order, then validate.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        check_keys(&table)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) if !p.exists() => return Err(Error::NotFound(p.to_path_buf())),
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// `data.root`, else the environment default.
    pub fn data_root(&self) -> Result<PathBuf> {
        self.data
            .root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::InvalidConfig(format!("data.root is unset and {DATA_ROOT_ENV} is not defined")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.augmentation.validate()?;
        self.loss.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if !(self.mixing.alpha > 0.0 && self.mixing.alpha.is_finite()) {
            return bad(format!("mixing.alpha must be positive, got {}", self.mixing.alpha));
        }
        if self.data.resize.contains(&0) {
            return bad("data.resize entries must be positive".into());
        }
        let [tr, va] = self.data.split;
        if !(tr > 0.0 && va > 0.0 && ((tr + va) - 1.0).abs() < 1e-9) {
            return bad(format!("data.split {:?} must be two positive fractions summing to 1", self.data.split));
        }
        if self.augmentation.depth_crop > self.data.resize[0] {
            return bad(format!(
                "augmentation.depth_crop {} exceeds data.resize depth {}",
                self.augmentation.depth_crop, self.data.resize[0]
            ));
        }
        let a = &self.augmentation;
        for (what, shape) in [("train", a.train_shape()), ("eval", a.eval_shape())] {
            self.model
                .check_input(shape)
                .map_err(|e| Error::InvalidConfig(format!("{what} input shape: {e}")))?;
        }
        if self.eval.tta_views == 0 || self.eval.batch_size == 0 {
            return bad("eval.tta_views and eval.batch_size must be positive".into());
        }
        if self.eval.cam_class >= crate::volume::NUM_CLASSES {
            return bad(format!("eval.cam_class {} out of range", self.eval.cam_class));
        }
        if !(0.0..=1.0).contains(&self.phantom.covid_fraction) {
            return bad("phantom.covid_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let a = RunConfig::from_toml_with("", &[]).unwrap();
        assert_eq!(a, RunConfig::default());
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn overrides_are_typed_and_change_the_hash() {
        let cfg = RunConfig::from_toml_with(
            "[training]\nepochs = 3\n",
            &["training.base_lr=0.01".into(), "mixing.mode=cutmix".into(), "model.channels=[32,64,128,256]".into()],
        )
        .unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.base_lr, 0.01);
        assert_eq!(cfg.mixing.mode, crate::mixing::MixMode::Cutmix);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, over) in [("[training]\nepochz = 3\n", vec![]), ("", vec!["model.depth=3".to_string()])] {
            match RunConfig::from_toml_with(text, &over) {
                Err(Error::InvalidConfig(msg)) => assert!(msg.contains("epochz") || msg.contains("model.depth"), "{msg}"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig { name: "x".into(), ..RunConfig::default() };
        assert_eq!(RunConfig::from_toml_with(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_listed() {
        let keys = override_keys();
        for k in ["training.epochs", "phantom.generator.lungs.offset", "data.root", "loss.positive_normalization"] {
            assert!(keys.iter().any(|(key, _)| key == k), "{k}");
        }
    }
}
