//! Flat `section.key = value` settings with three layers: built-in
//! defaults, an INI config file, then command-line flags.
//!
//! Every known key has a default, so a resolved [`Settings`] always holds
//! the complete configuration and can be echoed verbatim.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// `(section, key, default)`; an empty default means "unset".
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("data", "source", "mnist"),
    ("data", "mnist_dir", "data/mnist"),
    ("data", "train_images", ""),
    ("data", "train_labels", ""),
    ("data", "test_images", ""),
    ("data", "test_labels", ""),
    ("data", "train_subset", ""),
    ("data", "blob_seed", "0"),
    ("data", "blob_per_class", "500"),
    ("data", "blob_classes", "4"),
    ("data", "blob_dim", "16"),
    ("data", "blob_separation", "3.0"),
    ("train", "arch", "cnn"),
    ("train", "epochs", "2"),
    ("train", "lr", "0.05"),
    ("train", "batch_size", "64"),
    ("train", "hidden", "64"),
    ("train", "seed", "0"),
    ("attack", "mode", "decision"),
    ("attack", "target", ""),
    ("attack", "loss", "acc"),
    ("attack", "optimizer", "spsa_am"),
    ("attack", "eps", "10"),
    ("attack", "norm", "linf"),
    ("attack", "projection", "radial"),
    ("attack", "batch_size", "256"),
    ("attack", "epochs", "500"),
    ("attack", "updates", "20000"),
    ("attack", "seed", "0"),
    ("attack", "data_seed", ""),
    ("attack", "alpha_start", "1e-4"),
    ("attack", "alpha_end", "1e-3"),
    ("attack", "delta", "0.01"),
    ("attack", "delta_ratio", "0.9"),
    ("attack", "delta_period", ""),
    ("attack", "gamma", "1e-3"),
    ("attack", "beta1", "0.5"),
    ("attack", "beta2", "0.999"),
    ("attack", "eta", "1e-8"),
    ("attack", "momentum", "0.9"),
    ("attack", "checkpoint_interval", "1000"),
    ("attack", "probe_size", "512"),
    ("attack", "intensity_scale", "255"),
    ("attack", "clamp", "global"),
    ("eval", "baseline_trials", "0"),
    ("eval", "baseline_seed", "0"),
    ("sweep", "budgets", "10,33.42,56.84,75.57,99"),
    ("sweep", "seeds", "1,2,3"),
    ("sweep", "jobs", "1"),
];

/// Fully resolved settings keyed by `section.key`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn defaults() -> Self {
        Self(DEFAULTS.iter().map(|(s, k, v)| (format!("{s}.{k}"), v.to_string())).collect())
    }

    /// Defaults, overlaid by `file` (if any), overlaid by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &[(&str, Option<String>)]) -> anyhow::Result<Self> {
        let mut settings = Self::defaults();
        if let Some(path) = file {
            if !path.exists() {
                return Err(UsageError(format!("config file {} does not exist", path.display())).into());
            }
            let ini = Ini::load_from_file(path)
                .map_err(|e| UsageError(format!("cannot parse config file {}: {e}", path.display())))?;
            settings.overlay_ini(&ini)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                settings.set(key, v.clone())?;
            }
        }
        Ok(settings)
    }

    fn overlay_ini(&mut self, ini: &Ini) -> anyhow::Result<()> {
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(UsageError("config keys must live inside a [section]".into()).into());
                }
                continue;
            };
            for (key, value) in props.iter() {
                self.set(&format!("{section}.{key}"), value.to_string())?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) -> anyhow::Result<()> {
        match self.0.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(UsageError(format!("unknown config key '{key}'")).into()),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| UsageError(format!("invalid value '{raw}' for {key}: {e}")).into())
    }

    /// `None` for an empty value.
    pub fn opt<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> anyhow::Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| UsageError(format!("invalid entry '{s}' in {key}: {e}")).into()))
            .collect()
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (full, value) in &self.0 {
            let (section, key) = full.split_once('.').expect("keys are section.key");
            if section != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn from_ini(text: &str) -> anyhow::Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| UsageError(format!("cannot parse settings: {e}")))?;
        let mut settings = Self::defaults();
        settings.overlay_ini(&ini)?;
        Ok(settings)
    }

    /// Hex SHA-256 of [`Settings::to_ini`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_ini().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// What a run was configured with and where it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub resolved: Settings,
    pub out_dir: String,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ini");
        std::fs::write(&path, "[attack]\neps = 33.42\nloss = emd\n").unwrap();
        let s = Settings::resolve(Some(&path), &[("attack.loss", Some("ce".into())), ("attack.seed", None)]).unwrap();
        assert_eq!(s.raw("attack.eps"), "33.42");
        assert_eq!(s.raw("attack.loss"), "ce");
        assert_eq!(s.raw("attack.seed"), "0");
    }

    #[test]
    fn resolved_settings_round_trip_through_ini() {
        let mut s = Settings::defaults();
        s.set("data.mnist_dir", "/some where/mnist".into()).unwrap();
        s.set("attack.target", "7".into()).unwrap();
        let back = Settings::from_ini(&s.to_ini()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = Settings::from_ini("[attack]\nepsilon = 3\n").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(Settings::defaults().set("attack.nope", "1".into()).is_err());
    }

    #[test]
    fn typed_access() {
        let s = Settings::defaults();
        assert_eq!(s.get::<f64>("attack.eps").unwrap(), 10.0);
        assert_eq!(s.opt::<usize>("attack.target").unwrap(), None);
        assert_eq!(s.list::<f64>("sweep.budgets").unwrap(), [10.0, 33.42, 56.84, 75.57, 99.0]);
        assert!(s.get::<usize>("attack.loss").is_err());
    }
}
