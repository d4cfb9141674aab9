//! Plain-text run configuration: one `key = value` per line, `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    // data
    "dataset",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_subset",
    "synth_n",
    "synth_size",
    // model and training
    "arch",
    "checkpoint",
    "method",
    "gamma",
    "eps",
    "warmup_steps",
    "inner_steps",
    "inner_step_size",
    "epochs",
    "batch_size",
    "lr",
    "checkpoint_every",
    "seed",
    "out_dir",
    // attacks
    "attack",
    "attack_eps",
    "attack_steps",
    "step_size",
    "n_samples",
    "target",
    "tau",
    "lambda",
    "lambda_hi",
    "bisect_iters",
    "measure",
    "aai_objective",
    "topk",
    "save_maps",
    // evaluation
    "sweeps",
    "eps_list",
    "step_list",
    "gamma_list",
    "measures",
    "eps_upper",
    // visualization
    "neuron",
    "image_index",
    "vis_steps",
    "vis_step",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(CliError::config(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(RunConfig {
            values,
            base: PathBuf::new(),
        })
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("key `{key}`: cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::config(format!("missing required key `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p: String = self.require(key)?;
        let p = PathBuf::from(p);
        Ok(if p.is_relative() { self.base.join(p) } else { p })
    }

    /// Comma-separated list.
    pub fn list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| CliError::config(format!("key `{key}`: cannot parse `{s}`: {e}")))
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let c = RunConfig::parse("# run\nepochs = 3 # three\n\neps_list = 0, 0.1,0.2\n").unwrap();
        assert_eq!(c.require::<usize>("epochs").unwrap(), 3);
        assert_eq!(c.list::<f64>("eps_list", &[]).unwrap(), vec![0.0, 0.1, 0.2]);
        assert_eq!(c.or("gamma", 0.01).unwrap(), 0.01);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for bad in ["foo = 1", "epochs = 1\nepochs = 2", "epochs 1"] {
            assert_eq!(RunConfig::parse(bad).unwrap_err().code, 1);
        }
        let c = RunConfig::parse("epochs = x").unwrap();
        assert!(c.get::<usize>("epochs").is_err());
        let e = c.require::<String>("train_images").unwrap_err();
        assert!(e.message.contains("train_images"));
    }
}
