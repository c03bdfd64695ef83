//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use llp_core::experiments::{default_methods, DatasetConfig};
use llp_core::{Method, OptimizerKind, TrainConfig};

/// Every key a config file may set, in manifest order.
pub const KEYS: &[&str] = &[
    "seed",
    "classes",
    "dim",
    "pool_per_class",
    "separation",
    "num_bags",
    "bag_size",
    "proportion_sd",
    "test_per_class",
    "data_dir",
    "method",
    "sample_size",
    "batch_bags",
    "epochs",
    "learning_rate",
    "optimizer",
    "momentum",
    "hidden",
    "validation_fraction",
    "val_minibags",
    "methods",
    "sample_sizes",
    "num_seeds",
    "include_full_perturbed",
    "draws_per_point",
    "num_bins",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Reads `bags.csv` and `test.csv` from here instead of generating data.
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub sample_sizes: Vec<usize>,
    pub num_seeds: usize,
    pub include_full_perturbed: bool,
    pub draws_per_point: usize,
    pub num_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            data_dir: None,
            train: TrainConfig::default(),
            methods: default_methods(),
            sample_sizes: vec![12, 25, 50, 100, 150, 200],
            num_seeds: 5,
            include_full_perturbed: false,
            draws_per_point: 10_000,
            num_bins: 20,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| anyhow!("invalid value `{raw}` for `{key}`: {e}"))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        bail!("invalid value for `{key}`: empty list");
    }
    Ok(items)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let d = &mut self.dataset;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_value(key, raw)?,
            "classes" => d.classes = parse_value(key, raw)?,
            "dim" => d.dim = parse_value(key, raw)?,
            "pool_per_class" => d.pool_per_class = parse_value(key, raw)?,
            "separation" => d.separation = parse_value(key, raw)?,
            "num_bags" => d.num_bags = parse_value(key, raw)?,
            "bag_size" => d.bag_size = parse_value(key, raw)?,
            "proportion_sd" => d.proportion_sd = parse_value(key, raw)?,
            "test_per_class" => d.test_per_class = parse_value(key, raw)?,
            "data_dir" => self.data_dir = (!raw.is_empty()).then(|| PathBuf::from(raw)),
            "method" => t.method = parse_value(key, raw)?,
            "sample_size" => t.sample_size = parse_value(key, raw)?,
            "batch_bags" => t.batch_bags = parse_value(key, raw)?,
            "epochs" => t.epochs = parse_value(key, raw)?,
            "learning_rate" => t.learning_rate = parse_value(key, raw)?,
            "optimizer" => t.optimizer = parse_value::<OptimizerKind>(key, raw)?,
            "momentum" => t.momentum = parse_value(key, raw)?,
            "hidden" => t.hidden = parse_value(key, raw)?,
            "validation_fraction" => t.validation_fraction = parse_value(key, raw)?,
            "val_minibags" => t.val_minibags = parse_value(key, raw)?,
            "methods" => self.methods = parse_list(key, raw)?,
            "sample_sizes" => self.sample_sizes = parse_list(key, raw)?,
            "num_seeds" => self.num_seeds = parse_value(key, raw)?,
            "include_full_perturbed" => self.include_full_perturbed = parse_value(key, raw)?,
            "draws_per_point" => self.draws_per_point = parse_value(key, raw)?,
            "num_bins" => self.num_bins = parse_value(key, raw)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("missing input file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Current value of `key` as it would be written to a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let d = &self.dataset;
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "classes" => d.classes.to_string(),
            "dim" => d.dim.to_string(),
            "pool_per_class" => d.pool_per_class.to_string(),
            "separation" => d.separation.to_string(),
            "num_bags" => d.num_bags.to_string(),
            "bag_size" => d.bag_size.to_string(),
            "proportion_sd" => d.proportion_sd.to_string(),
            "test_per_class" => d.test_per_class.to_string(),
            "data_dir" => self
                .data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "method" => t.method.to_string(),
            "sample_size" => t.sample_size.to_string(),
            "batch_bags" => t.batch_bags.to_string(),
            "epochs" => t.epochs.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "optimizer" => t.optimizer.to_string(),
            "momentum" => t.momentum.to_string(),
            "hidden" => t.hidden.to_string(),
            "validation_fraction" => t.validation_fraction.to_string(),
            "val_minibags" => t.val_minibags.to_string(),
            "methods" => join(&self.methods),
            "sample_sizes" => join(&self.sample_sizes),
            "num_seeds" => self.num_seeds.to_string(),
            "include_full_perturbed" => self.include_full_perturbed.to_string(),
            "draws_per_point" => self.draws_per_point.to_string(),
            "num_bins" => self.num_bins.to_string(),
            _ => return None,
        })
    }

    /// Seeds for multi-seed commands: `seed, seed + 1, ..`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }

    /// Training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Resolved config as loadable `key = value` text.
    pub fn manifest(&self, command: &str) -> String {
        let mut out = String::from("# llp run manifest\n");
        let _ = writeln!(out, "# command: {command}");
        let _ = writeln!(out, "# version: {}", env!("CARGO_PKG_VERSION"));
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate_sample_sizes(&self) -> Result<()> {
        let n_max = self.dataset.bag_size;
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n == 0 || n > n_max) {
            bail!("invalid sample_size: {n} is outside 1..={n_max} (key `sample_sizes`)");
        }
        Ok(())
    }

    pub fn validate_sample_size(&self) -> Result<()> {
        let n = self.train.sample_size;
        let n_max = self.dataset.bag_size;
        if n == 0 || n > n_max {
            bail!("invalid sample_size: {n} is outside 1..={n_max}");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("methods", "PL, gaussian:0.15").unwrap();
        cfg.set("learning_rate", "0.05").unwrap();
        cfg.set("data_dir", "some/dir").unwrap();
        cfg.set("optimizer", "adam").unwrap();
        let text = cfg.manifest("train");
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable() {
        let base = RunConfig::default();
        for key in KEYS {
            let mut cfg = RunConfig::default();
            let v = base.get(key).unwrap();
            cfg.set(key, &v).unwrap();
            assert_eq!(cfg, base, "{key}");
        }
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::parse("epochz = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("epochz"));
        let err = RunConfig::parse("# c\nlearning_rate = fast\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(
            msg.contains("learning_rate") && msg.contains("line 2"),
            "{msg}"
        );
        assert!(RunConfig::parse("seed 4").is_err());
        assert!(RunConfig::parse("methods = ").is_err());
    }

    #[test]
    fn seeds_count_up_from_the_root() {
        let cfg = RunConfig {
            seed: 7,
            num_seeds: 3,
            ..RunConfig::default()
        };
        assert_eq!(cfg.seeds(), vec![7, 8, 9]);
    }
}
