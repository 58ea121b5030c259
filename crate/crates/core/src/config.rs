//! Experiment configuration files (TOML).
//!
//! Parsing and validation errors carry the line of the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_synth, read_csv, Dataset};
use crate::error::{Error, Result};
use crate::fedsim::{
    partition_iid, partition_noniid, DropoutModel, FedAvgConfig, LrSchedule, ProtocolSetup, Seeds,
    TrainConfig,
};
use crate::field::FieldParams;
use crate::fxp::QuantConfig;
use crate::lcc::CodingConfig;
use crate::pinn::PinnArch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub field: FieldSection,
    pub coding: CodingSection,
    pub model: ModelSection,
    #[serde(default)]
    pub quant: QuantSection,
    pub train: TrainSection,
    #[serde(default)]
    pub dropout: DropoutSection,
    pub data: DataSection,
    pub seeds: SeedSection,
    #[serde(default)]
    pub fedavg: FedAvgSection,
    #[serde(default)]
    pub run: RunSection,
    /// Written by `run` into the summary file; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// Decimal or `2^k - c` expression.
    pub modulus: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodingSection {
    pub n_clients: usize,
    pub shards: usize,
    pub privacy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layer_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shift {
    Value(f64),
    /// `"auto"`: absolute value of the most negative feature (0 if none).
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSection {
    pub scale_bits: u32,
    pub shift: Shift,
}

impl Default for QuantSection {
    fn default() -> Self {
        QuantSection {
            scale_bits: 4,
            shift: Shift::Value(0.0),
        }
    }
}

fn default_decay_factor() -> f64 {
    0.65
}

fn default_decay_interval() -> usize {
    1500
}

fn default_init_bound() -> i64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_rows: usize,
    pub rounds: usize,
    pub lr: f64,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default = "default_decay_interval")]
    pub lr_decay_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_init_bound")]
    pub init_bound: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutKind {
    /// Half the clients at 0.99, the rest uniform on [0, 0.1].
    Skewed,
    /// Every client drops with `rate`.
    Constant,
    /// Explicit per-client `probs`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSection {
    pub model: DropoutKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

impl Default for DropoutSection {
    fn default() -> Self {
        DropoutSection {
            model: DropoutKind::Constant,
            rate: Some(0.0),
            probs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Noniid,
    Iid,
}

fn default_test_every() -> usize {
    5
}

fn default_partition() -> PartitionKind {
    PartitionKind::Noniid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `"synthetic"` or a CSV path (relative to the config file).
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_seed: Option<u64>,
    /// Every `test_every`-th row is held out for testing.
    #[serde(default = "default_test_every")]
    pub test_every: usize,
    #[serde(default = "default_partition")]
    pub partition: PartitionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub sampling: u64,
    pub masks: u64,
    pub dropout: u64,
    pub quantization: u64,
    pub init: u64,
}

impl From<SeedSection> for Seeds {
    fn from(s: SeedSection) -> Seeds {
        Seeds {
            sampling: s.sampling,
            masks: s.masks,
            dropout: s.dropout,
            quantization: s.quantization,
            init: s.init,
        }
    }
}

impl From<Seeds> for SeedSection {
    fn from(s: Seeds) -> SeedSection {
        SeedSection {
            sampling: s.sampling,
            masks: s.masks,
            dropout: s.dropout,
            quantization: s.quantization,
            init: s.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgSection {
    pub lr: f64,
    pub init_scale: f64,
    pub local_batch: usize,
}

impl Default for FedAvgSection {
    fn default() -> Self {
        FedAvgSection {
            lr: 0.05,
            init_scale: 0.1,
            local_batch: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Skip the capacity check (results may silently wrap).
    #[serde(default)]
    pub allow_capacity_override: bool,
}

/// A validated experiment ready to run in any mode.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub setup: ProtocolSetup,
    pub fedavg: FedAvgConfig,
}

/// 1-based line of `key` inside `[section]`, if present in the text.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

struct Located<'a> {
    src: &'a str,
    path: &'a str,
}

impl Located<'_> {
    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        match locate(self.src, section, key) {
            Some(line) => Error::Config(format!("{}:{line}: [{section}] {key}: {msg}", self.path)),
            None => Error::Config(format!("{}: [{section}] {key}: {msg}", self.path)),
        }
    }

    fn wrap<T>(&self, section: &str, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Config(m) | Error::Domain(m) | Error::Format(m) => self.err(section, key, m),
            Error::CapacityOverflow { value, half } => self.err(
                section,
                key,
                format!("capacity overflow: {value} does not fit below (p-1)/2 = {half}"),
            ),
            other => other,
        })
    }
}

impl ExperimentSpec {
    pub fn from_toml(src: &str, path: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let line = e
                .span()
                .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::Config(format!("{path}:{l}: {msg}")),
                None => Error::Config(format!("{path}: {msg}")),
            }
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let src = std::fs::read_to_string(path)?;
        let spec = Self::from_toml(&src, &path.display().to_string())?;
        Ok((spec, src))
    }

    /// Validates against the original text (for line numbers) and builds
    /// the runnable experiment. `base` resolves relative dataset paths.
    pub fn build(&self, src: &str, path: &str, base: &Path) -> Result<Experiment> {
        let at = Located { src, path };
        let field = at.wrap("field", "modulus", FieldParams::parse(&self.field.modulus))?;
        let arch = at.wrap("model", "layer_dims", PinnArch::new(self.model.layer_dims.clone()))?;
        let c = &self.coding;
        let coding = at.wrap(
            "coding",
            "n_clients",
            CodingConfig::new(field.clone(), c.n_clients, c.shards, c.privacy, arch.grad_degree()),
        )?;

        let dataset = self.load_dataset(&at, base)?;
        if dataset.dim() != arch.input_dim() {
            return Err(at.err(
                "model",
                "layer_dims",
                format!("input width {} but the data has {} features", arch.input_dim(), dataset.dim()),
            ));
        }
        if dataset.n_classes > arch.output_dim() {
            return Err(at.err(
                "model",
                "layer_dims",
                format!("output width {} but the data has {} classes", arch.output_dim(), dataset.n_classes),
            ));
        }
        let d = &self.data;
        if d.test_every == 1 {
            return Err(at.err("data", "test_every", "must be 0 (no test split) or at least 2"));
        }
        let (train, test) = dataset.split_every(d.test_every);
        let locals = at.wrap(
            "coding",
            "n_clients",
            match d.partition {
                PartitionKind::Noniid => partition_noniid(&train, c.n_clients, c.shards),
                PartitionKind::Iid => partition_iid(&train, c.n_clients, self.seeds.sampling),
            },
        )?;
        let locals = if d.partition == PartitionKind::Iid {
            // equal sizes that are multiples of K
            let per = locals.iter().map(Dataset::len).min().unwrap_or(0) / c.shards * c.shards;
            locals.iter().map(|l| l.subset(&(0..per).collect::<Vec<_>>())).collect()
        } else {
            locals
        };

        let shift = match &self.quant.shift {
            Shift::Value(v) => *v,
            Shift::Named(s) if s == "auto" => (-dataset.min_feature()).max(0.0),
            Shift::Named(s) => return Err(at.err("quant", "shift", format!("expected a number or \"auto\", got {s:?}"))),
        };
        let quant = at.wrap(
            "quant",
            "scale_bits",
            QuantConfig::with_capacity(self.quant.scale_bits, shift, field.clone(), dataset.max_abs_feature()),
        )?;

        let t = &self.train;
        let seeds: Seeds = self.seeds.into();
        let train_cfg = TrainConfig {
            batch_rows: t.batch_rows,
            rounds: t.rounds,
            lr: LrSchedule {
                base: t.lr,
                decay_factor: t.lr_decay_factor,
                decay_interval: t.lr_decay_interval,
            },
            clip_norm: t.clip_norm,
            seeds,
            init_bound: t.init_bound,
        };
        at.wrap("train", "lr", train_cfg.validate())?;

        let dropout = self.dropout_model(&at)?;
        let setup = ProtocolSetup {
            coding,
            quant,
            arch,
            train: train_cfg,
            dropout,
            locals,
            test,
            enforce_capacity: !self.run.allow_capacity_override,
        };
        setup.validate().map_err(|e| match e {
            Error::CapacityOverflow { value, half } => at.err(
                "train",
                "init_bound",
                format!(
                    "worst-case gradient magnitude {value} reaches (p-1)/2 = {half}; \
                     use a larger modulus, smaller scale_bits/init_bound/batch_rows, \
                     or set [run] allow_capacity_override = true"
                ),
            ),
            Error::Config(m) if m.contains("batch_rows") => at.err("train", "batch_rows", m),
            Error::Config(m) => at.err("coding", "shards", m),
            other => other,
        })?;

        let f = &self.fedavg;
        let fedavg = FedAvgConfig {
            lr: LrSchedule {
                base: f.lr,
                decay_factor: t.lr_decay_factor,
                decay_interval: t.lr_decay_interval,
            },
            init_scale: f.init_scale,
            local_batch: f.local_batch,
            rounds: t.rounds,
        };
        if !(f.lr > 0.0) || f.local_batch == 0 || !(f.init_scale >= 0.0) {
            return Err(at.err("fedavg", "lr", "needs lr > 0, local_batch > 0, init_scale >= 0"));
        }
        Ok(Experiment {
            spec: self.clone(),
            setup,
            fedavg,
        })
    }

    fn load_dataset(&self, at: &Located, base: &Path) -> Result<Dataset> {
        let d = &self.data;
        if d.source == "synthetic" {
            let need = |v: Option<usize>, key: &str| v.ok_or_else(|| at.err("data", key, "required for synthetic data"));
            let n = need(d.n_samples, "n_samples")?;
            let dim = need(d.dim, "dim")?;
            let classes = need(d.classes, "classes")?;
            return at.wrap("data", "n_samples", gen_synth(n, dim, classes, d.synth_seed.unwrap_or(0)));
        }
        let path: PathBuf = base.join(&d.source);
        match read_csv(&path) {
            Ok(ds) => Ok(ds),
            Err(Error::Io(e)) => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))),
            Err(e) => at.wrap("data", "source", Err(e)),
        }
    }

    fn dropout_model(&self, at: &Located) -> Result<DropoutModel> {
        let n = self.coding.n_clients;
        let d = &self.dropout;
        match d.model {
            DropoutKind::Skewed => Ok(DropoutModel::skewed(n, self.seeds.dropout)),
            DropoutKind::Constant => {
                let rate = d.rate.ok_or_else(|| at.err("dropout", "rate", "required for the constant model"))?;
                at.wrap("dropout", "rate", DropoutModel::constant(n, rate))
            }
            DropoutKind::Explicit => {
                let probs = d.probs.clone().ok_or_else(|| at.err("dropout", "probs", "required for the explicit model"))?;
                if probs.len() != n {
                    return Err(at.err("dropout", "probs", format!("{} rates for {n} clients", probs.len())));
                }
                at.wrap("dropout", "probs", DropoutModel::new(probs))
            }
        }
    }
}

/// Loads, parses and validates a config file.
pub fn load_experiment(path: &Path) -> Result<Experiment> {
    let (spec, src) = ExperimentSpec::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    spec.build(&src, &path.display().to_string(), base)
}
