//! Experiment configuration: defaults, then a TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use npn_core::data::{BlobSpec, NoiseKind, NoiseSpec};
use npn_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::Invalid;

/// File name of the resolved configuration written into output directories.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let b = BlobSpec::benchmark(0);
        GeneratorConfig {
            classes: b.classes,
            per_class: b.per_class,
            test_per_class: b.test_per_class,
            dim: b.dim,
            separation: b.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::Symmetric,
            rate: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![0.0, 0.5, 1.0, 2.0],
            betas: vec![0.0, 1.0, 2.0, 4.0],
        }
    }
}

/// Everything one invocation needs. `seed` drives data generation, noise
/// and training; `train.seed` always mirrors it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads for sweeps; 1 runs everything on the calling thread.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            threads: 1,
            out: None,
            data: None,
            generator: GeneratorConfig::default(),
            noise: NoiseConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Invalid(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.generator.classes,
            per_class: self.generator.per_class,
            test_per_class: self.generator.test_per_class,
            dim: self.generator.dim,
            separation: self.generator.separation,
            seed: self.seed,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.noise.kind,
            rate: self.noise.rate,
            seed: self.seed,
        }
    }

    /// Writes the resolved configuration as `config.toml` in `dir`.
    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self).context("serializing resolved config")?;
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Output root: the configured one, else `$NPN_OUT`, else `runs`.
    pub fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("NPN_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn data_dir(&self) -> anyhow::Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Invalid("no dataset given; pass --data or set `data` in the config".into()).into())
    }

    /// Every training-config problem at once.
    pub fn train_problems(&self) -> anyhow::Result<()> {
        let problems = self.train.problems();
        if problems.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = problems.iter().map(|p| format!("  - {p}")).collect();
        Err(Invalid(format!("invalid training config:\n{}", list.join("\n"))).into())
    }
}
