use std::path::{Path, PathBuf};

use actlab_core::activation::ActivationSpec;
use actlab_core::network::{mlp_specs, LayerSpec};
use actlab_core::optim::{Loss, OptimizerKind};
use actlab_core::tasks::TaskSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Replace one hidden layer's activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub layer_index: usize,
    pub activation: ActivationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: Option<usize>,
    pub hidden: Vec<usize>,
    pub baseline: ActivationSpec,
    pub substitution: Option<Substitution>,
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    pub lr_sweep: Vec<f64>,
    pub epochs: usize,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub noise_fraction: f64,
    pub seeds: Vec<u64>,
    pub first_layer_bias: bool,
    pub batch_norm: bool,
    pub dropout: f64,
    /// Not serialized, so reports do not depend on where they are written.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "triangle".into(),
            n_train: 2000,
            n_test: 500,
            input_dim: None,
            hidden: vec![100; 4],
            baseline: ActivationSpec::relu(),
            substitution: Some(Substitution {
                layer_index: 0,
                activation: ActivationSpec::seagull(),
            }),
            loss: Loss::Mae,
            optimizer: OptimizerKind::rmsprop(),
            lr_sweep: vec![0.001, 0.003, 0.005],
            epochs: 100,
            lr_halving_period: 100,
            batch_size: 100,
            noise_fraction: 0.0,
            seeds: vec![1, 2, 3],
            first_layer_bias: true,
            batch_norm: false,
            dropout: 0.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full protocol: 10000/2000 samples, 500 epochs, five seeds.
    pub fn paper_scale(mut self) -> Self {
        self.n_train = 10_000;
        self.n_test = 2000;
        self.epochs = 500;
        self.seeds = vec![1, 2, 3, 4, 5];
        self
    }

    pub fn task_spec(&self) -> Result<TaskSpec, ConfigError> {
        TaskSpec::by_name(&self.task).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let task = self.task_spec()?;
        if let Some(d) = self.input_dim {
            if d != task.dim {
                return bad(format!("task {} has input dimension {}, not {d}", self.task, task.dim));
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be nonempty and positive".into());
        }
        if self.baseline.is_identity() {
            return bad("baseline activation cannot be identity".into());
        }
        if let Some(s) = &self.substitution {
            if s.layer_index >= self.hidden.len() {
                return bad(format!(
                    "substitution layer {} but only {} hidden layers",
                    s.layer_index,
                    self.hidden.len()
                ));
            }
            if s.activation.is_identity() {
                return bad("substituted activation cannot be identity".into());
            }
        }
        if self.lr_sweep.is_empty() || !self.lr_sweep.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return bad("lr_sweep must hold positive learning rates".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 {
            return bad("epochs, batch_size and lr_halving_period must be >= 1".into());
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return bad("noise_fraction must be >= 0".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Hidden activations of the baseline network.
    pub fn baseline_activations(&self) -> Vec<ActivationSpec> {
        vec![self.baseline; self.hidden.len()]
    }

    /// Hidden activations with `sub` applied, or the baseline without one.
    pub fn activations_with(&self, sub: Option<&Substitution>) -> Vec<ActivationSpec> {
        let mut acts = self.baseline_activations();
        if let Some(s) = sub {
            acts[s.layer_index] = s.activation;
        }
        acts
    }

    /// Layer specs for the given hidden activations, with the configured
    /// first-layer bias, batch-norm and dropout options.
    pub fn layer_specs(&self, activations: &[ActivationSpec]) -> Result<Vec<LayerSpec>, ConfigError> {
        let dim = self.task_spec()?.dim;
        let mut specs = mlp_specs(dim, &self.hidden, 1, self.baseline);
        for (spec, act) in specs.iter_mut().zip(activations) {
            spec.activation = *act;
            if self.batch_norm {
                *spec = spec.with_batch_norm();
            }
            if self.dropout > 0.0 {
                *spec = spec.with_dropout(self.dropout);
            }
        }
        if !self.first_layer_bias {
            specs[0] = specs[0].without_bias();
        }
        Ok(specs)
    }
}
