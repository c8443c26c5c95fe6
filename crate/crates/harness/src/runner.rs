//! Seeded training runs, paired baseline/substituted comparisons and layer
//! sweeps.
//!
//! Every trial seed fixes the training and test samples, the label noise, the
//! initial weights and the shuffling order. Both arms of a comparison see
//! exactly the same draws; only one hidden activation differs. Each arm trains
//! once per learning rate in the sweep and keeps the run with the lowest final
//! test loss.

use actlab_core::activation::ActivationSpec;
use actlab_core::network::{init_network, LayerSpec};
use actlab_core::optim::{evaluate, train, OptimizerState, TrainConfig, TrainHistory};
use actlab_core::rng::derive_seed;
use actlab_core::tasks::{generate_dataset, Dataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Substitution};

pub const SOFTWARE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// Recorded in every comparison: both arms start from the same seed.
pub const INIT_SEED_POLICY: &str = "shared";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {message}")]
    Data { seed: u64, message: String },
    #[error("seed {seed}, {arm}: every learning rate failed ({details})")]
    AllRatesFailed {
        seed: u64,
        arm: String,
        details: String,
    },
    #[error("run_comparison needs a substitution")]
    NoSubstitution,
    #[error("arms differ in more than one activation: {0}")]
    ProtocolViolation(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Training and test samples of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Samples for `seed`. Label noise, if configured, is added to the training
/// labels only.
pub fn trial_data(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData, RunError> {
    let task = cfg.task_spec()?;
    let err = |e: actlab_core::tasks::TaskError| RunError::Data {
        seed,
        message: e.to_string(),
    };
    let mut train = generate_dataset(&task, cfg.n_train, derive_seed(seed, "train-data")).map_err(err)?;
    if cfg.noise_fraction > 0.0 {
        train = train
            .with_label_noise(cfg.noise_fraction, derive_seed(seed, "label-noise"))
            .map_err(err)?
            .0;
    }
    let test = generate_dataset(&task, cfg.n_test, derive_seed(seed, "test-data")).map_err(err)?;
    Ok(TrialData { train, test })
}

/// Outcome of one learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub lr: f64,
    pub final_test_loss: Option<f64>,
    pub error: Option<String>,
}

/// Best-of-sweep result for one network on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub seed: u64,
    pub activations: Vec<String>,
    pub lr: f64,
    pub test_mae: f64,
    pub test_mse: f64,
    pub train_losses: Vec<f64>,
    pub test_losses: Vec<f64>,
    pub lr_results: Vec<LrResult>,
    /// Per-epoch record of the selected run, including wall-clock time.
    #[serde(skip)]
    pub history: TrainHistory,
}

impl RunReport {
    pub fn wall_seconds(&self) -> f64 {
        self.history.epochs.last().map_or(0.0, |e| e.seconds)
    }
}

fn train_config(cfg: &ExperimentConfig, seed: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        base_lr: lr,
        lr_halving_period: cfg.lr_halving_period,
        loss: cfg.loss,
        seed: derive_seed(seed, "train"),
        shuffle: true,
    }
}

/// One network, one learning rate.
fn train_one(
    cfg: &ExperimentConfig,
    specs: &[LayerSpec],
    data: &TrialData,
    seed: u64,
    lr: f64,
) -> Result<(TrainHistory, f64, f64), String> {
    let net = init_network(specs.to_vec(), derive_seed(seed, "init")).map_err(|e| e.to_string())?;
    let opt = OptimizerState::new(cfg.optimizer, &net);
    let (net, history) =
        train(net, &data.train, &data.test, &train_config(cfg, seed, lr), opt).map_err(|e| e.to_string())?;
    let eval = evaluate(&net, &data.test).map_err(|e| e.to_string())?;
    Ok((history, eval.mae, eval.mse))
}

type LrOutcome = Result<(TrainHistory, f64, f64), String>;

fn select_best(
    cfg: &ExperimentConfig,
    seed: u64,
    acts: &[ActivationSpec],
    outcomes: Vec<LrOutcome>,
) -> Result<RunReport, RunError> {
    let mut lr_results = Vec::with_capacity(outcomes.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, (lr, out)) in cfg.lr_sweep.iter().zip(&outcomes).enumerate() {
        match out {
            Ok((h, _, _)) => {
                let loss = h.final_test_loss().unwrap_or(f64::INFINITY);
                if best.is_none_or(|(_, b)| loss < b) {
                    best = Some((k, loss));
                }
                lr_results.push(LrResult {
                    lr: *lr,
                    final_test_loss: Some(loss),
                    error: None,
                });
            }
            Err(e) => lr_results.push(LrResult {
                lr: *lr,
                final_test_loss: None,
                error: Some(e.clone()),
            }),
        }
    }
    let labels: Vec<String> = acts.iter().map(ActivationSpec::label).collect();
    let Some((k, _)) = best else {
        let details = lr_results
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("lr {}: {e}", r.lr)))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(RunError::AllRatesFailed {
            seed,
            arm: labels.join(","),
            details,
        });
    };
    let (history, mae, mse) = outcomes.into_iter().nth(k).expect("index from sweep").expect("selected run succeeded");
    Ok(RunReport {
        task: cfg.task.clone(),
        seed,
        activations: labels,
        lr: cfg.lr_sweep[k],
        test_mae: mae,
        test_mse: mse,
        train_losses: history.train_losses(),
        test_losses: history.test_losses(),
        lr_results,
        history,
    })
}

/// Runs `arms x seeds x lr_sweep` training jobs on `workers` threads and
/// returns one report per `(seed, arm)`, seeds outermost.
fn run_grid(
    cfg: &ExperimentConfig,
    arms: &[Vec<ActivationSpec>],
    workers: usize,
) -> Result<Vec<Vec<RunReport>>, RunError> {
    cfg.validate()?;
    let specs: Vec<Vec<LayerSpec>> = arms
        .iter()
        .map(|a| cfg.layer_specs(a))
        .collect::<Result<_, _>>()?;
    let data: Vec<TrialData> = cfg
        .seeds
        .iter()
        .map(|&s| trial_data(cfg, s))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..arms.len()).flat_map(move |a| (0..cfg.lr_sweep.len()).map(move |l| (s, a, l))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let outcomes: Vec<LrOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, a, l)| train_one(cfg, &specs[a], &data[s], cfg.seeds[s], cfg.lr_sweep[l]))
            .collect()
    });
    let mut outcomes = outcomes.into_iter();
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut per_arm = Vec::with_capacity(arms.len());
        for acts in arms {
            let chunk: Vec<LrOutcome> = outcomes.by_ref().take(cfg.lr_sweep.len()).collect();
            per_arm.push(select_best(cfg, seed, acts, chunk)?);
        }
        out.push(per_arm);
    }
    Ok(out)
}

/// Train the configured network (substitution applied, if any) for one seed.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, workers: usize) -> Result<RunReport, RunError> {
    let cfg = ExperimentConfig {
        seeds: vec![seed],
        ..cfg.clone()
    };
    let acts = cfg.activations_with(cfg.substitution.as_ref());
    Ok(run_grid(&cfg, &[acts], workers)?.remove(0).remove(0))
}

/// Per-arm metrics kept in comparison reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub activations: Vec<String>,
    pub lr: f64,
    pub test_mae: f64,
    pub test_mse: f64,
    pub lr_results: Vec<LrResult>,
}

impl From<&RunReport> for ArmResult {
    fn from(r: &RunReport) -> Self {
        Self {
            activations: r.activations.clone(),
            lr: r.lr,
            test_mae: r.test_mae,
            test_mse: r.test_mse,
            lr_results: r.lr_results.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub baseline: ArmResult,
    pub substituted: ArmResult,
    /// Baseline MAE over substituted MAE.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: String,
    pub baseline_activation: String,
    pub substituted_activation: String,
    pub layer_index: usize,
    pub trials: Vec<TrialResult>,
    pub median_baseline_mae: f64,
    pub median_substituted_mae: f64,
    pub median_baseline_mse: f64,
    pub median_substituted_mse: f64,
    /// Median over trials of the per-trial ratio.
    pub improvement_ratio: f64,
    pub init_seed_policy: String,
    pub software_version: String,
    pub config: ExperimentConfig,
}

impl ComparisonReport {
    pub fn improved(&self) -> bool {
        self.median_substituted_mae < self.median_baseline_mae
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Check that two spec lists differ only in the activation of one layer.
pub fn check_single_substitution(base: &[LayerSpec], sub: &[LayerSpec]) -> Result<(), RunError> {
    let strip = |specs: &[LayerSpec]| -> Vec<serde_json::Value> {
        specs
            .iter()
            .map(|s| {
                let mut v = serde_json::to_value(s).expect("spec serializes");
                v.as_object_mut().expect("object").remove("activation");
                v
            })
            .collect()
    };
    if strip(base) != strip(sub) {
        return Err(RunError::ProtocolViolation("layer structure differs".into()));
    }
    let changed = base
        .iter()
        .zip(sub)
        .filter(|(a, b)| a.activation != b.activation)
        .count();
    if changed > 1 {
        return Err(RunError::ProtocolViolation(format!("{changed} layers changed")));
    }
    Ok(())
}

fn build_comparison(
    cfg: &ExperimentConfig,
    sub: &Substitution,
    baseline: &[&RunReport],
    substituted: &[&RunReport],
) -> ComparisonReport {
    let mut trials: Vec<TrialResult> = baseline
        .iter()
        .zip(substituted)
        .map(|(b, s)| TrialResult {
            seed: b.seed,
            baseline: ArmResult::from(*b),
            substituted: ArmResult::from(*s),
            ratio: b.test_mae / s.test_mae,
        })
        .collect();
    trials.sort_by_key(|t| t.seed);
    let col = |f: fn(&TrialResult) -> f64| median(&trials.iter().map(f).collect::<Vec<_>>());
    ComparisonReport {
        task: cfg.task.clone(),
        baseline_activation: cfg.baseline.label(),
        substituted_activation: sub.activation.label(),
        layer_index: sub.layer_index,
        median_baseline_mae: col(|t| t.baseline.test_mae),
        median_substituted_mae: col(|t| t.substituted.test_mae),
        median_baseline_mse: col(|t| t.baseline.test_mse),
        median_substituted_mse: col(|t| t.substituted.test_mse),
        improvement_ratio: col(|t| t.ratio),
        trials,
        init_seed_policy: INIT_SEED_POLICY.into(),
        software_version: SOFTWARE_VERSION.into(),
        config: ExperimentConfig {
            substitution: Some(sub.clone()),
            ..cfg.clone()
        },
    }
}

/// Baseline versus the configured substitution, paired by seed.
pub fn run_comparison(cfg: &ExperimentConfig, workers: usize) -> Result<ComparisonReport, RunError> {
    let sub = cfg.substitution.clone().ok_or(RunError::NoSubstitution)?;
    let base = cfg.baseline_activations();
    let subbed = cfg.activations_with(Some(&sub));
    check_single_substitution(&cfg.layer_specs(&base)?, &cfg.layer_specs(&subbed)?)?;
    let grid = run_grid(cfg, &[base, subbed], workers)?;
    let b: Vec<&RunReport> = grid.iter().map(|r| &r[0]).collect();
    let s: Vec<&RunReport> = grid.iter().map(|r| &r[1]).collect();
    Ok(build_comparison(cfg, &sub, &b, &s))
}

/// One comparison per hidden layer. The baseline arm is trained once per seed
/// and shared by every report. The substituted activation comes from the
/// config's substitution (its layer index is ignored), defaulting to seagull.
pub fn run_layer_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<ComparisonReport>, RunError> {
    let act = cfg
        .substitution
        .as_ref()
        .map_or(ActivationSpec::seagull(), |s| s.activation);
    let subs: Vec<Substitution> = (0..cfg.hidden.len())
        .map(|layer_index| Substitution {
            layer_index,
            activation: act,
        })
        .collect();
    let base = cfg.baseline_activations();
    let mut arms = vec![base.clone()];
    for s in &subs {
        let a = cfg.activations_with(Some(s));
        check_single_substitution(&cfg.layer_specs(&base)?, &cfg.layer_specs(&a)?)?;
        arms.push(a);
    }
    let sweep_cfg = ExperimentConfig {
        substitution: None,
        ..cfg.clone()
    };
    let grid = run_grid(&sweep_cfg, &arms, workers)?;
    let b: Vec<&RunReport> = grid.iter().map(|r| &r[0]).collect();
    Ok(subs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let arm: Vec<&RunReport> = grid.iter().map(|r| &r[k + 1]).collect();
            build_comparison(cfg, s, &b, &arm)
        })
        .collect())
}
