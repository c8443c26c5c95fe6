use std::path::PathBuf;
use std::process::ExitCode;

use actlab_core::activation::{catalog_all, ActivationSpec};
use actlab_core::analysis::{
    check_exchangeability, count_invariant_permutations, rank_experiment, Construction,
};
use actlab_core::linalg::Matrix;
use actlab_core::network::init_network;
use actlab_core::optim::{train, OptimizerState, TrainConfig};
use actlab_core::rng::{self, derive_seed};
use actlab_core::tasks::{nine_dim_candidates, simplex_candidates, TaskName};
use actlab_harness::config::{ConfigError, ExperimentConfig};
use actlab_harness::report::{self, read_report};
use actlab_harness::runner::{self, trial_data, RunError};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "actlab", version, about = "Activation substitution experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON experiment config; unspecified fields take desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed. Trial seeds become seed, seed+1, ... (same count as configured).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent training jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// 10000/2000 samples, 500 epochs, 5 seeds.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Task name (overrides the config).
    #[arg(long, global = true)]
    task: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training and test samples for the first trial seed.
    GenData,
    /// Train the configured network (lr sweep, best final test loss).
    Train,
    /// Baseline versus the configured substitution.
    Compare,
    /// Substitute each hidden layer in turn.
    LayerSweep,
    /// Rank of hidden features under the explicit constructions.
    RankDemo {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 9)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        m: usize,
    },
    /// Symmetry probes on the configured network and the task's label.
    ExchangeCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Train before probing (first learning rate of the sweep).
        #[arg(long)]
        train: bool,
    },
    /// Print tables for reports written by `compare` or `layer-sweep`.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::Usage(c.into()),
            RunError::NoSubstitution => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn resolve_config(g: &Global) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if g.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(t) = &g.task {
        cfg.task = t.clone();
    }
    if let Some(s) = g.seed {
        cfg.seeds = (0..cfg.seeds.len() as u64).map(|i| s.wrapping_add(i)).collect();
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn write_json<T: Serialize>(cfg: &ExperimentConfig, name: &str, value: &T) -> anyhow::Result<()> {
    let p = report::write_json(cfg.output_dir.join(name), value)?;
    print_written(&[p]);
    Ok(())
}

fn rank_demo(cfg: &ExperimentConfig, n: usize, d: usize, m: usize) -> anyhow::Result<()> {
    anyhow::ensure!(n >= 1 && d >= 1 && m >= 1 && m <= n, "need 1 <= m <= n and d >= 1");
    let seed = cfg.seeds[0];
    let mut r = rng::stream(seed, "rank-demo", 0);
    let x = Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal));
    let mut reports = vec![rank_experiment(
        Construction::ReluStaircase,
        &x,
        m,
        &ActivationSpec::relu(),
        seed,
    )?];
    for g in catalog_all(1.5) {
        reports.push(rank_experiment(Construction::Rank1Smooth, &x, m, &g, seed)?);
    }
    for p in 1..=3 {
        reports.push(rank_experiment(Construction::Random, &x, m, &ActivationSpec::power(p), seed)?);
    }
    print!("{}", report::rank_table(&reports));
    write_json(cfg, "rank.json", &reports)
}

fn exchange_check(cfg: &ExperimentConfig, samples: usize, do_train: bool) -> anyhow::Result<()> {
    let task = cfg.task_spec()?;
    let seed = cfg.seeds[0];
    let specs = cfg.layer_specs(&cfg.activations_with(cfg.substitution.as_ref()))?;
    let mut net = init_network(specs, derive_seed(seed, "init"))?;
    if do_train {
        let data = trial_data(cfg, seed)?;
        let tc = TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            base_lr: cfg.lr_sweep[0],
            lr_halving_period: cfg.lr_halving_period,
            loss: cfg.loss,
            seed: derive_seed(seed, "train"),
            shuffle: true,
        };
        let opt = OptimizerState::new(cfg.optimizer, &net);
        net = train(net, &data.train, &data.test, &tc, opt)?.0;
    }
    // Block size: one point of the task's input.
    let k = if task.name == TaskName::Simplex25 { 5 } else { 3 };
    let probe = check_exchangeability(net.predict_fn(), k, task.dim, samples, seed)?;
    let candidates = if task.dim == 25 {
        simplex_candidates()
    } else {
        nine_dim_candidates()
    };
    let counts = count_invariant_permutations(
        |x: &[f64]| task.label(x),
        &candidates,
        &task.sampler,
        100,
        1e-9,
        seed,
    )?;
    print!("{}", report::exchange_table(&probe, Some(&counts)));
    #[derive(Serialize)]
    struct Out<'a> {
        task: &'a str,
        network: &'a actlab_core::analysis::ExchangeabilityReport,
        label_invariance: &'a actlab_core::analysis::InvarianceCount,
    }
    write_json(
        cfg,
        "exchange.json",
        &Out {
            task: &cfg.task,
            network: &probe,
            label_invariance: &counts,
        },
    )
}

fn show_reports(input: &std::path::Path) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    if input.join(report::SUMMARY_FILE).exists() {
        reports.push(read_report(input)?);
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(report::SUMMARY_FILE).exists())
            .collect();
        dirs.sort();
        for d in dirs {
            reports.push(read_report(&d)?);
        }
    }
    anyhow::ensure!(!reports.is_empty(), "no {} under {}", report::SUMMARY_FILE, input.display());
    reports.sort_by_key(|r| r.layer_index);
    print!("{}", report::comparison_table(&reports));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.global)?;
    let workers = cli
        .global
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--workers must be >= 1")));
    }
    match cli.command {
        Command::GenData => {
            let data = trial_data(&cfg, cfg.seeds[0])?;
            data.train
                .write(&cfg.output_dir, "train")
                .context("writing training set")?;
            data.test.write(&cfg.output_dir, "test").context("writing test set")?;
            println!(
                "wrote {} training and {} test samples of {} to {}",
                data.train.len(),
                data.test.len(),
                cfg.task,
                cfg.output_dir.display()
            );
        }
        Command::Train => {
            let r = runner::run_single(&cfg, cfg.seeds[0], workers)?;
            println!(
                "{} seed {} [{}]: lr {} test MAE {:.6} MSE {:.6} ({:.1}s)",
                r.task,
                r.seed,
                r.activations.join(","),
                r.lr,
                r.test_mae,
                r.test_mse,
                r.wall_seconds()
            );
            print_written(&report::emit_run(&r, &cfg.output_dir).map_err(anyhow::Error::from)?);
        }
        Command::Compare => {
            let r = runner::run_comparison(&cfg, workers)?;
            print!("{}", report::comparison_table(std::slice::from_ref(&r)));
            print_written(&report::emit_report(&r, &cfg.output_dir).map_err(anyhow::Error::from)?);
        }
        Command::LayerSweep => {
            let rs = runner::run_layer_sweep(&cfg, workers)?;
            print!("{}", report::comparison_table(&rs));
            print_written(&report::emit_sweep(&rs, &cfg.output_dir).map_err(anyhow::Error::from)?);
        }
        Command::RankDemo { n, d, m } => rank_demo(&cfg, n, d, m)?,
        Command::ExchangeCheck { samples, train } => exchange_check(&cfg, samples, train)?,
        Command::Report { input } => show_reports(&input)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
