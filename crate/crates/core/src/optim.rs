//! Losses, first-order optimizers and the mini-batch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::network::{Gradients, Network, NetworkError};
use crate::rng;
use crate::tasks::Dataset;

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("length mismatch: {0} targets, {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("optimizer state does not match the network: {0}")]
    ShapeMismatch(String),
    #[error("dataset shape {got:?} does not fit a network with {expected:?} in/out")]
    DataShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    Mse,
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::Mae => "mae",
            Loss::Mse => "mse",
        }
    }
}

/// Loss value and its (sub)gradient with respect to `y_pred`.
pub fn loss_value_and_grad(
    kind: Loss,
    y_true: &[f64],
    y_pred: &[f64],
) -> Result<(f64, Vec<f64>), OptimError> {
    if y_true.len() != y_pred.len() {
        return Err(OptimError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(OptimError::Empty);
    }
    let n = y_true.len() as f64;
    let mut value = 0.0;
    let grad = y_true
        .iter()
        .zip(y_pred)
        .map(|(&t, &p)| {
            let r = p - t;
            match kind {
                Loss::Mae => {
                    value += r.abs();
                    if r > 0.0 {
                        1.0 / n
                    } else if r < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                }
                Loss::Mse => {
                    value += r * r;
                    2.0 * r / n
                }
            }
        })
        .collect();
    Ok((value / n, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub loss: Loss,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            base_lr: 0.003,
            lr_halving_period: 100,
            loss: Loss::Mae,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.lr_halving_period == 0 {
            return bad("lr_halving_period must be >= 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        Ok(())
    }
}

/// `base_lr * 2^-floor(epoch / lr_halving_period)`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let halvings = epoch / config.lr_halving_period.max(1);
    config.base_lr * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Rmsprop { decay: f64, epsilon: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        Self::Sgd { momentum }
    }

    pub fn rmsprop() -> Self {
        Self::Rmsprop {
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
        }
    }

    pub fn adam() -> Self {
        Self::Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Rmsprop { .. } => "rmsprop",
            Self::Adam { .. } => "adam",
        }
    }

    /// Parse `sgd`, `rmsprop` or `adam` with default hyperparameters
    /// (momentum 0.9 for SGD).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(Self::sgd(0.9)),
            "rmsprop" => Some(Self::rmsprop()),
            "adam" => Some(Self::adam()),
            _ => None,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter accumulators laid out like
/// [`Network::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Velocity (SGD), mean square (RMSProp) or first moment (Adam).
    first: Vec<Vec<f64>>,
    /// Second moment (Adam only).
    second: Vec<Vec<f64>>,
    steps: u64,
}

fn block_sizes(net: &Network) -> Vec<usize> {
    let mut sizes = Vec::new();
    for l in net.layers() {
        sizes.push(l.weights.as_slice().len());
        if l.spec.has_bias {
            sizes.push(l.bias.len());
        }
        if let Some(bn) = &l.norm {
            sizes.push(bn.gamma.len());
            sizes.push(bn.beta.len());
        }
    }
    sizes
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, net: &Network) -> Self {
        let sizes = block_sizes(net);
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        let second = if matches!(kind, OptimizerKind::Adam { .. }) {
            zeros()
        } else {
            Vec::new()
        };
        Self {
            kind,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update with learning rate `lr`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> Result<(), OptimError> {
        if !(lr > 0.0) {
            return Err(OptimError::InvalidConfig(format!("learning rate {lr}")));
        }
        let grad_blocks: Vec<Vec<f64>> = grads.blocks(net).into_iter().map(<[f64]>::to_vec).collect();
        let sizes = block_sizes(net);
        let grad_sizes: Vec<usize> = grad_blocks.iter().map(Vec::len).collect();
        let state_sizes: Vec<usize> = self.first.iter().map(Vec::len).collect();
        if grad_sizes != sizes || state_sizes != sizes || grads.layers.len() != net.layers().len() {
            return Err(OptimError::ShapeMismatch(format!(
                "params {sizes:?}, grads {grad_sizes:?}, state {state_sizes:?}"
            )));
        }
        self.steps += 1;
        let t = self.steps as f64;
        let kind = self.kind;
        for (k, w) in net.params_mut().into_iter().enumerate() {
            let g = &grad_blocks[k];
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    for ((w, v), g) in w.iter_mut().zip(&mut self.first[k]).zip(g) {
                        *v = momentum * *v - lr * g;
                        *w += *v;
                    }
                }
                OptimizerKind::Rmsprop { decay, epsilon } => {
                    for ((w, s), g) in w.iter_mut().zip(&mut self.first[k]).zip(g) {
                        *s = decay * *s + (1.0 - decay) * g * g;
                        *w -= lr * g / (s.sqrt() + epsilon);
                    }
                }
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (((w, m), v), g) in w.iter_mut().zip(m).zip(v).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One row of a [`TrainHistory`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Wall-clock seconds since the start of training. Ignored by equality.
    pub seconds: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.lr.to_bits() == other.lr.to_bits()
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.test_loss.to_bits() == other.test_loss.to_bits()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn test_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.test_loss).collect()
    }

    pub fn final_test_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.test_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,test_loss,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:.6}\n",
                e.epoch, e.lr, e.train_loss, e.test_loss, e.seconds
            ));
        }
        out
    }
}

/// Test-set error of a trained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mae: f64,
    pub mse: f64,
}

fn check_data(net: &Network, data: &Dataset) -> Result<(), OptimError> {
    if data.dim() != net.input_dim() || net.output_dim() != 1 || data.is_empty() {
        return Err(OptimError::DataShape {
            expected: (net.input_dim(), net.output_dim()),
            got: (data.dim(), 1),
        });
    }
    Ok(())
}

/// Inference-mode MAE and MSE on `data`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation, OptimError> {
    check_data(net, data)?;
    let pred = net.predict(&data.x)?;
    let (mae, _) = loss_value_and_grad(Loss::Mae, &data.y, pred.as_slice())?;
    let (mse, _) = loss_value_and_grad(Loss::Mse, &data.y, pred.as_slice())?;
    Ok(Evaluation { mae, mse })
}

/// Mini-batch training. Each epoch reshuffles the sample order with a stream
/// derived from `(config.seed, epoch)`; the final short batch is kept. The
/// recorded train loss is the sample-weighted mean of the batch losses seen
/// during the epoch, the test loss is measured in inference mode after it.
pub fn train(
    mut net: Network,
    train_data: &Dataset,
    test_data: &Dataset,
    config: &TrainConfig,
    mut optimizer: OptimizerState,
) -> Result<(Network, TrainHistory), OptimError> {
    config.validate()?;
    check_data(&net, train_data)?;
    check_data(&net, test_data)?;
    if optimizer.first.iter().map(Vec::len).collect::<Vec<_>>() != block_sizes(&net) {
        return Err(OptimError::ShapeMismatch("accumulators".into()));
    }
    let n = train_data.len();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        if config.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(config.seed, "shuffle", epoch as u64));
        }
        let mut dropout = rng::stream(config.seed, "dropout", epoch as u64);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let xb = train_data.x.select_rows(idx);
            let yb: Vec<f64> = idx.iter().map(|&i| train_data.y[i]).collect();
            let (pred, cache) = net.forward(&xb, true, &mut dropout)?;
            let (loss, grad) = loss_value_and_grad(config.loss, &yb, pred.as_slice())?;
            if !loss.is_finite() {
                return Err(OptimError::NonFinite { epoch, batch });
            }
            let grads = net.backward(&cache, &Matrix::new(idx.len(), 1, grad).map_err(NetworkError::from)?)?;
            optimizer.step(&mut net, &grads, lr)?;
            net.update_running_stats(&cache);
            if !net.params_finite() {
                return Err(OptimError::NonFinite { epoch, batch });
            }
            total += loss * idx.len() as f64;
        }
        let test = evaluate(&net, test_data)?;
        let test_loss = match config.loss {
            Loss::Mae => test.mae,
            Loss::Mse => test.mse,
        };
        if !test_loss.is_finite() {
            return Err(OptimError::NonFinite {
                epoch,
                batch: n.div_ceil(config.batch_size),
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / n as f64,
            test_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((net, history))
}
