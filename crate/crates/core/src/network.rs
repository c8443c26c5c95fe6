//! Fully connected feed-forward networks.
//!
//! A layer maps its input `A` (batch x in) to
//!
//! ```text
//! Z = A W + 1 b        pre-activation
//! H = g(Z)             activation
//! B = batch_norm(H)    optional
//! out = dropout(B)     optional, inverted (scaled at training time)
//! ```
//!
//! The final layer is normally linear (`g = identity`) and produces the
//! regression output. Weights are stored `in x out`, so a batch goes through a
//! layer with one row-major product.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationSpec;
use crate::linalg::{gemm, gemm_into, LinalgError, Matrix};
use crate::rng;

/// Exponential moving average factor for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer {layer} expects input width {expected}, previous layer gives {got}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer}: dropout rate {rate} outside [0, 1)")]
    InvalidDropout { layer: usize, rate: f64 },
    #[error("layer {layer}: identity activation is only allowed on the output layer")]
    IdentityOnHidden { layer: usize },
    #[error("layer {layer} has zero width")]
    ZeroWidth { layer: usize },
    #[error("input has {got} columns, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("layer index {index} out of range for {hidden} hidden layers")]
    LayerIndex { index: usize, hidden: usize },
    #[error("the output layer's activation cannot be substituted")]
    OutputLayerSubstitution,
    #[error("forward cache does not match this network: {0}")]
    StaleCache(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationSpec,
    pub has_bias: bool,
    pub batch_norm: bool,
    pub dropout_rate: f64,
}

impl LayerSpec {
    /// Plain dense layer with bias, no batch-norm, no dropout.
    pub fn dense(in_dim: usize, out_dim: usize, activation: ActivationSpec) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            has_bias: true,
            batch_norm: false,
            dropout_rate: 0.0,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    fn param_count(&self) -> usize {
        self.in_dim * self.out_dim
            + if self.has_bias { self.out_dim } else { 0 }
            + if self.batch_norm { 2 * self.out_dim } else { 0 }
    }
}

/// Specs for `input -> hidden[0] -> ... -> hidden[k-1] -> output` with one
/// activation on every hidden layer and a linear output layer.
pub fn mlp_specs(
    input: usize,
    hidden: &[usize],
    output: usize,
    activation: ActivationSpec,
) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::dense(prev, h, activation));
        prev = h;
    }
    specs.push(LayerSpec::dense(prev, output, ActivationSpec::identity()));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `in_dim x out_dim`.
    pub weights: Matrix,
    /// Length `out_dim`; stays zero when the layer has no bias.
    pub bias: Vec<f64>,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    seed: u64,
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Matrix,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    pre: Matrix,
    act: Matrix,
    norm: Option<NormCache>,
    /// Per-entry dropout multiplier (0 or 1/(1-rate)).
    mask: Option<Vec<f64>>,
    /// Output after batch-norm/dropout; `None` when equal to `act`.
    out: Option<Matrix>,
}

impl LayerCache {
    fn output(&self) -> &Matrix {
        self.out.as_ref().unwrap_or(&self.act)
    }
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    layers: Vec<LayerCache>,
    training: bool,
}

impl ForwardCache {
    /// Pre-activations `Z` of layer `r`.
    pub fn pre_activation(&self, r: usize) -> &Matrix {
        &self.layers[r].pre
    }

    /// Post-activations `g(Z)` of layer `r`, before batch-norm or dropout.
    pub fn activation(&self, r: usize) -> &Matrix {
        &self.layers[r].act
    }

    /// What layer `r` hands to the next layer.
    pub fn layer_output(&self, r: usize) -> &Matrix {
        self.layers[r].output()
    }

    /// Batch mean and (biased) variance used by layer `r`'s batch-norm.
    pub fn batch_statistics(&self, r: usize) -> Option<(&[f64], &[f64])> {
        self.layers[r]
            .norm
            .as_ref()
            .map(|n| (n.mean.as_slice(), n.var.as_slice()))
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn training(&self) -> bool {
        self.training
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    /// Trainable gradient blocks in the order of [`Network::params_mut`].
    pub fn blocks<'a>(&'a self, net: &'a Network) -> Vec<&'a [f64]> {
        let mut out = Vec::new();
        for (g, layer) in self.layers.iter().zip(&net.layers) {
            out.push(g.weights.as_slice());
            if layer.spec.has_bias {
                out.push(g.bias.as_slice());
            }
            if layer.spec.batch_norm {
                out.push(g.gamma.as_slice());
                out.push(g.beta.as_slice());
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weights.as_slice().iter().all(|&v| v == 0.0)
                && g.bias.iter().all(|&v| v == 0.0)
                && g.gamma.iter().all(|&v| v == 0.0)
                && g.beta.iter().all(|&v| v == 0.0)
        })
    }
}

/// Check the chain and per-layer constraints of a list of specs.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<(), NetworkError> {
    if specs.is_empty() {
        return Err(NetworkError::NoLayers);
    }
    for (r, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(NetworkError::ZeroWidth { layer: r });
        }
        if !(0.0..1.0).contains(&s.dropout_rate) {
            return Err(NetworkError::InvalidDropout {
                layer: r,
                rate: s.dropout_rate,
            });
        }
        if s.activation.is_identity() && r + 1 != specs.len() {
            return Err(NetworkError::IdentityOnHidden { layer: r });
        }
        if r > 0 && specs[r - 1].out_dim != s.in_dim {
            return Err(NetworkError::DimensionChain {
                layer: r,
                expected: s.in_dim,
                got: specs[r - 1].out_dim,
            });
        }
    }
    Ok(())
}

/// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases.
///
/// Layer `r` draws from its own stream `(seed, "init", r)`, so the weights do
/// not depend on the activations chosen; two networks that differ only in
/// activations start from identical parameters.
pub fn init_network(specs: Vec<LayerSpec>, seed: u64) -> Result<Network, NetworkError> {
    validate_specs(&specs)?;
    let layers = specs
        .into_iter()
        .enumerate()
        .map(|(r, spec)| {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let mut stream = rng::stream(seed, "init", r as u64);
            let weights = Matrix::from_fn(spec.in_dim, spec.out_dim, |_, _| {
                stream.random_range(-limit..limit)
            });
            Layer {
                bias: vec![0.0; spec.out_dim],
                norm: spec.batch_norm.then(|| BatchNorm::new(spec.out_dim)),
                weights,
                spec,
            }
        })
        .collect();
    Ok(Network { layers, seed })
}

impl Network {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    /// Layers before the output layer.
    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Overwrite one layer's weights and bias (shapes must match).
    pub fn set_layer_params(
        &mut self,
        r: usize,
        weights: Matrix,
        bias: Vec<f64>,
    ) -> Result<(), NetworkError> {
        let layer = self.layers.get_mut(r).ok_or(NetworkError::LayerIndex {
            index: r,
            hidden: 0,
        })?;
        if weights.shape() != layer.weights.shape() || bias.len() != layer.bias.len() {
            return Err(LinalgError::ShapeMismatch {
                op: "set_layer_params",
                left: layer.weights.shape(),
                right: weights.shape(),
            }
            .into());
        }
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(LinalgError::InvalidParameter("non-finite bias".into()).into());
        }
        layer.weights = weights;
        layer.bias = bias;
        Ok(())
    }

    /// Mutable parameter blocks: per layer weights, then bias (if any), then
    /// batch-norm gamma and beta (if any).
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weights.as_mut_slice());
            if layer.spec.has_bias {
                out.push(layer.bias.as_mut_slice());
            }
            if let Some(bn) = layer.norm.as_mut() {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.is_finite()
                && l.bias.iter().all(|v| v.is_finite())
                && l.norm.as_ref().is_none_or(|bn| {
                    bn.gamma.iter().chain(&bn.beta).all(|v| v.is_finite())
                })
        })
    }

    /// Evaluate the network on a batch (rows of `x`).
    ///
    /// With `training = true`, dropout masks are drawn from `rng` and
    /// batch-norm normalizes with batch statistics; otherwise dropout is off,
    /// batch-norm uses running averages and `rng` is not touched.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        training: bool,
        rng: &mut R,
    ) -> Result<(Matrix, ForwardCache), NetworkError> {
        if x.cols() != self.input_dim() {
            return Err(NetworkError::InputShape {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let n = x.rows();
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for (r, layer) in self.layers.iter().enumerate() {
            let input = if r == 0 { x } else { caches[r - 1].output() };
            let mut pre = Matrix::zeros(n, layer.spec.out_dim);
            gemm_into(1.0, input, false, &layer.weights, false, 0.0, &mut pre);
            if layer.spec.has_bias {
                pre.add_row_in_place(&layer.bias);
            }
            let act = if layer.spec.activation.is_identity() {
                pre.clone()
            } else {
                let g = layer.spec.activation;
                pre.map(|z| g.eval(z))
            };

            let mut out: Option<Matrix> = None;
            let mut norm = None;
            if let Some(bn) = &layer.norm {
                let (y, cache) = batch_norm_forward(&act, bn, training);
                out = Some(y);
                norm = Some(cache);
            }
            let mut mask = None;
            if training && layer.spec.dropout_rate > 0.0 {
                let keep = 1.0 - layer.spec.dropout_rate;
                let scale = 1.0 / keep;
                let m: Vec<f64> = (0..n * layer.spec.out_dim)
                    .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                let mut y = out.take().unwrap_or_else(|| act.clone());
                for (v, k) in y.as_mut_slice().iter_mut().zip(&m) {
                    *v *= k;
                }
                out = Some(y);
                mask = Some(m);
            }
            caches.push(LayerCache {
                pre,
                act,
                norm,
                mask,
                out,
            });
        }
        let pred = caches.last().expect("at least one layer").output().clone();
        Ok((
            pred,
            ForwardCache {
                input: x.clone(),
                layers: caches,
                training,
            },
        ))
    }

    /// Inference-mode evaluation.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NetworkError> {
        // The generator is never consulted when training = false.
        let mut unused = rng::stream(0, "unused", 0);
        Ok(self.forward(x, false, &mut unused)?.0)
    }

    /// The trained model as a plain function of its input batch.
    pub fn predict_fn(&self) -> impl Fn(&Matrix) -> Result<Matrix, NetworkError> + '_ {
        move |x| self.predict(x)
    }

    /// Reverse-mode gradients of a loss whose derivative with respect to the
    /// predictions is `loss_grad` (same shape as the predictions).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        loss_grad: &Matrix,
    ) -> Result<Gradients, NetworkError> {
        self.check_cache(cache)?;
        let n = cache.batch_size();
        if loss_grad.shape() != (n, self.output_dim()) {
            return Err(NetworkError::StaleCache(format!(
                "loss gradient shape {:?}, predictions are {:?}",
                loss_grad.shape(),
                (n, self.output_dim())
            )));
        }
        let mut grads: Vec<LayerGradients> = Vec::with_capacity(self.layers.len());
        let mut upstream = loss_grad.clone();
        for r in (0..self.layers.len()).rev() {
            let layer = &self.layers[r];
            let lc = &cache.layers[r];
            if let Some(mask) = &lc.mask {
                for (v, k) in upstream.as_mut_slice().iter_mut().zip(mask) {
                    *v *= k;
                }
            }
            let (mut gamma, mut beta) = (Vec::new(), Vec::new());
            if let (Some(bn), Some(nc)) = (&layer.norm, &lc.norm) {
                let (dh, dg, db) = batch_norm_backward(&upstream, bn, nc, cache.training);
                upstream = dh;
                gamma = dg;
                beta = db;
            }
            // dZ = dH * g'(Z)
            let mut dz = upstream;
            if !layer.spec.activation.is_identity() {
                let g = layer.spec.activation;
                let zs = lc.pre.as_slice().iter().zip(lc.act.as_slice());
                for (d, (z, a)) in dz.as_mut_slice().iter_mut().zip(zs) {
                    *d *= g.deriv_with_value(*z, *a);
                }
            }
            let input = if r == 0 {
                &cache.input
            } else {
                cache.layers[r - 1].output()
            };
            let dw = gemm(input, true, &dz, false);
            let mut db = vec![0.0; layer.spec.out_dim];
            if layer.spec.has_bias {
                for row in dz.as_slice().chunks_exact(layer.spec.out_dim) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            upstream = if r > 0 {
                gemm(&dz, false, &layer.weights, true)
            } else {
                Matrix::zeros(0, 0)
            };
            grads.push(LayerGradients {
                weights: dw,
                bias: db,
                gamma,
                beta,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<(), NetworkError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NetworkError::StaleCache(format!(
                "{} cached layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if cache.input.cols() != self.input_dim() {
            return Err(NetworkError::StaleCache("input width".into()));
        }
        for (r, (l, c)) in self.layers.iter().zip(&cache.layers).enumerate() {
            if c.pre.shape() != (cache.input.rows(), l.spec.out_dim)
                || c.norm.is_some() != l.norm.is_some()
            {
                return Err(NetworkError::StaleCache(format!("layer {r} shape")));
            }
        }
        Ok(())
    }

    /// Fold the batch statistics of a training-mode pass into the running
    /// averages: `running = m * running + (1 - m) * batch`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if !cache.training {
            return;
        }
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(nc)) = (layer.norm.as_mut(), lc.norm.as_ref()) {
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] =
                        BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * nc.mean[j];
                    bn.running_var[j] =
                        BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * nc.var[j];
                }
            }
        }
    }

    /// Copy of the network with hidden layer `layer_index` using `new_act`.
    /// Parameters are left untouched.
    pub fn substitute_activation(
        &self,
        layer_index: usize,
        new_act: ActivationSpec,
    ) -> Result<Network, NetworkError> {
        let hidden = self.hidden_count();
        if layer_index == hidden {
            return Err(NetworkError::OutputLayerSubstitution);
        }
        if layer_index > hidden {
            return Err(NetworkError::LayerIndex {
                index: layer_index,
                hidden,
            });
        }
        if new_act.is_identity() {
            return Err(NetworkError::IdentityOnHidden { layer: layer_index });
        }
        let mut out = self.clone();
        out.layers[layer_index].spec.activation = new_act;
        Ok(out)
    }
}

fn batch_norm_forward(h: &Matrix, bn: &BatchNorm, training: bool) -> (Matrix, NormCache) {
    let (n, w) = h.shape();
    let (mean, var) = if training {
        let mut mean = vec![0.0; w];
        for row in h.as_slice().chunks_exact(w) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; w];
        for row in h.as_slice().chunks_exact(w) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = h.clone();
    let mut y = h.clone();
    for (xr, yr) in xhat
        .as_mut_slice()
        .chunks_exact_mut(w)
        .zip(y.as_mut_slice().chunks_exact_mut(w))
    {
        for j in 0..w {
            let xh = (xr[j] - mean[j]) * inv_std[j];
            xr[j] = xh;
            yr[j] = bn.gamma[j] * xh + bn.beta[j];
        }
    }
    (
        y,
        NormCache {
            xhat,
            mean,
            inv_std,
            var,
        },
    )
}

/// Returns `(dH, dgamma, dbeta)`.
fn batch_norm_backward(
    dy: &Matrix,
    bn: &BatchNorm,
    nc: &NormCache,
    training: bool,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, w) = dy.shape();
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for (dr, xr) in dy
        .as_slice()
        .chunks_exact(w)
        .zip(nc.xhat.as_slice().chunks_exact(w))
    {
        for j in 0..w {
            dgamma[j] += dr[j] * xr[j];
            dbeta[j] += dr[j];
        }
    }
    let mut dh = dy.clone();
    if training {
        // dxhat = dy * gamma
        // dh = inv_std / n * (n dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
        let sum_dxhat: Vec<f64> = (0..w).map(|j| dbeta[j] * bn.gamma[j]).collect();
        let sum_dxhat_xhat: Vec<f64> = (0..w).map(|j| dgamma[j] * bn.gamma[j]).collect();
        let nf = n as f64;
        for (hr, xr) in dh
            .as_mut_slice()
            .chunks_exact_mut(w)
            .zip(nc.xhat.as_slice().chunks_exact(w))
        {
            for j in 0..w {
                let dxhat = hr[j] * bn.gamma[j];
                hr[j] = nc.inv_std[j] / nf
                    * (nf * dxhat - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j]);
            }
        }
    } else {
        for hr in dh.as_mut_slice().chunks_exact_mut(w) {
            for j in 0..w {
                hr[j] *= bn.gamma[j] * nc.inv_std[j];
            }
        }
    }
    (dh, dgamma, dbeta)
}
