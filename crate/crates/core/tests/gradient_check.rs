//! Whole-network finite-difference checks of the analytic gradients.

use actlab_core::activation::{catalog_all, ActivationSpec};
use actlab_core::linalg::Matrix;
use actlab_core::network::{init_network, LayerSpec, Network};
use actlab_core::rng;
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;

fn gaussian(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    let mut r = rng::stream(seed, "gradcheck", 0);
    Matrix::from_fn(rows, cols, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

fn net_9_5_3_1(act: ActivationSpec, bn: bool, dropout: f64, seed: u64) -> Network {
    let mut specs = vec![
        LayerSpec::dense(9, 5, act),
        LayerSpec::dense(5, 3, act),
        LayerSpec::dense(3, 1, ActivationSpec::identity()),
    ];
    if bn {
        specs[0] = specs[0].with_batch_norm();
        specs[1] = specs[1].with_batch_norm();
    }
    if dropout > 0.0 {
        specs[1] = specs[1].with_dropout(dropout);
    }
    let mut net = init_network(specs, seed).unwrap();
    // Nonzero biases keep pre-activations off the kinks at zero.
    let mut r = rng::stream(seed, "bias", 0);
    for k in 0..3 {
        let w = net.layers()[k].weights.clone();
        let b = (0..w.cols()).map(|_| r.random_range(-0.5..0.5)).collect();
        net.set_layer_params(k, w, b).unwrap();
    }
    net
}

/// `L = sum(pred * probe)`, so `dL/dpred = probe`.
fn objective(net: &Network, x: &Matrix, probe: &Matrix, training: bool, seed: u64) -> f64 {
    let mut r = rng::stream(seed, "mask", 0);
    let (pred, _) = net.forward(x, training, &mut r).unwrap();
    pred.as_slice().iter().zip(probe.as_slice()).map(|(p, q)| p * q).sum()
}

fn check(net: &Network, training: bool, label: &str) -> f64 {
    let x = gaussian(7, 9, 11, 1.0);
    let probe = gaussian(7, 1, 12, 1.0);
    let mut r = rng::stream(3, "mask", 0);
    let (_, cache) = net.forward(&x, training, &mut r).unwrap();
    let grads = net.backward(&cache, &probe).unwrap();
    let analytic: Vec<f64> = grads.blocks(net).concat();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe_net = net.clone();
    let blocks = probe_net.params_mut().iter().map(|b| b.len()).collect::<Vec<_>>();
    for (bi, &len) in blocks.iter().enumerate() {
        for j in 0..len {
            let orig = probe_net.params_mut()[bi][j];
            probe_net.params_mut()[bi][j] = orig + H;
            let up = objective(&probe_net, &x, &probe, training, 3);
            probe_net.params_mut()[bi][j] = orig - H;
            let down = objective(&probe_net, &x, &probe, training, 3);
            probe_net.params_mut()[bi][j] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    let scale = analytic.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / scale.max(a.abs());
        worst = worst.max(err);
        assert!(err < REL_TOL, "{label}: parameter {i}: analytic {a} vs numeric {n}");
    }
    worst
}

#[test]
fn every_catalog_activation_plain() {
    for alpha in [1.0, 1.5, 2.0] {
        for act in catalog_all(alpha) {
            let net = net_9_5_3_1(act, false, 0.0, 1);
            check(&net, false, &act.label());
        }
    }
}

#[test]
fn batch_norm_training_and_inference() {
    for act in catalog_all(1.5) {
        let net = net_9_5_3_1(act, true, 0.0, 2);
        check(&net, true, &format!("{} bn train", act.label()));
        check(&net, false, &format!("{} bn eval", act.label()));
    }
}

#[test]
fn dropout_with_fixed_mask() {
    for act in catalog_all(1.5) {
        let net = net_9_5_3_1(act, false, 0.3, 3);
        check(&net, true, &format!("{} dropout", act.label()));
    }
}

#[test]
fn bias_free_first_layer() {
    let mut specs = vec![
        LayerSpec::dense(9, 5, ActivationSpec::seagull()).without_bias(),
        LayerSpec::dense(5, 1, ActivationSpec::identity()),
    ];
    specs[1].has_bias = true;
    let net = init_network(specs, 4).unwrap();
    check(&net, false, "bias-free seagull");
    assert_eq!(net.param_count(), 9 * 5 + 5 + 1);
}
