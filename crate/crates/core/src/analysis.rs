//! Rank experiments on hidden-layer feature matrices, the closed-form
//! least-squares output head, and exchangeability diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{apply_elementwise, ActivationSpec};
use crate::linalg::{
    column_means, gemm, pinv, rank_with_tolerance, LinalgError, Matrix, DEFAULT_RANK_TOL_FACTOR,
    DEFAULT_RCOND,
};
use crate::rng;
use crate::tasks::{ExchangeBlock, Permutation, Sampler};

/// Minimum pairwise gap between sorted projections.
pub const MIN_PROJECTION_GAP: f64 = 1e-9;
/// Direction draws before giving up on distinct projections.
pub const DIRECTION_BUDGET: usize = 64;
/// Offsets tried by [`construct_rank1_weights`].
pub const OFFSET_BUDGET: usize = 64;
/// Offsets tried before the random draws.
pub const FIXED_OFFSETS: [f64; 2] = [0.5, 1.0];
/// Spacing numerator for the scalars `t_j = T_SCALE * j / m`.
pub const T_SCALE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no direction with distinct projections after {0} draws")]
    Distinctness(usize),
    #[error("C({n}, {k}) does not fit in 64 bits")]
    Overflow { n: u64, k: u64 },
    #[error("predictor failed: {0}")]
    Predict(String),
}

/// Affine least-squares fit `y ~ G alpha + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSolution {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
}

/// `alpha = pinv(G - 1 mean(G)) y`, `beta = mean(y) - mean(G) alpha`.
pub fn solve_head(g: &Matrix, y: &[f64]) -> Result<HeadSolution, AnalysisError> {
    if g.rows() != y.len() {
        return Err(AnalysisError::InvalidArgument(format!(
            "{} feature rows, {} targets",
            g.rows(),
            y.len()
        )));
    }
    if g.rows() < 2 {
        return Err(AnalysisError::InvalidArgument("need at least 2 rows".into()));
    }
    let means = column_means(g)?;
    let centered = g.add_row_broadcast(&means.scale(-1.0).into_vec())?;
    let p = pinv(&centered, DEFAULT_RCOND)?;
    let alpha = gemm(&p, false, &Matrix::column(y)?, false).into_vec();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let beta = y_mean
        - means
            .as_slice()
            .iter()
            .zip(&alpha)
            .map(|(m, a)| m * a)
            .sum::<f64>();
    let fitted = gemm(g, false, &Matrix::column(&alpha)?, false);
    let residual: Vec<f64> = y
        .iter()
        .zip(fitted.as_slice())
        .map(|(t, f)| t - (f + beta))
        .collect();
    let residual_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(HeadSolution {
        alpha,
        beta,
        residual,
        residual_norm,
    })
}

/// `C(d + p, p)`: the dimension of polynomials of degree `<= p` in `d`
/// variables.
pub fn polynomial_rank_bound(d: u64, p: u64) -> Result<u64, AnalysisError> {
    if d == 0 {
        return Err(AnalysisError::InvalidArgument("d must be >= 1".into()));
    }
    let n = d
        .checked_add(p)
        .ok_or(AnalysisError::Overflow { n: u64::MAX, k: p })?;
    let k = p.min(d);
    // acc = C(n - k + i, i) after step i, and acc * factor = i * C(.., i)
    // fits in 128 bits while the result fits in 64.
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        let factor = (n - k) as u128 + i;
        acc = acc
            .checked_mul(factor)
            .ok_or(AnalysisError::Overflow { n, k: p })?
            / i;
        if acc > u64::MAX as u128 {
            return Err(AnalysisError::Overflow { n, k: p });
        }
    }
    Ok(acc as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Random,
    Rank1Smooth,
    ReluStaircase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub activation: String,
    pub construction: Construction,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub achieved_rank: usize,
    /// Polynomial ceiling for power activations.
    pub theoretical_bound: Option<u64>,
    /// Singular values at or below this count as zero.
    pub tolerance: f64,
}

/// `g(X W + 1 b)`.
pub fn hidden_features(x: &Matrix, w: &Matrix, b: &[f64], g: &ActivationSpec) -> Result<Matrix, AnalysisError> {
    if x.cols() != w.rows() || w.cols() != b.len() {
        return Err(LinalgError::ShapeMismatch {
            op: "hidden_features",
            left: x.shape(),
            right: w.shape(),
        }
        .into());
    }
    let z = gemm(x, false, w, false).add_row_broadcast(b)?;
    Ok(apply_elementwise(g, &z))
}

/// Numerical rank of `g(X W + 1 b)` and the tolerance used.
pub fn feature_rank(x: &Matrix, w: &Matrix, b: &[f64], g: &ActivationSpec) -> Result<(usize, f64), AnalysisError> {
    Ok(rank_with_tolerance(&hidden_features(x, w, b, g)?, DEFAULT_RANK_TOL_FACTOR)?)
}

/// A unit direction `w` together with the projections `X w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub direction: Vec<f64>,
    pub values: Vec<f64>,
    /// Row indices sorted by descending projection.
    pub order: Vec<usize>,
}

/// Draw unit directions until every pair of projections differs by more than
/// [`MIN_PROJECTION_GAP`].
pub fn distinct_projection<R: Rng + ?Sized>(x: &Matrix, rng: &mut R) -> Result<Projection, AnalysisError> {
    let d = x.cols();
    for _ in 0..DIRECTION_BUDGET {
        let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let direction: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let values = gemm(x, false, &Matrix::column(&direction)?, false).into_vec();
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let distinct = order
            .windows(2)
            .all(|p| values[p[0]] - values[p[1]] > MIN_PROJECTION_GAP);
        if distinct {
            return Ok(Projection {
                direction,
                values,
                order,
            });
        }
    }
    Err(AnalysisError::Distinctness(DIRECTION_BUDGET))
}

fn check_m(x: &Matrix, m: usize) -> Result<(), AnalysisError> {
    if m == 0 || m > x.rows() {
        return Err(AnalysisError::InvalidArgument(format!(
            "m = {m} must lie in 1..={}",
            x.rows()
        )));
    }
    if x.cols() == 0 {
        return Err(AnalysisError::InvalidArgument("x has no columns".into()));
    }
    Ok(())
}

/// Rank-one weights `W = w t^T` with a shared offset `b0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Construction {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub offset: f64,
    pub achieved_rank: usize,
    pub tolerance: f64,
    /// Offsets evaluated before stopping.
    pub offsets_tried: usize,
}

/// Build `W = w (t_1..t_m)` with `t_j = 5 j / m` and search offsets `b0` until
/// `g(X W + 1 b0)` reaches rank `m`. When the budget runs out the best offset
/// found is returned; `achieved_rank` then falls short of `m`.
pub fn construct_rank1_weights(
    x: &Matrix,
    m: usize,
    g: &ActivationSpec,
    seed: u64,
) -> Result<Rank1Construction, AnalysisError> {
    check_m(x, m)?;
    let proj = distinct_projection(x, &mut rng::stream(seed, "rank1-direction", 0))?;
    let t: Vec<f64> = (1..=m).map(|j| T_SCALE * j as f64 / m as f64).collect();
    let weights = Matrix::from_fn(x.cols(), m, |i, j| proj.direction[i] * t[j]);

    let mut offsets = rng::stream(seed, "rank1-offset", 0);
    let mut best: Option<Rank1Construction> = None;
    for k in 0..OFFSET_BUDGET {
        let b0 = match FIXED_OFFSETS.get(k) {
            Some(&b) => b,
            None => loop {
                let b: f64 = offsets.random_range(-2.0..2.0);
                if b != 0.0 {
                    break b;
                }
            },
        };
        let bias = vec![b0; m];
        let (rank, tol) = feature_rank(x, &weights, &bias, g)?;
        if best.as_ref().is_none_or(|b| rank > b.achieved_rank) {
            best = Some(Rank1Construction {
                weights: weights.clone(),
                bias,
                offset: b0,
                achieved_rank: rank,
                tolerance: tol,
                offsets_tried: k + 1,
            });
        }
        if rank == m {
            break;
        }
    }
    let mut out = best.expect("budget is nonzero");
    if out.achieved_rank < m {
        out.offsets_tried = OFFSET_BUDGET;
    }
    Ok(out)
}

/// Staircase weights for ReLU: every column uses the same direction `w`,
/// with thresholds between consecutive sorted projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// Row indices of `x` by descending projection.
    pub order: Vec<usize>,
    /// Sorted projections `c_1 > ... > c_N`.
    pub projections: Vec<f64>,
}

/// With `c_1 > ... > c_N` the sorted projections, thresholds are
/// `s_k = (c_k + c_{k+1}) / 2` (and `s_N = c_N - 1`), `W = w 1^T` and
/// `b = -s`. In sorted row order `relu(X W + 1 b)` is lower triangular with
/// a positive diagonal.
pub fn construct_relu_staircase(x: &Matrix, m: usize) -> Result<Staircase, AnalysisError> {
    check_m(x, m)?;
    let proj = distinct_projection(x, &mut rng::stream(0, "staircase-direction", 0))?;
    let c: Vec<f64> = proj.order.iter().map(|&i| proj.values[i]).collect();
    let n = c.len();
    let bias: Vec<f64> = (0..m)
        .map(|k| {
            let s = if k + 1 < n {
                0.5 * (c[k] + c[k + 1])
            } else {
                c[k] - 1.0
            };
            -s
        })
        .collect();
    let weights = Matrix::from_fn(x.cols(), m, |i, _| proj.direction[i]);
    Ok(Staircase {
        weights,
        bias,
        order: proj.order,
        projections: c,
    })
}

/// Rank of `g(X W + 1 b)` for i.i.d. standard normal `W` and `b`.
pub fn random_rank(x: &Matrix, m: usize, g: &ActivationSpec, seed: u64) -> Result<(usize, f64), AnalysisError> {
    let mut r = rng::stream(seed, "random-weights", 0);
    let w = Matrix::from_fn(x.cols(), m, |_, _| r.sample(StandardNormal));
    let b: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
    feature_rank(x, &w, &b, g)
}

/// Run one construction and summarize it.
pub fn rank_experiment(
    construction: Construction,
    x: &Matrix,
    m: usize,
    g: &ActivationSpec,
    seed: u64,
) -> Result<RankReport, AnalysisError> {
    let (achieved_rank, tolerance) = match construction {
        Construction::Random => {
            if m == 0 || x.cols() == 0 {
                return Err(AnalysisError::InvalidArgument("empty weight matrix".into()));
            }
            random_rank(x, m, g, seed)?
        }
        Construction::Rank1Smooth => {
            let c = construct_rank1_weights(x, m, g, seed)?;
            (c.achieved_rank, c.tolerance)
        }
        Construction::ReluStaircase => {
            let s = construct_relu_staircase(x, m)?;
            feature_rank(x, &s.weights, &s.bias, g)?
        }
    };
    let theoretical_bound = match g.kind {
        crate::activation::ActivationKind::Power { degree } => {
            Some(polynomial_rank_bound(x.cols() as u64, degree as u64)?)
        }
        _ => None,
    };
    Ok(RankReport {
        activation: g.label(),
        construction,
        d: x.cols(),
        n: x.rows(),
        m,
        achieved_rank,
        theoretical_bound,
        tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeabilityReport {
    /// `max |f(u, v, w) - f(v, u, w)|`.
    pub swap_gap: f64,
    /// `max |f(u, -u, 0) - f(-u, u, 0)|`.
    pub antisym_gap: f64,
    pub n_samples: usize,
    pub blocks: Vec<ExchangeBlock>,
}

fn call<F, E>(predict: &F, x: &Matrix) -> Result<Vec<f64>, AnalysisError>
where
    F: Fn(&Matrix) -> Result<Matrix, E>,
    E: std::fmt::Display,
{
    let out = predict(x).map_err(|e| AnalysisError::Predict(e.to_string()))?;
    if out.rows() != x.rows() || out.cols() != 1 {
        return Err(AnalysisError::Predict(format!(
            "expected {} x 1 output, got {:?}",
            x.rows(),
            out.shape()
        )));
    }
    Ok(out.into_vec())
}

/// Probe `predict` on `n_samples` inputs uniform in `[-2, 2]^d`: swap the
/// first two `k`-blocks, and compare `(u, -u, 0)` with `(-u, u, 0)`.
pub fn check_exchangeability<F, E>(
    predict: F,
    k: usize,
    d: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ExchangeabilityReport, AnalysisError>
where
    F: Fn(&Matrix) -> Result<Matrix, E>,
    E: std::fmt::Display,
{
    if k == 0 || d < 2 * k {
        return Err(AnalysisError::InvalidArgument(format!("need d >= 2k >= 2, got k={k}, d={d}")));
    }
    if n_samples == 0 {
        return Err(AnalysisError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let block = ExchangeBlock::ranges(0..k, k..2 * k);
    let mut r = rng::stream(seed, "exchangeability", 0);
    let sampler = Sampler::UniformCube { lo: -2.0, hi: 2.0 };
    let mut x = Vec::with_capacity(n_samples * d);
    let mut swapped = Vec::with_capacity(n_samples * d);
    let mut pos = Vec::with_capacity(n_samples * d);
    let mut neg = Vec::with_capacity(n_samples * d);
    for _ in 0..n_samples {
        let xi = sampler.draw(d, &mut r);
        swapped.extend(block.swap(&xi));
        x.extend_from_slice(&xi);
        let u = &xi[..k];
        let mut p = vec![0.0; d];
        let mut q = vec![0.0; d];
        for j in 0..k {
            p[j] = u[j];
            p[k + j] = -u[j];
            q[j] = -u[j];
            q[k + j] = u[j];
        }
        pos.extend(p);
        neg.extend(q);
    }
    let gap = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let as_m = |v: Vec<f64>| Matrix::new(n_samples, d, v);
    let swap_gap = gap(call(&predict, &as_m(x)?)?, call(&predict, &as_m(swapped)?)?);
    let antisym_gap = gap(call(&predict, &as_m(pos)?)?, call(&predict, &as_m(neg)?)?);
    Ok(ExchangeabilityReport {
        swap_gap,
        antisym_gap,
        n_samples,
        blocks: vec![block],
    })
}

/// Outcome of [`count_invariant_permutations`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCount {
    pub count: usize,
    /// Labels of the candidates that passed.
    pub invariant: Vec<String>,
    /// Largest relative discrepancy per candidate.
    pub max_gaps: Vec<f64>,
}

/// Count candidates `p` with `|f(p x) - f(x)| <= tol * max(1, |f(x)|)` on all
/// of `n_samples` inputs drawn from `sampler`. Inputs where `f` itself fails
/// are redrawn; a failure at `p x` counts against `p`.
pub fn count_invariant_permutations<F, E>(
    label_fn: F,
    candidates: &[Permutation],
    sampler: &Sampler,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<InvarianceCount, AnalysisError>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    let dim = candidates
        .first()
        .map(|p| p.map.len())
        .ok_or_else(|| AnalysisError::InvalidArgument("no candidates".into()))?;
    if candidates.iter().any(|p| p.map.len() != dim) {
        return Err(AnalysisError::InvalidArgument("candidates differ in length".into()));
    }
    let mut r = rng::stream(seed, "invariance", 0);
    let mut gaps = vec![0.0f64; candidates.len()];
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < n_samples {
        attempts += 1;
        if attempts > 1000 * n_samples.max(1) {
            return Err(AnalysisError::InvalidArgument("label undefined on sampler".into()));
        }
        let x = sampler.draw(dim, &mut r);
        let Ok(fx) = label_fn(&x) else { continue };
        drawn += 1;
        let scale = fx.abs().max(1.0);
        for (gap, p) in gaps.iter_mut().zip(candidates) {
            let rel = match label_fn(&p.apply(&x)) {
                Ok(fp) => (fp - fx).abs() / scale,
                Err(_) => f64::INFINITY,
            };
            *gap = gap.max(rel);
        }
    }
    let invariant: Vec<String> = candidates
        .iter()
        .zip(&gaps)
        .filter(|(_, &g)| g <= tol)
        .map(|(p, _)| p.label.clone())
        .collect();
    Ok(InvarianceCount {
        count: invariant.len(),
        invariant,
        max_gaps: gaps,
    })
}
