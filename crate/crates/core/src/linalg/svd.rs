//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of a working copy are rotated pairwise until every pair is
//! numerically orthogonal; the column norms are then the singular values. The
//! method computes small singular values to high relative accuracy, which is
//! what the rank experiments depend on.

use super::{LinalgError, Matrix};

/// Sweep limit before reporting non-convergence.
pub const MAX_SWEEPS: usize = 80;

/// `m = u * diag(singular_values) * vt` with `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `k`.
    pub singular_values: Vec<f64>,
    /// `k x cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(s) * vt`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        super::gemm(&us, false, &self.vt, false)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult, LinalgError> {
    if let Some(idx) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: idx / m.cols().max(1),
            col: idx % m.cols().max(1),
            value: m.as_slice()[idx],
        });
    }
    if m.rows() >= m.cols() {
        let (u, s, v) = jacobi_tall(m)?;
        Ok(SvdResult {
            u,
            singular_values: s,
            vt: v.transpose(),
        })
    } else {
        // m^T = u' s v'^T  =>  m = v' s u'^T
        let (u, s, v) = jacobi_tall(&m.transpose())?;
        Ok(SvdResult {
            u: v,
            singular_values: s,
            vt: u.transpose(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yp) = (*x, *y);
        *x = c * xp - s * yp;
        *y = s * xp + c * yp;
    }
}

/// Requires `rows >= cols`. Returns `(u, s, v)` with `v` square.
fn jacobi_tall(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix), LinalgError> {
    let (rows, n) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Columns below this squared norm are numerically zero; rotating them
    // only shuffles rounding noise.
    let total: f64 = norms.iter().sum();
    let negligible = (f64::EPSILON * f64::EPSILON / n.max(1) as f64) * total;
    // A dot product of length `rows` carries about `rows * eps` relative error.
    let ortho_tol = rows.max(1) as f64 * f64::EPSILON;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= ortho_tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let smax = order.first().map_or(0.0, |&j| sigma[j]);
    let tiny = smax * f64::EPSILON * rows.max(n) as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_sorted = Vec::with_capacity(n);
    let mut v_sorted: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut needs_completion = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s_sorted.push(sigma[j]);
        v_sorted.push(v[j].clone());
        if sigma[j] > tiny && sigma[j] > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            needs_completion.push(k);
        }
    }
    complete_orthonormal(&mut u_cols, &needs_completion);

    let u = Matrix::from_fn(rows, n, |i, k| u_cols[k][i]);
    let vm = Matrix::from_fn(n, n, |i, k| v_sorted[k][i]);
    Ok((u, s_sorted, vm))
}

/// Replace the columns listed in `slots` with unit vectors orthogonal to all
/// other columns (Gram–Schmidt against the standard basis, applied twice).
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let rows = cols[0].len();
    let mut filled: Vec<bool> = (0..cols.len()).map(|k| !slots.contains(&k)).collect();
    let mut candidate = 0;
    for &slot in slots {
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if filled[k] {
                        let proj = dot(&e, c);
                        for (x, y) in e.iter_mut().zip(c) {
                            *x -= proj * y;
                        }
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                filled[slot] = true;
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "svd-test", 0);
        Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
    }

    fn orthonormality_residual(q: &Matrix) -> f64 {
        // q^T q - I
        let g = crate::linalg::gemm(q, true, q, false);
        g.sub(&Matrix::identity(g.rows())).unwrap().max_abs()
    }

    #[test]
    fn diagonal_values() {
        let s = svd(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
        let s = svd(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(s.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_residual(&s.u) < 1e-12);
    }

    #[test]
    fn random_factors_are_orthonormal() {
        for (r, c, seed) in [(6, 4, 1), (4, 6, 2), (9, 9, 3), (30, 7, 4)] {
            let m = random(r, c, seed);
            let s = svd(&m).unwrap();
            assert!(orthonormality_residual(&s.u) < 1e-10);
            assert!(orthonormality_residual(&s.vt.transpose()) < 1e-10);
            let err = s.reconstruct().sub(&m).unwrap().frobenius_norm();
            assert!(err <= 1e-10 * m.frobenius_norm().max(1.0));
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.singular_values.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_u_is_completed() {
        let a = random(8, 2, 5);
        let b = random(2, 5, 6);
        let m = crate::linalg::matmul(&a, &b).unwrap();
        let s = svd(&m).unwrap();
        assert!(orthonormality_residual(&s.u) < 1e-10);
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(err <= 1e-10 * m.frobenius_norm());
    }
}
