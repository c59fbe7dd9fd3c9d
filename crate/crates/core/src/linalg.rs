//! Thin SVD with a correctness check.
//!
//! nalgebra's bidiagonal SVD occasionally returns factors that do not
//! reconstruct small, exactly rank-deficient inputs. Every decomposition is
//! checked and recomputed with one-sided Jacobi when the check fails.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::math;
use crate::{Error, Result};

/// `matrix = u diag(values) v_t`, values sorted in decreasing order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn recompose_with(&self, values: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (k, &s) in values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * &self.v_t
    }
}

pub(crate) fn svd(matrix: &DMatrix<f64>) -> Result<ThinSvd> {
    let (m, n) = matrix.shape();
    let scale = matrix.amax();
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if let Some(fast) = nalgebra_svd(matrix) {
        if (fast.recompose_with(&fast.values) - matrix).amax() <= tol {
            return Ok(fast);
        }
    }
    let out = if m >= n {
        jacobi(matrix.clone())
    } else {
        let t = jacobi(matrix.transpose());
        ThinSvd { u: t.v_t.transpose(), values: t.values, v_t: t.u.transpose() }
    };
    if (out.recompose_with(&out.values) - matrix).amax() <= tol * 10.0 {
        Ok(out)
    } else {
        Err(Error::Svd { rows: m, cols: n })
    }
}

fn nalgebra_svd(matrix: &DMatrix<f64>) -> Option<ThinSvd> {
    let svd = matrix.clone().try_svd(true, true, f64::EPSILON, 0)?;
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Some(ThinSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]),
        values: order.iter().map(|&k| svd.singular_values[k]).collect(),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |k, j| v_t[(order[k], j)]),
    })
}

/// One-sided Jacobi on a tall matrix (`rows >= cols`).
fn jacobi(mut w: DMatrix<f64>) -> ThinSvd {
    let (m, n) = w.shape();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || math::abs(gamma) <= f64::EPSILON * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (math::abs(zeta) + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|k| w.column(k).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let floor = norms.iter().copied().fold(0.0, f64::max) * f64::EPSILON * n as f64;
    let mut u = DMatrix::zeros(m, n);
    let mut values = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &src) in order.iter().enumerate() {
        if norms[src] > floor {
            u.set_column(k, &(w.column(src) / norms[src]));
            values.push(norms[src]);
        } else {
            values.push(0.0);
            missing.push(k);
        }
    }
    complete_basis(&mut u, &missing);
    let v_t = DMatrix::from_fn(n, n, |k, j| v[(j, order[k])]);
    ThinSvd { u, values, v_t }
}

fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..a.nrows() {
        let (x, y) = (a[(i, p)], a[(i, q)]);
        a[(i, p)] = c * x - s * y;
        a[(i, q)] = s * x + c * y;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_basis(u: &mut DMatrix<f64>, missing: &[usize]) {
    let m = u.nrows();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut x = DMatrix::<f64>::zeros(m, 1);
            x[(candidate, 0)] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for j in 0..u.ncols() {
                    if j != k {
                        let d = u.column(j).dot(&x.column(0));
                        x.column_mut(0).axpy(-d, &u.column(j), 1.0);
                    }
                }
            }
            let norm = x.norm();
            if norm > 0.5 {
                u.set_column(k, &(x.column(0) / norm));
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;
    use rand::Rng;

    #[test]
    fn rank_deficient_inputs_reconstruct() {
        let mut rng = RngStream::from_seed(1);
        for &(m, n, r) in &[(5, 5, 1), (5, 5, 3), (20, 20, 2), (3, 7, 1), (7, 3, 2)] {
            for _ in 0..100 {
                let a = DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0))
                    * DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
                let d = svd(&a).unwrap();
                assert!((d.recompose_with(&d.values) - &a).amax() < 1e-9);
                assert!(d.values.windows(2).all(|w| w[0] >= w[1]));
                let k = d.values.len();
                assert!((d.u.tr_mul(&d.u) - DMatrix::identity(k, k)).amax() < 1e-9);
                assert!((&d.v_t * d.v_t.transpose() - DMatrix::identity(k, k)).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobi_on_zero_matrix() {
        let d = jacobi(DMatrix::zeros(4, 3));
        assert_eq!(d.values, [0.0; 3]);
        assert!((d.u.tr_mul(&d.u) - DMatrix::identity(3, 3)).amax() < 1e-12);
    }
}
