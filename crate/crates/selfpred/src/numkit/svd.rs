//! One-sided Jacobi SVD, pseudoinverse least squares, orthogonal init,
//! and matrix rank estimation.

use super::mat::Mat;
use super::rng::StreamRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SvdError {
    #[error("non-finite entries in input matrix")]
    NonFinite,
    #[error("jacobi sweeps did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("empty matrix")]
    Empty,
}

/// Thin SVD of an m x n matrix: `a ≈ u * diag(s) * vt` with `u` m x k,
/// `vt` k x n, k = min(m, n), singular values non-increasing.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub vt: Mat,
}

const MAX_SWEEPS: usize = 60;
const OFF_DIAG_TOL: f64 = 1e-12;

/// One-sided Jacobi with cyclic sweeps. Rotations are applied to column
/// pairs of a working copy until every normalized off-diagonal inner
/// product falls below 1e-12.
pub fn svd(a: &Mat) -> Result<SvdResult, SvdError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(SvdError::Empty);
    }
    if !a.is_finite() {
        return Err(SvdError::NonFinite);
    }
    if a.rows() < a.cols() {
        // Work on the transpose and swap factors.
        let r = svd(&a.transpose())?;
        return Ok(SvdResult {
            u: r.vt.transpose(),
            singular_values: r.singular_values,
            vt: r.u.transpose(),
        });
    }
    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = Mat::identity(n);

    // Columns whose norm sits at roundoff level relative to the matrix
    // are pure noise; rotating against them never converges, so treat
    // them as exact zeros.
    let floor = (b.frobenius_norm() * 1e-14).powi(2);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = b.col_dot(p, p);
                let beta = b.col_dot(q, q);
                let gamma = b.col_dot(p, q);
                let denom = (alpha * beta).sqrt();
                if denom == 0.0 || alpha <= floor || beta <= floor {
                    continue;
                }
                let off = gamma.abs() / denom;
                max_off = max_off.max(off);
                if off <= OFF_DIAG_TOL {
                    continue;
                }
                // Jacobi rotation zeroing the (p,q) entry of B^T B.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut b, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if max_off <= OFF_DIAG_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SvdError::NoConvergence(MAX_SWEEPS));
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.col_dot(j, j).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Mat::zeros(m, n);
    let mut vt = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let tiny = floor.sqrt();
    for (k, &j) in order.iter().enumerate() {
        // Norms at or below the roundoff floor were never rotated; report
        // them as exact zeros and orthonormalize their U columns below.
        s.push(if norms[j] > tiny { norms[j] } else { 0.0 });
        for i in 0..n {
            vt.set(k, i, v.get(i, j));
        }
        if norms[j] > tiny {
            for i in 0..m {
                u.set(i, k, b.get(i, j) / norms[j]);
            }
        }
    }
    // Complete U with orthonormal columns for zero singular values.
    complete_orthonormal(&mut u, s.iter().filter(|&&x| x > 0.0).count());
    Ok(SvdResult { u, singular_values: s, vt })
}

/// Replace the columns [rank..] of `u` with vectors orthonormal to the
/// leading ones, via Gram-Schmidt over unit vectors.
fn complete_orthonormal(u: &mut Mat, rank: usize) {
    let m = u.rows();
    let n = u.cols();
    let mut filled = rank;
    let mut cand = 0;
    while filled < n && cand < m {
        let mut w = vec![0.0; m];
        w[cand] = 1.0;
        cand += 1;
        for j in 0..filled {
            let dot: f64 = (0..m).map(|i| w[i] * u.get(i, j)).sum();
            for i in 0..m {
                w[i] -= dot * u.get(i, j);
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for i in 0..m {
                u.set(i, filled, w[i] / norm);
            }
            filled += 1;
        }
    }
}

/// Result of a pseudoinverse solve, with a flag raised when every
/// singular value was discarded by the cutoff.
#[derive(Debug, Clone)]
pub struct PinvSolution {
    pub x: Mat,
    pub all_truncated: bool,
}

/// Minimum-norm least-squares solution of `argmin ||A X - B||_F` via SVD,
/// zeroing singular values below `sv_cutoff * s_max`.
pub fn pinv_solve(a: &Mat, b: &Mat, sv_cutoff: f64) -> Result<PinvSolution, SvdError> {
    assert_eq!(a.rows(), b.rows(), "pinv_solve: a.rows must equal b.rows");
    let dec = svd(a)?;
    let s_max = dec.singular_values.first().copied().unwrap_or(0.0);
    let cut = sv_cutoff * s_max;
    let kept: Vec<usize> = dec
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    let all_truncated = kept.is_empty();
    // X = V * diag(1/s) * U^T * B restricted to kept components.
    let utb = dec.u.transpose().matmul(b);
    let mut x = Mat::zeros(a.cols(), b.cols());
    for &k in &kept {
        let inv_s = 1.0 / dec.singular_values[k];
        for i in 0..a.cols() {
            let vik = dec.vt.get(k, i);
            for j in 0..b.cols() {
                let v = x.get(i, j) + vik * inv_s * utb.get(k, j);
                x.set(i, j, v);
            }
        }
    }
    Ok(PinvSolution { x, all_truncated })
}

/// Random matrix with orthonormal columns (rows >= cols) or orthonormal
/// rows (rows < cols).
pub fn orthogonal_init(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Mat {
    assert!(rows >= 1 && cols >= 1);
    if rows < cols {
        return orthogonal_init(cols, rows, rng).transpose();
    }
    let g = Mat::from_fn(rows, cols, |_, _| StreamRng::standard_normal(rng));
    // Modified Gram-Schmidt on columns.
    let mut q = g;
    for j in 0..cols {
        for k in 0..j {
            let dot = q.col_dot(k, j);
            for i in 0..rows {
                let v = q.get(i, j) - dot * q.get(i, k);
                q.set(i, j, v);
            }
        }
        let norm = q.col_dot(j, j).sqrt();
        assert!(norm > 1e-12, "degenerate random draw in orthogonal_init");
        for i in 0..rows {
            let v = q.get(i, j) / norm;
            q.set(i, j, v);
        }
    }
    q
}

/// Number of singular values exceeding `max(atol, s_max * rtol)`.
pub fn matrix_rank_estimate(batch: &Mat, atol: f64, rtol: f64) -> Result<usize, SvdError> {
    let dec = svd(batch)?;
    let s_max = dec.singular_values.first().copied().unwrap_or(0.0);
    let thresh = atol.max(s_max * rtol);
    Ok(dec.singular_values.iter().filter(|&&s| s > thresh).count())
}

fn rotate_cols(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    for i in 0..m.rows() {
        let row = i * cols;
        let vp = m.data()[row + p];
        let vq = m.data()[row + q];
        m.data_mut()[row + p] = c * vp - s * vq;
        m.data_mut()[row + q] = s * vp + c * vq;
    }
}
