//! Thin dense linear algebra layer over `faer`.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par};

use crate::error::{Error, Result};
use crate::grid::DistributionField;

pub type Matrix = Mat<f64>;

pub fn zeros(n: usize, m: usize) -> Matrix {
    Mat::zeros(n, m)
}

pub fn identity(n: usize) -> Matrix {
    Mat::identity(n, n)
}

pub fn mul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a.as_ref(), b.as_ref(), 1.0, Par::Seq);
    out
}

pub fn mat_vec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut out = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * xj;
        }
    }
    out
}

/// Applies a velocity operator at every spatial node: out(x, .) = op h(x, .).
pub fn apply_velocity_op(op: &Matrix, h: &DistributionField) -> DistributionField {
    let mut out = h.clone();
    apply_velocity_op_into(op, h, &mut out, Accum::Replace);
    out
}

/// out = op h (or out += op h when `accum` is `Add`).
pub fn apply_velocity_op_into(op: &Matrix, h: &DistributionField, out: &mut DistributionField, accum: Accum) {
    assert_eq!(op.ncols(), h.n_v);
    assert_eq!(op.nrows(), out.n_v);
    // Column-major (n_x x n_v) views: F_out = F op^T.
    let f = MatRef::from_column_major_slice(&h.values, h.n_x, h.n_v);
    let dst = faer::MatMut::from_column_major_slice_mut(&mut out.values, h.n_x, op.nrows());
    matmul(dst, accum, f, op.transpose(), 1.0, Par::Seq);
}

pub fn norm_1(a: &Matrix) -> f64 {
    (0..a.ncols()).map(|j| a.col(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn frobenius(a: &Matrix) -> f64 {
    a.norm_l2()
}

/// Matrix exponential by scaling and squaring of a degree-18 Taylor
/// polynomial.
pub fn expm(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let norm = norm_1(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(s);
    let a_s = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    // Horner: I + A(I + A/2(I + A/3(...)))
    let mut acc = identity(n);
    for k in (1..=18).rev() {
        let mut t = mul(&a_s, &acc);
        let inv_k = 1.0 / k as f64;
        for j in 0..n {
            for i in 0..n {
                t[(i, j)] *= inv_k;
            }
            t[(j, j)] += 1.0;
        }
        acc = t;
    }
    for _ in 0..s {
        acc = mul(&acc, &acc);
    }
    acc
}

/// Solves a x = b (dense, partial pivoting).
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let lu = a.partial_piv_lu();
    let x = lu.solve(b);
    if x.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Linalg("singular system".into()));
    }
    Ok(x)
}

/// Eigenvalues of a general real matrix as (re, im) pairs.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<(f64, f64)>> {
    let ev = a.eigenvalues().map_err(|e| Error::Linalg(format!("eigenvalue solver: {e:?}")))?;
    Ok(ev.into_iter().map(|c| (c.re, c.im)).collect())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let mut ev = a
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Linalg(format!("symmetric eigenvalue solver: {e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Induced operator norm on L^1 with weight `m`: max_j sum_i |a_ij| m_i / m_j.
pub fn weighted_l1_operator_norm(a: &Matrix, m: &[f64]) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs() * m[i]).sum::<f64>() / m[j]).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation_generator() {
        let t = 2.7;
        let a = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => -t,
            (1, 0) => t,
            _ => 0.0,
        });
        let e = expm(&a);
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn expm_of_diagonal_stiff() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { -(10.0f64).powi(i as i32) } else { 0.0 });
        let e = expm(&a);
        for i in 0..3 {
            let want = (-(10.0f64).powi(i as i32)).exp();
            assert!((e[(i, i)] - want).abs() < 1e-13 * want.max(1e-30) + 1e-16, "{i}");
        }
    }

    #[test]
    fn velocity_op_matches_per_node_product() {
        let a = Mat::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let h = DistributionField { values: (0..6).map(|k| k as f64).collect(), n_x: 2, n_v: 3 };
        let out = apply_velocity_op(&a, &h);
        for x in 0..2 {
            for i in 0..3 {
                let want: f64 = (0..3).map(|j| a[(i, j)] * h.values[j * 2 + x]).sum();
                assert!((out.values[i * 2 + x] - want).abs() < 1e-12);
            }
        }
    }
}
