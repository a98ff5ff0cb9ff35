//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `A x = b` for a square row-major `A` by LU with partial pivoting.
pub fn solve_dense(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = DVector::from_column_slice(b);
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailure(format!("singular {n}x{n} system")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailure("non-finite solution".into()));
    }
    Ok(x.as_slice().to_vec())
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn dist_inf(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// `log(sum(exp(x)))` with a max shift.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Writes `softmax(x)` into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}
