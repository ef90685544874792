//! Dense helpers shared by the numeric modules.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Inverse, Lapack, Scalar};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Matrices whose 1-norm condition number exceeds this are treated as singular.
pub const SINGULAR_COND: f64 = 1e13;

/// Inverse together with its 1-norm condition number. `None` when LAPACK
/// reports an exactly singular pivot or the result is not finite.
pub fn inverse_with_cond<A>(m: &Array2<A>) -> Option<(Array2<A>, f64)>
where
    A: Scalar<Real = f64> + Lapack,
{
    if m.nrows() == 0 {
        return Some((m.clone(), 1.0));
    }
    let inv = m.inv().ok()?;
    if inv.iter().any(|v| !v.abs().is_finite()) {
        return None;
    }
    let cond = norm_one(m) * norm_one(&inv);
    Some((inv, cond))
}

/// Maximum absolute column sum.
pub fn norm_one<A: Scalar<Real = f64>>(m: &Array2<A>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn matvec(m: &Array2<C64>, x: &[C64], out: &mut [C64]) {
    debug_assert_eq!(m.ncols(), x.len());
    for (i, row) in m.outer_iter().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out[i] = acc;
    }
}

pub fn matvec_add(m: &Array2<C64>, x: &[C64], out: &mut [C64]) {
    for (i, row) in m.outer_iter().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out[i] += acc;
    }
}

pub fn real_to_complex(m: &Array2<f64>) -> Array2<C64> {
    m.mapv(|v| C64::new(v, 0.0))
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn to_array(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
