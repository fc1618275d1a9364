//! Small dense helpers shared by the flow, spectral and condition code.

use nalgebra::DMatrix;

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if is_diagonal(m) {
        return m.diagonal().iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    }
    m.singular_values().iter().fold(0.0_f64, |acc, &s| acc.max(s))
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let min = sv.iter().fold(f64::INFINITY, |acc, &s| acc.min(s));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Returns `Some(r)` when `x / step` is (to rounding) the non-negative integer `r`.
pub fn grid_steps(x: f64, step: f64) -> Option<usize> {
    if !(step > 0.0) || !x.is_finite() {
        return None;
    }
    let ratio = x / step;
    let rounded = ratio.round();
    if rounded < 0.0 || (ratio - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return None;
    }
    Some(rounded as usize)
}

/// Signed variant of [`grid_steps`].
pub fn grid_index(x: f64, step: f64) -> Option<isize> {
    let n = grid_steps(x.abs(), step)? as isize;
    Some(if x < 0.0 { -n } else { n })
}
