//! Small numerical helpers shared by the constraint solvers.

use nalgebra::{DMatrix, DVector};

/// Forward-difference Jacobian with step `1e-7·max(1, |x_j|)`.
pub fn forward_jacobian<F>(f: F, x: &DVector<f64>, f0: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xs = x.clone();
    for j in 0..x.len() {
        let h = 1e-7 * x[j].abs().max(1.0);
        xs[j] = x[j] + h;
        // Use the representable step, not the requested one.
        let step = xs[j] - x[j];
        let fj = f(&xs);
        jac.set_column(j, &((fj - f0) / step));
        xs[j] = x[j];
    }
    jac
}

/// Numerical rank: singular values above `rel_tol·σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

pub fn max_abs_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
