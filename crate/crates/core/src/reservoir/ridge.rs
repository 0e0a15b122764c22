use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves `(HᵀH + λ²D) W = HᵀY`. `D` is the identity, except that with
/// `bias_last` its last diagonal slot is zero: the last column of `design` is
/// then the constant bias feature and is left unregularized.
pub fn ridge_solve(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    bias_last: bool,
) -> Result<DMatrix<f64>> {
    let dim = design.ncols();
    if design.nrows() < dim {
        log::warn!(
            "under-determined readout: {} samples for {} parameters",
            design.nrows(),
            dim
        );
    }
    // an explicit transpose lets the product take the blocked gemm path,
    // several times faster than tr_mul at readout sizes
    let design_t = design.transpose();
    let mut gram = &design_t * design;
    let reg = lambda * lambda;
    let penalized = if bias_last {
        dim.saturating_sub(1)
    } else {
        dim
    };
    for d in 0..penalized {
        gram[(d, d)] += reg;
    }
    let rhs = &design_t * targets;
    let chol = gram.cholesky().ok_or_else(|| {
        if reg > 0.0 {
            Error::numeric("ridge normal equations are not positive definite")
        } else {
            Error::numeric("singular normal equations at ridge_lambda = 0; use ridge_lambda > 0")
        }
    })?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("ridge solution is not finite"));
    }
    Ok(sol)
}

/// `‖HW − Y‖² + λ²‖W_{reg}‖²` with the bias row of `w` unregularized.
pub fn ridge_objective(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let resid = design * w - targets;
    let penalty: f64 = w
        .rows(0, w.nrows().saturating_sub(1))
        .iter()
        .map(|v| v * v)
        .sum();
    resid.norm_squared() + lambda * lambda * penalty
}
