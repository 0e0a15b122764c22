//! Conventional one-direction ESN over the columns of a window, kept for the
//! readout-size comparison against the 2D network.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ridge::ridge_solve;
use super::{scale_to_radius, spectral_radius, ReservoirConfig};
use crate::error::{Error, Result};
use crate::preprocess::BScanImage;
use crate::rng;

/// Readout mapping a hidden state to the next column (height M).
#[derive(Debug, Clone)]
pub struct BaselineEsnModel {
    /// M×N
    pub w_out: DMatrix<f64>,
    /// length M
    pub bias: DVector<f64>,
    /// Hidden state after the last column, for one-step-ahead prediction.
    pub last_state: DVector<f64>,
}

impl BaselineEsnModel {
    pub fn parameter_count(&self) -> usize {
        self.w_out.len() + self.bias.len()
    }

    pub fn predict(&self, state: &DVector<f64>) -> DVector<f64> {
        &self.w_out * state + &self.bias
    }

    /// Prediction of the column following the fitted sequence.
    pub fn predict_next(&self) -> DVector<f64> {
        self.predict(&self.last_state)
    }
}

/// Fits `h(n) = tanh(W h(n−1) + W_in x(n))` over the window's columns with a
/// ridge readout predicting column `n+1` from `h(n)`.
pub fn fit_baseline_esn(window: &BScanImage, config: &ReservoirConfig) -> Result<BaselineEsnModel> {
    config.validate()?;
    let (m, cols) = (window.rows(), window.cols());
    if cols < 2 {
        return Err(Error::data("baseline ESN needs at least two columns"));
    }
    let n = config.n_units;
    let mut rng = rng::seeded(config.seed);
    let w_in = DMatrix::from_fn(n, m, |_, _| {
        (rng.random::<f64>() - 0.5) * config.input_scale
    });
    let mut w_res = DMatrix::from_fn(n, n, |_, _| {
        if rng.random::<f64>() < config.density {
            rng.random::<f64>() - 0.5
        } else {
            0.0
        }
    });
    if spectral_radius(&w_res) > 0.0 {
        w_res = scale_to_radius(&w_res, config.alpha)?;
    }

    let column = |c: usize| DVector::from_fn(m, |r, _| window.get(r, c));
    let mut h = DVector::zeros(n);
    let mut design = DMatrix::zeros(cols - 1, n + 1);
    let mut targets = DMatrix::zeros(cols - 1, m);
    for c in 0..cols {
        h = (&w_res * &h + &w_in * column(c)).map(f64::tanh);
        if c + 1 < cols {
            design
                .row_mut(c)
                .columns_mut(0, n)
                .copy_from(&h.transpose());
            design[(c, n)] = 1.0;
            targets.row_mut(c).copy_from(&column(c + 1).transpose());
        }
    }
    let sol = ridge_solve(&design, &targets, config.ridge_lambda, true)?;
    Ok(BaselineEsnModel {
        w_out: sol.rows(0, n).transpose(),
        bias: sol.row(n).transpose(),
        last_state: h,
    })
}
