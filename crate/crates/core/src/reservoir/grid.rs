use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ridge::ridge_solve;
use super::ReservoirWeights;
use crate::error::{Error, Result};
use crate::preprocess::BScanImage;

/// Hidden states of every pixel of a window, row-major, `n_units` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrid {
    rows: usize,
    cols: usize,
    n_units: usize,
    states: Vec<f64>,
}

impl HiddenGrid {
    /// Wraps precomputed states. Every component must lie in (−1, 1).
    pub fn from_states(rows: usize, cols: usize, n_units: usize, states: Vec<f64>) -> Result<Self> {
        if states.len() != rows * cols * n_units {
            return Err(Error::data("hidden state buffer has the wrong length"));
        }
        if states.iter().any(|v| !(v.abs() < 1.0)) {
            return Err(Error::data("hidden state outside (-1, 1)"));
        }
        Ok(Self {
            rows,
            cols,
            n_units,
            states,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    #[inline]
    pub fn state(&self, row: usize, col: usize) -> &[f64] {
        let off = (row * self.cols + col) * self.n_units;
        &self.states[off..off + self.n_units]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// Runs the grid iteration from zero virtual boundary states.
pub fn run_grid(w: &ReservoirWeights, window: &BScanImage) -> Result<HiddenGrid> {
    run_grid_raw(w, window.rows(), window.cols(), window.data())
}

/// Like [`run_grid`], on a bare row-major buffer (any size ≥ 1×1).
pub fn run_grid_raw(
    w: &ReservoirWeights,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<HiddenGrid> {
    let zero = vec![0.0; w.n_units()];
    iterate(w, rows, cols, data, &zero)
}

/// Runs the grid iteration with every virtual state above the first row and
/// left of the first column set to `boundary`.
pub fn run_grid_from_boundary(
    w: &ReservoirWeights,
    window: &BScanImage,
    boundary: &[f64],
) -> Result<HiddenGrid> {
    if boundary.len() != w.n_units() {
        return Err(Error::param("boundary state length must equal n_units"));
    }
    iterate(w, window.rows(), window.cols(), window.data(), boundary)
}

fn iterate(
    w: &ReservoirWeights,
    rows: usize,
    cols: usize,
    data: &[f64],
    boundary: &[f64],
) -> Result<HiddenGrid> {
    if rows == 0 || cols == 0 || data.len() != rows * cols {
        return Err(Error::data("window buffer does not match its dimensions"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in window"));
    }
    let n = w.n_units();
    let w_in = w.w_in().as_slice();
    let mut states = vec![0.0; rows * cols * n];
    let mut pre = vec![0.0; n];
    for i in 0..rows {
        for j in 0..cols {
            let x = data[i * cols + j];
            for (p, win) in pre.iter_mut().zip(w_in) {
                *p = win * x;
            }
            // states before `here` are final; split so we can read them while writing
            let here = (i * cols + j) * n;
            let (done, rest) = states.split_at_mut(here);
            let up = if i > 0 {
                &done[here - cols * n..here - cols * n + n]
            } else {
                boundary
            };
            let left = if j > 0 {
                &done[here - n..here]
            } else {
                boundary
            };
            w.sparse_up().mul_add(up, &mut pre);
            w.sparse_left().mul_add(left, &mut pre);
            for (h, p) in rest[..n].iter_mut().zip(&pre) {
                *h = p.tanh();
            }
        }
    }
    Ok(HiddenGrid {
        rows,
        cols,
        n_units: n,
        states,
    })
}

/// Trained readout of one window: `y(i,j) = w_up·h(i−1,j) + w_left·h(i,j−1) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub w_out_up: Vec<f64>,
    pub w_out_left: Vec<f64>,
    pub bias: f64,
    pub train_nrmse: f64,
    pub window_id: String,
    /// Fingerprint of the reservoir the readout was fitted against.
    pub fingerprint: String,
}

impl FittedModel {
    pub fn n_units(&self) -> usize {
        self.w_out_up.len()
    }

    /// Readout weights `[w_out_up | w_out_left]`, length 2N.
    pub fn readout(&self) -> Vec<f64> {
        [self.w_out_up.as_slice(), self.w_out_left.as_slice()].concat()
    }

    pub fn predict(&self, up: &[f64], left: &[f64]) -> f64 {
        dot(&self.w_out_up, up) + dot(&self.w_out_left, left) + self.bias
    }

    /// JSON document with the documented keys plus the reservoir
    /// parameters the readout belongs to.
    pub fn to_json(&self, w: &ReservoirWeights) -> serde_json::Value {
        serde_json::json!({
            "n_units": w.n_units(),
            "alpha": w.config().alpha,
            "seed": w.config().seed,
            "w_out_up": self.w_out_up,
            "w_out_left": self.w_out_left,
            "bias": self.bias,
            "train_nrmse": self.train_nrmse,
            "window_id": self.window_id,
            "fingerprint": self.fingerprint,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(v.clone())?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regression problem of the next-item prediction task: one row per pixel
/// with both a real upper and a real left neighbor, features
/// `[h(i−1,j) | h(i,j−1) | 1]`, target `x(i,j)`.
pub fn readout_design(
    grid: &HiddenGrid,
    window: &BScanImage,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if grid.rows != window.rows() || grid.cols != window.cols() {
        return Err(Error::data("hidden grid does not match window dimensions"));
    }
    let n = grid.n_units;
    let samples = (grid.rows - 1) * (grid.cols - 1);
    let dim = 2 * n + 1;
    let mut design = DMatrix::zeros(samples, dim);
    let mut targets = DMatrix::zeros(samples, 1);
    let mut s = 0;
    for i in 1..grid.rows {
        for j in 1..grid.cols {
            let up = grid.state(i - 1, j);
            let left = grid.state(i, j - 1);
            for k in 0..n {
                design[(s, k)] = up[k];
                design[(s, n + k)] = left[k];
            }
            design[(s, 2 * n)] = 1.0;
            targets[(s, 0)] = window.get(i, j);
            s += 1;
        }
    }
    Ok((design, targets))
}

/// Fits the readout by ridge regression with penalty `lambda²` on the
/// weights and an unpenalized bias.
pub fn fit_readout(grid: &HiddenGrid, window: &BScanImage, lambda: f64) -> Result<FittedModel> {
    let n = grid.n_units;
    let (design, targets) = readout_design(grid, window)?;
    let sol = ridge_solve(&design, &targets, lambda, true)?;
    let pred = &design * &sol;
    let count = targets.nrows() as f64;
    let rmse = ((&pred - &targets).norm_squared() / count).sqrt();
    let mean = targets.sum() / count;
    let std = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count).sqrt();
    let train_nrmse = if std > 1e-12 { rmse / std } else { rmse };
    Ok(FittedModel {
        w_out_up: sol.rows(0, n).iter().copied().collect(),
        w_out_left: sol.rows(n, n).iter().copied().collect(),
        bias: sol[(2 * n, 0)],
        train_nrmse,
        window_id: String::new(),
        fingerprint: String::new(),
    })
}

/// Maps a window to model space: grid iteration followed by the readout fit.
pub fn fit_window(w: &ReservoirWeights, window: &BScanImage) -> Result<FittedModel> {
    let grid = run_grid(w, window)?;
    let mut model = fit_readout(&grid, window, w.config().ridge_lambda)?;
    model.fingerprint = w.fingerprint().to_string();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::{init_reservoir, ridge_objective, ReservoirConfig};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn weights(n: usize, seed: u64) -> ReservoirWeights {
        init_reservoir(&ReservoirConfig {
            n_units: n,
            seed,
            density: 0.2,
            ..ReservoirConfig::default()
        })
        .unwrap()
    }

    fn random_window(rows: usize, cols: usize, seed: u64) -> BScanImage {
        let mut rng = crate::rng::seeded(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        BScanImage::new(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_reservoir_degenerates_to_input_map() {
        let n = 6;
        let w_in = DVector::from_vec(vec![0.3, -0.2, 0.5, 1.0, -1.0, 0.05]);
        let cfg = ReservoirConfig {
            n_units: n,
            density: 0.5,
            ..ReservoirConfig::default()
        };
        let w = ReservoirWeights::from_parts(
            cfg,
            w_in.clone(),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
        )
        .unwrap();
        let win = random_window(4, 5, 2);
        let g = run_grid(&w, &win).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                for k in 0..n {
                    let expect = (w_in[k] * win.get(i, j)).tanh();
                    assert!((g.state(i, j)[k] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_window_gives_zero_states() {
        let w = weights(10, 1);
        let g = run_grid(&w, &BScanImage::new(3, 4, vec![0.0; 12]).unwrap()).unwrap();
        assert!(g.states().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel() {
        let w = weights(10, 1);
        let g = run_grid_raw(&w, 1, 1, &[0.7]).unwrap();
        for k in 0..10 {
            assert_eq!(g.state(0, 0)[k], (w.w_in()[k] * 0.7).tanh());
        }
    }

    #[test]
    fn second_pixel_uses_left_neighbor() {
        // Hand-evaluated second step of the recurrence on a 1×2 window.
        let w = weights(8, 4);
        let g = run_grid_raw(&w, 1, 2, &[0.5, -0.25]).unwrap();
        let h0 = DVector::from_column_slice(g.state(0, 0));
        let pre = w.w_res_left() * &h0 + w.w_in() * -0.25;
        for k in 0..8 {
            assert!((g.state(0, 1)[k] - pre[k].tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_finite_window() {
        let w = weights(5, 0);
        assert!(run_grid_raw(&w, 1, 2, &[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn states_stay_in_tanh_range() {
        let w = weights(20, 3);
        let big =
            BScanImage::new(5, 6, (0..30).map(|i| (i as f64 - 15.0) * 100.0).collect()).unwrap();
        let g = run_grid(&w, &big).unwrap();
        assert!(g.states().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_targets_give_zero_readout() {
        let w = weights(10, 2);
        // first row and column are inputs only; interior targets are zero
        let mut data = vec![0.0; 25];
        for k in 0..5 {
            data[k] = 0.3 * k as f64 - 0.5;
            data[k * 5] = 0.1 * k as f64;
        }
        let win = BScanImage::new(5, 5, data).unwrap();
        let grid = run_grid(&w, &win).unwrap();
        let m = fit_readout(&grid, &win, 0.5).unwrap();
        assert!(m
            .w_out_up
            .iter()
            .chain(&m.w_out_left)
            .all(|v| v.abs() < 1e-12));
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn recovers_planted_readout() {
        let n = 5;
        let mut rng = crate::rng::seeded(77);
        let (rows, cols) = (12, 14);
        let states: Vec<f64> = (0..rows * cols * n)
            .map(|_| rng.random::<f64>() * 1.8 - 0.9)
            .collect();
        let grid = HiddenGrid::from_states(rows, cols, n, states).unwrap();
        let c: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>() - 0.5).collect();
        let a0 = 0.37;
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[i * cols + j] = if i > 0 && j > 0 {
                    dot(&c[..n], grid.state(i - 1, j)) + dot(&c[n..], grid.state(i, j - 1)) + a0
                } else {
                    rng.random::<f64>()
                };
            }
        }
        let win = BScanImage::new(rows, cols, data).unwrap();
        let m = fit_readout(&grid, &win, 1e-8).unwrap();
        for (got, want) in m.readout().iter().zip(&c) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
        assert!((m.bias - a0).abs() < 1e-4);
        assert!(m.train_nrmse < 1e-6);
    }

    #[test]
    fn zero_lambda_singular_design_errors() {
        // all-zero window: every feature column is zero, normal equations singular
        let w = weights(6, 1);
        let win = BScanImage::new(4, 4, vec![0.0; 16]).unwrap();
        let grid = run_grid(&w, &win).unwrap();
        assert!(matches!(
            fit_readout(&grid, &win, 0.0),
            Err(Error::Numeric(_))
        ));
        assert!(fit_readout(&grid, &win, 1e-3).is_ok());
    }

    #[test]
    fn fitted_beats_random_readout() {
        let w = weights(15, 6);
        let win = random_window(10, 30, 5);
        let fitted = fit_window(&w, &win).unwrap();
        let grid = run_grid(&w, &win).unwrap();
        let (design, targets) = readout_design(&grid, &win).unwrap();
        let mut rng = crate::rng::seeded(1);
        let random = DMatrix::from_fn(31, 1, |_, _| rng.random::<f64>() - 0.5);
        let resid = (&design * &random - &targets).norm();
        let std = {
            let mean = targets.mean();
            (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>()).sqrt()
        };
        assert!(fitted.train_nrmse <= resid / std);
    }

    #[test]
    fn readout_is_ridge_optimal() {
        let w = weights(10, 2);
        let win = random_window(8, 20, 3);
        let lambda = 0.1;
        let grid = run_grid(&w, &win).unwrap();
        let m = fit_readout(&grid, &win, lambda).unwrap();
        let (design, targets) = readout_design(&grid, &win).unwrap();
        let mut sol: Vec<f64> = m.readout();
        sol.push(m.bias);
        let sol = DMatrix::from_column_slice(21, 1, &sol);
        let best = ridge_objective(&design, &targets, &sol, lambda);
        let mut rng = crate::rng::seeded(9);
        for _ in 0..100 {
            let pert = DMatrix::from_fn(21, 1, |_, _| (rng.random::<f64>() - 0.5) * 2e-2);
            assert!(best <= ridge_objective(&design, &targets, &(&sol + pert), lambda));
        }
    }

    #[test]
    fn constant_shift_moves_only_bias_with_zero_input_weights() {
        let n = 8;
        let base = weights(n, 3);
        let w = ReservoirWeights::from_parts(
            base.config().clone(),
            DVector::zeros(n),
            base.w_res_up().clone(),
            base.w_res_left().clone(),
        )
        .unwrap();
        let win = random_window(6, 9, 1);
        let shifted = BScanImage::new(6, 9, win.data().iter().map(|v| v + 2.5).collect()).unwrap();
        let a = fit_window(&w, &win).unwrap();
        let b = fit_window(&w, &shifted).unwrap();
        assert_eq!(a.w_out_up, b.w_out_up);
        assert_eq!(a.w_out_left, b.w_out_left);
        assert!((b.bias - a.bias - 2.5).abs() < 1e-12);
    }

    #[test]
    fn identical_windows_identical_models() {
        let w = weights(12, 5);
        let win = random_window(8, 16, 4);
        assert_eq!(fit_window(&w, &win).unwrap(), fit_window(&w, &win).unwrap());
    }

    #[test]
    fn model_json_round_trip() {
        let w = weights(6, 5);
        let m = fit_window(&w, &random_window(5, 7, 1)).unwrap();
        let doc = m.to_json(&w);
        for key in [
            "n_units",
            "alpha",
            "seed",
            "w_out_up",
            "w_out_left",
            "bias",
            "train_nrmse",
        ] {
            assert!(doc.get(key).is_some(), "missing {key}");
        }
        assert_eq!(FittedModel::from_json(&doc).unwrap(), m);
    }
}
