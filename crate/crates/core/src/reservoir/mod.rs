//! Two-direction echo state network.
//!
//! A frozen random reservoir turns every pixel of a window into a hidden
//! state driven by the pixel value and the states of its upper and left
//! neighbors. Only the linear readout predicting each pixel from those two
//! neighbor states is trained; the readout is what gets embedded in model
//! space.

mod baseline;
mod grid;
mod ridge;
mod spectral;

pub use baseline::{fit_baseline_esn, BaselineEsnModel};
pub use grid::{
    fit_readout, fit_window, readout_design, run_grid, run_grid_from_boundary, run_grid_raw,
    FittedModel, HiddenGrid,
};
pub use ridge::{ridge_objective, ridge_solve};
pub use spectral::{scale_to_radius, spectral_radius};

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    pub n_units: usize,
    /// Target spectral radius of each reservoir matrix.
    pub alpha: f64,
    pub input_scale: f64,
    /// Fraction of nonzero reservoir entries.
    pub density: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_units: 50,
            alpha: 0.1,
            input_scale: 1.0,
            density: 0.1,
            ridge_lambda: 1e-6,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::param("n_units must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::param("input_scale must be > 0"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::param("density must lie in (0, 1]"));
        }
        if self.density * (self.n_units as f64) < 1.0 {
            return Err(Error::param(format!(
                "density {} leaves fewer than one nonzero per row at n_units = {}",
                self.density, self.n_units
            )));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::param("ridge_lambda must be >= 0"));
        }
        Ok(())
    }
}

/// Compressed sparse rows, used only for the hot loop of the grid iteration.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    row_start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_start = Vec::with_capacity(m.nrows() + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_start.push(0);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    col.push(c);
                    val.push(v);
                }
            }
            row_start.push(col.len());
        }
        Self {
            row_start,
            col,
            val,
        }
    }

    /// `out[r] += (M x)[r]`
    #[inline]
    pub(crate) fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            *o += acc;
        }
    }
}

/// Frozen input and reservoir weights of one 2D-ESN instance.
#[derive(Debug, Clone)]
pub struct ReservoirWeights {
    config: ReservoirConfig,
    w_in: DVector<f64>,
    w_res_up: DMatrix<f64>,
    w_res_left: DMatrix<f64>,
    sparse_up: SparseRows,
    sparse_left: SparseRows,
    fingerprint: String,
}

impl ReservoirWeights {
    /// Assembles weights from explicit matrices (no rescaling is applied).
    pub fn from_parts(
        config: ReservoirConfig,
        w_in: DVector<f64>,
        w_res_up: DMatrix<f64>,
        w_res_left: DMatrix<f64>,
    ) -> Result<Self> {
        let n = config.n_units;
        if w_in.len() != n || w_res_up.shape() != (n, n) || w_res_left.shape() != (n, n) {
            return Err(Error::data(format!(
                "weight shapes do not match n_units = {n}"
            )));
        }
        if w_in
            .iter()
            .chain(w_res_up.iter())
            .chain(w_res_left.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::data("non-finite reservoir weight"));
        }
        let fingerprint = fingerprint(&config, &w_in, &w_res_up, &w_res_left);
        Ok(Self {
            sparse_up: SparseRows::from_dense(&w_res_up),
            sparse_left: SparseRows::from_dense(&w_res_left),
            config,
            w_in,
            w_res_up,
            w_res_left,
            fingerprint,
        })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn n_units(&self) -> usize {
        self.config.n_units
    }

    pub fn w_in(&self) -> &DVector<f64> {
        &self.w_in
    }

    pub fn w_res_up(&self) -> &DMatrix<f64> {
        &self.w_res_up
    }

    pub fn w_res_left(&self) -> &DMatrix<f64> {
        &self.w_res_left
    }

    /// Short hex digest identifying these exact weights.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub(crate) fn sparse_up(&self) -> &SparseRows {
        &self.sparse_up
    }

    pub(crate) fn sparse_left(&self) -> &SparseRows {
        &self.sparse_left
    }

    /// Raw little-endian f64 blob: `w_in`, then `w_res_up` and `w_res_left`
    /// row-major.
    pub fn to_blob(&self) -> Vec<u8> {
        let n = self.n_units();
        let mut out = Vec::with_capacity(8 * (n + 2 * n * n));
        for v in self.w_in.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for m in [&self.w_res_up, &self.w_res_left] {
            for r in 0..n {
                for c in 0..n {
                    out.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
        }
        out
    }

    fn from_blob(config: ReservoirConfig, blob: &[u8]) -> Result<Self> {
        let n = config.n_units;
        if blob.len() != 8 * (n + 2 * n * n) {
            return Err(Error::data(format!(
                "weight blob has {} bytes, expected {}",
                blob.len(),
                8 * (n + 2 * n * n)
            )));
        }
        let vals: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let w_in = DVector::from_column_slice(&vals[..n]);
        let up = DMatrix::from_row_slice(n, n, &vals[n..n + n * n]);
        let left = DMatrix::from_row_slice(n, n, &vals[n + n * n..]);
        Self::from_parts(config, w_in, up, left)
    }

    /// Writes the JSON description. With `blob = true` the matrices go to a
    /// sibling `.bin` file referenced from the JSON; otherwise they are inline.
    pub fn save(&self, path: &Path, blob: bool) -> Result<()> {
        let n = self.n_units();
        let c = &self.config;
        let mut doc = json!({
            "n_units": n,
            "alpha": c.alpha,
            "seed": c.seed,
            "input_scale": c.input_scale,
            "density": c.density,
            "ridge_lambda": c.ridge_lambda,
            "fingerprint": self.fingerprint,
        });
        if blob {
            let bin = path.with_extension("bin");
            fs::write(&bin, self.to_blob()).map_err(|e| Error::io(&bin, e))?;
            let name = bin
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::param("bad blob path"))?;
            doc["weights_blob"] = json!(name);
        } else {
            let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
                (0..n).map(|r| m.row(r).iter().copied().collect()).collect()
            };
            doc["w_in"] = json!(self.w_in.as_slice());
            doc["w_res_up"] = json!(rows(&self.w_res_up));
            doc["w_res_left"] = json!(rows(&self.w_res_left));
        }
        let text = serde_json::to_string_pretty(&doc)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let field = |k: &str| {
            doc.get(k)
                .ok_or_else(|| Error::data(format!("weights file missing key {k:?}")))
        };
        let config = ReservoirConfig {
            n_units: serde_json::from_value(field("n_units")?.clone())?,
            alpha: serde_json::from_value(field("alpha")?.clone())?,
            seed: serde_json::from_value(field("seed")?.clone())?,
            input_scale: serde_json::from_value(field("input_scale")?.clone())?,
            density: serde_json::from_value(field("density")?.clone())?,
            ridge_lambda: serde_json::from_value(field("ridge_lambda")?.clone())?,
        };
        let weights = if let Some(name) = doc.get("weights_blob").and_then(|v| v.as_str()) {
            let bin = path.with_file_name(name);
            let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
            Self::from_blob(config, &blob)?
        } else {
            let n = config.n_units;
            let w_in: Vec<f64> = serde_json::from_value(field("w_in")?.clone())?;
            let up: Vec<Vec<f64>> = serde_json::from_value(field("w_res_up")?.clone())?;
            let left: Vec<Vec<f64>> = serde_json::from_value(field("w_res_left")?.clone())?;
            let flat = |m: Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
                if m.len() != n || m.iter().any(|r| r.len() != n) {
                    return Err(Error::data("reservoir matrix has wrong shape"));
                }
                Ok(DMatrix::from_row_slice(n, n, &m.concat()))
            };
            if w_in.len() != n {
                return Err(Error::data("w_in has wrong length"));
            }
            Self::from_parts(config, DVector::from_vec(w_in), flat(up)?, flat(left)?)?
        };
        if let Some(fp) = doc.get("fingerprint").and_then(|v| v.as_str()) {
            if fp != weights.fingerprint {
                return Err(Error::FingerprintMismatch {
                    left: fp.to_string(),
                    right: weights.fingerprint,
                });
            }
        }
        Ok(weights)
    }
}

fn fingerprint(
    config: &ReservoirConfig,
    w_in: &DVector<f64>,
    up: &DMatrix<f64>,
    left: &DMatrix<f64>,
) -> String {
    let mut h = Sha256::new();
    h.update((config.n_units as u64).to_le_bytes());
    h.update(config.input_scale.to_le_bytes());
    for v in w_in.iter().chain(up.iter()).chain(left.iter()) {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn uniform_half(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>() - 0.5
}

/// Sparse uniform matrix with exactly `round(density·n²)` nonzeros, rescaled
/// to spectral radius `alpha`. Redraws if the sparsity pattern happens to be
/// nilpotent.
fn draw_reservoir(
    rng: &mut ChaCha8Rng,
    n: usize,
    density: f64,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let nnz = ((density * (n * n) as f64).round() as usize).clamp(1, n * n);
    for _ in 0..16 {
        let mut m = DMatrix::zeros(n, n);
        for flat in index::sample(rng, n * n, nnz).into_iter() {
            m[(flat / n, flat % n)] = uniform_half(rng);
        }
        if spectral_radius(&m) > 1e-12 {
            return scale_to_radius(&m, alpha);
        }
    }
    Err(Error::numeric(
        "could not draw a reservoir with nonzero spectral radius; raise density",
    ))
}

/// Draws the frozen weights for `config`. Deterministic in `config.seed`.
pub fn init_reservoir(config: &ReservoirConfig) -> Result<ReservoirWeights> {
    config.validate()?;
    let n = config.n_units;
    let mut rng = rng::seeded(config.seed);
    let w_in = DVector::from_fn(n, |_, _| uniform_half(&mut rng) * config.input_scale);
    let up = draw_reservoir(&mut rng, n, config.density, config.alpha)?;
    let left = draw_reservoir(&mut rng, n, config.density, config.alpha)?;
    ReservoirWeights::from_parts(config.clone(), w_in, up, left)
}
