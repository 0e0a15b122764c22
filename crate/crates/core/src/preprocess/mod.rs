//! B-scan images and the cleaning steps applied before segmentation.
//!
//! Rows are time/depth samples, columns are traces. Storage is row-major.

mod io;

pub use io::{load_image, read_csv, read_pgm, save_image, write_csv, write_pgm, Sidecar};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trace spacing of the reference survey, in centimetres.
pub const DEFAULT_COL_SPACING_CM: f64 = 0.141;

#[derive(Debug, Clone, PartialEq)]
pub struct BScanImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    col_spacing_cm: f64,
    value_range: (f64, f64),
}

impl BScanImage {
    /// Builds an image from row-major `data`. The declared value range is the
    /// observed min/max.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_spacing(rows, cols, data, DEFAULT_COL_SPACING_CM)
    }

    pub fn with_spacing(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        col_spacing_cm: f64,
    ) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::data(format!(
                "image must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::data(format!(
                "image data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite value at row {}, col {}",
                pos / cols,
                pos % cols
            )));
        }
        if !(col_spacing_cm > 0.0 && col_spacing_cm.is_finite()) {
            return Err(Error::data(format!(
                "column spacing must be positive, got {col_spacing_cm}"
            )));
        }
        let value_range = min_max(&data);
        Ok(Self {
            rows,
            cols,
            data,
            col_spacing_cm,
            value_range,
        })
    }

    /// Builds an image from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::data("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn col_spacing_cm(&self) -> f64 {
        self.col_spacing_cm
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Overrides the declared value range, e.g. from a sidecar file.
    pub fn set_value_range(&mut self, vmin: f64, vmax: f64) -> Result<()> {
        if !(vmin.is_finite() && vmax.is_finite()) || vmin > vmax {
            return Err(Error::data(format!("bad value range [{vmin}, {vmax}]")));
        }
        self.value_range = (vmin, vmax);
        Ok(())
    }

    pub fn set_col_spacing_cm(&mut self, spacing: f64) -> Result<()> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::data(format!(
                "column spacing must be positive, got {spacing}"
            )));
        }
        self.col_spacing_cm = spacing;
        Ok(())
    }

    /// Full-depth column slice `[start_col, start_col + width)`.
    pub fn window(&self, start_col: usize, width: usize) -> Result<BScanImage> {
        if width < 2 || start_col + width > self.cols {
            return Err(Error::param(format!(
                "window [{start_col}, {}) outside image of {} columns",
                start_col + width,
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start_col..start_col + width]);
        }
        Self::with_spacing(self.rows, width, data, self.col_spacing_cm)
    }

    /// Copy with new pixel values and the metadata of `self`; the value range
    /// is recomputed.
    fn derive(&self, data: Vec<f64>) -> Result<BScanImage> {
        Self::with_spacing(self.rows, self.cols, data, self.col_spacing_cm)
    }
}

fn min_max(data: &[f64]) -> (f64, f64) {
    data.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Clamped linear-times-exponential depth gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainParams {
    pub linear_coeff: f64,
    pub exp_coeff: f64,
    pub max_gain: f64,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            linear_coeff: 1.0,
            exp_coeff: 0.5,
            max_gain: 10.0,
        }
    }
}

impl GainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.linear_coeff >= 0.0 && self.linear_coeff.is_finite()) {
            return Err(Error::param("gain linear_coeff must be >= 0"));
        }
        if !(self.exp_coeff >= 0.0 && self.exp_coeff.is_finite()) {
            return Err(Error::param("gain exp_coeff must be >= 0"));
        }
        if !(self.max_gain >= 1.0) {
            return Err(Error::param("gain max_gain must be >= 1"));
        }
        Ok(())
    }

    /// Gain at `row` of an image with `rows` rows. Depth is measured as
    /// `row / (rows - 1)` so the last row sits at 1.
    pub fn gain(&self, row: usize, rows: usize) -> f64 {
        let r = if rows > 1 {
            row as f64 / (rows - 1) as f64
        } else {
            0.0
        };
        ((1.0 + self.linear_coeff * r) * (self.exp_coeff * r).exp()).clamp(1.0, self.max_gain)
    }
}

/// Mean-trace subtraction: removes each row's mean across all traces.
pub fn remove_background(img: &BScanImage) -> Result<BScanImage> {
    let mut data = Vec::with_capacity(img.data.len());
    for r in 0..img.rows {
        let row = img.row(r);
        let mean = row.iter().sum::<f64>() / img.cols as f64;
        data.extend(row.iter().map(|v| v - mean));
    }
    img.derive(data)
}

/// k×k median filter with edge replication at the borders.
pub fn median_filter(img: &BScanImage, k: usize) -> Result<BScanImage> {
    if k.is_multiple_of(2) {
        return Err(Error::param(format!("median kernel must be odd, got {k}")));
    }
    if k > img.rows.min(img.cols) {
        return Err(Error::param(format!(
            "median kernel {k} larger than image {}x{}",
            img.rows, img.cols
        )));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let half = (k / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut buf = Vec::with_capacity(k * k);
    let mut data = Vec::with_capacity(img.data.len());
    for r in 0..img.rows {
        for c in 0..img.cols {
            buf.clear();
            for dr in -half..=half {
                let rr = clamp(r as isize + dr, img.rows);
                for dc in -half..=half {
                    let cc = clamp(c as isize + dc, img.cols);
                    buf.push(img.get(rr, cc));
                }
            }
            let mid = buf.len() / 2;
            let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
            data.push(*m);
        }
    }
    img.derive(data)
}

/// Multiplies every row by its depth gain.
pub fn apply_gain(img: &BScanImage, params: &GainParams) -> Result<BScanImage> {
    params.validate()?;
    let mut data = Vec::with_capacity(img.data.len());
    for r in 0..img.rows {
        let g = params.gain(r, img.rows);
        data.extend(img.row(r).iter().map(|v| v * g));
    }
    img.derive(data)
}

/// Affine map of `[min, max]` onto `[-1, 1]`. Constant images become all-zero.
pub fn normalize(img: &BScanImage) -> Result<BScanImage> {
    let (lo, hi) = min_max(&img.data);
    let data = if hi > lo {
        let span = hi - lo;
        img.data
            .iter()
            .map(|v| (2.0 * ((v - lo) / span) - 1.0).clamp(-1.0, 1.0))
            .collect()
    } else {
        vec![0.0; img.data.len()]
    };
    img.derive(data)
}

/// Which cleaning steps to run. Steps always execute in the order
/// background removal, median filter, gain, normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub remove_background: bool,
    /// Median kernel size; 1 disables the filter.
    pub median_k: usize,
    /// `None` disables the gain.
    pub gain: Option<GainParams>,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            remove_background: true,
            median_k: 3,
            gain: Some(GainParams::default()),
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn apply(&self, img: &BScanImage) -> Result<BScanImage> {
        let mut out = img.clone();
        if self.remove_background {
            out = remove_background(&out)?;
        }
        if self.median_k > 1 {
            out = median_filter(&out, self.median_k)?;
        }
        if let Some(gain) = &self.gain {
            out = apply_gain(&out, gain)?;
        }
        if self.normalize {
            out = normalize(&out)?;
        }
        Ok(out)
    }
}
