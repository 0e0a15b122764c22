//! Seeded synthetic B-scans: layered ground, point scatterers and three
//! anomaly archetypes, each column built as a reflectivity series convolved
//! with a Ricker wavelet.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{BScanImage, DEFAULT_COL_SPACING_CM};
use crate::rng::substream;

/// Ricker wavelet; `t` in row samples, `f` in cycles per row.
pub fn ricker(t: f64, f: f64) -> f64 {
    let a = (PI * f * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    MoistureBlob,
    LooseTexture,
    Cavity,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [Self::MoistureBlob, Self::LooseTexture, Self::Cavity];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MoistureBlob => "moisture_blob",
            Self::LooseTexture => "loose_texture",
            Self::Cavity => "cavity",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown anomaly kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub depth_row: f64,
    pub reflect_amp: f64,
}

/// Buried point reflector. Its echo arrives at row
/// `2·sqrt(depth² + ((c − col)·trace_step)²) / velocity_px`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub col: f64,
    pub depth_row: f64,
    pub velocity_px: f64,
    pub amp: f64,
}

/// Spans are half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub col_span: (usize, usize),
    pub row_span: (usize, usize),
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub wavelet_freq: f64,
    pub layers: Vec<Layer>,
    pub scatterers: Vec<Scatterer>,
    pub anomalies: Vec<Anomaly>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Lateral distance between traces, in the units of `Scatterer::depth_row`.
    #[serde(default = "default_trace_step")]
    pub trace_step: f64,
    #[serde(default = "default_spacing")]
    pub col_spacing_cm: f64,
}

fn default_trace_step() -> f64 {
    0.5
}

fn default_spacing() -> f64 {
    DEFAULT_COL_SPACING_CM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub start_col: usize,
    pub end_col: usize,
    pub kind: AnomalyKind,
}

impl SceneSpec {
    /// Empty scene: no reflectors, no noise.
    pub fn blank(rows: usize, cols: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            wavelet_freq: 0.1,
            layers: Vec::new(),
            scatterers: Vec::new(),
            anomalies: Vec::new(),
            noise_sigma: 0.0,
            seed,
            trace_step: default_trace_step(),
            col_spacing_cm: default_spacing(),
        }
    }

    /// 64-row road: surface, base and subgrade interfaces, light noise and a
    /// scatter of shallow rebar echoes. Anomalies are added by the caller.
    pub fn road(cols: usize, seed: u64) -> Self {
        let mut s = Self::blank(64, cols, seed);
        s.wavelet_freq = 0.12;
        s.layers = vec![
            Layer {
                depth_row: 6.0,
                reflect_amp: 1.0,
            },
            Layer {
                depth_row: 22.0,
                reflect_amp: 0.45,
            },
            Layer {
                depth_row: 41.0,
                reflect_amp: 0.3,
            },
        ];
        s.noise_sigma = 0.04;
        s.scatterers = (0..cols / 150)
            .map(|k| Scatterer {
                col: 75.0 + 150.0 * k as f64,
                depth_row: 6.0,
                velocity_px: 1.0,
                amp: 0.15,
            })
            .collect();
        s
    }

    /// Adds an anomaly over `col_span` with the archetype's default depth
    /// band and intensity.
    pub fn with_anomaly(mut self, kind: AnomalyKind, col_span: (usize, usize)) -> Self {
        let (row_span, intensity) = match kind {
            AnomalyKind::MoistureBlob => ((16, 48), 0.8),
            AnomalyKind::LooseTexture => ((14, 50), 0.6),
            AnomalyKind::Cavity => ((18, 38), 1.2),
        };
        let row_span = (row_span.0.min(self.rows - 1), row_span.1.min(self.rows));
        self.anomalies.push(Anomaly {
            kind,
            col_span,
            row_span,
            intensity,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::param("scene needs at least 2 rows and 2 columns"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.wavelet_freq) {
            return Err(Error::param("wavelet_freq must be > 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma must be ≥ 0"));
        }
        if !positive(self.trace_step) || !positive(self.col_spacing_cm) {
            return Err(Error::param("trace_step and col_spacing_cm must be > 0"));
        }
        for l in &self.layers {
            if !(l.depth_row >= 0.0 && l.depth_row < self.rows as f64 && l.reflect_amp.is_finite())
            {
                return Err(Error::param(format!(
                    "layer at depth {} is outside the image",
                    l.depth_row
                )));
            }
        }
        for s in &self.scatterers {
            if !(positive(s.velocity_px)
                && s.depth_row >= 0.0
                && s.col.is_finite()
                && s.amp.is_finite())
            {
                return Err(Error::param(
                    "scatterer needs velocity > 0, depth ≥ 0 and finite position",
                ));
            }
        }
        for a in &self.anomalies {
            let (c0, c1) = a.col_span;
            let (r0, r1) = a.row_span;
            if c0 >= c1 || c1 > self.cols || r0 >= r1 || r1 > self.rows {
                return Err(Error::param(format!(
                    "{} spans cols {c0}..{c1}, rows {r0}..{r1}, outside {}x{}",
                    a.kind, self.rows, self.cols
                )));
            }
            if !a.intensity.is_finite() {
                return Err(Error::param("anomaly intensity must be finite"));
            }
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.anomalies
            .iter()
            .map(|a| GroundTruth {
                start_col: a.col_span.0,
                end_col: a.col_span.1,
                kind: a.kind,
            })
            .collect()
    }
}

/// Renders the scene. Columns draw their noise from independent substreams
/// keyed by `(seed, col)`, so the result does not depend on thread count.
pub fn generate_bscan(spec: &SceneSpec) -> Result<(BScanImage, Vec<GroundTruth>)> {
    spec.validate()?;
    let half = (1.5 / spec.wavelet_freq).ceil() as isize;
    let wavelet: Vec<f64> = (-half..=half)
        .map(|t| ricker(t as f64, spec.wavelet_freq))
        .collect();
    let columns: Vec<Vec<f64>> = (0..spec.cols)
        .into_par_iter()
        .map(|c| render_column(spec, c, &wavelet, half))
        .collect();
    let mut data = vec![0.0; spec.rows * spec.cols];
    for (c, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            data[r * spec.cols + c] = *v;
        }
    }
    let img = BScanImage::with_spacing(spec.rows, spec.cols, data, spec.col_spacing_cm)?;
    Ok((img, spec.ground_truth()))
}

fn render_column(spec: &SceneSpec, c: usize, wavelet: &[f64], half: isize) -> Vec<f64> {
    let rows = spec.rows;
    let mut rng = substream(spec.seed, c as u64);
    let mut refl = vec![0.0; rows];
    let put = |refl: &mut [f64], row: f64, amp: f64| {
        let r = row.round();
        if r >= 0.0 && (r as usize) < rows {
            refl[r as usize] += amp;
        }
    };
    for l in &spec.layers {
        put(&mut refl, l.depth_row, l.reflect_amp);
    }
    for s in &spec.scatterers {
        let offset = (c as f64 - s.col) * spec.trace_step;
        let apex = 2.0 * s.depth_row / s.velocity_px;
        let travel = 2.0 * (s.depth_row.powi(2) + offset.powi(2)).sqrt() / s.velocity_px;
        // normalized so the apex echo has amplitude `amp`
        let decay = if travel > 0.0 {
            apex.max(1.0) / travel.max(1.0)
        } else {
            1.0
        };
        put(&mut refl, travel, s.amp * decay);
    }

    let inside = |a: &Anomaly| a.col_span.0 <= c && c < a.col_span.1;
    for a in spec.anomalies.iter().filter(|a| inside(a)) {
        let (r0, r1) = a.row_span;
        let taper = edge_taper(c, a.col_span);
        match a.kind {
            AnomalyKind::LooseTexture => {
                for v in &mut refl[r0..r1] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += a.intensity * taper * z;
                }
            }
            AnomalyKind::Cavity => {
                // shallow arch: the roof rises toward the span centre
                let u = relative_position(c, a.col_span);
                let lift =
                    ((r1 - r0) as f64 * 0.25 * (1.0 - (2.0 * u - 1.0).powi(2))).round() as usize;
                let top = r0 + (r1 - r0) / 4 - lift.min((r1 - r0) / 4);
                for v in &mut refl[top + 1..r1] {
                    *v *= 1.0 - 0.9 * taper;
                }
                refl[top] += a.intensity * taper;
                refl[r1 - 1] -= 0.5 * a.intensity * taper;
            }
            AnomalyKind::MoistureBlob => {}
        }
    }

    let mut trace = vec![0.0; rows];
    for (k, &rk) in refl.iter().enumerate() {
        if rk == 0.0 {
            continue;
        }
        for (w, &wv) in wavelet.iter().enumerate() {
            let i = k as isize + w as isize - half;
            if (0..rows as isize).contains(&i) {
                trace[i as usize] += rk * wv;
            }
        }
    }

    for a in spec.anomalies.iter().filter(|a| inside(a)) {
        if a.kind == AnomalyKind::MoistureBlob {
            let (r0, r1) = a.row_span;
            let centre = (r0 + r1 - 1) as f64 / 2.0;
            let sigma = (r1 - r0) as f64 / 5.0;
            let taper = edge_taper(c, a.col_span);
            for (r, v) in trace.iter_mut().enumerate().take(r1).skip(r0) {
                let g = (-(r as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp();
                *v += a.intensity * taper * g;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in &mut trace {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * z;
        }
    }
    trace
}

/// Position of column `c` inside `[s, e)`, mapped to (0, 1).
fn relative_position(c: usize, (s, e): (usize, usize)) -> f64 {
    (c - s) as f64 / (e - s) as f64 + 0.5 / (e - s) as f64
}

/// Raised-cosine ramps over the outer eighth of the span on each side.
fn edge_taper(c: usize, span: (usize, usize)) -> f64 {
    let u = relative_position(c, span);
    let ramp = 0.125;
    let edge = u.min(1.0 - u);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge / ramp).cos()
    }
}

/// Ground truth CSV: start_col, end_col, kind.
pub fn write_ground_truth_csv(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["start_col", "end_col", "kind"])?;
    for g in truth {
        w.write_record([
            g.start_col.to_string(),
            g.end_col.to_string(),
            g.kind.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!(
                "{}: expected 3 fields per row",
                path.display()
            )));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::data(format!("{}: bad column index {s:?}", path.display())))
        };
        out.push(GroundTruth {
            start_col: num(&rec[0])?,
            end_col: num(&rec[1])?,
            kind: rec[2].trim().parse()?,
        });
    }
    Ok(out)
}
