//! Metric embedding of fitted readouts.
//!
//! Two readouts `f(h) = w·h + a` are compared by the mean squared difference
//! of their outputs over hidden states uniform on `[−1, 1]^{2N}`, which has
//! the closed form `‖Δw‖²/3 + Δa²`. Scaling the weights by `1/√3` turns that
//! into a plain squared Euclidean distance between embedding vectors.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::FittedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    /// `[w_out_up | w_out_left] / √3` followed by the bias; length 2N+1.
    pub phi: Vec<f64>,
    pub label: Option<String>,
    /// Half-open column span of the source window.
    pub window_span: (usize, usize),
    pub fingerprint: String,
}

impl ModelVector {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_span(mut self, start_col: usize, end_col: usize) -> Self {
        self.window_span = (start_col, end_col);
        self
    }

    pub fn n_units(&self) -> usize {
        self.phi.len() / 2
    }
}

/// Embeds a fitted readout.
pub fn embed(m: &FittedModel) -> ModelVector {
    let scale = 1.0 / 3f64.sqrt();
    let mut phi: Vec<f64> = m.readout().iter().map(|v| v * scale).collect();
    phi.push(m.bias);
    ModelVector {
        phi,
        label: None,
        window_span: (0, 0),
        fingerprint: m.fingerprint.clone(),
    }
}

/// `‖ΔW‖²/3 + Δa²`: the squared distance between two readouts.
pub fn model_distance(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    check_compatible(a, b)?;
    Ok(squared_euclidean(&a.phi, &b.phi))
}

/// Square root of [`model_distance`]; a true metric.
pub fn sqrt_model_distance(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    model_distance(a, b).map(f64::sqrt)
}

fn check_compatible(a: &ModelVector, b: &ModelVector) -> Result<()> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::FingerprintMismatch {
            left: a.fingerprint.clone(),
            right: b.fingerprint.clone(),
        });
    }
    if a.phi.len() != b.phi.len() {
        return Err(Error::data(format!(
            "model vectors have different lengths {} and {}",
            a.phi.len(),
            b.phi.len()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A set of model vectors fitted against one reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpace {
    points: Vec<ModelVector>,
    n_units: usize,
    reservoir_fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceMeta {
    n_units: usize,
    fingerprint: String,
}

impl ModelSpace {
    pub fn new(points: Vec<ModelVector>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::data("model space needs at least one point"))?;
        let len = first.phi.len();
        if len % 2 != 1 {
            return Err(Error::data("embedding length must be 2N+1"));
        }
        for p in &points {
            check_compatible(first, p)?;
            if p.phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::data("non-finite model vector"));
            }
        }
        Ok(Self {
            n_units: len / 2,
            reservoir_fingerprint: first.fingerprint.clone(),
            points,
        })
    }

    pub fn points(&self) -> &[ModelVector] {
        &self.points
    }

    pub fn into_points(self) -> Vec<ModelVector> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn reservoir_fingerprint(&self) -> &str {
        &self.reservoir_fingerprint
    }

    fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// One row per point: phi components, label, start_col, end_col. The
    /// reservoir fingerprint goes to a `.meta.json` sibling.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..2 * self.n_units + 1)
            .map(|i| format!("phi_{i}"))
            .collect();
        header.extend(["label", "start_col", "end_col"].map(String::from));
        w.write_record(&header)?;
        for p in &self.points {
            let mut rec: Vec<String> = p.phi.iter().map(|v| format!("{v:?}")).collect();
            rec.push(p.label.clone().unwrap_or_default());
            rec.push(p.window_span.0.to_string());
            rec.push(p.window_span.1.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta = SpaceMeta {
            n_units: self.n_units,
            fingerprint: self.reservoir_fingerprint.clone(),
        };
        let meta_path = Self::meta_path(path);
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&meta_path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta_path = Self::meta_path(path);
        let meta: SpaceMeta = serde_json::from_str(
            &fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        let dim = 2 * meta.n_units + 1;
        let mut rdr = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != dim + 3 {
                return Err(Error::data(format!(
                    "model space row has {} fields, expected {}",
                    rec.len(),
                    dim + 3
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::data(format!("bad number {s:?}")))
            };
            let idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::data(format!("bad column index {s:?}")))
            };
            let phi = (0..dim).map(|i| num(&rec[i])).collect::<Result<Vec<_>>>()?;
            let label = match &rec[dim] {
                "" => None,
                s => Some(s.to_string()),
            };
            points.push(ModelVector {
                phi,
                label,
                window_span: (idx(&rec[dim + 1])?, idx(&rec[dim + 2])?),
                fingerprint: meta.fingerprint.clone(),
            });
        }
        Self::new(points)
    }
}

/// Symmetric matrix of [`model_distance`] values, computed in parallel by row.
pub fn pairwise_distances(s: &ModelSpace) -> DMatrix<f64> {
    let n = s.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j > i {
                        squared_euclidean(&s.points[i].phi, &s.points[j].phi)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            d[(i, j)] = rows[i][j];
            d[(j, i)] = rows[i][j];
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// One `dims`-vector per input point, in input order.
    pub coords: Vec<Vec<f64>>,
    /// Variance captured by each axis.
    pub axis_variance: Vec<f64>,
    /// Set when fewer than `dims` axes carry variance; the rest are zero.
    pub degenerate: bool,
}

/// Mean-centred projection of the embeddings onto their top `dims`
/// principal axes.
pub fn pca_project(s: &ModelSpace, dims: usize) -> Result<Projection> {
    if dims == 0 || dims > 3 {
        return Err(Error::param(format!(
            "projection dims must be 1..=3, got {dims}"
        )));
    }
    let n = s.len();
    if n < dims {
        return Err(Error::param(format!(
            "need at least {dims} points to project, got {n}"
        )));
    }
    let d = s.points[0].phi.len();
    let mut x = DMatrix::from_fn(n, d, |i, j| s.points[i].phi[j]);
    let mean = x.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let cov = x.tr_mul(&x) / n as f64;
    let total: f64 = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let floor = 1e-12 * total.max(f64::MIN_POSITIVE);
    let mut coords = vec![vec![0.0; dims]; n];
    let mut axis_variance = vec![0.0; dims];
    let mut degenerate = false;
    for (k, &ax) in order.iter().take(dims).enumerate() {
        let var = eig.eigenvalues[ax];
        if var <= floor {
            degenerate = true;
            continue;
        }
        let mut axis = eig.eigenvectors.column(ax).into_owned();
        // deterministic orientation: largest-magnitude component positive
        let pivot = axis.iamax();
        if axis[pivot] < 0.0 {
            axis = -axis;
        }
        let proj = &x * axis;
        for i in 0..n {
            coords[i][k] = proj[i];
        }
        axis_variance[k] = var;
    }
    if degenerate {
        log::warn!("degenerate model-space covariance: fewer than {dims} informative axes");
    }
    Ok(Projection {
        coords,
        axis_variance,
        degenerate,
    })
}

/// Projection CSV: `dims` coordinate columns then the label.
pub fn write_projection_csv(path: &Path, s: &ModelSpace, p: &Projection) -> Result<()> {
    let dims = p.axis_variance.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dims).map(|i| format!("pc{}", i + 1)).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (pt, c) in s.points.iter().zip(&p.coords) {
        let mut rec: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
        rec.push(pt.label.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn model(up: Vec<f64>, left: Vec<f64>, bias: f64) -> FittedModel {
        FittedModel {
            w_out_up: up,
            w_out_left: left,
            bias,
            train_nrmse: 0.0,
            window_id: String::new(),
            fingerprint: "fp".into(),
        }
    }

    fn vector(phi: Vec<f64>) -> ModelVector {
        ModelVector {
            phi,
            label: None,
            window_span: (0, 0),
            fingerprint: "fp".into(),
        }
    }

    #[test]
    fn zero_model_embeds_to_zero() {
        let v = embed(&model(vec![0.0; 3], vec![0.0; 3], 0.0));
        assert_eq!(v.phi, vec![0.0; 7]);
    }

    #[test]
    fn bias_only_difference() {
        let a = embed(&model(vec![0.0; 2], vec![0.0; 2], 4.0));
        let b = embed(&model(vec![0.0; 2], vec![0.0; 2], 0.0));
        assert!((model_distance(&a, &b).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn weight_and_bias_difference() {
        let a = embed(&model(vec![3.0, 0.0], vec![0.0, 0.0], 4.0));
        let b = embed(&model(vec![0.0, 0.0], vec![0.0, 0.0], 0.0));
        assert!((model_distance(&a, &b).unwrap() - 19.0).abs() < 1e-12);
        assert_eq!(model_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fingerprint_mismatch_is_an_error() {
        let a = vector(vec![0.0; 3]);
        let mut b = vector(vec![0.0; 3]);
        b.fingerprint = "other".into();
        assert!(matches!(
            model_distance(&a, &b),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(ModelSpace::new(vec![a, b]).is_err());
    }

    /// Brute-force mean of `(f₁(h) − f₂(h))²` with `h` uniform on the box.
    fn monte_carlo_distance(a: &FittedModel, b: &FittedModel, samples: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::seeded(seed);
        let wa = a.readout();
        let wb = b.readout();
        let mut acc = 0.0;
        for _ in 0..samples {
            let mut diff = a.bias - b.bias;
            for k in 0..wa.len() {
                let h = rng.random::<f64>() * 2.0 - 1.0;
                diff += (wa[k] - wb[k]) * h;
            }
            acc += diff * diff;
        }
        acc / samples as f64
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let mut rng = crate::rng::seeded(11);
        let n = 20;
        let mut draw = || {
            model(
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect(),
                rng.random::<f64>() - 0.5,
            )
        };
        for pair in 0..3 {
            let (a, b) = (draw(), draw());
            let closed = model_distance(&embed(&a), &embed(&b)).unwrap();
            let mc = monte_carlo_distance(&a, &b, 100_000, pair);
            assert!(
                ((mc - closed) / closed).abs() < 0.02,
                "mc {mc} closed {closed}"
            );
        }
    }

    #[test]
    fn pairwise_examples() {
        let one = ModelSpace::new(vec![vector(vec![1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(pairwise_distances(&one), DMatrix::zeros(1, 1));

        let pts = vec![
            vector(vec![1.0, 0.0, 0.0]),
            vector(vec![0.0, 2.0, 1.0]),
            vector(vec![1.0, 0.0, 0.0]),
        ];
        let s = ModelSpace::new(pts.clone()).unwrap();
        let d = pairwise_distances(&s);
        assert_eq!(d[(0, 2)], 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[(i, j)], model_distance(&pts[i], &pts[j]).unwrap());
            }
        }
    }

    #[test]
    fn pca_on_collinear_points() {
        let pts: Vec<ModelVector> = [0.0, 1.0, 3.0, 7.0]
            .iter()
            .map(|&t| vector(vec![t, 2.0 * t, -t]))
            .collect();
        let s = ModelSpace::new(pts).unwrap();
        let p = pca_project(&s, 1).unwrap();
        assert!(!p.degenerate);
        let c: Vec<f64> = p.coords.iter().map(|c| c[0]).collect();
        // exact distances along the line: |Δt|·√6
        for i in 0..4 {
            for j in 0..4 {
                let d = model_distance(&s.points()[i], &s.points()[j])
                    .unwrap()
                    .sqrt();
                assert!(((c[i] - c[j]).abs() - d).abs() < 1e-9);
            }
        }
        let p3 = pca_project(&s, 3).unwrap();
        assert!(p3.degenerate);
        assert!(p3.coords.iter().all(|c| c[1] == 0.0 && c[2] == 0.0));
    }

    #[test]
    fn pca_duplicates_and_variance() {
        let mut rng = crate::rng::seeded(3);
        let mut pts: Vec<ModelVector> = (0..10)
            .map(|_| vector((0..5).map(|_| rng.random::<f64>()).collect()))
            .collect();
        pts.push(pts[2].clone());
        let s = ModelSpace::new(pts.clone()).unwrap();
        let p = pca_project(&s, 2).unwrap();
        assert_eq!(p.coords[2], p.coords[10]);

        let n = pts.len() as f64;
        let mean: Vec<f64> = (0..5)
            .map(|j| pts.iter().map(|p| p.phi[j]).sum::<f64>() / n)
            .collect();
        let total: f64 = pts
            .iter()
            .map(|p| squared_euclidean(&p.phi, &mean))
            .sum::<f64>()
            / n;
        let proj_var = |p: &Projection| -> f64 {
            let n = p.coords.len() as f64;
            p.coords
                .iter()
                .map(|c| c.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / n
        };
        assert!(proj_var(&p) <= total + 1e-12);

        // rank-2 data: projection onto 2 axes keeps all variance
        let flat: Vec<ModelVector> = (0..8)
            .map(|i| {
                let (a, b) = ((i as f64).sin(), (i as f64 * 0.7).cos());
                vector(vec![a, b, a + b, 0.0, a - b])
            })
            .collect();
        let fs = ModelSpace::new(flat.clone()).unwrap();
        let fp = pca_project(&fs, 2).unwrap();
        let n = flat.len() as f64;
        let mean: Vec<f64> = (0..5)
            .map(|j| flat.iter().map(|p| p.phi[j]).sum::<f64>() / n)
            .collect();
        let total: f64 = flat
            .iter()
            .map(|p| squared_euclidean(&p.phi, &mean))
            .sum::<f64>()
            / n;
        assert!((proj_var(&fp) - total).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.csv");
        let s = ModelSpace::new(vec![
            vector(vec![0.1, -0.2, 0.3])
                .with_label("normal")
                .with_span(0, 300),
            vector(vec![1.0 / 3.0, 2.0, 0.0]).with_span(20, 320),
        ])
        .unwrap();
        s.write_csv(&path).unwrap();
        assert_eq!(ModelSpace::read_csv(&path).unwrap(), s);
    }

    fn arb_phi() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 5)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_phi(), b in arb_phi(), c in arb_phi()) {
            let (a, b, c) = (vector(a), vector(b), vector(c));
            let dab = sqrt_model_distance(&a, &b).unwrap();
            let dba = sqrt_model_distance(&b, &a).unwrap();
            let dac = sqrt_model_distance(&a, &c).unwrap();
            let dbc = sqrt_model_distance(&b, &c).unwrap();
            prop_assert!(dab >= 0.0);
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(sqrt_model_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(dac <= dab + dbc + 1e-9);
            if a.phi != b.phi {
                prop_assert!(dab > 0.0);
            }
        }
    }
}
