//! One-class SVM over model vectors with an RBF kernel on the model-space
//! distance, trained by sequential minimal optimization of the dual
//!
//! ```text
//! min ½ αᵀKα   s.t.  0 ≤ αᵢ ≤ 1/(νn),  Σ αᵢ = 1
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_space::{squared_euclidean, ModelVector};

/// Stopping tolerance of the SMO solver on the gradient gap of the maximal
/// violating pair; margin support vectors score 0 only up to this.
pub const KKT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
    pub gamma: f64,
    /// No margin support vector existed; `rho` came from the bound vectors.
    pub degenerate: bool,
    pub n_train: usize,
    pub fingerprint: String,
}

#[inline]
fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * squared_euclidean(a, b)).exp()
}

/// Kernel matrix of `points` under `exp(−γ‖u−v‖²)`.
pub fn kernel_matrix(points: &[ModelVector], gamma: f64) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = rbf(gamma, &points[i].phi, &points[j].phi);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `1 / median` of the pairwise squared model distances; 1 when the median
/// is zero.
pub fn median_gamma(points: &[ModelVector]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len() / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(squared_euclidean(&points[i].phi, &points[j].phi));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        1.0 / *m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub degenerate: bool,
    pub iterations: usize,
}

impl DualSolution {
    pub fn objective(&self, kernel: &DMatrix<f64>) -> f64 {
        dual_objective(kernel, &self.alphas)
    }
}

pub fn dual_objective(kernel: &DMatrix<f64>, alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += alphas[i] * alphas[j] * kernel[(i, j)];
        }
    }
    0.5 * acc
}

/// SMO on a precomputed kernel matrix. Each step moves weight between the
/// maximal violating pair until the gradient gap drops below the KKT
/// tolerance.
pub fn solve_dual(kernel: &DMatrix<f64>, nu: f64) -> Result<DualSolution> {
    let n = kernel.nrows();
    if n < 2 {
        return Err(Error::param(
            "one-class SVM needs at least two training points",
        ));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::param(format!("nu must lie in (0, 1], got {nu}")));
    }
    let c = 1.0 / (nu * n as f64);
    let eps = 1e-12 * c;

    // Feasible start: fill the first points to the bound in index order.
    let mut alphas = vec![0.0; n];
    let mut left: f64 = 1.0;
    for a in alphas.iter_mut() {
        let take = left.min(c);
        *a = take;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }

    let mut grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kernel[(i, j)] * alphas[j]).sum())
        .collect();

    let max_iter = 10_000 * n;
    let mut iterations = 0;
    while iterations < max_iter {
        // i: can grow, smallest gradient; j: can shrink, largest gradient
        let mut i_up = None;
        let mut j_low = None;
        for t in 0..n {
            if alphas[t] < c - eps && i_up.is_none_or(|i: usize| grad[t] < grad[i]) {
                i_up = Some(t);
            }
            if alphas[t] > eps && j_low.is_none_or(|j: usize| grad[t] > grad[j]) {
                j_low = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_up, j_low) else {
            break;
        };
        if grad[j] - grad[i] < KKT_TOL {
            break;
        }
        let eta = (kernel[(i, i)] + kernel[(j, j)] - 2.0 * kernel[(i, j)]).max(1e-12);
        let step = ((grad[j] - grad[i]) / eta)
            .min(c - alphas[i])
            .min(alphas[j]);
        alphas[i] += step;
        alphas[j] -= step;
        for (t, g) in grad.iter_mut().enumerate() {
            *g += step * (kernel[(t, i)] - kernel[(t, j)]);
        }
        iterations += 1;
    }

    for a in alphas.iter_mut() {
        if *a < eps {
            *a = 0.0;
        } else if *a > c - eps {
            *a = c;
        }
    }
    // exact gradient, summed the same way the decision function sums
    let grad: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| alphas[j] > 0.0)
                .map(|j| alphas[j] * kernel[(i, j)])
                .sum()
        })
        .collect();
    let free: Vec<usize> = (0..n)
        .filter(|&t| alphas[t] > 0.0 && alphas[t] < c)
        .collect();
    let (rho, degenerate) = if free.is_empty() {
        let at_bound = (0..n)
            .filter(|&t| alphas[t] == c)
            .map(|t| grad[t])
            .fold(f64::NEG_INFINITY, f64::max);
        (at_bound, true)
    } else {
        (
            free.iter().map(|&t| grad[t]).sum::<f64>() / free.len() as f64,
            false,
        )
    };
    Ok(DualSolution {
        alphas,
        rho,
        degenerate,
        iterations,
    })
}

/// Trains on `points`, all of which must share one reservoir.
pub fn train_ocsvm(points: &[ModelVector], nu: f64, gamma: f64) -> Result<OcsvmModel> {
    fit_ocsvm(points, nu, gamma).map(|(m, _)| m)
}

/// Model plus the full dual solution, indexed like `points`.
pub(crate) fn fit_ocsvm(
    points: &[ModelVector],
    nu: f64,
    gamma: f64,
) -> Result<(OcsvmModel, DualSolution)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("gamma must be > 0, got {gamma}")));
    }
    if let Some(first) = points.first() {
        if let Some(p) = points.iter().find(|p| p.fingerprint != first.fingerprint) {
            return Err(Error::FingerprintMismatch {
                left: first.fingerprint.clone(),
                right: p.fingerprint.clone(),
            });
        }
    }
    let kernel = kernel_matrix(points, gamma);
    let sol = solve_dual(&kernel, nu)?;
    if sol.degenerate {
        log::warn!("one-class SVM has no margin support vector; rho taken from bound vectors");
    }
    let (support_vectors, alphas) = points
        .iter()
        .zip(&sol.alphas)
        .filter(|(_, &a)| a > 0.0)
        .map(|(p, &a)| (p.phi.clone(), a))
        .unzip();
    let model = OcsvmModel {
        support_vectors,
        alphas,
        rho: sol.rho,
        nu,
        gamma,
        degenerate: sol.degenerate,
        n_train: points.len(),
        fingerprint: points[0].fingerprint.clone(),
    };
    Ok((model, sol))
}

impl OcsvmModel {
    /// `Σ αᵢ k(svᵢ, x) − ρ`
    pub fn decision(&self, phi: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * rbf(self.gamma, sv, phi))
            .sum::<f64>()
            - self.rho
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `(is_inlier, score)` with `score = decision(p)`.
pub fn ocsvm_classify(m: &OcsvmModel, p: &ModelVector) -> Result<(bool, f64)> {
    if p.fingerprint != m.fingerprint {
        return Err(Error::FingerprintMismatch {
            left: m.fingerprint.clone(),
            right: p.fingerprint.clone(),
        });
    }
    if m.support_vectors
        .first()
        .is_some_and(|sv| sv.len() != p.phi.len())
    {
        return Err(Error::data(
            "model vector length does not match the classifier",
        ));
    }
    let score = m.decision(&p.phi);
    Ok((score >= 0.0, score))
}
