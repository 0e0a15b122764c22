use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

const MAX_ITERS: usize = 1000;
const REL_TOL: f64 = 1e-6;
const CHECK_EVERY: usize = 25;
const START_SEED: u64 = 0x5E_ED0F_5EC7;

/// Largest eigenvalue magnitude, estimated by normalized power iteration.
///
/// The estimate is the geometric mean of the per-step norm growth over the
/// second half of the iterations run so far, which converges to `|λ_max|`
/// even when the dominant eigenvalues are a complex pair (the growth then
/// oscillates around the true rate). A nilpotent or zero matrix returns 0.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = rng::seeded(START_SEED);
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    v /= v.norm();
    let mut log_growth = Vec::with_capacity(MAX_ITERS);
    let mut last = f64::NAN;
    let estimate = |logs: &[f64]| {
        let tail = &logs[logs.len() / 2..];
        (tail.iter().sum::<f64>() / tail.len() as f64).exp()
    };
    for k in 1..=MAX_ITERS {
        let w = m * &v;
        let nrm = w.norm();
        if !(nrm > f64::MIN_POSITIVE) {
            return 0.0;
        }
        log_growth.push(nrm.ln());
        v = w / nrm;
        if k % CHECK_EVERY == 0 {
            let est = estimate(&log_growth);
            if k >= 2 * CHECK_EVERY && ((est - last) / est).abs() < REL_TOL {
                return est;
            }
            last = est;
        }
    }
    estimate(&log_growth)
}

/// Rescales `m` so its spectral radius becomes `alpha`.
pub fn scale_to_radius(m: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let r = spectral_radius(m);
    if r <= 0.0 {
        return Err(Error::numeric(
            "cannot rescale a matrix with zero spectral radius",
        ));
    }
    Ok(m * (alpha / r))
}
