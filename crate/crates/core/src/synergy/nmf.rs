//! Multiplicative-update NMF for the Frobenius loss.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SynergyError;
use crate::seed::child_rng;

/// Added to update denominators.
pub const DENOM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfOptions {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Converged when the relative change of the reconstruction error falls below this.
    pub tol: f64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions { seed: 0, restarts: 20, max_iter: 5000, tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub w: Array2<f64>,
    pub c: Array2<f64>,
    /// ‖V − WC‖_F
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
}

pub fn frobenius_error(v: &Array2<f64>, w: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let r = w.dot(c);
    v.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Rejects negative entries and the all-zero matrix; checks the rank range.
pub fn check_input(v: &Array2<f64>, n: usize) -> Result<(), SynergyError> {
    let max = v.nrows().min(v.ncols());
    if n == 0 || n > max {
        return Err(SynergyError::BadRank { n, max });
    }
    for ((i, j), &x) in v.indexed_iter() {
        if !(x >= 0.0) {
            return Err(SynergyError::Negative(i, j));
        }
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(SynergyError::AllZero);
    }
    Ok(())
}

/// One multiplicative-update run from the given initialization. When
/// `trace` is provided, the error after every iteration is appended.
pub fn run_updates(
    v: &Array2<f64>,
    mut w: Array2<f64>,
    mut c: Array2<f64>,
    max_iter: usize,
    tol: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> (Array2<f64>, Array2<f64>, f64, usize, bool) {
    let mut err = frobenius_error(v, &w, &c);
    if let Some(t) = trace.as_deref_mut() {
        t.push(err);
    }
    let mut converged = false;
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        // C <- C * (W'V) / (W'W C)
        let wt = w.t();
        let num = wt.dot(v);
        let den = wt.dot(&w).dot(&c);
        c.zip_mut_with(&num, |x, &n| *x *= n);
        c.zip_mut_with(&den, |x, &d| *x /= d + DENOM_EPS);
        // W <- W * (V C') / (W C C')
        let ct = c.t();
        let num = v.dot(&ct);
        let den = w.dot(&c.dot(&ct));
        w.zip_mut_with(&num, |x, &n| *x *= n);
        w.zip_mut_with(&den, |x, &d| *x /= d + DENOM_EPS);

        let next = frobenius_error(v, &w, &c);
        if let Some(t) = trace.as_deref_mut() {
            t.push(next);
        }
        let change = (err - next).abs() / err.max(f64::MIN_POSITIVE);
        err = next;
        if err == 0.0 || change < tol {
            converged = true;
            break;
        }
    }
    (w, c, err, iters, converged)
}

/// Uniform random nonnegative start scaled to the magnitude of `v`.
pub fn random_init(v: &Array2<f64>, n: usize, rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let scale = (mean / n as f64).sqrt();
    let w = Array2::from_shape_fn((v.nrows(), n), |_| scale * rng.random::<f64>());
    let c = Array2::from_shape_fn((n, v.ncols()), |_| scale * rng.random::<f64>());
    (w, c)
}

/// Scales each column of W to a maximum of 1 and folds the scale into C.
pub fn normalize_columns(w: &mut Array2<f64>, c: &mut Array2<f64>) {
    for i in 0..w.ncols() {
        let m = w.column(i).iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            w.column_mut(i).mapv_inplace(|x| x / m);
            c.row_mut(i).mapv_inplace(|x| x * m);
        }
    }
}

/// Best of `restarts` random initializations by final reconstruction error.
/// Restart `r` uses the child stream `r` of `opts.seed`; ties go to the lower
/// restart index.
pub fn factorize(v: &Array2<f64>, n: usize, opts: &NmfOptions) -> Result<Factorization, SynergyError> {
    check_input(v, n)?;
    let mut best: Option<Factorization> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = child_rng(opts.seed, r as u64);
        let (w0, c0) = random_init(v, n, &mut rng);
        let (mut w, mut c, err, iterations, converged) = run_updates(v, w0, c0, opts.max_iter, opts.tol, None);
        if best.as_ref().is_none_or(|b| err < b.error) {
            normalize_columns(&mut w, &mut c);
            best = Some(Factorization { w, c, error: err, iterations, converged, restart: r });
        }
    }
    Ok(best.expect("at least one restart"))
}
