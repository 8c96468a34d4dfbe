//! Shared test oracles, independent of the library's solve path.
#![allow(dead_code)] // compiled once per test target; not every target uses every helper

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Brute-force minimizer of the weighted residual sum of squares by exact
/// coordinate descent: each coordinate update solves its one-dimensional
/// quadratic in closed form. Independent of any QR factorization.
pub fn coordinate_descent_wls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    sweeps: usize,
) -> DVector<f64> {
    let (n, p) = x.shape();
    let mut beta: DVector<f64> = DVector::zeros(p);
    for _ in 0..sweeps {
        let mut shift = 0.0_f64;
        for j in 0..p {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let mut partial = y[i];
                for k in 0..p {
                    if k != j {
                        partial -= x[(i, k)] * beta[k];
                    }
                }
                num += w[i] * x[(i, j)] * partial;
                den += w[i] * x[(i, j)] * x[(i, j)];
            }
            let updated: f64 = num / den;
            shift = shift.max((updated - beta[j]).abs());
            beta[j] = updated;
        }
        if shift < 1e-14 {
            break;
        }
    }
    beta
}

/// Weighted RSS evaluated directly.
pub fn weighted_rss(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    beta: &DVector<f64>,
) -> f64 {
    let r = y - x * beta;
    r.iter().zip(w.iter()).map(|(ri, wi)| wi * ri * ri).sum()
}

/// Well-conditioned random instance with n in 4..=10, p in 1..=3.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let p = rng.random_range(1..=3usize);
    let n = rng.random_range((p + 3)..=10usize);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let w = DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0));
    (x, y, w)
}
