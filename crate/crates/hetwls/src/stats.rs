//! Chi-square distribution helpers built on the regularized incomplete gamma
//! function (Cephes-style series / continued fraction).
#![allow(clippy::excessive_precision)]

const EPS: f64 = 1.11022302462515654042e-16;
const BIG: f64 = 4.503599627370496e15;
const BIG_INV: f64 = 2.22044604925031308085e-16;
const MAX_LOG: f64 = 7.09782712893383996732e2;

/// ln Gamma(x) for x > 0, Lanczos approximation (g = 7, 9 coefficients).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma function P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    let ax = a * x.ln() - x - ln_gamma(a);
    if ax < -MAX_LOG {
        return if x < a { 0.0 } else { 1.0 };
    }

    if x <= 1.0 || x <= a {
        // Power series.
        let mut r = a;
        let mut c = 1.0;
        let mut ans = 1.0;
        loop {
            r += 1.0;
            c *= x / r;
            ans += c;
            if c / ans <= EPS {
                break;
            }
        }
        return ax.exp() * ans / a;
    }

    // Continued fraction for the upper tail.
    let mut c = 0.0;
    let mut y = 1.0 - a;
    let mut z = x + y + 1.0;
    let mut p3 = 1.0;
    let mut q3 = x;
    let mut p2 = x + 1.0;
    let mut q2 = z * x;
    let mut ans = p2 / q2;
    loop {
        c += 1.0;
        y += 1.0;
        z += 2.0;
        let yc = y * c;
        let p = p2 * z - p3 * yc;
        let q = q2 * z - q3 * yc;
        let err = if q != 0.0 {
            let r = p / q;
            let e = ((ans - r) / r).abs();
            ans = r;
            e
        } else {
            1.0
        };
        if err <= EPS {
            break;
        }
        p3 = p2;
        p2 = p;
        q3 = q2;
        q2 = q;
        if p.abs() > BIG {
            p3 *= BIG_INV;
            p2 *= BIG_INV;
            q3 *= BIG_INV;
            q2 *= BIG_INV;
        }
    }
    1.0 - ans * ax.exp()
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_squared_cdf(dof: usize, x: f64) -> f64 {
    assert!(dof >= 1);
    if x <= 0.0 {
        0.0
    } else {
        gamma_p(dof as f64 / 2.0, x / 2.0)
    }
}

/// Quantile of the chi-square distribution, inverted by bisection on the CDF.
///
/// Two degrees of freedom use the closed form `-2 ln(1 - level)`.
pub fn chi_squared_quantile(dof: usize, level: f64) -> f64 {
    assert!(dof >= 1);
    assert!((0.0..1.0).contains(&level), "level must be in [0, 1)");
    if level == 0.0 {
        return 0.0;
    }
    if dof == 2 {
        return -2.0 * (1.0 - level).ln();
    }
    let mut hi = 1.0;
    while chi_squared_cdf(dof, hi) < level {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    // 200 bisections take the bracket width below f64 resolution.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if chi_squared_cdf(dof, mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
