//! Special functions needed by the Wishart and Dirichlet moment formulas.

use std::f64::consts::PI;

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function ψ′(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 8.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in Bernoulli numbers.
    let series = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * 5.0 / 66.0))));
    acc + series
}

/// Multivariate digamma Σ_{i=1}^{p} ψ(a + (1 - i)/2).
pub fn multi_digamma(a: f64, p: usize) -> f64 {
    (1..=p).map(|i| digamma(a + (1.0 - i as f64) / 2.0)).sum()
}

/// Σ_{i=1}^{p} ψ′(a + (1 - i)/2).
pub fn multi_trigamma(a: f64, p: usize) -> f64 {
    (1..=p).map(|i| trigamma(a + (1.0 - i as f64) / 2.0)).sum()
}

/// Log of the multivariate gamma function Γ_p(a).
pub fn ln_multi_gamma(a: f64, p: usize) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}
