#![allow(dead_code)]

use std::f64::consts::PI;

/// Standard normal CDF by composite Simpson quadrature of the density on [0, z].
pub fn norm_cdf(z: f64) -> f64 {
    let n = 4000;
    let h = z / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp();
    let mut s = f(0.0) + f(z);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    0.5 + s * h / 3.0 / (2.0 * PI).sqrt()
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Mean of N(mu, s^2) conditioned on being >= 0.
pub fn truncated_normal_mean(mu: f64, s: f64) -> f64 {
    let a = -mu / s;
    mu + s * norm_pdf(a) / (1.0 - norm_cdf(a))
}

/// Lognormal call price with zero rates.
pub fn black_call(s0: f64, k: f64, vol: f64, t: f64) -> f64 {
    let sd = vol * t.sqrt();
    let d1 = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    s0 * norm_cdf(d1) - k * norm_cdf(d1 - sd)
}
