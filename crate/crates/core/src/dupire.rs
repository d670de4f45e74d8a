//! Forward equation for European call prices under a local volatility surface.
//!
//! The price satisfies `C_T = 1/2 sigma^2 K^2 C_KK - (r - d) K C_K - d C`. Strikes
//! are evenly spaced in `y = ln(K / s0)` and the equation is marched in maturity
//! with a theta scheme. The first interval is split into two fully implicit
//! half steps to damp the payoff kink. Both strike ends are held at the
//! discounted forward intrinsic value `max(s0 e^{-int d} - K e^{-int r}, 0)`.

use serde::Serialize;

use crate::error::{Result, SlvError};
use crate::grids::{Axis, Surface};
use crate::params::{RatesCurve, SVParams};
use crate::tridiag;

/// Call prices on a (maturity, log-strike) grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallGrid {
    maturity: Axis,
    strike: Axis,
    s0: f64,
    values: Vec<f64>,
}

impl CallGrid {
    pub fn maturity_axis(&self) -> &Axis {
        &self.maturity
    }

    /// Log-moneyness axis `ln(K / s0)`.
    pub fn strike_axis(&self) -> &Axis {
        &self.strike
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn strike(&self, i: usize) -> f64 {
        self.s0 * self.strike.node(i).exp()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nk = self.strike.len();
        &self.values[n * nk..(n + 1) * nk]
    }

    pub fn get(&self, n: usize, i: usize) -> f64 {
        self.values[n * self.strike.len() + i]
    }

    /// The prices as a surface over (maturity, log-strike).
    pub fn to_surface(&self) -> Surface {
        Surface::new(self.maturity, self.strike, self.values.clone())
            .expect("grid shape is consistent")
    }

    /// Largest increase of price with strike, `max(C(K_{i+1}) - C(K_i), 0)`.
    pub fn monotonicity_violation(&self) -> f64 {
        (0..self.maturity.len())
            .flat_map(|n| {
                self.row(n)
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Most negative second divided difference in strike (zero if convex everywhere).
    pub fn convexity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..self.maturity.len() {
            let c = self.row(n);
            for i in 1..c.len() - 1 {
                let (k0, k1, k2) = (self.strike(i - 1), self.strike(i), self.strike(i + 1));
                let d = 2.0 * ((c[i + 1] - c[i]) / (k2 - k1) - (c[i] - c[i - 1]) / (k1 - k0))
                    / (k2 - k0);
                worst = worst.min(d);
            }
        }
        -worst
    }
}

/// Discounted forward intrinsic value at maturity `t`.
pub fn boundary_value(p: &SVParams, rates: &RatesCurve, t: f64, strike: f64) -> f64 {
    let fwd = p.s0 * (-rates.integral_d(0.0, t)).exp();
    let k = strike * (-rates.integral_r(0.0, t)).exp();
    (fwd - k).max(0.0)
}

/// Local volatility at each strike node for maturity `t`, by nearest-node lookup.
///
/// Unavailable (NaN) values are replaced by the nearest available value in the same row.
fn sigma_row(sigma: &Surface, t: f64, strike: &Axis) -> Result<Vec<f64>> {
    let n = sigma.time_axis().nearest_index(t);
    let row = sigma.row(n);
    let avail: Vec<usize> = (0..row.len()).filter(|&i| !row[i].is_nan()).collect();
    if avail.is_empty() {
        return Err(SlvError::InvalidParameter(format!(
            "local-vol row {n} has no available values"
        )));
    }
    (0..strike.len())
        .map(|i| {
            let mut k = sigma.x_axis().nearest_index(strike.node(i));
            if row[k].is_nan() {
                k = *avail
                    .iter()
                    .min_by_key(|&&a| a.abs_diff(k))
                    .expect("nonempty");
            }
            let s = row[k];
            if s < 0.0 {
                return Err(SlvError::InvalidParameter(
                    "local volatility must be nonnegative".into(),
                ));
            }
            Ok(s)
        })
        .collect()
}

/// Spatial operator bands at one maturity (interior rows only; boundary rows stay zero).
///
/// Divided differences in `K` over the log-spaced strikes, so prices linear in
/// `K` are annihilated exactly by the diffusion part.
fn operator(sig: &[f64], strikes: &[f64], r: f64, d: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = sig.len();
    let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 1..n - 1 {
        let k = strikes[i];
        let (hm, hp) = (k - strikes[i - 1], strikes[i + 1] - k);
        let s = hm + hp;
        let diff = 0.5 * sig[i] * sig[i] * k * k;
        let conv = -(r - d) * k;
        lo[i] = diff * 2.0 / (hm * s) - conv * hp / (hm * s);
        di[i] = -diff * 2.0 / (hm * hp) + conv * (hp - hm) / (hm * hp) - d;
        up[i] = diff * 2.0 / (hp * s) + conv * hm / (hp * s);
    }
    (lo, di, up)
}

fn theta_step(
    prev: &[f64],
    explicit: &(Vec<f64>, Vec<f64>, Vec<f64>),
    implicit: &(Vec<f64>, Vec<f64>, Vec<f64>),
    dt: f64,
    theta: f64,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    let n = prev.len();
    let mut rhs = tridiag::multiply(&explicit.0, &explicit.1, &explicit.2, prev);
    for (r, c) in rhs.iter_mut().zip(prev) {
        *r = c + (1.0 - theta) * dt * *r;
    }
    let lower: Vec<f64> = implicit.0.iter().map(|v| -theta * dt * v).collect();
    let diag: Vec<f64> = implicit.1.iter().map(|v| 1.0 - theta * dt * v).collect();
    let upper: Vec<f64> = implicit.2.iter().map(|v| -theta * dt * v).collect();
    rhs[0] = bounds.0;
    rhs[n - 1] = bounds.1;
    let mut scratch = vec![0.0; n];
    tridiag::solve_in_place(&lower, &diag, &upper, &mut rhs, &mut scratch)?;
    Ok(rhs)
}

pub fn solve_dupire(
    sigma_loc: &Surface,
    p: &SVParams,
    rates: &RatesCurve,
    mesh: (Axis, Axis),
    theta: f64,
) -> Result<CallGrid> {
    let (maturity, strike) = mesh;
    if !(0.0..=1.0).contains(&theta) {
        return Err(SlvError::InvalidParameter(
            "theta must lie in [0, 1]".into(),
        ));
    }
    if maturity.min() != 0.0 {
        return Err(SlvError::InvalidParameter(
            "maturity axis must start at 0".into(),
        ));
    }
    if strike.len() < 3 {
        return Err(SlvError::AxisTooSmall(strike.len()));
    }
    let nk = strike.len();
    let k = |i: usize| p.s0 * strike.node(i).exp();
    let strikes: Vec<f64> = (0..nk).map(k).collect();
    let bounds = |t: f64| {
        (
            boundary_value(p, rates, t, k(0)),
            boundary_value(p, rates, t, k(nk - 1)),
        )
    };

    let mut values = Vec::with_capacity(maturity.len() * nk);
    let mut c: Vec<f64> = (0..nk).map(|i| (p.s0 - k(i)).max(0.0)).collect();
    values.extend_from_slice(&c);

    let ops_at = |t: f64| -> Result<_> {
        Ok(operator(
            &sigma_row(sigma_loc, t, &strike)?,
            &strikes,
            rates.r_at(t),
            rates.d_at(t),
        ))
    };
    let mut ops_now = ops_at(0.0)?;
    for n in 0..maturity.cells() {
        let (t0, t1) = (maturity.node(n), maturity.node(n + 1));
        let ops_next = ops_at(t1)?;
        if n == 0 {
            let tm = 0.5 * (t0 + t1);
            let ops_mid = ops_at(tm)?;
            c = theta_step(&c, &ops_mid, &ops_mid, tm - t0, 1.0, bounds(tm))?;
            c = theta_step(&c, &ops_next, &ops_next, t1 - tm, 1.0, bounds(t1))?;
        } else {
            c = theta_step(&c, &ops_now, &ops_next, t1 - t0, theta, bounds(t1))?;
        }
        values.extend_from_slice(&c);
        ops_now = ops_next;
    }
    Ok(CallGrid {
        maturity,
        strike,
        s0: p.s0,
        values,
    })
}
