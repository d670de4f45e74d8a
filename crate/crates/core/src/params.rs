//! Heston-type variance parameters, rate curves and their closed-form moments.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlvError};

/// Parameters of the variance factor and the initial spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SVParams {
    /// Initial variance.
    pub v0: f64,
    /// Mean-reversion speed.
    pub kappa: f64,
    /// Long-run variance.
    pub m: f64,
    /// Volatility of variance.
    pub xi: f64,
    /// Spot/variance correlation.
    pub rho: f64,
    /// Initial spot.
    pub s0: f64,
}

impl SVParams {
    pub fn new(v0: f64, kappa: f64, m: f64, xi: f64, rho: f64, s0: f64) -> Result<Self> {
        let p = SVParams {
            v0,
            kappa,
            m,
            xi,
            rho,
            s0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Synthetic-experiment parameters (v0 = m = 0.04, kappa = 2, xi = 0.25, rho = -0.5).
    pub fn synthetic_reference() -> Self {
        SVParams {
            v0: 0.04,
            kappa: 2.0,
            m: 0.04,
            xi: 0.25,
            rho: -0.5,
            s0: 1.0,
        }
    }

    /// EURUSD fit of 2015-03-18 (spot 1.0864).
    pub fn eurusd_reference() -> Self {
        SVParams {
            v0: 0.013,
            kappa: 1.025,
            m: 0.013,
            xi: 0.161,
            rho: -0.626,
            s0: 1.0864,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SlvError::InvalidParameter(what.to_string()));
        let all = [self.v0, self.kappa, self.m, self.xi, self.rho, self.s0];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all SV parameters must be finite");
        }
        if self.v0 < 0.0 {
            return bad("v0 must be >= 0");
        }
        if self.kappa <= 0.0 {
            return bad("kappa must be > 0");
        }
        if self.m <= 0.0 {
            return bad("m must be > 0");
        }
        if self.xi <= 0.0 {
            return bad("xi must be > 0");
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [-1, 1]");
        }
        if self.s0 <= 0.0 {
            return bad("s0 must be > 0");
        }
        Ok(())
    }
}

/// `2 kappa m >= xi^2`.
pub fn check_feller(p: &SVParams) -> bool {
    2.0 * p.kappa * p.m >= p.xi * p.xi
}

/// Mean of the variance factor at `t`, `m + (v0 - m) e^{-kappa t}`.
pub fn cir_mean(p: &SVParams, t: f64) -> f64 {
    cir_mean_from(p, p.v0, t)
}

/// Variance mean at `t` when the variance starts with mean `start_mean` instead of `v0`.
pub fn cir_mean_from(p: &SVParams, start_mean: f64, t: f64) -> f64 {
    p.m + (start_mean - p.m) * (-p.kappa * t).exp()
}

/// Domestic and foreign (dividend) short rates as piecewise-constant curves.
///
/// Knot `k` carries the rate on `(t_{k-1}, t_k]`; the first value extends to the
/// left and the last to the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesCurve {
    times: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
}

impl RatesCurve {
    pub fn new(times: Vec<f64>, r: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != r.len() || times.len() != d.len() {
            return Err(SlvError::InvalidParameter(
                "rates curve needs equal, nonzero numbers of t, r, d values".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SlvError::InvalidParameter(
                "rate knots must be strictly ascending".into(),
            ));
        }
        if times.iter().chain(&r).chain(&d).any(|v| !v.is_finite()) {
            return Err(SlvError::InvalidParameter("rates must be finite".into()));
        }
        Ok(RatesCurve { times, r, d })
    }

    pub fn constant(r: f64, d: f64) -> Self {
        RatesCurve {
            times: vec![0.0],
            r: vec![r],
            d: vec![d],
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn bucket(&self, t: f64) -> usize {
        // first knot with t <= t_k
        self.times
            .partition_point(|&k| k < t)
            .min(self.times.len() - 1)
    }

    pub fn r_at(&self, t: f64) -> f64 {
        self.r[self.bucket(t)]
    }

    pub fn d_at(&self, t: f64) -> f64 {
        self.d[self.bucket(t)]
    }

    /// `r(t) - d(t)`.
    pub fn net_at(&self, t: f64) -> f64 {
        let k = self.bucket(t);
        self.r[k] - self.d[k]
    }

    fn integrate(&self, rates: &[f64], t0: f64, t1: f64) -> f64 {
        if t1 == t0 {
            return 0.0;
        }
        if t1 < t0 {
            return -self.integrate(rates, t1, t0);
        }
        // breakpoints are the knots; each piece is constant
        let mut total = 0.0;
        let mut lo = t0;
        for (k, &knot) in self.times.iter().enumerate() {
            if knot <= lo {
                continue;
            }
            let hi = knot.min(t1);
            total += rates[k] * (hi - lo);
            lo = hi;
            if lo >= t1 {
                return total;
            }
        }
        total + rates[rates.len() - 1] * (t1 - lo)
    }

    /// Exact `int_{t0}^{t1} r(u) du`.
    pub fn integral_r(&self, t0: f64, t1: f64) -> f64 {
        self.integrate(&self.r, t0, t1)
    }

    /// Exact `int_{t0}^{t1} d(u) du`.
    pub fn integral_d(&self, t0: f64, t1: f64) -> f64 {
        self.integrate(&self.d, t0, t1)
    }

    /// Average net carry `r - d` over `[t0, t1]`.
    pub fn average_net(&self, t0: f64, t1: f64) -> f64 {
        if t1 == t0 {
            return self.net_at(t0);
        }
        (self.integral_r(t0, t1) - self.integral_d(t0, t1)) / (t1 - t0)
    }

    /// Parse the `t,r,d` CSV knot format (header row required).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Knot {
            t: f64,
            r: f64,
            d: f64,
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| SlvError::Parse(e.to_string()))?;
        if header != vec!["t", "r", "d"] {
            return Err(SlvError::Parse(format!(
                "rates header must be `t,r,d`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut times, mut r, mut d) = (Vec::new(), Vec::new(), Vec::new());
        for row in reader.deserialize::<Knot>() {
            let k = row.map_err(|e| SlvError::Parse(format!("rates file: {e}")))?;
            times.push(k.t);
            r.push(k.r);
            d.push(k.d);
        }
        RatesCurve::new(times, r, d)
    }

    /// The curve in the `t,r,d` CSV knot format.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,r,d\n");
        for k in 0..self.times.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e}\n",
                self.times[k], self.r[k], self.d[k]
            ));
        }
        out
    }
}

/// `s0 * exp(int_0^t (r - d) du)`.
pub fn forward_price(p: &SVParams, rates: &RatesCurve, t: f64) -> f64 {
    p.s0 * (rates.integral_r(0.0, t) - rates.integral_d(0.0, t)).exp()
}
