//! Per-step Tikhonov-regularized leverage calibration.
//!
//! With the density from the previous step fixed, the forward map
//! `y -> y_i sqrt(E[V | x_i])` is diagonal in `y`, so each step is a linear
//! least-squares problem solved through its normal equations:
//!
//! ```text
//! (D G D + a1 D0^-1 + a2 R^T Ds^-1 R) y = D G sigma + a1 D0^-1 l_prev
//! ```
//!
//! where `G` is `Gamma^-1` with the rows and columns of degenerate nodes zeroed.
//! The solve itself goes through a QR factorization of the equivalent stacked
//! least-squares system, which squares the conditioning far less than a
//! factorization of the normal-equation matrix when `a2` is large.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::benchmark::DEGENERATE_EPS;
use crate::error::{Result, SlvError};
use crate::fokker_planck::{self, FPConfig};
use crate::grids::{trapezoid_moments, Axis, DensitySlice, MeshSpec, Quadrature, Surface};
use crate::params::{RatesCurve, SVParams};

const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive definite weight (covariance) matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum WeightMatrix {
    #[default]
    Identity,
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl WeightMatrix {
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(SlvError::InvalidParameter(msg));
        match self {
            WeightMatrix::Identity => Ok(()),
            WeightMatrix::Diagonal(d) => {
                if let Some(n) = n.filter(|&n| n != d.len()) {
                    return bad(format!(
                        "diagonal weight has {} entries, expected {n}",
                        d.len()
                    ));
                }
                if d.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
                    return bad("diagonal weights must be finite and > 0".into());
                }
                Ok(())
            }
            WeightMatrix::Dense(rows) => {
                let m = rows.len();
                if let Some(n) = n.filter(|&n| n != m) {
                    return bad(format!("dense weight is {m}x{m}, expected {n}x{n}"));
                }
                if rows.iter().any(|r| r.len() != m) {
                    return bad("dense weight must be square".into());
                }
                for i in 0..m {
                    if !(rows[i][i] > 0.0) {
                        return bad(format!("dense weight diagonal entry {i} must be > 0"));
                    }
                    for j in 0..i {
                        if (rows[i][j] - rows[j][i]).abs() > SYMMETRY_TOL {
                            return bad(format!("dense weight not symmetric at ({i}, {j})"));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// The inverse as an `n x n` matrix.
    pub fn inverse(&self, n: usize) -> Result<DMatrix<f64>> {
        self.validate(Some(n))?;
        match self {
            WeightMatrix::Identity => Ok(DMatrix::identity(n, n)),
            WeightMatrix::Diagonal(d) => Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                d.iter().map(|w| 1.0 / w),
            ))),
            WeightMatrix::Dense(rows) => {
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                m.cholesky().map(|c| c.inverse()).ok_or_else(|| {
                    SlvError::InvalidParameter("dense weight is not positive definite".into())
                })
            }
        }
    }

    /// `U` with `U^T U` equal to the inverse.
    pub fn inverse_factor(&self, n: usize) -> Result<DMatrix<f64>> {
        self.validate(Some(n))?;
        match self {
            WeightMatrix::Identity => Ok(DMatrix::identity(n, n)),
            WeightMatrix::Diagonal(d) => Ok(DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                d.iter().map(|w| 1.0 / w.sqrt()),
            ))),
            WeightMatrix::Dense(rows) => {
                let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                let l = m
                    .cholesky()
                    .ok_or_else(|| {
                        SlvError::InvalidParameter("dense weight is not positive definite".into())
                    })?
                    .unpack();
                l.solve_lower_triangular(&DMatrix::identity(n, n))
                    .ok_or_else(|| SlvError::InvalidParameter("dense weight is singular".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TikhonovConfig {
    /// Weight of the proximity term `|y - l_prev|`.
    pub alpha1: f64,
    /// Weight of the smoothness term `|R y|`.
    pub alpha2: f64,
    pub gamma: WeightMatrix,
    pub d0: WeightMatrix,
    pub ds: WeightMatrix,
    /// Constant leverage used as `l_prev` for the first step.
    pub l_init_const: f64,
}

impl Default for TikhonovConfig {
    fn default() -> Self {
        TikhonovConfig {
            alpha1: 0.0,
            alpha2: 1e-2,
            gamma: WeightMatrix::Identity,
            d0: WeightMatrix::Identity,
            ds: WeightMatrix::Identity,
            l_init_const: 1.0,
        }
    }
}

impl TikhonovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1.is_finite() && self.alpha1 >= 0.0) {
            return Err(SlvError::InvalidParameter(
                "alpha1 must be finite and >= 0".into(),
            ));
        }
        if !(self.alpha2.is_finite() && self.alpha2 >= 0.0) {
            return Err(SlvError::InvalidParameter(
                "alpha2 must be finite and >= 0".into(),
            ));
        }
        if !(self.l_init_const.is_finite() && self.l_init_const > 0.0) {
            return Err(SlvError::InvalidParameter(
                "l_init_const must be finite and > 0".into(),
            ));
        }
        self.gamma.validate(None)?;
        self.d0.validate(None)?;
        self.ds.validate(None)
    }
}

/// First-derivative matrix in x: central rows inside, one-sided rows at both ends.
pub fn build_rs(x: &Axis) -> Result<DMatrix<f64>> {
    let n = x.len();
    if n < 3 {
        return Err(SlvError::AxisTooSmall(n));
    }
    let h = x.step();
    let mut r = DMatrix::zeros(n, n);
    r[(0, 0)] = -1.0 / h;
    r[(0, 1)] = 1.0 / h;
    for i in 1..n - 1 {
        r[(i, i - 1)] = -0.5 / h;
        r[(i, i + 1)] = 0.5 / h;
    }
    r[(n - 1, n - 2)] = -1.0 / h;
    r[(n - 1, n - 1)] = 1.0 / h;
    Ok(r)
}

/// `sqrt(E[V | x_i])` per node, with 0 on degenerate nodes, and the usable mask.
pub fn conditional_vol(density: &DensitySlice, rule: Quadrature) -> (Vec<f64>, Vec<bool>) {
    let m = trapezoid_moments(density, rule);
    m.mass
        .iter()
        .zip(&m.vmean)
        .map(|(&mass, &vmean)| {
            if mass >= DEGENERATE_EPS && vmean >= DEGENERATE_EPS {
                ((vmean / mass).sqrt(), true)
            } else {
                (0.0, false)
            }
        })
        .unzip()
}

/// `y_i sqrt(E[V | x_i])`; degenerate nodes map to 0.
pub fn forward_map_g(y: &[f64], density: &DensitySlice, rule: Quadrature) -> Vec<f64> {
    let (d, _) = conditional_vol(density, rule);
    y.iter().zip(&d).map(|(y, d)| y * d).collect()
}

/// One step's least-squares problem, assembled once and reusable for evaluation.
#[derive(Debug, Clone)]
pub struct TikhonovProblem {
    d: DVector<f64>,
    usable: Vec<bool>,
    sigma: DVector<f64>,
    l_prev: DVector<f64>,
    gamma_inv: DMatrix<f64>,
    alpha1: f64,
    alpha2: f64,
    d0_inv: DMatrix<f64>,
    rs: DMatrix<f64>,
    ds_inv: DMatrix<f64>,
    hessian: DMatrix<f64>,
    rhs: DVector<f64>,
    stacked: DMatrix<f64>,
    stacked_rhs: DVector<f64>,
}

impl TikhonovProblem {
    pub fn new(
        sigma_row: &[f64],
        l_prev: &[f64],
        density: &DensitySlice,
        cfg: &TikhonovConfig,
        rule: Quadrature,
        rs: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = density.x_axis().len();
        if sigma_row.len() != n || l_prev.len() != n || rs.nrows() != n || rs.ncols() != n {
            return Err(SlvError::ShapeMismatch(format!(
                "Tikhonov step expects vectors of length {n}"
            )));
        }
        cfg.validate()?;
        let (d, mut usable) = conditional_vol(density, rule);
        for (u, s) in usable.iter_mut().zip(sigma_row) {
            *u &= s.is_finite();
        }
        if cfg.alpha1 == 0.0 && cfg.alpha2 == 0.0 && usable.iter().any(|u| !u) {
            return Err(SlvError::SingularSystem(
                "degenerate nodes with alpha1 = alpha2 = 0 are undetermined".into(),
            ));
        }
        let d = DVector::from_iterator(
            n,
            d.iter()
                .zip(&usable)
                .map(|(&d, &u)| if u { d } else { 0.0 }),
        );
        let sigma = DVector::from_iterator(
            n,
            sigma_row
                .iter()
                .zip(&usable)
                .map(|(&s, &u)| if u { s } else { 0.0 }),
        );
        let mut gamma_inv = cfg.gamma.inverse(n)?;
        for (k, &u) in usable.iter().enumerate() {
            if !u {
                gamma_inv.row_mut(k).fill(0.0);
                gamma_inv.column_mut(k).fill(0.0);
            }
        }
        let d0_inv = cfg.d0.inverse(n)?;
        let ds_inv = cfg.ds.inverse(n)?;
        let l_prev = DVector::from_column_slice(l_prev);

        let dm = DMatrix::from_diagonal(&d);
        let dg = &dm * &gamma_inv;
        let hessian = &dg * &dm + &d0_inv * cfg.alpha1 + rs.transpose() * &ds_inv * rs * cfg.alpha2;
        let rhs = &dg * &sigma + &d0_inv * &l_prev * cfg.alpha1;

        let ug = cfg.gamma.inverse_factor(n)?;
        let u0 = cfg.d0.inverse_factor(n)? * cfg.alpha1.sqrt();
        let us = cfg.ds.inverse_factor(n)? * cfg.alpha2.sqrt();
        let mut stacked = DMatrix::zeros(3 * n, n);
        stacked.rows_mut(0, n).copy_from(&(&ug * &dm));
        stacked.rows_mut(n, n).copy_from(&u0);
        stacked.rows_mut(2 * n, n).copy_from(&(&us * rs));
        let mut stacked_rhs = DVector::zeros(3 * n);
        stacked_rhs.rows_mut(0, n).copy_from(&(&ug * &sigma));
        stacked_rhs.rows_mut(n, n).copy_from(&(&u0 * &l_prev));
        Ok(TikhonovProblem {
            d,
            usable,
            sigma,
            l_prev,
            gamma_inv,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            d0_inv,
            rs: rs.clone(),
            ds_inv,
            hessian,
            rhs,
            stacked,
            stacked_rhs,
        })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Nodes that carry data weight.
    pub fn usable(&self) -> &[bool] {
        &self.usable
    }

    pub fn degenerate_count(&self) -> usize {
        self.usable.iter().filter(|u| !**u).count()
    }

    /// Normal-equation matrix.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    fn quad(m: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
        r.dot(&(m * r))
    }

    /// The objective split into (misfit, proximity, smoothness) terms, each already weighted.
    pub fn objective_terms(&self, y: &[f64]) -> (f64, f64, f64) {
        let y = DVector::from_column_slice(y);
        let misfit = &self.sigma - self.d.component_mul(&y);
        let prox = &y - &self.l_prev;
        let smooth = &self.rs * &y;
        (
            Self::quad(&self.gamma_inv, &misfit),
            self.alpha1 * Self::quad(&self.d0_inv, &prox),
            self.alpha2 * Self::quad(&self.ds_inv, &smooth),
        )
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        let (a, b, c) = self.objective_terms(y);
        a + b + c
    }

    /// `|R y|^2` in the `Ds^-1` norm.
    pub fn roughness(&self, y: &[f64]) -> f64 {
        Self::quad(&self.ds_inv, &(&self.rs * DVector::from_column_slice(y)))
    }

    /// Analytic gradient `2 (H y - b)`.
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        ((&self.hessian * y - &self.rhs) * 2.0)
            .iter()
            .copied()
            .collect()
    }

    /// Magnitude against which the gradient max-norm is judged: `2 max(|H| |y|, |b|)`.
    pub fn gradient_scale(&self, y: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        let hy = self.hessian.abs() * y.abs();
        2.0 * hy.amax().max(self.rhs.amax())
    }

    /// Ratio of extreme eigenvalues of the normal-equation matrix.
    pub fn condition(&self) -> f64 {
        let eig = SymmetricEigen::new(self.hessian.clone()).eigenvalues;
        let max = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
        let min = eig.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        let qr = self.stacked.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= f64::EPSILON * scale) {
            return Err(SlvError::SingularSystem(
                "regularized least-squares system is rank deficient".into(),
            ));
        }
        let qtb = qr.q().transpose() * &self.stacked_rhs;
        let y = r.solve_upper_triangular(&qtb).ok_or_else(|| {
            SlvError::SingularSystem("regularized least-squares system is singular".into())
        })?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SlvError::SingularSystem(
                "non-finite Tikhonov solution".into(),
            ));
        }
        Ok(y.iter().copied().collect())
    }
}

/// Minimizer of one step's regularized misfit.
pub fn tikhonov_step(
    sigma_loc_row: &[f64],
    l_prev: &[f64],
    density: &DensitySlice,
    cfg: &TikhonovConfig,
    rule: Quadrature,
    rs: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    TikhonovProblem::new(sigma_loc_row, l_prev, density, cfg, rule, rs)?.solve()
}

/// Diagnostics of one calibration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub n: usize,
    pub objective: f64,
    pub condition: f64,
    pub degenerate: usize,
    /// Negative leverage entries raised to 0 before driving the next density step.
    pub negative_leverage: usize,
}

#[derive(Debug, Clone)]
pub struct TikhonovResult {
    pub leverage: Surface,
    pub densities: Vec<DensitySlice>,
    pub steps: Vec<StepReport>,
    pub negative_clips: usize,
}

impl TikhonovResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }

    pub fn condition_report(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.condition).collect()
    }

    /// The previous-step leverage used as the proximity target at step `n`.
    pub fn l_prev(&self, n: usize, cfg: &TikhonovConfig) -> Vec<f64> {
        if n == 0 {
            vec![cfg.l_init_const; self.leverage.x_axis().len()]
        } else {
            self.leverage.row(n - 1).to_vec()
        }
    }
}

pub fn run_proposed(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    sigma_loc: &Surface,
    fp_cfg: &FPConfig,
    tk_cfg: &TikhonovConfig,
) -> Result<TikhonovResult> {
    if !sigma_loc.time_axis().matches(&mesh.time) || !sigma_loc.x_axis().matches(&mesh.x) {
        return Err(SlvError::AxisMismatch(
            "local-vol surface axes differ from the mesh".into(),
        ));
    }
    tk_cfg.validate()?;
    let rs = build_rs(&mesh.x)?;
    let nx = mesh.x.len();
    let mut leverage = Surface::constant(mesh.time, mesh.x, 0.0);
    let mut densities = Vec::with_capacity(mesh.time.len());
    let mut steps = Vec::with_capacity(mesh.time.len());
    let mut negative_clips = 0;
    let mut l_prev = vec![tk_cfg.l_init_const; nx];
    let mut slice = fokker_planck::initial_density(mesh, p, fp_cfg)?;

    for n in 0..mesh.time.len() {
        if n > 0 {
            let drive: Vec<f64> = l_prev.iter().map(|l| l.max(0.0)).collect();
            slice = fokker_planck::advance(mesh, p, rates, fp_cfg, &slice, &drive, &drive)?;
        }
        negative_clips += trapezoid_moments(&slice, fp_cfg.quadrature).clipped;
        let problem = TikhonovProblem::new(
            sigma_loc.row(n),
            &l_prev,
            &slice,
            tk_cfg,
            fp_cfg.quadrature,
            &rs,
        )?;
        let y = problem.solve()?;
        steps.push(StepReport {
            n,
            objective: problem.objective(&y),
            condition: problem.condition(),
            degenerate: problem.degenerate_count(),
            negative_leverage: y.iter().filter(|&&v| v < 0.0).count(),
        });
        leverage.row_mut(n).copy_from_slice(&y);
        densities.push(slice.clone());
        l_prev = y;
    }
    Ok(TikhonovResult {
        leverage,
        densities,
        steps,
        negative_clips,
    })
}
