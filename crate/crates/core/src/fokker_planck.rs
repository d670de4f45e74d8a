//! Forward Kolmogorov equation for the joint law of (log-moneyness, variance).
//!
//! The solver works in `x = ln(S / S0)` with the density `q(t, x, v) = S p(t, S, v)`,
//! which satisfies
//!
//! ```text
//! q_t = -d_x[(r - d - v L^2 / 2) q] - d_v[kappa (m - v) q]
//!       + 1/2 d_xx[v L^2 q] + 1/2 d_vv[xi^2 v q] + d_xv[rho xi v L q]
//! ```
//!
//! Space is discretized as a vertex-centred finite-volume scheme: node `k` owns
//! the cell `[x_k - dx/2, x_k + dx/2]` clipped to the domain, so boundary cells
//! have half width. Face fluxes are
//!
//! ```text
//! F_{k+1/2} = (a_k q_k + a_{k+1} q_{k+1}) / 2 - (b_{k+1} q_{k+1} - b_k q_k) / h
//! ```
//!
//! for drift `a` and half-diffusion `b`, and the flux through the outer faces is
//! zero. On interior nodes this reproduces the central product stencils
//! `delta_S^S`, `delta_SS^{V L^2 S^2}`, `delta_V^{m-V}`, `delta_VV^V` exactly;
//! on boundary nodes it is the ghost-free zero-flux closure. The mixed term is
//! split evenly between x-faces and v-faces, which gives the four-corner
//! `delta_SV` stencil away from the boundary. Faces touching a boundary node
//! carry no mixed flux: `rho xi v L q` vanishes on `v = 0`, and a one-sided
//! closure there drives the boundary row strongly negative. Because every operator is a flux difference, the trapezoid mass
//! `sum_k w_k q_k dx dv` is conserved to round-off by each operator and by
//! every implicit solve.
//!
//! Time stepping is the Douglas scheme: `A0` (mixed) is explicit, `A1` (x) and
//! `A2` (v) are each treated implicitly in one tridiagonal stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlvError};
use crate::grids::{Axis, DensitySlice, MeshSpec, Quadrature, Surface};
use crate::params::{RatesCurve, SVParams};
use crate::tridiag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FPConfig {
    /// Implicitness of the directional stages.
    pub theta: f64,
    /// Variance of the initial Gaussian in log-moneyness.
    pub sigma_s2: f64,
    /// Variance of the initial Gaussian in the variance coordinate.
    pub sigma_v2: f64,
    /// Rule for the per-node variance integrals.
    pub quadrature: Quadrature,
}

impl Default for FPConfig {
    fn default() -> Self {
        FPConfig {
            theta: 0.5,
            sigma_s2: 1e-3,
            sigma_v2: 1e-3,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

impl FPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(SlvError::InvalidParameter(format!(
                "theta {} not in [0, 1]",
                self.theta
            )));
        }
        if !(self.sigma_s2 > 0.0 && self.sigma_v2 > 0.0) {
            return Err(SlvError::InvalidParameter(
                "initial variances must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Which leverage rows feed the two halves of a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeverageMode {
    /// `L(t_n)` for the whole step `[t_n, t_{n+1}]`.
    PiecewiseConstant,
    /// `L(t_n)` in the explicit parts, `L(t_{n+1})` in the implicit parts.
    BothTimes,
}

/// Tridiagonal bands for a family of lines of equal length, stored line after line.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub len: usize,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bands {
    fn with_capacity(len: usize, lines: usize) -> Self {
        let cap = len * lines;
        Bands {
            len,
            lower: Vec::with_capacity(cap),
            diag: Vec::with_capacity(cap),
            upper: Vec::with_capacity(cap),
        }
    }

    pub fn lines(&self) -> usize {
        self.diag.len() / self.len
    }

    fn line(&self, k: usize) -> (&[f64], &[f64], &[f64]) {
        let r = k * self.len..(k + 1) * self.len;
        (
            &self.lower[r.clone()],
            &self.diag[r.clone()],
            &self.upper[r],
        )
    }

    /// Appends the flux-form operator for drift `adv` and half-diffusion `diff`
    /// on a line with spacing `h`, scaled by `dt`.
    fn push_flux_line(&mut self, adv: &[f64], diff: &[f64], h: f64, dt: f64) {
        let n = adv.len();
        debug_assert_eq!(n, self.len);
        // alpha_k, beta_k: coefficients of q_k, q_{k+1} in the flux through face k+1/2
        let alpha = |k: usize| 0.5 * adv[k] + diff[k] / h;
        let beta = |k: usize| 0.5 * adv[k + 1] - diff[k + 1] / h;
        for k in 0..n {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            let s = dt / (w * h);
            let (mut lo, mut di, mut up) = (0.0, 0.0, 0.0);
            if k > 0 {
                lo = s * alpha(k - 1);
                di += s * beta(k - 1);
            }
            if k + 1 < n {
                di -= s * alpha(k);
                up = -s * beta(k);
            }
            self.lower.push(lo);
            self.diag.push(di);
            self.upper.push(up);
        }
    }
}

/// Time-step operators `A0`, `A1`, `A2`, already multiplied by `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOperators {
    x: Axis,
    v: Axis,
    dt: f64,
    /// One line per variance node, each running along x.
    pub a1: Bands,
    /// A single line along v; the v-operator does not depend on x.
    pub a2: Bands,
    /// `dt * rho * xi * v_j * L_i` per node; `None` when `rho == 0`.
    pub mixed: Option<Vec<f64>>,
}

/// Builds the step operators for leverage row `l_row` at time `t`.
pub fn assemble_operators(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    l_row: &[f64],
    t: f64,
) -> Result<StepOperators> {
    let (nx, nv) = (mesh.x.len(), mesh.v.len());
    if l_row.len() != nx {
        return Err(SlvError::ShapeMismatch(format!(
            "leverage row has {} entries, x-axis has {nx}",
            l_row.len()
        )));
    }
    if let Some((index, &value)) = l_row
        .iter()
        .enumerate()
        .find(|(_, l)| !(**l >= 0.0) || !l.is_finite())
    {
        return Err(SlvError::NegativeLeverage { index, value });
    }
    let dt = mesh.time.step();
    let net = rates.net_at(t);
    let l2: Vec<f64> = l_row.iter().map(|l| l * l).collect();

    let mut a1 = Bands::with_capacity(nx, nv);
    let mut adv = vec![0.0; nx];
    let mut diff = vec![0.0; nx];
    for j in 0..nv {
        let vj = mesh.v.node(j);
        for i in 0..nx {
            diff[i] = 0.5 * vj * l2[i];
            adv[i] = net - diff[i];
        }
        a1.push_flux_line(&adv, &diff, mesh.x.step(), dt);
    }

    let mut a2 = Bands::with_capacity(nv, 1);
    let vadv: Vec<f64> = (0..nv).map(|j| p.kappa * (p.m - mesh.v.node(j))).collect();
    let vdiff: Vec<f64> = (0..nv)
        .map(|j| 0.5 * p.xi * p.xi * mesh.v.node(j))
        .collect();
    a2.push_flux_line(&vadv, &vdiff, mesh.v.step(), dt);

    let mixed = (p.rho != 0.0).then(|| {
        let scale = dt * p.rho * p.xi;
        let mut c = Vec::with_capacity(nx * nv);
        for &l in l_row {
            for j in 0..nv {
                c.push(scale * mesh.v.node(j) * l);
            }
        }
        c
    });

    Ok(StepOperators {
        x: mesh.x,
        v: mesh.v,
        dt,
        a1,
        a2,
        mixed,
    })
}

impl StepOperators {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.v.len())
    }

    /// `out += A1 q`.
    pub fn apply_a1(&self, q: &[f64], out: &mut [f64]) {
        let (nx, nv) = self.dims();
        for j in 0..nv {
            let (lo, di, up) = self.a1.line(j);
            for i in 0..nx {
                let mut y = di[i] * q[i * nv + j];
                if i > 0 {
                    y += lo[i] * q[(i - 1) * nv + j];
                }
                if i + 1 < nx {
                    y += up[i] * q[(i + 1) * nv + j];
                }
                out[i * nv + j] += y;
            }
        }
    }

    /// `out += A2 q`.
    pub fn apply_a2(&self, q: &[f64], out: &mut [f64]) {
        let (nx, nv) = self.dims();
        let (lo, di, up) = self.a2.line(0);
        for i in 0..nx {
            let row = &q[i * nv..(i + 1) * nv];
            let dst = &mut out[i * nv..(i + 1) * nv];
            for j in 0..nv {
                let mut y = di[j] * row[j];
                if j > 0 {
                    y += lo[j] * row[j - 1];
                }
                if j + 1 < nv {
                    y += up[j] * row[j + 1];
                }
                dst[j] += y;
            }
        }
    }

    /// `out += A0 q` (mixed derivative, flux form).
    pub fn apply_a0(&self, q: &[f64], out: &mut [f64]) {
        let Some(c) = &self.mixed else { return };
        let (nx, nv) = self.dims();
        let (dx, dv) = (self.x.step(), self.v.step());
        let u: Vec<f64> = c.iter().zip(q).map(|(c, q)| c * q).collect();
        let at = |i: usize, j: usize| u[i * nv + j];

        // Mixed fluxes live only on faces between two interior nodes and on
        // interior lines; boundary nodes exchange no mixed flux.
        // x-faces: G = -1/2 d_v(u) averaged onto face i+1/2
        for i in 1..nx - 2 {
            let ubar = |j: usize| 0.5 * (at(i, j) + at(i + 1, j));
            for j in 1..nv - 1 {
                let dudv = (ubar(j + 1) - ubar(j - 1)) / (2.0 * dv);
                let g = -0.5 * dudv;
                // flux leaves node i, enters node i+1
                out[i * nv + j] -= g / (self.x.trapezoid_weight(i) * dx);
                out[(i + 1) * nv + j] += g / (self.x.trapezoid_weight(i + 1) * dx);
            }
        }
        // v-faces: G = -1/2 d_x(u) averaged onto face j+1/2
        for j in 1..nv - 2 {
            let ubar = |i: usize| 0.5 * (at(i, j) + at(i, j + 1));
            for i in 1..nx - 1 {
                let dudx = (ubar(i + 1) - ubar(i - 1)) / (2.0 * dx);
                let g = -0.5 * dudx;
                out[i * nv + j] -= g / (self.v.trapezoid_weight(j) * dv);
                out[i * nv + j + 1] += g / (self.v.trapezoid_weight(j + 1) * dv);
            }
        }
    }

    /// `A0 q + A1 q + A2 q`.
    pub fn apply_all(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; q.len()];
        self.apply_a0(q, &mut out);
        self.apply_a1(q, &mut out);
        self.apply_a2(q, &mut out);
        out
    }
}

/// Peak of the unnormalized initial Gaussian, `1 / (2 pi sigma_S sigma_V)`.
pub fn gaussian_peak(cfg: &FPConfig) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * cfg.sigma_s2.sqrt() * cfg.sigma_v2.sqrt())
}

/// Smoothed point mass at `(x = 0, v = v0)`, renormalized to unit trapezoid mass.
pub fn initial_density(mesh: &MeshSpec, p: &SVParams, cfg: &FPConfig) -> Result<DensitySlice> {
    cfg.validate()?;
    let (x0, v0) = (0.0, p.v0);
    let inside = |a: &Axis, c: f64| c > a.min() && c < a.max();
    if !inside(&mesh.x, x0) || !inside(&mesh.v, v0) {
        return Err(SlvError::CenterOutsideMesh { x: x0, v: v0 });
    }
    let peak = gaussian_peak(cfg);
    let mut values = Vec::with_capacity(mesh.x.len() * mesh.v.len());
    for i in 0..mesh.x.len() {
        let dx = mesh.x.node(i) - x0;
        for j in 0..mesh.v.len() {
            let dv = mesh.v.node(j) - v0;
            values.push(
                peak * (-dx * dx / (2.0 * cfg.sigma_s2) - dv * dv / (2.0 * cfg.sigma_v2)).exp(),
            );
        }
    }
    let mut slice = DensitySlice::new(mesh.x, mesh.v, values, 0)?;
    let mass = slice.total_mass();
    slice.values_mut().iter_mut().for_each(|q| *q /= mass);
    Ok(slice)
}

/// One Douglas step from `prev`.
///
/// Stage 1 solves `(I - theta A1') W = [I + A0 + (1 - theta) A1 + A2] p` along x,
/// stage 2 solves `(I - theta A2') p_next = W - theta A2' p` along v, where the
/// primed operators come from `implicit`.
pub fn dr_step(
    prev: &DensitySlice,
    explicit: &StepOperators,
    implicit: &StepOperators,
    cfg: &FPConfig,
) -> Result<DensitySlice> {
    let (nx, nv) = explicit.dims();
    if prev.x_axis().len() != nx || prev.v_axis().len() != nv || implicit.dims() != (nx, nv) {
        return Err(SlvError::ShapeMismatch(
            "operators and density live on different meshes".into(),
        ));
    }
    let theta = cfg.theta;
    let p = prev.values();

    // rhs1 = p + A0 p + (1 - theta) A1 p + A2 p
    let mut a1p = vec![0.0; p.len()];
    explicit.apply_a1(p, &mut a1p);
    let mut rhs = p.to_vec();
    explicit.apply_a0(p, &mut rhs);
    explicit.apply_a2(p, &mut rhs);
    for (r, a) in rhs.iter_mut().zip(&a1p) {
        *r += (1.0 - theta) * a;
    }

    // stage 1: lines along x, one per variance node
    let columns: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|j| {
            let (lo, di, up) = implicit.a1.line(j);
            let lower: Vec<f64> = lo.iter().map(|a| -theta * a).collect();
            let diag: Vec<f64> = di.iter().map(|a| 1.0 - theta * a).collect();
            let upper: Vec<f64> = up.iter().map(|a| -theta * a).collect();
            let mut col: Vec<f64> = (0..nx).map(|i| rhs[i * nv + j]).collect();
            let mut scratch = vec![0.0; nx];
            tridiag::solve_in_place(&lower, &diag, &upper, &mut col, &mut scratch)?;
            Ok(col)
        })
        .collect::<Result<_>>()?;

    // stage 2 rhs: W - theta A2' p
    let mut a2p = vec![0.0; p.len()];
    implicit.apply_a2(p, &mut a2p);
    let mut next = vec![0.0; p.len()];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..nx {
            next[i * nv + j] = col[i] - theta * a2p[i * nv + j];
        }
    }

    let (lo, di, up) = implicit.a2.line(0);
    let lower: Vec<f64> = lo.iter().map(|a| -theta * a).collect();
    let diag: Vec<f64> = di.iter().map(|a| 1.0 - theta * a).collect();
    let upper: Vec<f64> = up.iter().map(|a| -theta * a).collect();
    next.par_chunks_mut(nv).try_for_each(|row| {
        let mut scratch = vec![0.0; nv];
        tridiag::solve_in_place(&lower, &diag, &upper, row, &mut scratch)
    })?;

    DensitySlice::new(*prev.x_axis(), *prev.v_axis(), next, prev.time_index() + 1)
}

/// Advances `prev` (at `t_n`) to `t_{n+1}` with explicit row `l_now` and implicit row `l_next`.
pub fn advance(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    cfg: &FPConfig,
    prev: &DensitySlice,
    l_now: &[f64],
    l_next: &[f64],
) -> Result<DensitySlice> {
    let n = prev.time_index();
    let t0 = mesh.time.node(n);
    let t1 = mesh.time.node(n + 1);
    let explicit = assemble_operators(mesh, p, rates, l_now, t0)?;
    if l_now == l_next && rates.net_at(t0) == rates.net_at(t1) {
        return dr_step(prev, &explicit, &explicit, cfg);
    }
    let implicit = assemble_operators(mesh, p, rates, l_next, t1)?;
    dr_step(prev, &explicit, &implicit, cfg)
}

/// Runs the forward equation over the whole time axis, handing each slice to `visit`.
pub fn solve_fp_with(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    leverage: &Surface,
    cfg: &FPConfig,
    mode: LeverageMode,
    mut visit: impl FnMut(&DensitySlice) -> Result<()>,
) -> Result<()> {
    if !leverage.time_axis().matches(&mesh.time) || !leverage.x_axis().matches(&mesh.x) {
        return Err(SlvError::AxisMismatch(
            "leverage surface axes differ from the mesh".into(),
        ));
    }
    let mut slice = initial_density(mesh, p, cfg)?;
    visit(&slice)?;
    for n in 0..mesh.time.cells() {
        let l_now = leverage.row(n);
        let l_next = match mode {
            LeverageMode::PiecewiseConstant => l_now,
            LeverageMode::BothTimes => leverage.row(n + 1),
        };
        slice = advance(mesh, p, rates, cfg, &slice, l_now, l_next)?;
        visit(&slice)?;
    }
    Ok(())
}

/// All slices `n = 0..=N_t`; slice 0 is [`initial_density`].
pub fn solve_fp(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    leverage: &Surface,
    cfg: &FPConfig,
    mode: LeverageMode,
) -> Result<Vec<DensitySlice>> {
    let mut out = Vec::with_capacity(mesh.time.len());
    solve_fp_with(mesh, p, rates, leverage, cfg, mode, |s| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::build_axis;

    fn small_mesh() -> MeshSpec {
        MeshSpec::new(
            build_axis(0.0, 0.1, 0.025).unwrap(),
            build_axis(-0.5, 0.5, 0.1).unwrap(),
            build_axis(0.0, 0.2, 0.02).unwrap(),
        )
    }

    fn weights(mesh: &MeshSpec) -> Vec<f64> {
        let nv = mesh.v.len();
        (0..mesh.x.len() * nv)
            .map(|k| mesh.x.trapezoid_weight(k / nv) * mesh.v.trapezoid_weight(k % nv))
            .collect()
    }

    #[test]
    fn weighted_column_sums_vanish() {
        let mesh = small_mesh();
        let p = SVParams {
            rho: -0.7,
            ..SVParams::synthetic_reference()
        };
        let rates = RatesCurve::constant(0.03, 0.01);
        let l: Vec<f64> = (0..mesh.x.len()).map(|i| 0.8 + 0.05 * i as f64).collect();
        let ops = assemble_operators(&mesh, &p, &rates, &l, 0.0).unwrap();
        let w = weights(&mesh);
        let size = w.len();
        let mut scale = 0.0f64;
        let mut worst = 0.0f64;
        for k in 0..size {
            let mut e = vec![0.0; size];
            e[k] = 1.0;
            let col = ops.apply_all(&e);
            let sum: f64 = col.iter().zip(&w).map(|(c, w)| c * w).sum();
            scale = col.iter().fold(scale, |s, c| s.max(c.abs()));
            worst = worst.max(sum.abs());
        }
        assert!(worst <= 1e-10 * scale, "worst {worst:e} scale {scale:e}");
    }

    #[test]
    fn zero_rho_has_no_mixed_operator() {
        let mesh = small_mesh();
        let p = SVParams {
            rho: 0.0,
            ..SVParams::synthetic_reference()
        };
        let ops = assemble_operators(
            &mesh,
            &p,
            &RatesCurve::zero(),
            &vec![1.0; mesh.x.len()],
            0.0,
        )
        .unwrap();
        assert!(ops.mixed.is_none());
        let q = vec![1.0; mesh.x.len() * mesh.v.len()];
        let mut out = vec![0.0; q.len()];
        ops.apply_a0(&q, &mut out);
        assert!(out.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn interior_mixed_stencil_is_four_corner() {
        let mesh = small_mesh();
        let p = SVParams {
            rho: 0.5,
            ..SVParams::synthetic_reference()
        };
        let l: Vec<f64> = (0..mesh.x.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let ops = assemble_operators(&mesh, &p, &RatesCurve::zero(), &l, 0.0).unwrap();
        let (nx, nv) = (mesh.x.len(), mesh.v.len());
        let q: Vec<f64> = (0..nx * nv).map(|k| ((k * 37) % 11) as f64 + 1.0).collect();
        let mut out = vec![0.0; q.len()];
        ops.apply_a0(&q, &mut out);
        let c = ops.mixed.as_ref().unwrap();
        let u = |i: usize, j: usize| c[i * nv + j] * q[i * nv + j];
        let (dx, dv) = (mesh.x.step(), mesh.v.step());
        for i in 2..nx - 2 {
            for j in 2..nv - 2 {
                let expect =
                    (u(i + 1, j + 1) + u(i - 1, j - 1) - u(i - 1, j + 1) - u(i + 1, j - 1))
                        / (4.0 * dx * dv);
                assert!((out[i * nv + j] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn interior_directional_stencils_match_central_products() {
        let mesh = small_mesh();
        let p = SVParams::synthetic_reference();
        let rates = RatesCurve::constant(0.05, 0.02);
        let l: Vec<f64> = (0..mesh.x.len())
            .map(|i| 1.0 + 0.1 * (i as f64).sin())
            .collect();
        let ops = assemble_operators(&mesh, &p, &rates, &l, 0.0).unwrap();
        let (nx, nv) = (mesh.x.len(), mesh.v.len());
        let q: Vec<f64> = (0..nx * nv).map(|k| ((k * 13) % 7) as f64 + 0.5).collect();
        let mut a1 = vec![0.0; q.len()];
        ops.apply_a1(&q, &mut a1);
        let (dx, dt) = (mesh.x.step(), mesh.time.step());
        for j in 1..nv - 1 {
            let v = mesh.v.node(j);
            let g = |i: usize| 0.5 * v * l[i] * l[i] * q[i * nv + j];
            let a = |i: usize| (0.03 - 0.5 * v * l[i] * l[i]) * q[i * nv + j];
            for i in 1..nx - 1 {
                let expect = dt
                    * ((g(i + 1) - 2.0 * g(i) + g(i - 1)) / (dx * dx)
                        - (a(i + 1) - a(i - 1)) / (2.0 * dx));
                assert!((a1[i * nv + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_leverage_rejected() {
        let mesh = small_mesh();
        let mut l = vec![1.0; mesh.x.len()];
        l[3] = -0.1;
        let err = assemble_operators(
            &mesh,
            &SVParams::synthetic_reference(),
            &RatesCurve::zero(),
            &l,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, SlvError::NegativeLeverage { index: 3, .. }));
    }

    #[test]
    fn pure_advection_conserves_mass() {
        let mesh = small_mesh();
        // L = 0 kills x-diffusion and mixed term; xi tiny leaves mean reversion only.
        let p = SVParams {
            xi: 1e-300,
            ..SVParams::synthetic_reference()
        };
        let ops = assemble_operators(
            &mesh,
            &p,
            &RatesCurve::zero(),
            &vec![0.0; mesh.x.len()],
            0.0,
        )
        .unwrap();
        let q = vec![1.0; mesh.x.len() * mesh.v.len()];
        let out = ops.apply_all(&q);
        let w = weights(&mesh);
        let dm: f64 =
            out.iter().zip(&w).map(|(o, w)| o * w).sum::<f64>() * mesh.x.step() * mesh.v.step();
        assert!(dm.abs() < 1e-12);
    }

    #[test]
    fn identity_step_when_operators_vanish() {
        let mesh = small_mesh();
        let p = SVParams::synthetic_reference();
        let cfg = FPConfig::default();
        let prev = initial_density(&mesh, &p, &cfg).unwrap();
        let mut ops = assemble_operators(
            &mesh,
            &p,
            &RatesCurve::zero(),
            &vec![1.0; mesh.x.len()],
            0.0,
        )
        .unwrap();
        for b in [&mut ops.a1, &mut ops.a2] {
            b.lower
                .iter_mut()
                .chain(b.diag.iter_mut())
                .chain(b.upper.iter_mut())
                .for_each(|a| *a = 0.0);
        }
        ops.mixed = None;
        let next = dr_step(&prev, &ops, &ops, &cfg).unwrap();
        assert_eq!(next.values(), prev.values());
        assert_eq!(next.time_index(), 1);
    }

    #[test]
    fn initial_density_peak_and_mass() {
        let cfg = FPConfig::default();
        assert!((gaussian_peak(&cfg) - 1e3 / (2.0 * std::f64::consts::PI)).abs() < 1e-9);
        let mesh = MeshSpec::reference_coarse();
        let s = initial_density(&mesh, &SVParams::synthetic_reference(), &cfg).unwrap();
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn initial_density_outside_mesh() {
        let mesh = small_mesh();
        let p = SVParams {
            v0: 0.5,
            ..SVParams::synthetic_reference()
        };
        assert!(matches!(
            initial_density(&mesh, &p, &FPConfig::default()),
            Err(SlvError::CenterOutsideMesh { .. })
        ));
    }

    #[test]
    fn first_slice_is_initial_density() {
        let mesh = MeshSpec::new(
            build_axis(0.0, 0.025, 0.025).unwrap(),
            build_axis(-0.5, 0.5, 0.1).unwrap(),
            build_axis(0.0, 0.2, 0.02).unwrap(),
        );
        // one cell in time -> two slices; zero cells is not representable by a valid axis
        let l = Surface::constant(mesh.time, mesh.x, 1.0);
        let out = solve_fp(
            &mesh,
            &SVParams::synthetic_reference(),
            &RatesCurve::zero(),
            &l,
            &FPConfig::default(),
            LeverageMode::BothTimes,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[0],
            initial_density(
                &mesh,
                &SVParams::synthetic_reference(),
                &FPConfig::default()
            )
            .unwrap()
        );
    }

    #[test]
    fn modes_agree_for_time_constant_leverage() {
        let mesh = small_mesh();
        let p = SVParams::synthetic_reference();
        let l = Surface::from_fn(mesh.time, mesh.x, |_, x| 1.0 + 0.3 * x);
        let cfg = FPConfig::default();
        let a = solve_fp(
            &mesh,
            &p,
            &RatesCurve::zero(),
            &l,
            &cfg,
            LeverageMode::PiecewiseConstant,
        )
        .unwrap();
        let b = solve_fp(
            &mesh,
            &p,
            &RatesCurve::zero(),
            &l,
            &cfg,
            LeverageMode::BothTimes,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_is_linear() {
        let mesh = small_mesh();
        let p = SVParams::synthetic_reference();
        let cfg = FPConfig::default();
        let ops = assemble_operators(
            &mesh,
            &p,
            &RatesCurve::constant(0.01, 0.0),
            &vec![1.2; mesh.x.len()],
            0.0,
        )
        .unwrap();
        let size = mesh.x.len() * mesh.v.len();
        let p1: Vec<f64> = (0..size).map(|k| ((k * 7) % 5) as f64).collect();
        let p2: Vec<f64> = (0..size).map(|k| ((k * 3) % 4) as f64 * 0.5).collect();
        let sum: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        let s = |v: Vec<f64>| DensitySlice::new(mesh.x, mesh.v, v, 0).unwrap();
        let r1 = dr_step(&s(p1), &ops, &ops, &cfg).unwrap();
        let r2 = dr_step(&s(p2), &ops, &ops, &cfg).unwrap();
        let rs = dr_step(&s(sum), &ops, &ops, &cfg).unwrap();
        for k in 0..size {
            let e = r1.values()[k] + r2.values()[k];
            assert!((rs.values()[k] - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }
}
