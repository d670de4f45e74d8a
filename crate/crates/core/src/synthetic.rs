//! Synthetic calibration experiment: a known leverage surface drives the
//! forward equation on a fine mesh, the implied local volatility is perturbed
//! and sampled onto the coarse calibration mesh.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchmark::DEGENERATE_EPS;
use crate::error::{Result, SlvError};
use crate::fokker_planck::{self, FPConfig, LeverageMode};
use crate::grids::{restrict_surface, trapezoid_moments, MeshSpec, Surface, MESH_TOL};
use crate::params::{RatesCurve, SVParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Relative noise amplitude.
    pub noise_level: f64,
    pub seed: u64,
    pub fine: MeshSpec,
    pub coarse: MeshSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            noise_level: 0.01,
            seed: 2024,
            fine: MeshSpec::reference_fine(),
            coarse: MeshSpec::reference_coarse(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(SlvError::InvalidParameter(
                "noise_level must be finite and >= 0".into(),
            ));
        }
        let probe = Surface::constant(self.fine.time, self.fine.x, 0.0);
        restrict_surface(&probe, (self.coarse.time, self.coarse.x)).map(|_| ())
    }
}

/// `1.1^(4 cos(2 pi x t))`.
pub fn ground_truth_l(t: f64, x: f64) -> f64 {
    1.1f64.powf(4.0 * (2.0 * std::f64::consts::PI * x * t).cos())
}

/// Local volatility implied by a leverage surface, plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct ImpliedLocalVol {
    /// `L sqrt(E[V | x])`; NaN where the density carries no usable mass.
    pub sigma: Surface,
    /// Total density mass per time slice.
    pub mass: Vec<f64>,
    pub negative_clips: usize,
}

/// Solves the forward equation under `leverage` and returns `L sqrt(E[V | x])`.
pub fn implied_local_vol(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    leverage: &Surface,
    cfg: &FPConfig,
    mode: LeverageMode,
) -> Result<ImpliedLocalVol> {
    let mut sigma = Surface::constant(mesh.time, mesh.x, f64::NAN);
    let mut mass = Vec::with_capacity(mesh.time.len());
    let mut negative_clips = 0;
    fokker_planck::solve_fp_with(mesh, p, rates, leverage, cfg, mode, |slice| {
        let n = slice.time_index();
        let m = trapezoid_moments(slice, cfg.quadrature);
        negative_clips += m.clipped;
        mass.push(slice.total_mass());
        let l = leverage.row(n);
        let row = sigma.row_mut(n);
        for i in 0..row.len() {
            if m.mass[i] >= DEGENERATE_EPS && m.vmean[i] >= DEGENERATE_EPS {
                row[i] = l[i] * (m.vmean[i] / m.mass[i]).sqrt();
            }
        }
        Ok(())
    })?;
    Ok(ImpliedLocalVol {
        sigma,
        mass,
        negative_clips,
    })
}

/// Fine-mesh local volatility under the ground-truth leverage.
pub fn generate_sigma_loc(
    spec: &SyntheticSpec,
    p: &SVParams,
    rates: &RatesCurve,
    fp_cfg: &FPConfig,
) -> Result<ImpliedLocalVol> {
    let truth = Surface::from_fn(spec.fine.time, spec.fine.x, ground_truth_l);
    implied_local_vol(
        &spec.fine,
        p,
        rates,
        &truth,
        fp_cfg,
        LeverageMode::BothTimes,
    )
}

/// Multiplies every value by `1 + level * eta` and clips at zero.
///
/// `eta` is drawn from ChaCha8 seeded with `seed`, one draw per node in
/// row-major order (time, then x), including unavailable nodes.
pub fn add_noise(surface: &Surface, level: f64, seed: u64) -> Surface {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    surface.map(|v| {
        let eta: f64 = StandardNormal.sample(&mut rng);
        if level == 0.0 || v.is_nan() {
            v
        } else {
            (v * (1.0 + level * eta)).max(0.0)
        }
    })
}

/// Frobenius norm of the difference over the x-columns in `[x_lo, x_hi]`,
/// relative to the norm of `truth`, skipping nodes unavailable in either surface.
pub fn relative_residual(
    recovered: &Surface,
    truth: &Surface,
    x_lo: f64,
    x_hi: f64,
) -> Result<f64> {
    if !recovered.same_axes(truth) {
        return Err(SlvError::AxisMismatch(
            "residual surfaces have different axes".into(),
        ));
    }
    let x = truth.x_axis();
    let cols: Vec<usize> = (0..x.len())
        .filter(|&i| x.node(i) >= x_lo - MESH_TOL && x.node(i) <= x_hi + MESH_TOL)
        .collect();
    if cols.is_empty() {
        return Err(SlvError::EmptyRegion { lo: x_lo, hi: x_hi });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..truth.time_axis().len() {
        for &i in &cols {
            let (a, b) = (recovered.get(n, i), truth.get(n, i));
            if a.is_nan() || b.is_nan() {
                continue;
            }
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    Ok((num / den).sqrt())
}

/// Everything the synthetic experiment feeds to the calibrators.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub sigma_fine: Surface,
    pub sigma_coarse_clean: Surface,
    pub sigma_coarse_noisy: Surface,
    pub leverage_truth: Surface,
    /// Total density mass per fine time slice.
    pub fine_mass: Vec<f64>,
    pub negative_clips: usize,
}

pub fn generate(
    spec: &SyntheticSpec,
    p: &SVParams,
    rates: &RatesCurve,
    fp_cfg: &FPConfig,
) -> Result<SyntheticData> {
    spec.validate()?;
    let fine = generate_sigma_loc(spec, p, rates, fp_cfg)?;
    let axes = (spec.coarse.time, spec.coarse.x);
    let noisy_fine = add_noise(&fine.sigma, spec.noise_level, spec.seed);
    Ok(SyntheticData {
        sigma_coarse_clean: restrict_surface(&fine.sigma, axes)?,
        sigma_coarse_noisy: restrict_surface(&noisy_fine, axes)?,
        leverage_truth: Surface::from_fn(spec.coarse.time, spec.coarse.x, ground_truth_l),
        sigma_fine: fine.sigma,
        fine_mass: fine.mass,
        negative_clips: fine.negative_clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::build_axis;

    #[test]
    fn ground_truth_examples() {
        assert!((ground_truth_l(0.0, 2.3) - 1.4641).abs() < 1e-12);
        assert!((ground_truth_l(0.5, 1.0) - 1.1f64.powi(-4)).abs() < 1e-12);
        assert!((ground_truth_l(0.5, 1.0) - 0.683013).abs() < 1e-6);
        assert!((ground_truth_l(0.25, 1.0) - 1.0).abs() < 1e-12);
    }

    fn small_surface() -> Surface {
        let t = build_axis(0.0, 1.0, 0.1).unwrap();
        let x = build_axis(-1.0, 1.0, 0.5).unwrap();
        Surface::from_fn(t, x, |t, x| 0.2 + 0.1 * t + 0.05 * x)
    }

    #[test]
    fn noise_is_seeded() {
        let s = small_surface();
        assert_eq!(add_noise(&s, 0.0, 7), s);
        assert_eq!(add_noise(&s, 0.01, 7), add_noise(&s, 0.01, 7));
        assert_ne!(add_noise(&s, 0.01, 7), add_noise(&s, 0.01, 8));
    }

    #[test]
    fn noise_preserves_unavailable_nodes() {
        let mut s = small_surface();
        s.set(3, 2, f64::NAN);
        let out = add_noise(&s, 0.5, 1);
        assert!(out.get(3, 2).is_nan());
        assert!(out
            .values()
            .iter()
            .filter(|v| !v.is_nan())
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn residual_examples() {
        let s = small_surface();
        assert_eq!(relative_residual(&s, &s, -1.0, 1.0).unwrap(), 0.0);
        let scaled = s.map(|v| 1.01 * v);
        assert!((relative_residual(&scaled, &s, -1.0, 1.0).unwrap() - 0.01).abs() < 1e-14);
        assert!(matches!(
            relative_residual(&s, &s, 0.1, 0.2),
            Err(SlvError::EmptyRegion { .. })
        ));
    }

    #[test]
    fn residual_skips_unavailable() {
        let s = small_surface();
        let mut r = s.map(|v| 1.02 * v);
        r.set(0, 0, f64::NAN);
        assert!((relative_residual(&r, &s, -1.0, 1.0).unwrap() - 0.02).abs() < 1e-14);
    }

    #[test]
    fn non_nested_spec_rejected() {
        let mut spec = SyntheticSpec::default();
        spec.coarse.x = build_axis(-3.0, 3.0, 0.07).unwrap_or(spec.coarse.x);
        spec.coarse.time = build_axis(0.0, 1.0, 0.0625).unwrap();
        assert!(matches!(spec.validate(), Err(SlvError::NonNestedMesh(_))));
    }
}
