//! Fixed-point leverage calibration: `L = sigma_loc / sqrt(E[V | x])` on each
//! new density slice, holding `L` constant over every time step.

use serde::Serialize;

use crate::error::{Result, SlvError};
use crate::fokker_planck::{self, FPConfig};
use crate::grids::{trapezoid_moments, DensitySlice, MeshSpec, Quadrature, Surface};
use crate::params::{RatesCurve, SVParams};

/// Absolute threshold on the per-node mass and variance integrals below which a node is unusable.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// A node whose leverage was copied from a neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DegenerateNode {
    /// Time index.
    pub n: usize,
    /// x index.
    pub i: usize,
    /// x index the value was copied from.
    pub fill_source: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub leverage: Surface,
    pub densities: Vec<DensitySlice>,
    pub degenerate_nodes: Vec<DegenerateNode>,
    /// Density entries clipped at read-out, summed over all slices.
    pub negative_clips: usize,
}

/// Nearest usable index to `i`; ties go to the node closer to the middle of the axis.
fn nearest_usable(usable: &[bool], i: usize) -> Option<usize> {
    let n = usable.len();
    let mid2 = n - 1; // twice the middle index
    for d in 1..n {
        let below = i.checked_sub(d).filter(|&k| usable[k]);
        let above = Some(i + d).filter(|&k| k < n && usable[k]);
        match (below, above) {
            (Some(b), Some(a)) => {
                let dist = |k: usize| (2 * k).abs_diff(mid2);
                return Some(if dist(b) <= dist(a) { b } else { a });
            }
            (Some(k), None) | (None, Some(k)) => return Some(k),
            (None, None) => {}
        }
    }
    None
}

/// `sigma_i * sqrt(mass_i / vmean_i)` with neighbour fill on degenerate nodes.
///
/// Returns the row, the degenerate nodes (tagged with time index `n`) and the
/// number of clipped negative density entries.
pub fn leverage_from_density(
    sigma_row: &[f64],
    slice: &DensitySlice,
    rule: Quadrature,
    n: usize,
) -> Result<(Vec<f64>, Vec<DegenerateNode>, usize)> {
    if sigma_row.len() != slice.x_axis().len() {
        return Err(SlvError::ShapeMismatch(
            "local-vol row and density x-axis differ".into(),
        ));
    }
    let m = trapezoid_moments(slice, rule);
    let usable: Vec<bool> = (0..sigma_row.len())
        .map(|i| {
            sigma_row[i].is_finite() && m.vmean[i] >= DEGENERATE_EPS && m.mass[i] >= DEGENERATE_EPS
        })
        .collect();
    let mut row: Vec<f64> = (0..sigma_row.len())
        .map(|i| {
            if usable[i] {
                sigma_row[i] * (m.mass[i] / m.vmean[i]).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut filled = Vec::new();
    for i in 0..row.len() {
        if !usable[i] {
            let src = nearest_usable(&usable, i).ok_or(SlvError::AllDegenerate { step: n })?;
            row[i] = row[src];
            filled.push(DegenerateNode {
                n,
                i,
                fill_source: src,
            });
        }
    }
    Ok((row, filled, m.clipped))
}

/// Leverage at `t = 0` from the initial density.
pub fn init_leverage(
    sigma_loc_row: &[f64],
    p0: &DensitySlice,
    rule: Quadrature,
) -> Result<(Vec<f64>, Vec<DegenerateNode>)> {
    let (row, filled, _) = leverage_from_density(sigma_loc_row, p0, rule, 0)?;
    Ok((row, filled))
}

pub fn run_benchmark(
    mesh: &MeshSpec,
    p: &SVParams,
    rates: &RatesCurve,
    sigma_loc: &Surface,
    cfg: &FPConfig,
) -> Result<BenchmarkResult> {
    if !sigma_loc.time_axis().matches(&mesh.time) || !sigma_loc.x_axis().matches(&mesh.x) {
        return Err(SlvError::AxisMismatch(
            "local-vol surface axes differ from the mesh".into(),
        ));
    }
    if sigma_loc.values().iter().any(|&s| s < 0.0) {
        return Err(SlvError::InvalidParameter(
            "local volatility must be nonnegative".into(),
        ));
    }
    let mut leverage = Surface::constant(mesh.time, mesh.x, 0.0);
    let mut slice = fokker_planck::initial_density(mesh, p, cfg)?;
    let (row, mut degenerate_nodes, mut negative_clips) =
        leverage_from_density(sigma_loc.row(0), &slice, cfg.quadrature, 0)?;
    leverage.row_mut(0).copy_from_slice(&row);
    let mut densities = Vec::with_capacity(mesh.time.len());
    densities.push(slice.clone());

    for n in 0..mesh.time.cells() {
        let l_now = leverage.row(n).to_vec();
        slice = fokker_planck::advance(mesh, p, rates, cfg, &slice, &l_now, &l_now)?;
        let (row, filled, clipped) =
            leverage_from_density(sigma_loc.row(n + 1), &slice, cfg.quadrature, n + 1)?;
        leverage.row_mut(n + 1).copy_from_slice(&row);
        degenerate_nodes.extend(filled);
        negative_clips += clipped;
        densities.push(slice.clone());
    }
    Ok(BenchmarkResult {
        leverage,
        densities,
        degenerate_nodes,
        negative_clips,
    })
}
