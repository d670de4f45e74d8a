//! Fixtures shared by the solver benchmarks.

use slvcal_core::fokker_planck::{advance, initial_density};
use slvcal_core::synthetic::ground_truth_l;
use slvcal_core::{DensitySlice, FPConfig, MeshSpec, RatesCurve, SVParams, Surface};

pub struct Fixture {
    pub mesh: MeshSpec,
    pub params: SVParams,
    pub rates: RatesCurve,
    pub fp: FPConfig,
    pub leverage: Surface,
    /// Density after `warmup` steps, past the initial spike.
    pub slice: DensitySlice,
}

pub fn fixture(mesh: MeshSpec, warmup: usize) -> Fixture {
    let params = SVParams::synthetic_reference();
    let rates = RatesCurve::zero();
    let fp = FPConfig::default();
    let leverage = Surface::from_fn(mesh.time, mesh.x, ground_truth_l);
    let mut slice = initial_density(&mesh, &params, &fp).expect("reference mesh");
    for n in 0..warmup {
        slice = advance(
            &mesh,
            &params,
            &rates,
            &fp,
            &slice,
            leverage.row(n),
            leverage.row(n + 1),
        )
        .expect("stable step");
    }
    Fixture {
        mesh,
        params,
        rates,
        fp,
        leverage,
        slice,
    }
}

/// Diagonally dominant system of size `n`.
pub fn tridiagonal(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let rhs = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
    (vec![-1.0; n], vec![4.0; n], vec![-1.0; n], rhs)
}
