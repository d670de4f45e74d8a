//! Stand-in local volatility for the FX example.
//!
//! The market surface behind the real-data run is not public. This smile has a
//! comparable level (about 11%), a put skew and a short-dated term bump, and
//! lets the whole pipeline run with the published model parameters.

use slvcal_core::{MeshSpec, Surface};

pub fn standin_sigma(t: f64, x: f64) -> f64 {
    let smile = 1.0 + 0.3 * (1.0 - (-x * x / 0.1).exp());
    let skew = 1.0 - 0.1 * (2.0 * x).tanh();
    let term = 1.0 + 0.05 * (-4.0 * t).exp();
    0.114 * smile * skew * term
}

pub fn standin_surface(mesh: &MeshSpec) -> Surface {
    Surface::from_fn(mesh.time, mesh.x, standin_sigma)
}
