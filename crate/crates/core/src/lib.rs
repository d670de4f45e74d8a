//! Leverage-function calibration for stochastic-local volatility models.

pub mod benchmark;
pub mod dupire;
pub mod error;
pub mod fokker_planck;
pub mod grids;
pub mod io;
pub mod params;
pub mod synthetic;
pub mod tikhonov;
pub mod tridiag;

pub use benchmark::{BenchmarkResult, DegenerateNode};
pub use dupire::CallGrid;
pub use error::{Result, SlvError};
pub use fokker_planck::{FPConfig, LeverageMode, StepOperators};
pub use grids::{build_axis, Axis, DensitySlice, MeshSpec, Quadrature, Surface};
pub use params::{RatesCurve, SVParams};
pub use synthetic::SyntheticSpec;
pub use tikhonov::{TikhonovConfig, TikhonovResult, WeightMatrix};
