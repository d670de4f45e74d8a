//! Run configuration: a single JSON document, with file paths resolved
//! relative to the directory holding it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slvcal_core::{Axis, FPConfig, MeshSpec, RatesCurve, SVParams, SyntheticSpec, TikhonovConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Benchmark,
    Proposed,
    Both,
}

impl Method {
    pub fn runs_benchmark(self) -> bool {
        matches!(self, Method::Benchmark | Method::Both)
    }

    pub fn runs_proposed(self) -> bool {
        matches!(self, Method::Proposed | Method::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub noise_level: f64,
    pub seed: u64,
    /// Mesh the ground-truth local volatility is generated on.
    pub fine_mesh: MeshSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        SyntheticConfig {
            noise_level: spec.noise_level,
            seed: spec.seed,
            fine_mesh: spec.fine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    /// Maturity axis; defaults to the local-vol time range with step 0.01.
    pub maturity: Option<Axis>,
    /// Log-strike axis; defaults to the local-vol x range with step 0.01.
    pub strike: Option<Axis>,
    pub theta: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            maturity: None,
            strike: None,
            theta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Local volatility surface on the calibration mesh.
    pub sigma_loc: Option<PathBuf>,
    /// Reference local volatility for residuals (the clean surface in synthetic runs).
    pub truth: Option<PathBuf>,
    /// A second surface to price against `sigma_loc`.
    pub recovered: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sv: SVParams,
    /// `t,r,d` CSV; zero rates when absent.
    pub rates: Option<PathBuf>,
    /// Calibration mesh.
    pub mesh: MeshSpec,
    pub fp: FPConfig,
    pub tikhonov: TikhonovConfig,
    pub method: Method,
    pub synthetic: SyntheticConfig,
    pub pricing: PricingConfig,
    pub inputs: Inputs,
    /// x-intervals over which residuals are reported.
    pub residual_intervals: Vec<[f64; 2]>,
    /// Write every density slice of each calibration as `density_t{n}.csv`.
    pub dump_densities: bool,
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sv: SVParams::synthetic_reference(),
            rates: None,
            mesh: MeshSpec::reference_coarse(),
            fp: FPConfig::default(),
            tikhonov: TikhonovConfig::default(),
            method: Method::Both,
            synthetic: SyntheticConfig::default(),
            pricing: PricingConfig::default(),
            inputs: Inputs::default(),
            residual_intervals: vec![[-3.0, 3.0], [-2.0, 2.0]],
            dump_densities: false,
            out_dir: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sv.validate()?;
        self.fp.validate()?;
        self.tikhonov.validate()?;
        if !(0.0..=1.0).contains(&self.pricing.theta) {
            return Err(CliError::Config("pricing.theta must lie in [0, 1]".into()));
        }
        for [lo, hi] in &self.residual_intervals {
            if !(lo < hi) {
                return Err(CliError::Config(format!(
                    "residual interval [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    /// Resolves a configured path against the config directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn load_rates(&self) -> Result<RatesCurve, CliError> {
        match &self.rates {
            None => Ok(RatesCurve::zero()),
            Some(p) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read rates file {}: {e}", path.display()))
                })?;
                Ok(RatesCurve::from_csv_str(&text)?)
            }
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            noise_level: self.synthetic.noise_level,
            seed: self.synthetic.seed,
            fine: self.synthetic.fine_mesh,
            coarse: self.mesh,
        }
    }
}

/// Every configuration field with its default and a short description.
pub fn schema() -> serde_json::Value {
    use serde_json::json;
    let d = RunConfig::default();
    let field = |default: serde_json::Value, description: &str| json!({ "default": default, "description": description });
    let to = |v: &dyn erased::Ser| v.value();
    json!({
        "sv": field(to(&d.sv), "variance parameters v0, kappa, m, xi, rho and initial spot s0"),
        "rates": field(json!(null), "path to a `t,r,d` CSV of piecewise-constant rates (left-continuous knots); zero rates when null"),
        "mesh": field(to(&d.mesh), "calibration mesh: time, x = ln(S/s0) and variance axes, each {min, max, step}"),
        "fp": {
            "theta": field(json!(d.fp.theta), "implicitness of the Douglas splitting, in [0, 1]"),
            "sigma_s2": field(json!(d.fp.sigma_s2), "variance of the initial Gaussian in x"),
            "sigma_v2": field(json!(d.fp.sigma_v2), "variance of the initial Gaussian in v"),
            "quadrature": field(to(&d.fp.quadrature), "variance-integral rule: trapezoid or plain"),
        },
        "tikhonov": {
            "alpha1": field(json!(d.tikhonov.alpha1), "weight of the proximity term to the previous leverage row"),
            "alpha2": field(json!(d.tikhonov.alpha2), "weight of the smoothness term on the x-derivative"),
            "gamma": field(to(&d.tikhonov.gamma), "data covariance: {kind: identity} | {kind: diagonal, values: [...]} | {kind: dense, values: [[...]]}"),
            "d0": field(to(&d.tikhonov.d0), "proximity covariance, same forms as gamma"),
            "ds": field(to(&d.tikhonov.ds), "smoothness covariance, same forms as gamma"),
            "l_init_const": field(json!(d.tikhonov.l_init_const), "constant leverage used as the previous row of the first step"),
        },
        "method": field(to(&d.method), "benchmark | proposed | both"),
        "synthetic": {
            "noise_level": field(json!(d.synthetic.noise_level), "relative noise amplitude applied on the fine mesh"),
            "seed": field(json!(d.synthetic.seed), "ChaCha8 seed; draws are taken row-major (time, then x)"),
            "fine_mesh": field(to(&d.synthetic.fine_mesh), "mesh the ground-truth local volatility is generated on; `mesh` must be nested in it"),
        },
        "pricing": {
            "maturity": field(json!(null), "maturity axis; null means the local-vol time range with step 0.01"),
            "strike": field(json!(null), "log-strike axis ln(K/s0); null means the local-vol x range with step 0.01"),
            "theta": field(json!(d.pricing.theta), "Crank-Nicolson weight after the two implicit start-up half steps"),
        },
        "inputs": {
            "sigma_loc": field(json!(null), "local-vol CSV on exactly the calibration mesh (calibrate, price)"),
            "truth": field(json!(null), "reference local-vol CSV for residuals (calibrate)"),
            "recovered": field(json!(null), "second local-vol CSV to price and compare (price)"),
        },
        "residual_intervals": field(json!(d.residual_intervals), "x-intervals for relative residuals"),
        "dump_densities": field(json!(d.dump_densities), "write density_t{n}.csv for every time node"),
        "out_dir": field(json!(d.out_dir), "output directory, relative to the config file"),
    })
}

mod erased {
    pub trait Ser {
        fn value(&self) -> serde_json::Value;
    }

    impl<T: serde::Serialize> Ser for T {
        fn value(&self) -> serde_json::Value {
            serde_json::to_value(self).expect("config types serialize")
        }
    }
}
