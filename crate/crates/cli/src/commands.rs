use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use slvcal_core::benchmark::run_benchmark;
use slvcal_core::dupire::solve_dupire;
use slvcal_core::io::{read_surface, write_density, write_surface};
use slvcal_core::synthetic::{self, implied_local_vol, relative_residual};
use slvcal_core::tikhonov::run_proposed;
use slvcal_core::{build_axis, Axis, DensitySlice, LeverageMode, SlvError, Surface};

use crate::config::{schema, Method, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "slvcal",
    version,
    about = "Leverage-function calibration for SLV models"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `method`.
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    /// Overrides `synthetic.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `out_dir` (relative to the working directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate the synthetic local-vol surfaces and ground-truth leverage.
    SynthGen,
    /// Calibrate the leverage function to `inputs.sigma_loc`.
    Calibrate,
    /// Price calls under `inputs.sigma_loc` (and `inputs.recovered`).
    Price,
    /// Print every configuration field with its default.
    ConfigSchema,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SynthGen => "synth_gen",
            Command::Calibrate => "calibrate",
            Command::Price => "price",
            Command::ConfigSchema => "config_schema",
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.method {
        cfg.method = m;
    }
    if let Some(s) = cli.seed {
        cfg.synthetic.seed = s;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = std::env::current_dir()?.join(dir);
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::ConfigSchema = cli.command {
        println!("{}", serde_json::to_string_pretty(&schema())?);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let mut timings = Timings::default();
    match cli.command {
        Command::SynthGen => synth_gen(&cfg, &out, &mut timings)?,
        Command::Calibrate => calibrate(&cfg, &out, &mut timings)?,
        Command::Price => price(&cfg, &out, &mut timings)?,
        Command::ConfigSchema => unreachable!(),
    }
    write_json(
        &out.join(format!("timings_{}.json", cli.command.name())),
        &timings.0,
    )
}

/// Wall-clock seconds per phase; written apart from the data files.
#[derive(Default)]
struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let r = f();
        self.0
            .insert(phase.to_string(), start.elapsed().as_secs_f64());
        r
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_surface_file(path: &Path) -> Result<Surface, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_surface(&text)?)
}

fn required_input(
    cfg: &RunConfig,
    field: &Option<PathBuf>,
    name: &str,
) -> Result<Surface, CliError> {
    let p = field
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("inputs.{name} is required")))?;
    read_surface_file(&cfg.resolve(p))
}

fn check_axes(s: &Surface, cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    if s.time_axis().matches(&cfg.mesh.time) && s.x_axis().matches(&cfg.mesh.x) {
        Ok(())
    } else {
        Err(SlvError::AxisMismatch(format!("{what} axes differ from the configured mesh")).into())
    }
}

#[derive(Serialize)]
struct Manifest {
    files: Vec<&'static str>,
    seed: u64,
    noise_level: f64,
    fine_mesh: slvcal_core::MeshSpec,
    coarse_mesh: slvcal_core::MeshSpec,
    sv: slvcal_core::SVParams,
    fp: slvcal_core::FPConfig,
    unavailable_fine_nodes: usize,
    unavailable_coarse_nodes: usize,
    negative_clips: usize,
}

fn synth_gen(cfg: &RunConfig, out: &Path, timings: &mut Timings) -> Result<(), CliError> {
    let spec = cfg.synthetic_spec();
    spec.validate()?;
    let rates = cfg.load_rates()?;
    let data = timings.time("generate", || {
        synthetic::generate(&spec, &cfg.sv, &rates, &cfg.fp)
    })?;
    let files = [
        ("sigma_loc_fine.csv", &data.sigma_fine),
        ("sigma_loc_coarse.csv", &data.sigma_coarse_clean),
        ("sigma_loc_coarse_noisy.csv", &data.sigma_coarse_noisy),
        ("leverage_truth.csv", &data.leverage_truth),
    ];
    for (name, s) in files {
        write_text(&out.join(name), &write_surface(s))?;
    }
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            files: files.iter().map(|f| f.0).collect(),
            seed: spec.seed,
            noise_level: spec.noise_level,
            fine_mesh: spec.fine,
            coarse_mesh: spec.coarse,
            sv: cfg.sv,
            fp: cfg.fp,
            unavailable_fine_nodes: data.sigma_fine.unavailable_count(),
            unavailable_coarse_nodes: data.sigma_coarse_noisy.unavailable_count(),
            negative_clips: data.negative_clips,
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalResidual {
    pub interval: [f64; 2],
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: &'static str,
    /// Recovered local vol against `inputs.truth`, when supplied.
    pub residual_vs_truth: Option<Vec<IntervalResidual>>,
    /// Recovered local vol against the calibration input.
    pub residual_vs_input: Vec<IntervalResidual>,
    pub degenerate_nodes: usize,
    /// Density mass per time step of the calibration solve.
    pub mass_trace: Vec<f64>,
    pub negative_clips: usize,
    pub negative_leverage: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub mesh: slvcal_core::MeshSpec,
    pub tikhonov: slvcal_core::TikhonovConfig,
    pub methods: Vec<MethodReport>,
}

fn residuals(
    rec: &Surface,
    reference: &Surface,
    intervals: &[[f64; 2]],
) -> Result<Vec<IntervalResidual>, CliError> {
    intervals
        .iter()
        .map(|&[lo, hi]| {
            Ok(IntervalResidual {
                interval: [lo, hi],
                residual: relative_residual(rec, reference, lo, hi)?,
            })
        })
        .collect()
}

fn dump_densities(dir: &Path, densities: &[DensitySlice]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for d in densities {
        write_text(
            &dir.join(format!("density_t{}.csv", d.time_index())),
            &write_density(d),
        )?;
    }
    Ok(())
}

struct Run {
    name: &'static str,
    leverage: Surface,
    mass_trace: Vec<f64>,
    degenerate_nodes: usize,
    negative_clips: usize,
    negative_leverage: usize,
}

fn calibrate(cfg: &RunConfig, out: &Path, timings: &mut Timings) -> Result<(), CliError> {
    let rates = cfg.load_rates()?;
    let sigma = required_input(cfg, &cfg.inputs.sigma_loc, "sigma_loc")?;
    check_axes(&sigma, cfg, "inputs.sigma_loc")?;
    let truth = match &cfg.inputs.truth {
        Some(_) => {
            let t = required_input(cfg, &cfg.inputs.truth, "truth")?;
            check_axes(&t, cfg, "inputs.truth")?;
            Some(t)
        }
        None => None,
    };

    let mut runs = Vec::new();
    if cfg.method.runs_benchmark() {
        let res = timings.time("benchmark", || {
            run_benchmark(&cfg.mesh, &cfg.sv, &rates, &sigma, &cfg.fp)
        })?;
        write_json(
            &out.join("degenerate_nodes_benchmark.json"),
            &res.degenerate_nodes,
        )?;
        if cfg.dump_densities {
            dump_densities(&out.join("densities_benchmark"), &res.densities)?;
        }
        runs.push(Run {
            name: "benchmark",
            mass_trace: res.densities.iter().map(DensitySlice::total_mass).collect(),
            degenerate_nodes: res.degenerate_nodes.len(),
            negative_clips: res.negative_clips,
            negative_leverage: 0,
            leverage: res.leverage,
        });
    }
    if cfg.method.runs_proposed() {
        let res = timings.time("proposed", || {
            run_proposed(&cfg.mesh, &cfg.sv, &rates, &sigma, &cfg.fp, &cfg.tikhonov)
        })?;
        let mut trace = String::new();
        for s in &res.steps {
            trace.push_str(&serde_json::to_string(s)?);
            trace.push('\n');
        }
        write_text(&out.join("tikhonov_trace.jsonl"), &trace)?;
        if cfg.dump_densities {
            dump_densities(&out.join("densities_proposed"), &res.densities)?;
        }
        runs.push(Run {
            name: "proposed",
            mass_trace: res.densities.iter().map(DensitySlice::total_mass).collect(),
            degenerate_nodes: res.steps.iter().map(|s| s.degenerate).sum(),
            negative_clips: res.negative_clips,
            negative_leverage: res.steps.iter().map(|s| s.negative_leverage).sum(),
            leverage: res.leverage,
        });
    }

    let mut methods = Vec::new();
    for Run {
        name,
        leverage,
        mass_trace,
        degenerate_nodes,
        negative_clips,
        negative_leverage,
    } in runs
    {
        write_text(
            &out.join(format!("leverage_{name}.csv")),
            &write_surface(&leverage),
        )?;
        let rec = timings.time(&format!("recover_{name}"), || {
            implied_local_vol(
                &cfg.mesh,
                &cfg.sv,
                &rates,
                &leverage.map(|l| l.max(0.0)),
                &cfg.fp,
                LeverageMode::BothTimes,
            )
        })?;
        write_text(
            &out.join(format!("local_vol_recovered_{name}.csv")),
            &write_surface(&rec.sigma),
        )?;
        methods.push(MethodReport {
            method: name,
            residual_vs_truth: truth
                .as_ref()
                .map(|t| residuals(&rec.sigma, t, &cfg.residual_intervals))
                .transpose()?,
            residual_vs_input: residuals(&rec.sigma, &sigma, &cfg.residual_intervals)?,
            degenerate_nodes,
            mass_trace,
            negative_clips: negative_clips + rec.negative_clips,
            negative_leverage,
        });
    }
    write_text(
        &out.join("residual_table.md"),
        &residual_table(&methods, &cfg.residual_intervals),
    )?;
    write_json(
        &out.join("report.json"),
        &CalibrationReport {
            mesh: cfg.mesh,
            tikhonov: cfg.tikhonov.clone(),
            methods,
        },
    )
}

/// Relative residuals in percent, one row per method and one column per interval.
fn residual_table(methods: &[MethodReport], intervals: &[[f64; 2]]) -> String {
    let mut s = String::from("| Method |");
    for [lo, hi] in intervals {
        s.push_str(&format!(" [{lo}, {hi}] |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(intervals.len()));
    s.push('\n');
    for m in methods {
        let (label, rs) = match &m.residual_vs_truth {
            Some(r) => ("vs truth", r),
            None => ("vs input", &m.residual_vs_input),
        };
        s.push_str(&format!("| {} ({label}) |", m.method));
        for r in rs {
            s.push_str(&format!(" {:.2}% |", 100.0 * r.residual));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct PriceReport {
    pub maturity: Axis,
    pub strike: Axis,
    pub theta: f64,
    pub monotonicity_violation: f64,
    pub convexity_violation: f64,
    pub max_abs_diff: Option<f64>,
    pub mean_abs_diff: Option<f64>,
}

fn default_axis(from: &Axis) -> Result<Axis, CliError> {
    build_axis(from.min(), from.max(), 0.01).map_err(|e| {
        CliError::Config(format!(
            "default pricing axis over [{}, {}] failed: {e}",
            from.min(),
            from.max()
        ))
    })
}

fn price(cfg: &RunConfig, out: &Path, timings: &mut Timings) -> Result<(), CliError> {
    let rates = cfg.load_rates()?;
    let sigma = required_input(cfg, &cfg.inputs.sigma_loc, "sigma_loc")?;
    let maturity = match cfg.pricing.maturity {
        Some(a) => a,
        None => default_axis(sigma.time_axis())?,
    };
    let strike = match cfg.pricing.strike {
        Some(a) => a,
        None => default_axis(sigma.x_axis())?,
    };
    let theta = cfg.pricing.theta;
    let input = timings.time("price_input", || {
        solve_dupire(&sigma, &cfg.sv, &rates, (maturity, strike), theta)
    })?;
    write_text(
        &out.join("prices_input.csv"),
        &write_surface(&input.to_surface()),
    )?;

    let (mut max_abs_diff, mut mean_abs_diff) = (None, None);
    if cfg.inputs.recovered.is_some() {
        let rec_sigma = required_input(cfg, &cfg.inputs.recovered, "recovered")?;
        if !rec_sigma.same_axes(&sigma) {
            return Err(SlvError::AxisMismatch(
                "inputs.recovered axes differ from inputs.sigma_loc".into(),
            )
            .into());
        }
        let rec = timings.time("price_recovered", || {
            solve_dupire(&rec_sigma, &cfg.sv, &rates, (maturity, strike), theta)
        })?;
        write_text(
            &out.join("prices_recovered.csv"),
            &write_surface(&rec.to_surface()),
        )?;
        let diffs: Vec<f64> = input
            .values()
            .iter()
            .zip(rec.values())
            .map(|(a, b)| (a - b).abs())
            .collect();
        max_abs_diff = Some(diffs.iter().copied().fold(0.0, f64::max));
        mean_abs_diff = Some(diffs.iter().sum::<f64>() / diffs.len() as f64);
    }
    write_json(
        &out.join("price_report.json"),
        &PriceReport {
            maturity,
            strike,
            theta,
            monotonicity_violation: input.monotonicity_violation(),
            convexity_violation: input.convexity_violation(),
            max_abs_diff,
            mean_abs_diff,
        },
    )
}
