//! Command-line pipeline: build a pack, verify it, simulate a closed loop and
//! sweep a parameter, writing bit-stable JSON and CSV artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod pack_io;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gramstab::error::Error;
use gramstab::feedback::{
    assemble_dynamic, assemble_nonlinear, assemble_static, consistency_limit, generator_unchecked, ClosedLoop,
    LoopMode, MAX_PACK_RESIDUAL,
};
use gramstab::gramian::{build_pack, StabilizerPack, DEFAULT_QUAD_POINTS};
use gramstab::models::ControlSystem;
use gramstab::simulate::{
    coupling_audit, energy_audit, fit_decay_rate, integrate, uniform_grid, CouplingAudit, DecayReport, Trajectory,
    DEFAULT_STEP_TOL,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::RunConfig;
use output::{fmt_f64, ser_f64, ser_opt_f64, ser_pair, write_atomic};
pub use pack_io::PackJson;

/// Default tolerance for decay-rate certification.
pub const DEFAULT_RATE_TOL: f64 = 1e-3;
/// Default initial norm in nonlinear modes.
pub const DEFAULT_NONLINEAR_Y0_NORM: f64 = 1e-3;
/// Slack on `spectral_abscissa(A^Q) ≤ −λ`.
pub const ABSCISSA_SLACK: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 verification failed, 2 config or build error, 3 runtime divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Divergence { .. } | Error::Stiffness { .. }) => 3,
            CliError::Core(Error::Residual { .. } | Error::Consistency { .. } | Error::StaticCoupling { .. }) => 1,
            _ => 2,
        }
    }
}

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quad_points: Option<usize>,
    pub tol: Option<f64>,
    pub pack: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(q) = self.quad_points {
            cfg.quad_points = Some(q);
        }
    }

    pub fn rate_tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_RATE_TOL)
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

pub fn build_from_config(cfg: &RunConfig) -> Result<(ControlSystem, StabilizerPack), CliError> {
    let system = cfg.control_system()?;
    let w = cfg.weight_operator(system.input_dim())?;
    let profile = cfg.weight_profile(&system)?;
    let pack = build_pack(&system, &w, &profile, cfg.quad_points.unwrap_or(DEFAULT_QUAD_POINTS))?;
    Ok((system, pack))
}

fn load_pack(path: &Path, system: &ControlSystem) -> Result<StabilizerPack, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    PackJson::parse(&text)?.to_pack(system)
}

fn pack_for(cfg: &RunConfig, overrides: &Overrides) -> Result<(ControlSystem, StabilizerPack), CliError> {
    match &overrides.pack {
        Some(path) => {
            let system = cfg.control_system()?;
            let pack = load_pack(path, &system)?;
            Ok((system, pack))
        }
        None => build_from_config(cfg),
    }
}

/// `gramian`: builds the pack and writes `pack.json`. Exit 0 iff the identity
/// residual is at most `1e-6`.
pub fn cmd_gramian(cfg: &RunConfig) -> Result<i32, CliError> {
    let (_, pack) = build_from_config(cfg)?;
    write_atomic(&cfg.output_dir.join("pack.json"), PackJson::from_pack(&pack).to_json().as_bytes())?;
    Ok(if pack.identity_residual() <= MAX_PACK_RESIDUAL { 0 } else { 1 })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    #[serde(serialize_with = "ser_f64")]
    pub identity_residual: f64,
    #[serde(serialize_with = "ser_f64")]
    pub generator_consistency: f64,
    #[serde(rename = "spectral_abscissa_AQ", serialize_with = "ser_f64")]
    pub spectral_abscissa_aq: f64,
    pub identity_certified: bool,
    pub generator_certified: bool,
    pub abscissa_certified: bool,
}

impl VerifyReport {
    pub fn certified(&self) -> bool {
        self.identity_certified && self.generator_certified && self.abscissa_certified
    }
}

pub fn verify_pack(system: &ControlSystem, pack: &StabilizerPack) -> VerifyReport {
    let residual = pack.identity_residual();
    let generator = generator_unchecked(pack, system);
    VerifyReport {
        identity_residual: residual,
        generator_consistency: generator.consistency_defect,
        spectral_abscissa_aq: generator.spectral_abscissa,
        identity_certified: residual <= MAX_PACK_RESIDUAL,
        generator_certified: generator.consistency_defect <= consistency_limit(pack),
        abscissa_certified: generator.spectral_abscissa <= -pack.lambda() + ABSCISSA_SLACK,
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}

/// `verify`: checks a pack file (default `<out>/pack.json`) against the
/// configured system and writes `verify.json`.
pub fn cmd_verify(cfg: &RunConfig, overrides: &Overrides) -> Result<i32, CliError> {
    let system = cfg.control_system()?;
    let path = overrides.pack.clone().unwrap_or_else(|| cfg.output_dir.join("pack.json"));
    let pack = load_pack(&path, &system)?;
    let report = verify_pack(&system, &pack);
    write_atomic(&cfg.output_dir.join("verify.json"), to_json(&report).as_bytes())?;
    Ok(if report.certified() { 0 } else { 1 })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayJson {
    #[serde(serialize_with = "ser_f64")]
    pub fitted_rate: f64,
    #[serde(serialize_with = "ser_f64")]
    pub intercept: f64,
    #[serde(serialize_with = "ser_pair")]
    pub window: (f64, f64),
    #[serde(serialize_with = "ser_f64")]
    pub rms: f64,
    #[serde(serialize_with = "ser_f64")]
    pub theoretical_rate: f64,
    pub certified: bool,
    pub seed: Option<u64>,
}

impl From<&DecayReport> for DecayJson {
    fn from(r: &DecayReport) -> Self {
        Self {
            fitted_rate: r.fitted_rate,
            intercept: r.fit_intercept,
            window: r.fit_window,
            rms: r.fit_rms_residual,
            theoretical_rate: r.theoretical_rate,
            certified: r.certified,
            seed: r.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub mode: String,
    pub system: String,
    #[serde(serialize_with = "ser_f64")]
    pub lambda: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub lambda1: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub gamma: Option<f64>,
    pub rate_certified: Option<bool>,
    #[serde(serialize_with = "ser_f64")]
    pub identity_residual: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub energy_residual: Option<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub coupling_max_defect: f64,
    pub coupling_certified: bool,
    #[serde(serialize_with = "ser_opt_f64")]
    pub coupling_rate: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub coupling_exact_deviation: Option<f64>,
    pub decay_certified: bool,
    pub certified: bool,
    pub seed: u64,
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub closed_loop: ClosedLoop,
    pub trajectory: Trajectory,
    pub decay: DecayReport,
    pub coupling: Option<CouplingAudit>,
    pub energy: Option<f64>,
    pub report: SimulationReport,
}

pub fn assemble(cfg: &RunConfig, system: &ControlSystem, pack: &StabilizerPack) -> Result<ClosedLoop, CliError> {
    let mode = cfg.loop_mode()?;
    let cl = match mode {
        LoopMode::StaticLinear => assemble_static(pack, system)?,
        LoopMode::DynamicLinear => assemble_dynamic(pack, system, cfg.lambda1)?,
        LoopMode::StaticNonlinear | LoopMode::DynamicNonlinear => {
            let f = cfg
                .nonlinearity()?
                .ok_or_else(|| CliError::Config(format!("mode {} needs a nonlinearity", cfg.mode)))?;
            assemble_nonlinear(pack, system, mode, f, cfg.lambda1, cfg.gamma)?
        }
    };
    Ok(cl)
}

/// `y₀` from the config, or a seeded random direction of norm `y0_norm`;
/// `ỹ₀` from the config, or `Q⁻¹y₀` (static) and `0` (dynamic).
pub fn initial_data(cfg: &RunConfig, cl: &ClosedLoop) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    let n = cl.state_dim();
    let y0 = match cfg.vector(&cfg.y0, n, "y0")? {
        Some(v) => v,
        None => {
            let norm = cfg.y0_norm.unwrap_or(if cl.mode().is_nonlinear() {
                DEFAULT_NONLINEAR_Y0_NORM
            } else {
                1.0
            });
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let v = loop {
                let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                if v.norm() > 1e-3 {
                    break v;
                }
            };
            v.normalize() * norm
        }
    };
    let yt0 = match cfg.vector(&cfg.ytilde0, n, "ytilde0")? {
        Some(v) => v,
        None if cl.mode().is_dynamic() => DVector::zeros(n),
        None => cl.pack().q_factor().solve(&y0),
    };
    Ok((y0, yt0))
}

pub fn simulate_with(cfg: &RunConfig, system: &ControlSystem, pack: &StabilizerPack, rate_tol: f64) -> Result<Simulation, CliError> {
    let cl = assemble(cfg, system, pack)?;
    let (y0, yt0) = initial_data(cfg, &cl)?;
    let grid = uniform_grid(cfg.horizon, cfg.grid_step)?;
    let traj = integrate(&cl, &y0, &yt0, &grid, cfg.step_tol.unwrap_or(DEFAULT_STEP_TOL))?;
    let series = if cl.mode().is_dynamic() {
        traj.state_norms()
    } else {
        traj.sqrt_lyapunov()
    };
    let decay = fit_decay_rate(&traj.times, &series, None, cl.theoretical_rate(), rate_tol)?.with_seed(cfg.seed);
    let (coupling, coupling_certified) = match coupling_audit(&traj, &cl) {
        Ok(audit) => {
            let ok = audit.decay.as_ref().is_none_or(|d| d.certified);
            (Some(audit), ok)
        }
        Err(Error::StaticCoupling { .. }) => (None, false),
        Err(e) => return Err(e.into()),
    };
    let energy = if cl.mode().is_dynamic() {
        None
    } else {
        energy_audit(&traj, &cl).ok()
    };
    let report = SimulationReport {
        mode: cl.mode().as_str().to_string(),
        system: system.label.clone(),
        lambda: pack.lambda(),
        lambda1: cl.lambda1(),
        gamma: cl.gamma(),
        rate_certified: cl.mode().is_dynamic().then(|| cl.rate_certified()),
        identity_residual: pack.identity_residual(),
        energy_residual: energy,
        coupling_max_defect: traj.max_defect(),
        coupling_certified,
        coupling_rate: coupling.as_ref().and_then(|c| c.decay.as_ref()).map(|d| d.fitted_rate),
        coupling_exact_deviation: coupling.as_ref().and_then(|c| c.exact_deviation),
        decay_certified: decay.certified,
        certified: decay.certified && coupling_certified,
        seed: cfg.seed,
    };
    Ok(Simulation {
        closed_loop: cl,
        trajectory: traj,
        decay,
        coupling,
        energy,
        report,
    })
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.y.first().map_or(0, |y| y.len());
    let m = traj.control.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",y_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",yt_{i}");
    }
    out.push_str(",V,defect");
    for i in 1..=m {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for k in 0..traj.len() {
        out.push_str(&fmt_f64(traj.times[k]));
        for x in traj.y[k].iter().chain(traj.ytilde[k].iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        let _ = write!(out, ",{},{}", fmt_f64(traj.lyapunov[k]), fmt_f64(traj.defect[k]));
        for x in traj.control[k].iter() {
            out.push(',');
            out.push_str(&fmt_f64(*x));
        }
        out.push('\n');
    }
    out
}

/// `simulate`: writes `trajectory.csv`, `decay.json` and `report.json`.
/// Exit 0 iff the decay and coupling certifications pass.
pub fn cmd_simulate(cfg: &RunConfig, overrides: &Overrides) -> Result<i32, CliError> {
    let (system, pack) = pack_for(cfg, overrides)?;
    let sim = simulate_with(cfg, &system, &pack, overrides.rate_tol())?;
    let dir = &cfg.output_dir;
    write_atomic(&dir.join("trajectory.csv"), trajectory_csv(&sim.trajectory).as_bytes())?;
    write_atomic(&dir.join("decay.json"), to_json(&DecayJson::from(&sim.decay)).as_bytes())?;
    write_atomic(&dir.join("report.json"), to_json(&sim.report).as_bytes())?;
    Ok(if sim.report.certified { 0 } else { 1 })
}

/// One row of a sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    #[serde(serialize_with = "ser_f64")]
    pub value: f64,
    pub outcome: Result<SimulationReportRow, String>,
    #[serde(skip)]
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReportRow {
    pub decay: DecayJson,
    pub report: SimulationReport,
}

pub const SWEEP_HEADER: &str =
    "param,value,fitted_rate,theoretical_rate,certified,rate_certified,identity_residual,coupling_defect,energy_residual,status";

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        match &self.outcome {
            Ok(row) => format!(
                "{},{},{},{},{},{},{},{},{},ok",
                self.param,
                fmt_f64(self.value),
                fmt_f64(row.decay.fitted_rate),
                fmt_f64(row.decay.theoretical_rate),
                row.report.certified,
                row.report.rate_certified.map(|b| b.to_string()).unwrap_or_default(),
                fmt_f64(row.report.identity_residual),
                fmt_f64(row.report.coupling_max_defect),
                opt_cell(row.report.energy_residual),
            ),
            Err(msg) => format!(
                "{},{},,,,,,,,\"{}\"",
                self.param,
                fmt_f64(self.value),
                msg.replace('"', "'")
            ),
        }
    }
}

pub fn run_sweep(cfg: &RunConfig, overrides: &Overrides) -> Result<Vec<SweepRow>, CliError> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs a \"sweep\": {param, values} section".into()))?;
    for &v in &sweep.values {
        cfg.with_param(&sweep.param, v)?;
    }
    let rows = sweep
        .values
        .par_iter()
        .map(|&value| {
            let run = || -> Result<Simulation, CliError> {
                let row_cfg = cfg.with_param(&sweep.param, value)?;
                let (system, pack) = pack_for(&row_cfg, overrides)?;
                simulate_with(&row_cfg, &system, &pack, overrides.rate_tol())
            };
            match run() {
                Ok(sim) => SweepRow {
                    param: sweep.param.clone(),
                    value,
                    exit_code: 0,
                    outcome: Ok(SimulationReportRow {
                        decay: DecayJson::from(&sim.decay),
                        report: sim.report,
                    }),
                },
                Err(e) => SweepRow {
                    param: sweep.param.clone(),
                    value,
                    exit_code: e.exit_code(),
                    outcome: Err(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// `sweep`: one simulation per parameter value, run in parallel. Writes one
/// JSON file per row under `sweep/` and the summary `sweep.csv`. Exit 0 when
/// every row ran; otherwise the largest row exit code.
pub fn cmd_sweep(cfg: &RunConfig, overrides: &Overrides) -> Result<i32, CliError> {
    let rows = run_sweep(cfg, overrides)?;
    let dir = cfg.output_dir.join("sweep");
    rows.par_iter().enumerate().try_for_each(|(i, row)| {
        write_atomic(&dir.join(format!("row_{i:04}.json")), to_json(row).as_bytes())
    })?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows.iter().map(|r| r.exit_code).max().unwrap_or(0))
}
