//! Closed-loop trajectories, decay fits and audits of the energy, coupling
//! and transposition identities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feedback::{assemble_nonlinear, ClosedLoop, LoopMode, Nonlinearity};
use crate::gramian::StabilizerPack;
use crate::linalg::{propagator, spectral_norm};
use crate::models::ControlSystem;

/// Values below this are treated as zero when taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
pub const MIN_FIT_SAMPLES: usize = 10;
/// Relative tolerance of the static coupling check.
pub const COUPLING_TOL: f64 = 1e-6;
pub const DEFAULT_STEP_TOL: f64 = 1e-12;
pub const RADIUS_FLOOR: f64 = 1e-8;
pub const RADIUS_BISECTION_STEPS: usize = 11;
pub const RADIUS_SAMPLES: usize = 20;

/// A sampled closed-loop trajectory with its derived series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub y: Vec<DVector<f64>>,
    pub ytilde: Vec<DVector<f64>>,
    /// `V = ⟨Q⁻¹y, y⟩`.
    pub lyapunov: Vec<f64>,
    /// `u = −WBᵀỹ`.
    pub control: Vec<DVector<f64>>,
    /// `‖y − Qỹ‖₂`.
    pub defect: Vec<f64>,
}

impl Trajectory {
    fn from_states(cl: &ClosedLoop, times: Vec<f64>, states: Vec<DVector<f64>>) -> Self {
        let n = cl.state_dim();
        let pack = cl.pack();
        let wbt = pack.w() * cl.system().b.transpose();
        let cap = states.len();
        let mut out = Self {
            times,
            y: Vec::with_capacity(cap),
            ytilde: Vec::with_capacity(cap),
            lyapunov: Vec::with_capacity(cap),
            control: Vec::with_capacity(cap),
            defect: Vec::with_capacity(cap),
        };
        for x in states {
            let y = x.rows(0, n).into_owned();
            let yt = x.rows(n, n).into_owned();
            out.lyapunov.push(pack.q_factor().inverse_quadratic_form(&y).max(0.0));
            out.control.push(-(&wbt * &yt));
            out.defect.push((&y - pack.q() * &yt).norm());
            out.y.push(y);
            out.ytilde.push(yt);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// `√V(t)`.
    pub fn sqrt_lyapunov(&self) -> Vec<f64> {
        self.lyapunov.iter().map(|v| v.sqrt()).collect()
    }

    /// `‖(y, ỹ)‖₂`.
    pub fn state_norms(&self) -> Vec<f64> {
        self.y
            .iter()
            .zip(&self.ytilde)
            .map(|(y, yt)| (y.norm_squared() + yt.norm_squared()).sqrt())
            .collect()
    }

    pub fn max_defect(&self) -> f64 {
        self.defect.iter().copied().fold(0.0, f64::max)
    }
}

/// A least-squares fit of `log(series)` against time.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// `−slope`; positive means decay.
    pub fitted_rate: f64,
    pub fit_intercept: f64,
    pub fit_window: (f64, f64),
    pub fit_rms_residual: f64,
    pub theoretical_rate: f64,
    pub certified: bool,
    pub seed: Option<u64>,
}

impl DecayReport {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// `n` equal steps covering `[0, horizon]` with spacing close to `step`.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) || !(step > 0.0 && step <= horizon) {
        return Err(Error::Grid(format!("need 0 < step ≤ horizon, got step {step}, horizon {horizon}")));
    }
    let count = (horizon / step).round().max(1.0) as usize;
    Ok((0..=count).map(|k| horizon * k as f64 / count as f64).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::Grid("time grid must start at 0".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Grid(format!("time grid not strictly increasing at {} → {}", w[0], w[1])));
    }
    Ok(())
}

fn initial_state(cl: &ClosedLoop, y0: &DVector<f64>, ytilde0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = cl.state_dim();
    if y0.len() != n || ytilde0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("initial states of length {n}"),
            actual: format!("{} and {}", y0.len(), ytilde0.len()),
        });
    }
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(y0);
    x.rows_mut(n, n).copy_from(ytilde0);
    Ok(x)
}

/// Exact stepping `x(t_{k+1}) = e^{Δt·block} x(t_k)`, one propagator per
/// distinct step length.
pub fn integrate_linear(cl: &ClosedLoop, y0: &DVector<f64>, ytilde0: &DVector<f64>, grid: &[f64]) -> Result<Trajectory> {
    if cl.mode().is_nonlinear() {
        return Err(Error::Mode(format!("integrate_linear called on {} loop", cl.mode().as_str())));
    }
    check_grid(grid)?;
    let mut x = initial_state(cl, y0, ytilde0)?;
    let mut cache: Vec<(f64, DMatrix<f64>)> = Vec::new();
    let mut states = Vec::with_capacity(grid.len());
    states.push(x.clone());
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        let idx = match cache.iter().position(|(h, _)| (h - dt).abs() <= 1e-12 * dt) {
            Some(i) => i,
            None => {
                cache.push((dt, propagator(cl.block(), dt)?));
                cache.len() - 1
            }
        };
        x = &cache[idx].1 * &x;
        states.push(x.clone());
    }
    Ok(Trajectory::from_states(cl, grid.to_vec(), states))
}

fn rk4_step(cl: &ClosedLoop, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = cl.field(x);
    let k2 = cl.field(&(x + &k1 * (0.5 * h)));
    let k3 = cl.field(&(x + &k2 * (0.5 * h)));
    let k4 = cl.field(&(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Norm bound past which a nonlinear run is declared divergent.
pub fn divergence_guard(cl: &ClosedLoop, y0: &DVector<f64>, ytilde0: &DVector<f64>) -> f64 {
    let f = cl.pack().q_factor();
    let cond = cl.pack().q().norm() / f.min_eigenvalue_estimate().max(f64::MIN_POSITIVE);
    let scale = (y0.norm_squared() + ytilde0.norm_squared()).sqrt() + f.solve(y0).norm();
    10.0 * (1.0 + cond.sqrt()) * scale
}

/// Classical RK4 with a half-step Richardson check. The local error estimate
/// is kept below `step_tol·‖x‖`; the accepted state is the extrapolated one.
pub fn integrate_nonlinear(
    cl: &ClosedLoop,
    y0: &DVector<f64>,
    ytilde0: &DVector<f64>,
    grid: &[f64],
    step_tol: f64,
) -> Result<Trajectory> {
    let f = cl
        .nonlinearity()
        .ok_or_else(|| Error::Mode(format!("integrate_nonlinear called on {} loop", cl.mode().as_str())))?;
    if !(step_tol > 0.0) {
        return Err(Error::Range(format!("step tolerance must be positive, got {step_tol}")));
    }
    check_grid(grid)?;
    let mut x = initial_state(cl, y0, ytilde0)?;
    let guard = divergence_guard(cl, y0, ytilde0);
    if y0.norm() > f.lipschitz_radius() {
        return Err(Error::Divergence {
            time: 0.0,
            norm: y0.norm(),
            guard: f.lipschitz_radius(),
        });
    }
    let h_max = 0.9 / (spectral_norm(cl.block()) + f.lipschitz_constant()).max(f64::MIN_POSITIVE);
    let h_min = 1e-12 * grid.last().unwrap().max(1.0);
    let mut h = h_max;
    let mut states = Vec::with_capacity(grid.len());
    states.push(x.clone());
    for w in grid.windows(2) {
        let mut t = w[0];
        while t < w[1] {
            let step = h.min(w[1] - t);
            let full = rk4_step(cl, &x, step);
            let half = rk4_step(cl, &rk4_step(cl, &x, 0.5 * step), 0.5 * step);
            let diff = &half - &full;
            let err = diff.norm() / 15.0;
            let scale = half.norm().max(x.norm()).max(LOG_FLOOR);
            if !err.is_finite() || err > step_tol * scale {
                h = 0.5 * step;
                if h < h_min {
                    return Err(Error::Stiffness { time: t, step: h });
                }
                continue;
            }
            x = half + diff / 15.0;
            t = if step == w[1] - t { w[1] } else { t + step };
            let norm = x.norm();
            if !norm.is_finite() || norm > guard {
                return Err(Error::Divergence { time: t, norm, guard });
            }
            if err < step_tol * scale / 64.0 {
                h = (2.0 * step).min(h_max);
            } else {
                h = step.max(h);
            }
        }
        states.push(x.clone());
    }
    Ok(Trajectory::from_states(cl, grid.to_vec(), states))
}

/// Integrates either kind of loop; `step_tol` is used only in nonlinear modes.
pub fn integrate(cl: &ClosedLoop, y0: &DVector<f64>, ytilde0: &DVector<f64>, grid: &[f64], step_tol: f64) -> Result<Trajectory> {
    if cl.mode().is_nonlinear() {
        integrate_nonlinear(cl, y0, ytilde0, grid, step_tol)
    } else {
        integrate_linear(cl, y0, ytilde0, grid)
    }
}

/// Least-squares line through `(t, log series)` on `window`, defaulting to
/// `[0.2·H, H]`. The window is cut at the first sample below [`LOG_FLOOR`].
pub fn fit_decay_rate(
    times: &[f64],
    series: &[f64],
    window: Option<(f64, f64)>,
    theoretical: f64,
    tol: f64,
) -> Result<DecayReport> {
    if times.len() != series.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} series values", times.len()),
            actual: series.len().to_string(),
        });
    }
    let horizon = times.last().copied().unwrap_or(0.0);
    let (lo, hi) = window.unwrap_or((0.2 * horizon, horizon));
    if lo > hi || times.first().is_some_and(|&t0| lo < t0) || hi > horizon {
        return Err(Error::Range(format!("fit window [{lo}, {hi}] outside the trajectory span")));
    }
    let mut pts = Vec::new();
    for (&t, &s) in times.iter().zip(series) {
        if t < lo || t > hi {
            continue;
        }
        if !(s >= LOG_FLOOR) {
            break;
        }
        pts.push((t, s.ln()));
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData { samples: pts.len() });
    }
    let l0 = pts[0].1;
    for p in pts.iter_mut() {
        p.1 -= l0;
    }
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let centered = lm - slope * tm;
    let rms = (pts.iter().map(|p| (p.1 - centered - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    let intercept = centered + l0;
    let fitted_rate = -slope;
    Ok(DecayReport {
        fitted_rate,
        fit_intercept: intercept,
        fit_window: (pts[0].0, pts[pts.len() - 1].0),
        fit_rms_residual: rms,
        theoretical_rate: theoretical,
        certified: fitted_rate >= theoretical - tol,
        seed: None,
    })
}

fn trapezoid_cumulative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(values.len());
    out.push(0.0);
    for i in 1..values.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        out.push(acc);
    }
    out
}

/// Maximum over sample pairs `τ < t` of
/// `|V(t) − V(τ) + ∫_τ^t (2λV + ‖W^{1/2}Bᵀỹ‖² + ⟨Ry, y⟩ − 2⟨f(y), Q⁻¹y⟩) ds|`
/// with trapezoid quadrature, divided by `V(0)`.
pub fn energy_audit(traj: &Trajectory, cl: &ClosedLoop) -> Result<f64> {
    if traj.is_empty() {
        return Ok(0.0);
    }
    let y0 = traj.y[0].norm();
    let limit = COUPLING_TOL * (1.0 + y0);
    if let Some(i) = traj.defect.iter().position(|&d| !(d <= limit)) {
        return Err(Error::AuditNotApplicable(format!(
            "coupling defect {:e} exceeds {limit:e} at t = {}",
            traj.defect[i], traj.times[i]
        )));
    }
    let v0 = traj.lyapunov[0];
    if v0 == 0.0 {
        return Ok(0.0);
    }
    let pack = cl.pack();
    let b = &cl.system().b;
    let lambda = pack.lambda();
    let integrand: Vec<f64> = (0..traj.len())
        .map(|i| {
            let y = &traj.y[i];
            let bt = b.transpose() * &traj.ytilde[i];
            let mut g = 2.0 * lambda * traj.lyapunov[i] + (pack.w() * &bt).dot(&bt) + (pack.r() * y).dot(y);
            if let Some(f) = cl.nonlinearity() {
                g -= 2.0 * f.eval(y).dot(&pack.q_factor().solve(y));
            }
            g
        })
        .collect();
    let cumulative = trapezoid_cumulative(&traj.times, &integrand);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, c) in traj.lyapunov.iter().zip(&cumulative) {
        let e = v - v0 + c;
        lo = lo.min(e);
        hi = hi.max(e);
    }
    Ok((hi - lo) / v0)
}

/// Result of [`coupling_audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingAudit {
    pub max_defect: f64,
    /// Decay fit of the defect (dynamic modes with a nonzero initial defect).
    pub decay: Option<DecayReport>,
    /// Largest relative deviation of the defect from `e^{−λ₁t}·defect(0)`
    /// (dynamic modes on skew-adjoint systems).
    pub exact_deviation: Option<f64>,
}

/// The defect below which a dynamic-mode coupling fit stops, relative to its
/// initial value.
pub const COUPLING_FIT_FLOOR: f64 = 1e-4;

/// Static modes: the defect stays below `1e-6·(1 + ‖y₀‖)`. Dynamic modes:
/// the defect decays at rate `λ₁` (exactly on skew-adjoint systems, at least
/// `λ₁ − ω̂₀(A)` otherwise).
pub fn coupling_audit(traj: &Trajectory, cl: &ClosedLoop) -> Result<CouplingAudit> {
    let max_defect = traj.max_defect();
    let Some(lambda1) = cl.lambda1() else {
        let limit = COUPLING_TOL * (1.0 + traj.y.first().map_or(0.0, |y| y.norm()));
        if let Some(i) = traj.defect.iter().position(|&d| !(d <= limit)) {
            return Err(Error::StaticCoupling {
                time: traj.times[i],
                defect: traj.defect[i],
            });
        }
        return Ok(CouplingAudit {
            max_defect,
            decay: None,
            exact_deviation: None,
        });
    };
    let d0 = traj.defect.first().copied().unwrap_or(0.0);
    let scale = traj.y.first().map_or(0.0, |y| y.norm()) + traj.ytilde.first().map_or(0.0, |y| y.norm());
    if !(d0 > 1e-12 * scale.max(LOG_FLOOR)) {
        return Ok(CouplingAudit {
            max_defect,
            decay: None,
            exact_deviation: None,
        });
    }
    let cut = traj
        .defect
        .iter()
        .position(|&d| d < COUPLING_FIT_FLOOR * d0)
        .unwrap_or(traj.len());
    let times = &traj.times[..cut];
    let series = &traj.defect[..cut];
    let skew = cl.system().is_skew_adjoint();
    let theoretical = if skew { lambda1 } else { lambda1 - cl.growth().0 };
    let hi = times.last().copied().unwrap_or(0.0);
    let mut report = fit_decay_rate(times, series, Some((0.0, hi)), theoretical, 0.0)?;
    let exact_deviation = if skew {
        let dev = times
            .iter()
            .zip(series)
            .map(|(&t, &d)| (d / (d0 * (-lambda1 * t).exp()) - 1.0).abs())
            .fold(0.0, f64::max);
        report.certified = (report.fitted_rate - lambda1).abs() <= 1e-6 * lambda1 && dev <= 1e-6;
        Some(dev)
    } else {
        None
    };
    Ok(CouplingAudit {
        max_defect,
        decay: Some(report),
        exact_deviation,
    })
}

pub type TimeFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Data for one check of the duality identity
/// `⟨y(t), z_t⟩ − ⟨y₀, z(0)⟩ = ∫ (⟨u, Bᵀz⟩ − ⟨g, y⟩ + ⟨f, z⟩ + ⟨My, z⟩) ds`
/// where `y' = Ay + f + Bu + My` and `z' = −Aᵀz − g`, `z(t) = z_t`.
pub struct TranspositionProbe {
    pub m: DMatrix<f64>,
    pub f_source: TimeFn,
    pub u_control: TimeFn,
    pub g_source: TimeFn,
    pub y0: DVector<f64>,
    pub z_terminal: DVector<f64>,
    pub horizon: f64,
}

impl TranspositionProbe {
    /// A probe with random `M`, `y₀`, `z_t` and sources of the form
    /// `a + b·sin(ωt)`, entries uniform in `[−1, 1]` and `ω ∈ [0, 5]`.
    pub fn random(n: usize, m: usize, horizon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut source = |len: usize| -> TimeFn {
            let a = DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
            let w = rng.gen_range(0.0..5.0);
            Box::new(move |t: f64| &a + &b * (w * t).sin())
        };
        let f_source = source(n);
        let g_source = source(n);
        let u_control = source(m);
        let y0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let z_terminal = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let m_mat = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        Self {
            m: m_mat,
            f_source,
            u_control,
            g_source,
            y0,
            z_terminal,
            horizon,
        }
    }
}

fn rk4_time<F: Fn(f64, &DVector<f64>) -> DVector<f64>>(rhs: &F, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = rhs(t, x);
    let k2 = rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Composite Simpson on a uniform grid with an even number of intervals,
/// trapezoid otherwise.
fn integrate_samples(times: &[f64], values: &[f64]) -> f64 {
    let intervals = values.len().saturating_sub(1);
    if intervals == 0 {
        return 0.0;
    }
    let h = (times[intervals] - times[0]) / intervals as f64;
    let uniform = times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    if intervals.is_multiple_of(2) && uniform {
        let mut s = values[0] + values[intervals];
        for (i, v) in values.iter().enumerate().take(intervals).skip(1) {
            s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        s * h / 3.0
    } else {
        trapezoid_cumulative(times, values)[intervals]
    }
}

/// Residual of the duality identity, normalized by `(1+‖y₀‖)(1+‖z_t‖)`.
/// `grid` runs from 0 to the probe horizon.
pub fn transposition_audit(system: &ControlSystem, probe: &TranspositionProbe, grid: &[f64]) -> Result<f64> {
    let n = system.state_dim();
    let m = system.input_dim();
    if probe.m.shape() != (n, n) || probe.y0.len() != n || probe.z_terminal.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("probe for n = {n}"),
            actual: format!("M {:?}, y0 {}, z_t {}", probe.m.shape(), probe.y0.len(), probe.z_terminal.len()),
        });
    }
    check_grid(grid)?;
    if (grid[grid.len() - 1] - probe.horizon).abs() > 1e-12 * probe.horizon.max(1.0) {
        return Err(Error::Grid(format!("grid must end at the probe horizon {}", probe.horizon)));
    }
    let a = &system.a;
    let b = &system.b;
    let check = |v: DVector<f64>, len: usize, what: &str| -> Result<DVector<f64>> {
        if v.len() == len {
            Ok(v)
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{what} of length {len}"),
                actual: v.len().to_string(),
            })
        }
    };
    check((probe.f_source)(0.0), n, "f")?;
    check((probe.g_source)(0.0), n, "g")?;
    check((probe.u_control)(0.0), m, "u")?;

    let forward = |t: f64, y: &DVector<f64>| a * y + (probe.f_source)(t) + b * (probe.u_control)(t) + &probe.m * y;
    let backward = |t: f64, z: &DVector<f64>| -(a.transpose() * z) - (probe.g_source)(t);

    let k = grid.len();
    let mut ys = Vec::with_capacity(k);
    ys.push(probe.y0.clone());
    for w in grid.windows(2) {
        let next = rk4_time(&forward, w[0], ys.last().unwrap(), w[1] - w[0]);
        ys.push(next);
    }
    let mut zs = vec![DVector::zeros(n); k];
    zs[k - 1] = probe.z_terminal.clone();
    for i in (0..k - 1).rev() {
        zs[i] = rk4_time(&backward, grid[i + 1], &zs[i + 1], grid[i] - grid[i + 1]);
    }
    let integrand: Vec<f64> = (0..k)
        .map(|i| {
            let t = grid[i];
            let (y, z) = (&ys[i], &zs[i]);
            (probe.u_control)(t).dot(&(b.transpose() * z)) - (probe.g_source)(t).dot(y)
                + (probe.f_source)(t).dot(z)
                + (&probe.m * y).dot(z)
        })
        .collect();
    let lhs = ys[k - 1].dot(&probe.z_terminal) - probe.y0.dot(&zs[0]);
    let residual = (lhs - integrate_samples(grid, &integrand)).abs();
    Ok(residual / ((1.0 + probe.y0.norm()) * (1.0 + probe.z_terminal.norm())))
}

/// Result of [`stabilization_radius_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusReport {
    pub radius: f64,
    pub saturated: bool,
    pub seed: u64,
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

/// Initial data of norm `eps` for a radius trial: `ỹ₀ = Q⁻¹y₀` in static
/// mode, `ỹ₀ = 0` in dynamic mode.
pub fn trial_initial_state(cl: &ClosedLoop, direction: &DVector<f64>, eps: f64) -> (DVector<f64>, DVector<f64>) {
    let y0 = direction * eps;
    let yt0 = if cl.mode().is_dynamic() {
        DVector::zeros(y0.len())
    } else {
        cl.pack().q_factor().solve(&y0)
    };
    (y0, yt0)
}

/// Whether one trajectory from `(y₀, ỹ₀)` meets the decay target:
/// `√V(t) ≤ e^{−γt}√V(0)(1 + 1e-3)` in static mode, a fitted rate of
/// `‖(y, ỹ)‖` at least `2γ − ω̂₀(−Aᵀ) − 1e-3` in dynamic mode.
pub fn trial_passes(cl: &ClosedLoop, y0: &DVector<f64>, yt0: &DVector<f64>, grid: &[f64], step_tol: f64) -> bool {
    let Ok(traj) = integrate(cl, y0, yt0, grid, step_tol) else {
        return false;
    };
    let gamma = cl.gamma().unwrap_or(cl.pack().lambda());
    if cl.mode().is_dynamic() {
        let norms = traj.state_norms();
        fit_decay_rate(&traj.times, &norms, None, cl.theoretical_rate(), 1e-3).is_ok_and(|r| r.certified)
    } else {
        let s = traj.sqrt_lyapunov();
        let s0 = s[0];
        traj.times
            .iter()
            .zip(&s)
            .all(|(&t, &v)| v <= (-gamma * t).exp() * s0 * (1.0 + 1e-3))
    }
}

/// Largest initial norm `ε ∈ [1e-8, r]` for which [`RADIUS_SAMPLES`] seeded
/// initial states all pass [`trial_passes`] over `[0, horizon]`. Geometric
/// bisection with [`RADIUS_BISECTION_STEPS`] steps.
#[allow(clippy::too_many_arguments)]
pub fn stabilization_radius_search(
    system: &ControlSystem,
    pack: &StabilizerPack,
    f: &Nonlinearity,
    mode: LoopMode,
    gamma: f64,
    horizon: f64,
    grid_step: f64,
    seed: u64,
) -> Result<RadiusReport> {
    let lambda = pack.lambda();
    if !(gamma > 0.0 && gamma < lambda) {
        return Err(Error::Range(format!("need 0 < γ < λ, got γ = {gamma}, λ = {lambda}")));
    }
    let cl = assemble_nonlinear(pack, system, mode, f.clone(), None, Some(gamma))?;
    let grid = uniform_grid(horizon, grid_step)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<DVector<f64>> = (0..RADIUS_SAMPLES)
        .map(|_| random_direction(&mut rng, system.state_dim()))
        .collect();
    let passes = |eps: f64| {
        dirs.par_iter().all(|d| {
            let (y0, yt0) = trial_initial_state(&cl, d, eps);
            trial_passes(&cl, &y0, &yt0, &grid, DEFAULT_STEP_TOL)
        })
    };
    let upper = f.lipschitz_radius();
    if passes(upper) {
        return Ok(RadiusReport {
            radius: upper,
            saturated: true,
            seed,
        });
    }
    if !passes(RADIUS_FLOOR) {
        return Err(Error::Inconsistent(format!(
            "decay at rate γ = {gamma} fails even at initial norm {RADIUS_FLOOR:e}"
        )));
    }
    let (mut lo, mut hi) = (RADIUS_FLOOR, upper);
    for _ in 0..RADIUS_BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RadiusReport {
        radius: lo,
        saturated: false,
        seed,
    })
}
