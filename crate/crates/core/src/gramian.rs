//! Weighted controllability Gramians and the companion operators of the
//! identity
//!
//! ```text
//! A Q + Q Aᵀ − B W Bᵀ + Q R Q + 2λ Q = 0.
//! ```
//!
//! `Q` is assembled as `∫ ρ(s) e^{−2λs} e^{−sA} B W Bᵀ e^{−sAᵀ} ds` by
//! composite Gauss–Legendre quadrature. Integrating by parts gives
//! `Q R Q = −∫ ρ'(s) e^{−2λs} e^{−sA} B W Bᵀ e^{−sAᵀ} ds`, which is how `R`
//! is recovered. With `ρ ≡ 1` on `[0, ∞)` the identity holds with `R = 0`
//! and reduces to a Lyapunov equation for `A + λI`, which also gives an
//! independent dense solver used as an oracle.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    max_symmetric_eigenvalue, min_symmetric_eigenvalue, numerical_abscissa, propagator,
    spectral_norm, symmetrize, SpdFactorization,
};
use crate::models::ControlSystem;
use crate::quadrature::{panels, GaussLegendre};

/// Relative threshold on `λ_min/λ_max` of the controllability Gramian.
pub const DEFAULT_CONTROLLABILITY_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-12;
pub const DEFAULT_QUAD_POINTS: usize = 16;
/// Successive node doublings must agree to this relative Frobenius distance.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;
pub const MAX_QUAD_POINTS: usize = 1 << 12;
const MAX_PANEL_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Komornik,
    Urquiza,
    Custom,
}

impl WeightKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightKind::Komornik => "komornik",
            WeightKind::Urquiza => "urquiza",
            WeightKind::Custom => "custom",
        }
    }
}

/// Piecewise-linear `ρ` given by its values at increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearRho {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearRho {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, s: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= s);
        idx.clamp(1, self.knots.len() - 1) - 1
    }

    fn eval(&self, s: f64) -> f64 {
        let i = self.segment(s);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        y0 + (y1 - y0) * (s - x0) / (x1 - x0)
    }

    fn slope(&self, s: f64) -> f64 {
        let i = self.segment(s);
        (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i])
    }
}

/// The scalar weight `ρ(s) e^{−2λs}` of the Gramian integral.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    kind: WeightKind,
    lambda: f64,
    horizon: Option<f64>,
    t_star: Option<f64>,
    truncation_tol: f64,
    custom: Option<PiecewiseLinearRho>,
}

impl WeightProfile {
    /// `ρ = 1` on `[0, T]`, `ρ(t) = 2λ e^{−2λ(T−t)} (T_* − t)` on `(T, T_*]`
    /// with `T_* = T + 1/(2λ)`.
    pub fn komornik(lambda: f64, horizon: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Range(format!(
                "Komornik weight needs λ > 0 (T_* = T + 1/(2λ)), got λ = {lambda}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Range(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            kind: WeightKind::Komornik,
            lambda,
            horizon: Some(horizon),
            t_star: Some(horizon + 1.0 / (2.0 * lambda)),
            truncation_tol: DEFAULT_TRUNCATION_TOL,
            custom: None,
        })
    }

    /// `ρ ≡ 1` on `[0, ∞)`; the integral is truncated once the tail bound
    /// drops below `truncation_tol`.
    pub fn urquiza(lambda: f64) -> Result<Self> {
        Self::urquiza_with_tol(lambda, DEFAULT_TRUNCATION_TOL)
    }

    pub fn urquiza_with_tol(lambda: f64, truncation_tol: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Range(format!("non-finite λ = {lambda}")));
        }
        if !(truncation_tol > 0.0) {
            return Err(Error::Range(format!(
                "truncation tolerance must be positive, got {truncation_tol}"
            )));
        }
        Ok(Self {
            kind: WeightKind::Urquiza,
            lambda,
            horizon: None,
            t_star: None,
            truncation_tol,
            custom: None,
        })
    }

    /// Piecewise-linear `ρ` through `(knots[i], values[i])`. The knots must
    /// run from `0` to `T_*`, and `ρ` must be non-increasing with `ρ(0) = 1`,
    /// `ρ(T) > 0` and `ρ(T_*) = 0`.
    pub fn custom(lambda: f64, horizon: f64, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Range(format!("non-finite λ = {lambda}")));
        }
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Contract(
                "custom weight needs at least two knots and one value per knot".into(),
            ));
        }
        if knots.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite knot or value".into()));
        }
        if knots[0] != 0.0 || knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("knots must start at 0 and increase strictly".into()));
        }
        if values[0] != 1.0 || *values.last().unwrap() != 0.0 {
            return Err(Error::Contract("custom ρ must satisfy ρ(0) = 1 and ρ(T_*) = 0".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Contract("custom ρ must be non-increasing".into()));
        }
        let t_star = *knots.last().unwrap();
        if !(horizon > 0.0 && horizon < t_star) {
            return Err(Error::Range(format!("need 0 < T < T_*, got T = {horizon}, T_* = {t_star}")));
        }
        let rho = PiecewiseLinearRho { knots, values };
        if !(rho.eval(horizon) > 0.0) {
            return Err(Error::Contract("custom ρ must satisfy ρ(T) > 0".into()));
        }
        Ok(Self {
            kind: WeightKind::Custom,
            lambda,
            horizon: Some(horizon),
            t_star: Some(t_star),
            truncation_tol: DEFAULT_TRUNCATION_TOL,
            custom: Some(rho),
        })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    pub fn t_star(&self) -> Option<f64> {
        self.t_star
    }

    pub fn truncation_tol(&self) -> f64 {
        self.truncation_tol
    }

    pub fn custom_rho(&self) -> Option<&PiecewiseLinearRho> {
        self.custom.as_ref()
    }

    /// The same profile with another `λ`. For Komornik weights `T_*` moves
    /// with `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        match self.kind {
            WeightKind::Komornik => Self::komornik(lambda, self.horizon.unwrap_or_default()),
            WeightKind::Urquiza => Self::urquiza_with_tol(lambda, self.truncation_tol),
            WeightKind::Custom => {
                let mut p = self.clone();
                p.lambda = lambda;
                Ok(p)
            }
        }
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        let upper = self.t_star.unwrap_or(f64::INFINITY);
        if !(s >= 0.0 && s <= upper) {
            return Err(Error::Range(format!("s = {s} outside [0, {upper}]")));
        }
        Ok(())
    }

    /// `ρ(s)`.
    pub fn rho(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(match self.kind {
            WeightKind::Urquiza => 1.0,
            WeightKind::Komornik => {
                let (t, ts) = (self.horizon.unwrap(), self.t_star.unwrap());
                if s <= t {
                    1.0
                } else {
                    2.0 * self.lambda * (-2.0 * self.lambda * (t - s)).exp() * (ts - s)
                }
            }
            WeightKind::Custom => self.custom.as_ref().unwrap().eval(s),
        })
    }

    /// `ρ'(s)`. Komornik's `ρ` is continuous at `T`, so there is no point
    /// mass; at kinks the right derivative is returned.
    pub fn rho_prime(&self, s: f64) -> Result<f64> {
        self.check_domain(s)?;
        Ok(match self.kind {
            WeightKind::Urquiza => 0.0,
            WeightKind::Komornik => {
                let (t, ts) = (self.horizon.unwrap(), self.t_star.unwrap());
                let l = self.lambda;
                if s < t {
                    0.0
                } else {
                    2.0 * l * (-2.0 * l * (t - s)).exp() * (2.0 * l * (ts - s) - 1.0)
                }
            }
            WeightKind::Custom => self.custom.as_ref().unwrap().slope(s),
        })
    }

    /// Interior points where `ρ` or `ρ'` may jump; quadrature panels break
    /// there.
    fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            WeightKind::Urquiza => Vec::new(),
            WeightKind::Komornik => vec![self.horizon.unwrap()],
            WeightKind::Custom => {
                let mut b = self.custom.as_ref().unwrap().knots.clone();
                b.push(self.horizon.unwrap());
                b
            }
        }
    }
}

/// The full integrand weight `ρ(s) e^{−2λs}`.
pub fn weight_eval(profile: &WeightProfile, s: f64) -> Result<f64> {
    Ok(profile.rho(s)? * (-2.0 * profile.lambda * s).exp())
}

/// `Q` together with the factorization, `R`, `W`, `λ` and the residual of
/// the operator identity.
#[derive(Debug, Clone)]
pub struct StabilizerPack {
    q: DMatrix<f64>,
    q_factor: SpdFactorization,
    r: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: f64,
    identity_residual: f64,
    weight: WeightProfile,
}

impl StabilizerPack {
    /// Assembles a pack from its operators, factorizing `Q` and computing the
    /// identity residual against `system`.
    pub fn from_parts(
        system: &ControlSystem,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        w: DMatrix<f64>,
        weight: WeightProfile,
    ) -> Result<Self> {
        let n = system.state_dim();
        let m = system.input_dim();
        for (name, mat, dim) in [("Q", &q, n), ("R", &r, n), ("W", &w, m)] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: format!("{name} of size {dim}x{dim}"),
                    actual: format!("{}x{}", mat.nrows(), mat.ncols()),
                });
            }
        }
        let q_factor = SpdFactorization::new(&q, 1e-14)?;
        let lambda = weight.lambda();
        let identity_residual = relative_residual(system, &q, &r, &w, lambda);
        Ok(Self {
            q,
            q_factor,
            r,
            w,
            lambda,
            identity_residual,
            weight,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_factor(&self) -> &SpdFactorization {
        &self.q_factor
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn identity_residual(&self) -> f64 {
        self.identity_residual
    }

    pub fn weight(&self) -> &WeightProfile {
        &self.weight
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `‖R‖_F ≤ 1e-9`.
    pub fn has_zero_r(&self) -> bool {
        self.r.norm() <= 1e-9
    }
}

/// `AQ + QAᵀ − BWBᵀ + QRQ + 2λQ`.
pub fn identity_residual_matrix(
    system: &ControlSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let a = &system.a;
    let b = &system.b;
    a * q + q * a.transpose() - b * w * b.transpose() + q * r * q + q * (2.0 * lambda)
}

fn relative_residual(
    system: &ControlSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    identity_residual_matrix(system, q, r, w, lambda).norm() / (1.0 + q.norm())
}

/// Relative Frobenius residual `‖AQ + QAᵀ − BWBᵀ + QRQ + 2λQ‖_F / (1+‖Q‖_F)`.
pub fn verify_identity(system: &ControlSystem, pack: &StabilizerPack) -> f64 {
    let residual = relative_residual(system, &pack.q, &pack.r, &pack.w, pack.lambda);
    debug_assert!(
        bilinear_discrepancy(system, pack, 0x5eed) <= 1e-12,
        "bilinear and matrix forms of the identity disagree"
    );
    residual
}

/// Largest disagreement, over 10 seeded random pairs `(x, y)`, between the
/// bilinear form
///
/// `⟨Qx, Aᵀy⟩ + ⟨Aᵀx, Qy⟩ − ⟨WBᵀx, Bᵀy⟩ + ⟨RQx, Qy⟩ + 2λ⟨Qx, y⟩`
///
/// and `⟨E x, y⟩` with `E` the residual matrix, relative to the sum of the
/// magnitudes of the individual terms.
pub fn bilinear_discrepancy(system: &ControlSystem, pack: &StabilizerPack, seed: u64) -> f64 {
    let n = system.state_dim();
    let e = identity_residual_matrix(system, &pack.q, &pack.r, &pack.w, pack.lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = system.a.transpose();
    let bt = system.b.transpose();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let qx = &pack.q * &x;
        let qy = &pack.q * &y;
        let terms = [
            qx.dot(&(&at * &y)),
            (&at * &x).dot(&qy),
            -(&pack.w * (&bt * &x)).dot(&(&bt * &y)),
            (&pack.r * &qx).dot(&qy),
            2.0 * pack.lambda * qx.dot(&y),
        ];
        let bilinear: f64 = terms.iter().sum();
        let scale: f64 = 1.0 + terms.iter().map(|t| t.abs()).sum::<f64>();
        let matrix = y.dot(&(&e * &x));
        worst = worst.max((bilinear - matrix).abs() / scale);
    }
    worst
}

fn check_weight_operator(system: &ControlSystem, w: &DMatrix<f64>) -> Result<()> {
    let m = system.input_dim();
    if w.nrows() != m || w.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("W of size {m}x{m}"),
            actual: format!("{}x{}", w.nrows(), w.ncols()),
        });
    }
    let norm = w.norm();
    if (w - w.transpose()).norm() > 1e-12 * norm {
        return Err(Error::Contract("W must be symmetric".into()));
    }
    if norm > 0.0 && min_symmetric_eigenvalue(w) < -1e-12 * norm {
        return Err(Error::NotPsd {
            eigenvalue: min_symmetric_eigenvalue(w),
        });
    }
    Ok(())
}

/// Integration interval for a profile: `[0, T_*]`, or `[0, s_max]` with the
/// tail bound `‖B‖²‖W‖ e^{−2(λ−μ)s} / (2(λ−μ))` below the truncation
/// tolerance, where `μ = μ(−Aᵀ)`.
fn integration_interval(system: &ControlSystem, w: &DMatrix<f64>, profile: &WeightProfile) -> Result<f64> {
    if let Some(ts) = profile.t_star() {
        return Ok(ts);
    }
    let mu = numerical_abscissa(&(-system.a.transpose()));
    let gap = profile.lambda() - mu;
    if !(gap > 0.0) {
        return Err(Error::SpectrumOverlap(format!(
            "infinite-horizon Gramian needs λ > ω̂₀(−Aᵀ) = {mu:.6}, got λ = {}",
            profile.lambda()
        )));
    }
    let k = spectral_norm(&system.b).powi(2) * spectral_norm(w);
    if k == 0.0 {
        return Ok(1.0);
    }
    let s_max = (k / (2.0 * gap * profile.truncation_tol())).ln() / (2.0 * gap);
    Ok(s_max.max(1.0))
}

/// Quadrature sums of `∫ ρ e^{−2λs} F(s) ds` and `−∫ ρ' e^{−2λs} F(s) ds`
/// with `F(s) = e^{−sA} B W Bᵀ e^{−sAᵀ}`, using `points` nodes per panel.
fn weighted_integrals(
    system: &ControlSystem,
    w: &DMatrix<f64>,
    profile: &WeightProfile,
    upper: f64,
    points: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = system.state_dim();
    let a_norm = spectral_norm(&system.a);
    let width = if a_norm > 0.0 {
        MAX_PANEL_WIDTH.min(1.0 / a_norm)
    } else {
        MAX_PANEL_WIDTH
    };
    let rule = GaussLegendre::new(points);
    let cells = panels(0.0, upper, width, &profile.breakpoints());
    let with_r = profile.kind() != WeightKind::Urquiza;
    let minus_a = -&system.a;
    let bw = &system.b * w;
    let partial: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = cells
        .par_iter()
        .map(|&(lo, hi)| {
            let mut q = DMatrix::zeros(n, n);
            let mut g = DMatrix::zeros(n, n);
            for (s, wt) in rule.mapped(lo, hi) {
                let decay = (-2.0 * profile.lambda() * s).exp();
                let e = propagator(&minus_a, s)?;
                let left = &e * &bw;
                let right = &e * &system.b;
                let f = left * right.transpose();
                q += &f * (wt * profile.rho(s)? * decay);
                if with_r {
                    g -= &f * (wt * profile.rho_prime(s)? * decay);
                }
            }
            Ok((q, g))
        })
        .collect();
    let partial = partial.into_iter().collect::<Result<Vec<_>>>()?;
    let (q, g) = pairwise_sum(&partial, n);
    Ok((symmetrize(&q), symmetrize(&g)))
}

/// Fixed-order pairwise reduction so the result does not depend on thread
/// scheduling.
fn pairwise_sum(parts: &[(DMatrix<f64>, DMatrix<f64>)], n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    match parts.len() {
        0 => (DMatrix::zeros(n, n), DMatrix::zeros(n, n)),
        1 => parts[0].clone(),
        len => {
            let (l, r) = parts.split_at(len / 2);
            let (lq, lg) = pairwise_sum(l, n);
            let (rq, rg) = pairwise_sum(r, n);
            (lq + rq, lg + rg)
        }
    }
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let scale = new.norm().max(old.norm());
    if scale == 0.0 {
        0.0
    } else {
        (new - old).norm() / scale
    }
}

/// Doubles the nodes per panel until both integrals settle.
fn converged_integrals(
    system: &ControlSystem,
    w: &DMatrix<f64>,
    profile: &WeightProfile,
    quad_points: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if quad_points < 16 {
        return Err(Error::Contract(format!("quad_points must be ≥ 16, got {quad_points}")));
    }
    check_weight_operator(system, w)?;
    let upper = integration_interval(system, w, profile)?;
    let mut points = quad_points.min(MAX_QUAD_POINTS);
    let mut prev = weighted_integrals(system, w, profile, upper, points)?;
    loop {
        let next_points = points * 2;
        if next_points > MAX_QUAD_POINTS {
            return Err(Error::Accuracy(format!(
                "Gramian quadrature not converged at {points} nodes per panel"
            )));
        }
        let next = weighted_integrals(system, w, profile, upper, next_points)?;
        let change = relative_change(&next.0, &prev.0).max(relative_change(&next.1, &prev.1));
        if change < QUADRATURE_REL_TOL {
            return Ok(next);
        }
        prev = next;
        points = next_points;
    }
}

fn require_positive_definite(q: &DMatrix<f64>, profile: &WeightProfile) -> Result<SpdFactorization> {
    SpdFactorization::new(q, 1e-14).map_err(|e| {
        let hint = match profile.horizon() {
            Some(t) => format!(
                "Q is not positive definite ({e}); need ρ(T) > 0 at T = {t}, W > 0 and (A, B) controllable on [0, T]"
            ),
            None => format!("Q is not positive definite ({e}); need W > 0 and (A, B) controllable"),
        };
        Error::Controllability(hint)
    })
}

/// `Q = ∫ ρ(s) e^{−2λs} e^{−sA} B W Bᵀ e^{−sAᵀ} ds`, symmetrized.
pub fn build_gramian(
    system: &ControlSystem,
    w: &DMatrix<f64>,
    profile: &WeightProfile,
    quad_points: usize,
) -> Result<DMatrix<f64>> {
    let (q, _) = converged_integrals(system, w, profile, quad_points)?;
    require_positive_definite(&q, profile)?;
    Ok(q)
}

fn r_from_gr(g_r: &DMatrix<f64>, q_factor: &SpdFactorization) -> Result<DMatrix<f64>> {
    // R = Q⁻¹ G_R Q⁻¹
    let left = q_factor.solve_matrix(g_r);
    let r = symmetrize(&q_factor.solve_matrix(&left.transpose()));
    let floor = -1e-9 * r.norm().max(1.0);
    let min = min_symmetric_eigenvalue(&r);
    if min < floor {
        return Err(Error::WeightMonotonicity { eigenvalue: min });
    }
    Ok(r)
}

/// `R = Q⁻¹ G_R Q⁻¹` with `G_R = −∫ ρ'(s) e^{−2λs} e^{−sA} B W Bᵀ e^{−sAᵀ} ds`.
/// Zero for the infinite-horizon profile.
pub fn build_r(
    system: &ControlSystem,
    w: &DMatrix<f64>,
    profile: &WeightProfile,
    q_factor: &SpdFactorization,
    quad_points: usize,
) -> Result<DMatrix<f64>> {
    let n = system.state_dim();
    if profile.kind() == WeightKind::Urquiza {
        return Ok(DMatrix::zeros(n, n));
    }
    let (_, g_r) = converged_integrals(system, w, profile, quad_points)?;
    r_from_gr(&g_r, q_factor)
}

/// Builds `Q` and `R` in one quadrature pass and certifies the result.
pub fn build_pack(
    system: &ControlSystem,
    w: &DMatrix<f64>,
    profile: &WeightProfile,
    quad_points: usize,
) -> Result<StabilizerPack> {
    let (q, g_r) = converged_integrals(system, w, profile, quad_points)?;
    let q_factor = require_positive_definite(&q, profile)?;
    let r = if profile.kind() == WeightKind::Urquiza {
        DMatrix::zeros(system.state_dim(), system.state_dim())
    } else {
        r_from_gr(&g_r, &q_factor)?
    };
    StabilizerPack::from_parts(system, q, r, w.clone(), profile.clone())
}

/// Solves `(A+λI) Q + Q (A+λI)ᵀ = B W Bᵀ` by a dense Kronecker linear
/// solve, independently of any quadrature.
pub fn lyapunov_oracle(system: &ControlSystem, w: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_weight_operator(system, w)?;
    let n = system.state_dim();
    let shifted = &system.a + DMatrix::<f64>::identity(n, n) * lambda;
    let eig = shifted.complex_eigenvalues();
    let scale = 1.0 + spectral_norm(&shifted);
    for i in 0..n {
        for j in 0..n {
            if (eig[i] + eig[j]).norm() <= 1e-10 * scale {
                return Err(Error::SpectrumOverlap(format!(
                    "eigenvalues {} and {} of A+λI sum to zero",
                    eig[i], eig[j]
                )));
            }
        }
    }
    // vec(A_λ Q + Q A_λᵀ) = (I ⊗ A_λ + A_λ ⊗ I) vec(Q), column-major vec
    let ident = DMatrix::<f64>::identity(n, n);
    let kron = ident.kronecker(&shifted) + shifted.kronecker(&ident);
    let rhs_mat = &system.b * w * system.b.transpose();
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let lu = kron.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SpectrumOverlap("Kronecker system is singular".into()))?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::SpectrumOverlap("Kronecker solve produced non-finite values".into()));
    }
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Exact-controllability verdicts from the Gramian and the Kalman rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub horizon: f64,
    pub gramian_min_eigenvalue: f64,
    pub gramian_max_eigenvalue: f64,
    pub kalman_rank: usize,
    pub is_exactly_controllable: bool,
}

/// `M = ∫₀^T e^{sA} B Bᵀ e^{sAᵀ} ds`.
pub fn controllability_gramian(system: &ControlSystem, horizon: f64) -> Result<DMatrix<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Range(format!("horizon must be positive, got {horizon}")));
    }
    let n = system.state_dim();
    let a_norm = spectral_norm(&system.a);
    let width = if a_norm > 0.0 {
        MAX_PANEL_WIDTH.min(1.0 / a_norm)
    } else {
        MAX_PANEL_WIDTH
    };
    let rule = GaussLegendre::new(32);
    let mut m = DMatrix::zeros(n, n);
    for (lo, hi) in panels(0.0, horizon, width, &[]) {
        for (s, wt) in rule.mapped(lo, hi) {
            let eb = propagator(&system.a, s)? * &system.b;
            m += &eb * eb.transpose() * wt;
        }
    }
    Ok(symmetrize(&m))
}

/// Rank of the Kalman matrix `[B, AB, …, A^{n−1}B]`, computed by an
/// orthogonalized block-Krylov (staircase) iteration so that the powers of
/// `A` never appear explicitly.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let a_scale = spectral_norm(a).max(f64::MIN_POSITIVE);
    let b_scale = spectral_norm(b);
    if b_scale == 0.0 {
        return 0;
    }
    let drop_tol = 1e-9;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut frontier: Vec<DVector<f64>> = b.column_iter().map(|c| c / b_scale).collect();
    while !frontier.is_empty() && basis.len() < n {
        let mut fresh = Vec::new();
        for mut v in frontier {
            let start = v.norm();
            if start == 0.0 {
                continue;
            }
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&v);
                    v -= q * c;
                }
            }
            let norm = v.norm();
            if norm > drop_tol * start.max(1.0) && norm > drop_tol {
                let q = v / norm;
                basis.push(q.clone());
                fresh.push(q);
                if basis.len() == n {
                    break;
                }
            }
        }
        frontier = fresh.iter().map(|q| a * q / a_scale).collect();
    }
    basis.len()
}

/// Checks exact controllability on `[0, horizon]` by two routes: the
/// minimum eigenvalue of the controllability Gramian relative to its maximum
/// (the observability constant), and the Kalman rank. The routes must agree.
pub fn check_controllability(
    system: &ControlSystem,
    horizon: f64,
    threshold: f64,
) -> Result<ControllabilityReport> {
    let m = controllability_gramian(system, horizon)?;
    let min = min_symmetric_eigenvalue(&m);
    let max = max_symmetric_eigenvalue(&m);
    let rank = kalman_rank(&system.a, &system.b);
    let n = system.state_dim();
    let by_gramian = max > 0.0 && min > threshold * max;
    let by_rank = rank == n;
    if by_gramian != by_rank {
        return Err(Error::Conditioning {
            gramian_min_eigenvalue: min,
            kalman_rank: rank,
            dim: n,
        });
    }
    Ok(ControllabilityReport {
        horizon,
        gramian_min_eigenvalue: min,
        gramian_max_eigenvalue: max,
        kalman_rank: rank,
        is_exactly_controllable: by_rank,
    })
}

/// Growth-bound estimates for `e^{tA}` and `e^{−tAᵀ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBounds {
    /// `μ(A)`, valid with constant `c = 1`.
    pub omega_a: f64,
    /// `μ(−Aᵀ)`, valid with constant `c = 1`.
    pub omega_minus_adjoint: f64,
    /// `max_t log‖e^{tA}‖₂ / t` over the sample times.
    pub sampled_a: f64,
    pub sampled_minus_adjoint: f64,
}

impl GrowthBounds {
    /// The reported pair `(ω̂₀(A), ω̂₀(−Aᵀ))`.
    pub fn pair(&self) -> (f64, f64) {
        (self.omega_a, self.omega_minus_adjoint)
    }
}

pub fn growth_bounds(a: &DMatrix<f64>, sample_horizon: f64, samples: usize) -> Result<GrowthBounds> {
    if samples < 8 {
        return Err(Error::Contract(format!("need at least 8 samples, got {samples}")));
    }
    if !(sample_horizon > 0.0) {
        return Err(Error::Range(format!("sample horizon must be positive, got {sample_horizon}")));
    }
    let minus_at = -a.transpose();
    let sampled = |g: &DMatrix<f64>| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for k in 1..=samples {
            let t = sample_horizon * k as f64 / samples as f64;
            let norm = spectral_norm(&propagator(g, t)?);
            best = best.max(norm.ln() / t);
        }
        Ok(best)
    };
    Ok(GrowthBounds {
        omega_a: numerical_abscissa(a),
        omega_minus_adjoint: numerical_abscissa(&minus_at),
        sampled_a: sampled(a)?,
        sampled_minus_adjoint: sampled(&minus_at)?,
    })
}

/// `(ω̂₀(A), ω̂₀(−Aᵀ))` with the default sampling.
pub fn growth_pair(a: &DMatrix<f64>) -> (f64, f64) {
    (numerical_abscissa(a), numerical_abscissa(&(-a.transpose())))
}
