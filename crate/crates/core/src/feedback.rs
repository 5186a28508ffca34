//! Closed-loop assembly for trajectory (static) and dynamic feedback.
//!
//! The closed loop acts on the doubled state `x = (y, ỹ)`:
//!
//! ```text
//! static:   y' = Ay + f(y) − BWBᵀỹ
//!           ỹ' = −Aᵀỹ − 2λỹ − RQỹ + Q⁻¹f(Qỹ)
//! dynamic:  y' = Ay + f(y) − BWBᵀỹ
//!           ỹ' = −Aᵀỹ − 2λỹ + Q⁻¹f(Qỹ) + λ₁Q⁻¹(y − Qỹ)
//! ```
//!
//! with `f ≡ 0` in the linear modes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gramian::{growth_pair, StabilizerPack};
use crate::linalg::spectral_abscissa;
use crate::models::ControlSystem;

/// Packs with a larger identity residual are refused by the assemblers.
pub const MAX_PACK_RESIDUAL: f64 = 1e-6;

pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type Modulus = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A nonlinearity `f` that vanishes to first order at the origin and is
/// Lipschitz with constant `Λ` on the ball of radius `r`.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    evaluator: VectorMap,
    lipschitz_radius: f64,
    lipschitz_constant: f64,
    vanishing_modulus: Modulus,
}

impl Nonlinearity {
    pub fn new(
        name: impl Into<String>,
        evaluator: VectorMap,
        lipschitz_radius: f64,
        lipschitz_constant: f64,
        vanishing_modulus: Modulus,
    ) -> Self {
        Self {
            name: name.into(),
            evaluator,
            lipschitz_radius,
            lipschitz_constant,
            vanishing_modulus,
        }
    }

    /// `f ≡ 0`.
    pub fn zero() -> Self {
        Self::new(
            "zero",
            Arc::new(|y: &DVector<f64>| DVector::zeros(y.len())),
            1.0,
            0.0,
            Arc::new(|_| f64::INFINITY),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.evaluator)(y)
    }

    pub fn lipschitz_radius(&self) -> f64 {
        self.lipschitz_radius
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_constant
    }

    /// `δ(ε)` such that `‖f(x)‖ ≤ ε‖x‖` whenever `‖x‖ < δ(ε)`.
    pub fn vanishing_radius(&self, eps: f64) -> f64 {
        (self.vanishing_modulus)(eps)
    }

    /// Spot-checks the declared constants in dimension 4: `f(0) = 0`, the
    /// Lipschitz bound on 100 random pairs inside the radius, and the
    /// vanishing bound at `ε ∈ {0.1, 0.01}`.
    pub fn spot_check(&self, seed: u64) -> Result<()> {
        self.spot_check_in(4, seed)
    }

    pub fn spot_check_in(&self, dim: usize, seed: u64) -> Result<()> {
        let reject = |msg: String| Err(Error::RejectedNonlinearity(format!("{}: {msg}", self.name)));
        let f0 = self.eval(&DVector::zeros(dim));
        if f0.len() != dim {
            return reject(format!("maps dimension {dim} to {}", f0.len()));
        }
        if f0.norm() != 0.0 {
            return reject(format!("f(0) = {:e} ≠ 0", f0.norm()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.lipschitz_radius;
        let mut sample = |radius: f64| {
            let dir = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let len = radius * rng.gen_range(0.0..1.0f64);
            if dir.norm() == 0.0 {
                dir
            } else {
                dir.normalize() * len
            }
        };
        for _ in 0..100 {
            let x = sample(r);
            let y = sample(r);
            let lhs = (self.eval(&x) - self.eval(&y)).norm();
            let rhs = self.lipschitz_constant * (&x - &y).norm();
            if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
                return reject(format!("Lipschitz bound violated: {lhs:e} > {rhs:e}"));
            }
        }
        for eps in [0.1, 0.01] {
            let delta = self.vanishing_radius(eps).min(r);
            for _ in 0..100 {
                let x = sample(delta);
                let fx = self.eval(&x).norm();
                if fx > eps * x.norm() * (1.0 + 1e-12) {
                    return reject(format!("‖f(x)‖ = {fx:e} > ε‖x‖ at ε = {eps}"));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("lipschitz_radius", &self.lipschitz_radius)
            .field("lipschitz_constant", &self.lipschitz_constant)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    StaticLinear,
    DynamicLinear,
    StaticNonlinear,
    DynamicNonlinear,
}

impl LoopMode {
    pub fn is_dynamic(self) -> bool {
        matches!(self, LoopMode::DynamicLinear | LoopMode::DynamicNonlinear)
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, LoopMode::StaticNonlinear | LoopMode::DynamicNonlinear)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LoopMode::StaticLinear => "static",
            LoopMode::DynamicLinear => "dynamic",
            LoopMode::StaticNonlinear => "static_nonlinear",
            LoopMode::DynamicNonlinear => "dynamic_nonlinear",
        }
    }
}

impl std::str::FromStr for LoopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" | "static_linear" => Ok(LoopMode::StaticLinear),
            "dynamic" | "dynamic_linear" => Ok(LoopMode::DynamicLinear),
            "static_nonlinear" => Ok(LoopMode::StaticNonlinear),
            "dynamic_nonlinear" => Ok(LoopMode::DynamicNonlinear),
            other => Err(Error::Parse(format!("unknown closed-loop mode {other:?}"))),
        }
    }
}

/// An assembled closed loop on the doubled state `(y, ỹ)`.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    mode: LoopMode,
    system: ControlSystem,
    pack: StabilizerPack,
    lambda1: Option<f64>,
    gamma: Option<f64>,
    nonlinearity: Option<Nonlinearity>,
    /// Linear part of the vector field (the whole field in linear modes).
    block: DMatrix<f64>,
    growth: (f64, f64),
    rate_certified: bool,
}

impl ClosedLoop {
    pub fn mode(&self) -> LoopMode {
        self.mode
    }

    pub fn system(&self) -> &ControlSystem {
        &self.system
    }

    pub fn pack(&self) -> &StabilizerPack {
        &self.pack
    }

    pub fn lambda1(&self) -> Option<f64> {
        self.lambda1
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn nonlinearity(&self) -> Option<&Nonlinearity> {
        self.nonlinearity.as_ref()
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    /// `(ω̂₀(A), ω̂₀(−Aᵀ))` used for the rate condition.
    pub fn growth(&self) -> (f64, f64) {
        self.growth
    }

    /// `λ₁ − 2λ > ω̂₀(A) − ω̂₀(−Aᵀ)` (dynamic modes only).
    pub fn rate_certified(&self) -> bool {
        self.rate_certified
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Evaluates the closed-loop vector field at `x = (y, ỹ)`.
    pub fn field(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.block * x;
        if let Some(f) = &self.nonlinearity {
            let n = self.state_dim();
            let y = x.rows(0, n).into_owned();
            let yt = x.rows(n, n).into_owned();
            let fy = f.eval(&y);
            // Q⁻¹ f(Q ỹ) via a factorized solve
            let back = self.pack.q_factor().solve(&f.eval(&(self.pack.q() * yt)));
            let mut top = out.rows_mut(0, n);
            top += fy;
            let mut bottom = out.rows_mut(n, n);
            bottom += back;
        }
        out
    }

    /// The static-mode theoretical rate for `√V` and the dynamic-mode rate
    /// for `‖(y, ỹ)‖`.
    pub fn theoretical_rate(&self) -> f64 {
        let lambda = self.pack.lambda();
        match self.mode {
            LoopMode::StaticLinear => lambda,
            LoopMode::StaticNonlinear => self.gamma.unwrap_or(lambda),
            LoopMode::DynamicLinear => 2.0 * lambda - self.growth.1,
            LoopMode::DynamicNonlinear => 2.0 * self.gamma.unwrap_or(lambda) - self.growth.1,
        }
    }
}

fn check_pack(pack: &StabilizerPack, system: &ControlSystem) -> Result<()> {
    if pack.state_dim() != system.state_dim() || pack.input_dim() != system.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("pack for n={}, m={}", system.state_dim(), system.input_dim()),
            actual: format!("n={}, m={}", pack.state_dim(), pack.input_dim()),
        });
    }
    let residual = pack.identity_residual();
    if !(residual <= MAX_PACK_RESIDUAL) {
        return Err(Error::Residual {
            residual,
            limit: MAX_PACK_RESIDUAL,
        });
    }
    Ok(())
}

fn bwbt(system: &ControlSystem, pack: &StabilizerPack) -> DMatrix<f64> {
    &system.b * pack.w() * system.b.transpose()
}

fn static_block(pack: &StabilizerPack, system: &ControlSystem) -> DMatrix<f64> {
    let n = system.state_dim();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&system.a);
    block.view_mut((0, n), (n, n)).copy_from(&(-bwbt(system, pack)));
    let lower = -system.a.transpose()
        - DMatrix::<f64>::identity(n, n) * (2.0 * pack.lambda())
        - pack.r() * pack.q();
    block.view_mut((n, n), (n, n)).copy_from(&lower);
    block
}

fn dynamic_block(pack: &StabilizerPack, system: &ControlSystem, lambda1: f64) -> DMatrix<f64> {
    let n = system.state_dim();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&system.a);
    block.view_mut((0, n), (n, n)).copy_from(&(-bwbt(system, pack)));
    block
        .view_mut((n, 0), (n, n))
        .copy_from(&(pack.q_factor().inverse() * lambda1));
    let lower = -system.a.transpose() - DMatrix::<f64>::identity(n, n) * (2.0 * pack.lambda() + lambda1);
    block.view_mut((n, n), (n, n)).copy_from(&lower);
    block
}

/// Default `λ₁ = 2λ + ω̂₀(A) − ω̂₀(−Aᵀ) + 1`.
pub fn default_lambda1(pack: &StabilizerPack, system: &ControlSystem) -> f64 {
    let (wa, wm) = growth_pair(&system.a);
    2.0 * pack.lambda() + (wa - wm) + 1.0
}

fn rate_condition(lambda1: f64, lambda: f64, growth: (f64, f64)) -> bool {
    lambda1 - 2.0 * lambda > growth.0 - growth.1
}

/// Trajectory feedback: `[[A, −BWBᵀ], [0, −Aᵀ − 2λI − RQ]]`.
pub fn assemble_static(pack: &StabilizerPack, system: &ControlSystem) -> Result<ClosedLoop> {
    check_pack(pack, system)?;
    Ok(ClosedLoop {
        mode: LoopMode::StaticLinear,
        system: system.clone(),
        pack: pack.clone(),
        lambda1: None,
        gamma: None,
        nonlinearity: None,
        block: static_block(pack, system),
        growth: growth_pair(&system.a),
        rate_certified: false,
    })
}

fn require_zero_r(pack: &StabilizerPack) -> Result<()> {
    if !pack.has_zero_r() {
        return Err(Error::Mode(format!(
            "dynamic feedback requires the identity with R = 0, but ‖R‖_F = {:e}",
            pack.r().norm()
        )));
    }
    Ok(())
}

/// Dynamic feedback: `[[A, −BWBᵀ], [λ₁Q⁻¹, −Aᵀ − (2λ + λ₁)I]]`.
pub fn assemble_dynamic(pack: &StabilizerPack, system: &ControlSystem, lambda1: Option<f64>) -> Result<ClosedLoop> {
    check_pack(pack, system)?;
    require_zero_r(pack)?;
    let lambda1 = lambda1.unwrap_or_else(|| default_lambda1(pack, system));
    if !lambda1.is_finite() {
        return Err(Error::Range(format!("non-finite λ₁ = {lambda1}")));
    }
    let growth = growth_pair(&system.a);
    Ok(ClosedLoop {
        mode: LoopMode::DynamicLinear,
        system: system.clone(),
        pack: pack.clone(),
        lambda1: Some(lambda1),
        gamma: None,
        nonlinearity: None,
        block: dynamic_block(pack, system, lambda1),
        growth,
        rate_certified: rate_condition(lambda1, pack.lambda(), growth),
    })
}

/// Closed loop with a nonlinearity. `mode` selects static or dynamic
/// feedback; `lambda1` and `gamma` are used by the dynamic mode and default
/// to [`default_lambda1`] and `0.9λ`.
pub fn assemble_nonlinear(
    pack: &StabilizerPack,
    system: &ControlSystem,
    mode: LoopMode,
    f: Nonlinearity,
    lambda1: Option<f64>,
    gamma: Option<f64>,
) -> Result<ClosedLoop> {
    check_pack(pack, system)?;
    let lambda = pack.lambda();
    let growth = growth_pair(&system.a);
    f.spot_check_in(system.state_dim(), 0xf00d)?;
    match mode {
        LoopMode::StaticNonlinear => {
            if !(lambda > 0.0) {
                return Err(Error::Mode(format!("static nonlinear feedback needs λ > 0, got {lambda}")));
            }
            if let Some(g) = gamma {
                if !(g > 0.0 && g < lambda) {
                    return Err(Error::Range(format!("need 0 < γ < λ, got γ = {g}, λ = {lambda}")));
                }
            }
            Ok(ClosedLoop {
                mode,
                system: system.clone(),
                pack: pack.clone(),
                lambda1: None,
                gamma: Some(gamma.unwrap_or(0.9 * lambda)),
                nonlinearity: Some(f),
                block: static_block(pack, system),
                growth,
                rate_certified: false,
            })
        }
        LoopMode::DynamicNonlinear => {
            require_zero_r(pack)?;
            let gamma = gamma.unwrap_or(0.9 * lambda);
            if !(gamma < lambda) {
                return Err(Error::Mode(format!("need γ < λ, got γ = {gamma}, λ = {lambda}")));
            }
            if !(2.0 * gamma - growth.1 > 0.0) {
                return Err(Error::Mode(format!(
                    "need 2γ − ω̂₀(−Aᵀ) > 0, got γ = {gamma}, ω̂₀(−Aᵀ) = {}",
                    growth.1
                )));
            }
            let lambda1 = lambda1.unwrap_or_else(|| default_lambda1(pack, system));
            Ok(ClosedLoop {
                mode,
                system: system.clone(),
                pack: pack.clone(),
                lambda1: Some(lambda1),
                gamma: Some(gamma),
                nonlinearity: Some(f),
                block: dynamic_block(pack, system, lambda1),
                growth,
                rate_certified: rate_condition(lambda1, lambda, growth),
            })
        }
        other => Err(Error::Mode(format!("{} is not a nonlinear mode", other.as_str()))),
    }
}

/// Generator of the static closed-loop semigroup,
/// `A^Q = −QAᵀQ⁻¹ − 2λI − QR`, checked against `A − BWBᵀQ⁻¹`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub matrix: DMatrix<f64>,
    /// `‖(A − BWBᵀQ⁻¹ − A^Q) Q‖_F / (1 + ‖Q‖_F)`.
    pub consistency_defect: f64,
    pub spectral_abscissa: f64,
}

/// Floor on the consistency limit, covering round-off in the two solves.
pub const CONSISTENCY_FLOOR: f64 = 1e-13;

/// Computes [`Generator`] without checking the pack or the defect.
pub fn generator_unchecked(pack: &StabilizerPack, system: &ControlSystem) -> Generator {
    let n = system.state_dim();
    let q = pack.q();
    let f = pack.q_factor();
    // Q Aᵀ Q⁻¹ = (Q⁻¹ A Q)ᵀ
    let qatqi = f.solve_matrix(&(&system.a * q)).transpose();
    let aq = -qatqi - DMatrix::<f64>::identity(n, n) * (2.0 * pack.lambda()) - q * pack.r();
    // B W Bᵀ Q⁻¹ = (Q⁻¹ B W Bᵀ)ᵀ
    let alt = &system.a - f.solve_matrix(&bwbt(system, pack)).transpose();
    let defect = ((&alt - &aq) * q).norm() / (1.0 + q.norm());
    Generator {
        spectral_abscissa: spectral_abscissa(&aq),
        matrix: aq,
        consistency_defect: defect,
    }
}

/// The consistency limit `max(20·identity_residual, CONSISTENCY_FLOOR)`.
pub fn consistency_limit(pack: &StabilizerPack) -> f64 {
    (20.0 * pack.identity_residual()).max(CONSISTENCY_FLOOR)
}

pub fn closed_loop_generator(pack: &StabilizerPack, system: &ControlSystem) -> Result<Generator> {
    check_pack(pack, system)?;
    let g = generator_unchecked(pack, system);
    let limit = consistency_limit(pack);
    if !(g.consistency_defect <= limit) {
        return Err(Error::Consistency {
            defect: g.consistency_defect,
            limit,
        });
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gramian::{build_pack, WeightProfile};
    use crate::models::{cubic_nonlinearity, skew_oscillator_chain, transport_ring};

    fn one() -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn scalar() -> (ControlSystem, StabilizerPack) {
        let sys = ControlSystem::new(DMatrix::zeros(1, 1), one(), "scalar").unwrap();
        let pack = StabilizerPack::from_parts(&sys, one(), DMatrix::zeros(1, 1), one(), WeightProfile::urquiza(0.5).unwrap()).unwrap();
        (sys, pack)
    }

    fn e2() -> (ControlSystem, StabilizerPack) {
        let sys = skew_oscillator_chain(1, 0.0, &[1]).unwrap();
        let pack = build_pack(&sys, &one(), &WeightProfile::urquiza(1.0).unwrap(), 16).unwrap();
        (sys, pack)
    }

    #[test]
    fn scalar_static_block() {
        let (sys, pack) = scalar();
        let cl = assemble_static(&pack, &sys).unwrap();
        assert_eq!(cl.block(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.0, -1.0]));
        assert_eq!(cl.field(&DVector::zeros(2)), DVector::zeros(2));
    }

    #[test]
    fn static_block_keeps_graph_invariant() {
        let (sys, pack) = e2();
        let cl = assemble_static(&pack, &sys).unwrap();
        let n = 2;
        let z = DVector::from_vec(vec![1.0, 0.0]);
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&(pack.q() * &z));
        x.rows_mut(n, n).copy_from(&z);
        let out = cl.block() * x;
        let first = out.rows(0, n).into_owned();
        let second = out.rows(n, n).into_owned();
        assert!((first - pack.q() * second).norm() < 1e-8);
    }

    #[test]
    fn refuses_pack_with_large_residual() {
        let (sys, pack) = e2();
        let mut q = pack.q().clone();
        q[(1, 1)] += 0.1;
        let bad = StabilizerPack::from_parts(&sys, q, pack.r().clone(), pack.w().clone(), pack.weight().clone()).unwrap();
        assert!(matches!(assemble_static(&bad, &sys), Err(Error::Residual { .. })));
    }

    #[test]
    fn scalar_dynamic_block() {
        let (sys, pack) = scalar();
        let cl = assemble_dynamic(&pack, &sys, Some(3.0)).unwrap();
        assert_eq!(cl.block(), &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 3.0, -4.0]));
        assert!(cl.rate_certified());
        let cl = assemble_dynamic(&pack, &sys, Some(1.0)).unwrap();
        assert!(!cl.rate_certified());
    }

    #[test]
    fn dynamic_rate_condition_on_skew_system() {
        let (sys, pack) = e2();
        // λ = 1: λ₁ = 2λ is the boundary
        assert!(!assemble_dynamic(&pack, &sys, Some(2.0)).unwrap().rate_certified());
        assert!(assemble_dynamic(&pack, &sys, Some(2.0 + 1e-9)).unwrap().rate_certified());
        let default = assemble_dynamic(&pack, &sys, None).unwrap();
        assert!((default.lambda1().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dynamic_refuses_nonzero_r() {
        let sys = skew_oscillator_chain(1, 0.0, &[1]).unwrap();
        let pack = build_pack(&sys, &one(), &WeightProfile::komornik(0.5, 4.0).unwrap(), 32).unwrap();
        assert!(matches!(assemble_dynamic(&pack, &sys, Some(3.0)), Err(Error::Mode(_))));
        assert!(matches!(
            assemble_nonlinear(&pack, &sys, LoopMode::DynamicNonlinear, cubic_nonlinearity(1.0), None, None),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn zero_nonlinearity_reduces_to_linear_block() {
        let (sys, pack) = e2();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [LoopMode::StaticNonlinear, LoopMode::DynamicNonlinear] {
            let nl = assemble_nonlinear(&pack, &sys, mode, Nonlinearity::zero(), Some(3.0), None).unwrap();
            for _ in 0..20 {
                let x = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
                assert!((nl.field(&x) - nl.block() * &x).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn cubic_field_vanishes_at_origin() {
        let (sys, pack) = e2();
        let nl = assemble_nonlinear(&pack, &sys, LoopMode::StaticNonlinear, cubic_nonlinearity(1.0), None, None).unwrap();
        assert_eq!(nl.field(&DVector::zeros(4)), DVector::zeros(4));
    }

    #[test]
    fn static_nonlinear_field_preserves_coupling_at_start() {
        let (sys, pack) = e2();
        let nl = assemble_nonlinear(&pack, &sys, LoopMode::StaticNonlinear, cubic_nonlinearity(1.0), None, None).unwrap();
        let y0 = DVector::from_vec(vec![0.3, -0.2]);
        let yt0 = pack.q_factor().solve(&y0);
        let mut x = DVector::zeros(4);
        x.rows_mut(0, 2).copy_from(&y0);
        x.rows_mut(2, 2).copy_from(&yt0);
        let dx = nl.field(&x);
        let d_defect = dx.rows(0, 2).into_owned() - pack.q() * dx.rows(2, 2).into_owned();
        assert!(d_defect.norm() < 1e-10, "{d_defect}");
    }

    #[test]
    fn nonlinear_mode_preconditions() {
        let sys = skew_oscillator_chain(1, 0.0, &[1]).unwrap();
        let pack = build_pack(&sys, &one(), &WeightProfile::urquiza(1.0).unwrap(), 16).unwrap();
        assert!(assemble_nonlinear(&pack, &sys, LoopMode::DynamicNonlinear, cubic_nonlinearity(1.0), None, Some(1.0)).is_err());
        assert!(assemble_nonlinear(&pack, &sys, LoopMode::StaticLinear, cubic_nonlinearity(1.0), None, None).is_err());
        let bad = Nonlinearity::new("affine", Arc::new(|y: &DVector<f64>| y.add_scalar(1.0)), 1.0, 1.0, Arc::new(|e| e));
        assert!(matches!(
            assemble_nonlinear(&pack, &sys, LoopMode::StaticNonlinear, bad, None, None),
            Err(Error::RejectedNonlinearity(_))
        ));
        let steep = Nonlinearity::new("steep", Arc::new(|y: &DVector<f64>| y * (5.0 * y.norm())), 1.0, 1.0, Arc::new(|e| e / 5.0));
        assert!(steep.spot_check(3).is_err());
    }

    #[test]
    fn generator_examples() {
        let (sys, pack) = scalar();
        let g = closed_loop_generator(&pack, &sys).unwrap();
        assert!((g.matrix[(0, 0)] + 1.0).abs() < 1e-15);

        let (sys, pack) = e2();
        let g = closed_loop_generator(&pack, &sys).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -5.0, -4.0]);
        assert!((&g.matrix - expected).amax() < 1e-6);
        assert!((g.spectral_abscissa + 2.0).abs() < 1e-6);

        let ring = transport_ring(4, 1..=4).unwrap();
        let pack = StabilizerPack::from_parts(
            &ring,
            DMatrix::identity(4, 4),
            DMatrix::zeros(4, 4),
            DMatrix::zeros(4, 4),
            WeightProfile::urquiza(0.0).unwrap(),
        )
        .unwrap();
        let g = closed_loop_generator(&pack, &ring).unwrap();
        assert!((&g.matrix - &ring.a).amax() < 1e-14);
    }
}
