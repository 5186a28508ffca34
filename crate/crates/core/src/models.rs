//! Example systems and admissible nonlinearities.
//!
//! Every skew-adjoint model is skew by construction (`Aᵀ = −A` holds
//! entrywise), not merely up to discretization error.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feedback::Nonlinearity;
use crate::gramian::{check_controllability, kalman_rank, DEFAULT_CONTROLLABILITY_THRESHOLD};
use crate::linalg::{symmetrize, sym_sqrt};

/// Threshold on `‖A + Aᵀ‖_F` for the skew-adjoint certificate.
pub const SKEW_TOL: f64 = 1e-12;

/// Declared horizon of the oscillator, ring and wave families.
pub const STRUCTURED_HORIZON: f64 = 2.0 * std::f64::consts::PI;
/// Declared horizon of the random family.
pub const RANDOM_HORIZON: f64 = 2.0;

/// Names of the standard zoo used by the audit suites.
pub const STANDARD_ZOO: [&str; 7] = [
    "oscillator:k=1",
    "oscillator:k=3,c=0.5,ctrl=1",
    "ring:n=8,win=1..2",
    "wave:k=4,boundary",
    "wave:k=3",
    "random:n=4,m=2,seed=2",
    "random:n=6,m=2,seed=1",
];

/// Declares `horizon` when the system is controllable there; otherwise the
/// system is returned without a declared horizon.
fn with_default_horizon(system: ControlSystem, horizon: f64) -> ControlSystem {
    system.clone().with_controllability_horizon(horizon).unwrap_or(system)
}

pub fn standard_zoo() -> Result<Vec<ControlSystem>> {
    STANDARD_ZOO.iter().map(|name| system_from_name(name)).collect()
}

/// The pair `(A, B)` of `y' = Ay + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub label: String,
    is_skew_adjoint: bool,
    declared_controllability_horizon: Option<f64>,
}

impl ControlSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: "non-empty square A".into(),
                actual: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("B with {} rows and at least one column", a.nrows()),
                actual: format!("{}x{}", b.nrows(), b.ncols()),
            });
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite entry in (A, B)".into()));
        }
        let is_skew_adjoint = (&a + a.transpose()).norm() <= SKEW_TOL;
        Ok(Self {
            a,
            b,
            label: label.into(),
            is_skew_adjoint,
            declared_controllability_horizon: None,
        })
    }

    /// Declares a controllability horizon after checking it.
    pub fn with_controllability_horizon(mut self, horizon: f64) -> Result<Self> {
        let report = check_controllability(&self, horizon, DEFAULT_CONTROLLABILITY_THRESHOLD)?;
        if !report.is_exactly_controllable {
            return Err(Error::Controllability(format!(
                "{} is not controllable at horizon {horizon}",
                self.label
            )));
        }
        self.declared_controllability_horizon = Some(horizon);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_skew_adjoint(&self) -> bool {
        self.is_skew_adjoint
    }

    pub fn declared_controllability_horizon(&self) -> Option<f64> {
        self.declared_controllability_horizon
    }
}

/// Chain of `k` rotations with frequencies `1..=k` and skew nearest-neighbour
/// coupling. State ordering is `(x₁, v₁, x₂, v₂, …)`; control node `i`
/// (1-based) actuates `vᵢ`.
pub fn skew_oscillator_chain(k: usize, coupling: f64, control_nodes: &[usize]) -> Result<ControlSystem> {
    if k == 0 {
        return Err(Error::Contract("oscillator chain needs k ≥ 1".into()));
    }
    if control_nodes.is_empty() {
        return Err(Error::Contract("empty control set".into()));
    }
    if let Some(&bad) = control_nodes.iter().find(|&&i| i == 0 || i > k) {
        return Err(Error::Range(format!("control node {bad} outside 1..={k}")));
    }
    let n = 2 * k;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..k {
        let w = (j + 1) as f64;
        a[(2 * j, 2 * j + 1)] = w;
        a[(2 * j + 1, 2 * j)] = -w;
        if j + 1 < k {
            a[(2 * j + 1, 2 * j + 2)] = coupling;
            a[(2 * j + 2, 2 * j + 1)] = -coupling;
        }
    }
    let mut b = DMatrix::zeros(n, control_nodes.len());
    for (col, &node) in control_nodes.iter().enumerate() {
        b[(2 * (node - 1) + 1, col)] = 1.0;
    }
    ControlSystem::new(a, b, format!("oscillator:k={k},c={coupling},ctrl={}", join_indices(control_nodes))).map(|s| with_default_horizon(s, STRUCTURED_HORIZON))
}

/// Periodic central-difference transport generator on `n` cells, actuated on
/// the cells `window` (1-based, inclusive).
pub fn transport_ring(n: usize, window: std::ops::RangeInclusive<usize>) -> Result<ControlSystem> {
    if n < 4 {
        return Err(Error::Contract("transport ring needs n ≥ 4".into()));
    }
    let (lo, hi) = (*window.start(), *window.end());
    if window.is_empty() {
        return Err(Error::Contract("empty control window".into()));
    }
    if lo == 0 || hi > n {
        return Err(Error::Range(format!("window {lo}..{hi} outside 1..={n}")));
    }
    let c = n as f64 / 2.0;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, (i + 1) % n)] = c;
        a[(i, (i + n - 1) % n)] = -c;
    }
    let mut b = DMatrix::zeros(n, hi - lo + 1);
    for (col, cell) in (lo..=hi).enumerate() {
        b[(cell - 1, col)] = 1.0;
    }
    ControlSystem::new(a, b, format!("ring:n={n},win={lo}..{hi}")).map(|s| with_default_horizon(s, STRUCTURED_HORIZON))
}

/// First-order discrete wave equation on `k` interior nodes with Dirichlet
/// ends, written in the energy coordinates `(L^{1/2}u, u')` so that the
/// generator is exactly skew.
pub fn wave_lattice(k: usize, control_boundary: bool) -> Result<ControlSystem> {
    if k < 2 {
        return Err(Error::Contract("wave lattice needs k ≥ 2".into()));
    }
    let mut lap = DMatrix::zeros(k, k);
    for i in 0..k {
        lap[(i, i)] = 2.0;
        if i + 1 < k {
            lap[(i, i + 1)] = -1.0;
            lap[(i + 1, i)] = -1.0;
        }
    }
    let root = symmetrize(&sym_sqrt(&lap, 1e-12)?);
    let n = 2 * k;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, k), (k, k)).copy_from(&root);
    a.view_mut((k, 0), (k, k)).copy_from(&(-&root));
    let b = if control_boundary {
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        b
    } else {
        let mut b = DMatrix::zeros(n, k);
        for i in 0..k {
            b[(k + i, i)] = 1.0;
        }
        b
    };
    let label = if control_boundary {
        format!("wave:k={k},boundary")
    } else {
        format!("wave:k={k}")
    };
    ControlSystem::new(a, b, label).map(|s| with_default_horizon(s, STRUCTURED_HORIZON))
}

/// Uniform random `(A, B)` in `[-1, 1]`, resampled until the Kalman rank is
/// full.
pub fn random_controllable(n: usize, m: usize, seed: u64) -> Result<ControlSystem> {
    if n == 0 || m == 0 {
        return Err(Error::Contract("random system needs n, m ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..=1.0));
        if kalman_rank(&a, &b) == n {
            return ControlSystem::new(a, b, format!("random:n={n},m={m},seed={seed}"))
                .map(|s| with_default_horizon(s, RANDOM_HORIZON));
        }
    }
    Err(Error::Generation(format!(
        "no controllable pair after 100 draws (n={n}, m={m}, seed={seed})"
    )))
}

/// `f(y) = κ‖y‖²y`.
pub fn cubic_nonlinearity(kappa: f64) -> Nonlinearity {
    let eval = move |y: &DVector<f64>| y * (kappa * y.norm_squared());
    let modulus = move |eps: f64| {
        if kappa > 0.0 {
            (eps / kappa).sqrt()
        } else {
            f64::INFINITY
        }
    };
    Nonlinearity::new(format!("cubic:kappa={kappa}"), Arc::new(eval), 1.0, 3.0 * kappa, Arc::new(modulus))
}

fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
}

/// Parses a zoo name such as `oscillator:k=2,c=0.5,ctrl=1`,
/// `ring:n=8,win=1..2`, `wave:k=3,boundary` or `random:n=5,m=1,seed=42`.
pub fn system_from_name(name: &str) -> Result<ControlSystem> {
    let (kind, rest) = name.split_once(':').unwrap_or((name, ""));
    let params = ZooParams::parse(rest)?;
    match kind.trim() {
        "oscillator" => {
            let k = params.usize("k")?;
            let c = params.f64_or("c", 0.0)?;
            let ctrl = match params.get("ctrl") {
                Some(v) => parse_index_list(v)?,
                None => vec![1],
            };
            skew_oscillator_chain(k, c, &ctrl)
        }
        "ring" => {
            let n = params.usize("n")?;
            let win = params
                .get("win")
                .ok_or_else(|| Error::Parse("ring needs win=A..B".into()))?;
            let (lo, hi) = match win.split_once("..") {
                Some((a, b)) => (parse_usize(a)?, parse_usize(b)?),
                None => {
                    let i = parse_usize(win)?;
                    (i, i)
                }
            };
            transport_ring(n, lo..=hi)
        }
        "wave" => wave_lattice(params.usize("k")?, params.flag("boundary")),
        "random" => random_controllable(
            params.usize("n")?,
            params.usize("m")?,
            params.get("seed").map(|s| s.parse::<u64>()).transpose().map_err(|e| Error::Parse(e.to_string()))?.unwrap_or(0),
        ),
        other => Err(Error::Parse(format!("unknown zoo system {other:?}"))),
    }
}

struct ZooParams(Vec<(String, Option<String>)>);

impl ZooParams {
    fn parse(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item.split_once('=') {
                Some((k, v)) => out.push((k.trim().to_string(), Some(v.trim().to_string()))),
                None => out.push((item.to_string(), None)),
            }
        }
        Ok(Self(out))
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.as_deref())
    }

    fn flag(&self, key: &str) -> bool {
        self.0.iter().any(|(k, _)| k == key)
    }

    fn usize(&self, key: &str) -> Result<usize> {
        parse_usize(
            self.get(key)
                .ok_or_else(|| Error::Parse(format!("missing parameter {key}")))?,
        )
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| {
            v.parse::<f64>()
                .map_err(|e| Error::Parse(format!("{key}={v}: {e}")))
        })
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    s.split(['|', ';', '+']).map(parse_usize).collect()
}

impl fmt::Display for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n={}, m={})", self.label, self.state_dim(), self.input_dim())
    }
}
