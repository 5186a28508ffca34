//! Dense real linear algebra: propagators `e^{tA}`, adjoints, symmetric
//! square roots and Cholesky factorizations.
//!
//! All inner products are Euclidean, so the adjoint of an operator is its
//! transpose.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Propagators refuse `‖tA‖₁` beyond this bound.
pub const OVERFLOW_GUARD: f64 = 1e3;

/// A dense real matrix whose entries are all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix(DMatrix<f64>);

impl OperatorMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract("matrix dimensions must be positive".into()));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                actual: format!("{} entries", entries.len()),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Contract("matrix dimensions must be positive".into()));
        }
        if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite entry at column-major offset {pos}"
            )));
        }
        Ok(Self(m))
    }

    /// Builds a matrix from nested rows, as used in JSON documents.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Parse("ragged matrix rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0)
    }

    /// Parses the plain-text format: a `rows cols` header followed by one
    /// line of whitespace-separated decimals per row.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad header {header:?}: {e}")))?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse(format!("header must be `rows cols`, got {header:?}")));
        };
        let mut entries = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            if i >= rows {
                return Err(Error::Parse(format!("more than {rows} data rows")));
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
            if row.len() != cols {
                return Err(Error::Parse(format!(
                    "row {} has {} entries, expected {cols}",
                    i + 1,
                    row.len()
                )));
            }
            entries.extend(row);
        }
        Self::new(rows, cols, entries)
    }

    /// Writes the plain-text format with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.0.nrows(), self.0.ncols());
        for i in 0..self.0.nrows() {
            let row: Vec<String> = self.0.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for OperatorMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn adjoint(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose()
}

fn require_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: format!("square {what}"),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(m, "generator")?;
    let n = m.nrows();
    let norm = one_norm(m);
    if !norm.is_finite() {
        return Err(Error::Contract("non-finite generator".into()));
    }
    if norm > OVERFLOW_GUARD {
        return Err(Error::Range(format!(
            "‖tA‖₁ = {norm:e} exceeds overflow guard {OVERFLOW_GUARD:e}"
        )));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Range("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// The propagator `e^{tA}`; `t` may be negative since every finite
/// dimensional generator generates a group.
pub fn propagator(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    require_square(a, "generator")?;
    if !t.is_finite() {
        return Err(Error::Contract(format!("non-finite time {t}")));
    }
    expm(&(a * t))
}

/// `e^{tA} v`.
pub fn propagate(a: &DMatrix<f64>, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    require_square(a, "generator")?;
    if v.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: format!("vector of length {}", a.nrows()),
            actual: format!("length {}", v.len()),
        });
    }
    Ok(propagator(a, t)? * v)
}

/// `‖M − Mᵀ‖_F / ‖M‖_F` (zero for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / norm
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Default clamping window for [`sym_sqrt`]: `1e-10·‖M‖_F`.
pub fn default_sqrt_tol(m: &DMatrix<f64>) -> f64 {
    1e-10 * m.norm()
}

/// Symmetric positive semidefinite square root via eigendecomposition.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero; anything below `-tol` is
/// rejected. `tol` also bounds the relative asymmetry that is tolerated.
pub fn sym_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    require_square(m, "operand")?;
    let norm = m.norm();
    let skew = (m - m.transpose()).norm();
    if skew > tol * norm {
        return Err(Error::Contract(format!(
            "asymmetry {skew:e} exceeds {:e}",
            tol * norm
        )));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for ev in roots.iter_mut() {
        if *ev < -tol {
            return Err(Error::NotPsd { eigenvalue: *ev });
        }
        *ev = ev.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(symmetrize(&s))
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().max()
}

/// `λ_max((M + Mᵀ)/2)`, the logarithmic norm of `M` in the Euclidean norm.
pub fn numerical_abscissa(m: &DMatrix<f64>) -> f64 {
    max_symmetric_eigenvalue(m)
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral norm `‖M‖₂`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Cholesky factorization `M = L·Lᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactorization {
    factor: DMatrix<f64>,
    min_eigenvalue_estimate: f64,
}

impl SpdFactorization {
    /// Factorizes `m`. A pivot `≤ tol·max|m_ii|` is reported as not positive
    /// definite together with its index.
    pub fn new(m: &DMatrix<f64>, tol: f64) -> Result<Self> {
        require_square(m, "operand")?;
        let n = m.nrows();
        let skew = (m - m.transpose()).norm();
        if skew > tol.max(1e-12) * m.norm() {
            return Err(Error::Contract(format!("asymmetry {skew:e} beyond tolerance")));
        }
        let scale = m.diagonal().iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = 0.5 * (m[(j, j)] + m[(j, j)]);
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tol * scale) || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self {
            factor: l,
            min_eigenvalue_estimate: min_symmetric_eigenvalue(m),
        })
    }

    pub fn dimension(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn min_eigenvalue_estimate(&self) -> f64 {
        self.min_eigenvalue_estimate
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// Solves `M x = v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = v.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Solves `M X = V` column by column.
    pub fn solve_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = v.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }

    /// `M⁻¹`, materialized. Prefer [`Self::solve`] where possible.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dimension();
        symmetrize(&self.solve_matrix(&DMatrix::identity(n, n)))
    }

    /// `⟨M⁻¹ v, v⟩ = ‖L⁻¹ v‖²`.
    pub fn inverse_quadratic_form(&self, v: &DVector<f64>) -> f64 {
        let mut x = v.clone();
        self.forward(x.as_mut_slice());
        x.norm_squared()
    }

    fn forward(&self, x: &mut [f64]) {
        let l = &self.factor;
        let n = x.len();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        self.forward(x);
        let l = &self.factor;
        let n = x.len();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }
}

pub fn spd_factorize(m: &DMatrix<f64>, tol: f64) -> Result<SpdFactorization> {
    SpdFactorization::new(m, tol)
}
