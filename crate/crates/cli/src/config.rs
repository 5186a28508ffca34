//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use gramstab::feedback::{LoopMode, Nonlinearity};
use gramstab::gramian::WeightProfile;
use gramstab::linalg::OperatorMatrix;
use gramstab::models::{cubic_nonlinearity, system_from_name, ControlSystem};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

/// A matrix given inline as nested rows or as a path to a matrix text file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Path(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Named(String),
    Explicit {
        #[serde(rename = "A")]
        a: MatrixSpec,
        #[serde(rename = "B")]
        b: MatrixSpec,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        horizon: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub kind: String,
    pub lambda: f64,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub truncation_tol: Option<f64>,
    #[serde(default)]
    pub knots: Option<Vec<f64>>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub name: String,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub weight: WeightSpec,
    #[serde(default, rename = "W")]
    pub w: Option<MatrixSpec>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearitySpec>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub ytilde0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0_norm: Option<f64>,
    #[serde(default)]
    pub quad_points: Option<usize>,
    #[serde(default)]
    pub step_tol: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory that relative matrix paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_mode() -> String {
    "static".into()
}

fn default_horizon() -> f64 {
    10.0
}

fn default_grid_step() -> f64 {
    0.01
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= self.horizon) {
            return bad(format!("grid_step must lie in (0, horizon], got {}", self.grid_step));
        }
        if let Some(tol) = self.step_tol {
            if !(tol > 0.0) {
                return bad(format!("step_tol must be positive, got {tol}"));
            }
        }
        if let Some(r) = self.y0_norm {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("y0_norm must be non-negative, got {r}"));
            }
        }
        self.loop_mode()?;
        Ok(())
    }

    pub fn loop_mode(&self) -> Result<LoopMode, CliError> {
        Ok(self.mode.parse::<LoopMode>()?)
    }

    fn resolve(&self, spec: &MatrixSpec) -> Result<DMatrix<f64>, CliError> {
        match spec {
            MatrixSpec::Rows(rows) => Ok(OperatorMatrix::from_rows(rows)?.into_inner()),
            MatrixSpec::Path(p) => {
                let path = self.base_dir.join(p);
                let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok(OperatorMatrix::parse_text(&text)?.into_inner())
            }
        }
    }

    pub fn control_system(&self) -> Result<ControlSystem, CliError> {
        match &self.system {
            SystemSpec::Named(name) => Ok(system_from_name(name)?),
            SystemSpec::Explicit { a, b, label, horizon } => {
                let sys = ControlSystem::new(self.resolve(a)?, self.resolve(b)?, label.clone().unwrap_or_else(|| "explicit".into()))?;
                Ok(match horizon {
                    Some(h) => sys.with_controllability_horizon(*h)?,
                    None => sys,
                })
            }
        }
    }

    /// The weight operator; `"identity"` or absent means `I_m`.
    pub fn weight_operator(&self, m: usize) -> Result<DMatrix<f64>, CliError> {
        match &self.w {
            None => Ok(DMatrix::identity(m, m)),
            Some(MatrixSpec::Path(p)) if p == "identity" => Ok(DMatrix::identity(m, m)),
            Some(spec) => self.resolve(spec),
        }
    }

    /// The weight profile; a Komornik horizon defaults to the system's
    /// declared horizon.
    pub fn weight_profile(&self, system: &ControlSystem) -> Result<WeightProfile, CliError> {
        let w = &self.weight;
        let horizon = || {
            w.horizon
                .or(system.declared_controllability_horizon())
                .ok_or_else(|| CliError::Config(format!("weight {} needs T", w.kind)))
        };
        let profile = match w.kind.as_str() {
            "komornik" => WeightProfile::komornik(w.lambda, horizon()?)?,
            "urquiza" => match w.truncation_tol {
                Some(tol) => WeightProfile::urquiza_with_tol(w.lambda, tol)?,
                None => WeightProfile::urquiza(w.lambda)?,
            },
            "custom" => {
                let knots = w.knots.clone().ok_or_else(|| CliError::Config("custom weight needs knots".into()))?;
                let values = w.values.clone().ok_or_else(|| CliError::Config("custom weight needs values".into()))?;
                WeightProfile::custom(w.lambda, horizon()?, knots, values)?
            }
            other => return Err(CliError::Config(format!("unknown weight kind {other:?}"))),
        };
        Ok(profile)
    }

    pub fn nonlinearity(&self) -> Result<Option<Nonlinearity>, CliError> {
        match &self.nonlinearity {
            None => Ok(None),
            Some(spec) => match spec.name.as_str() {
                "cubic" => Ok(Some(cubic_nonlinearity(spec.kappa))),
                "zero" => Ok(Some(Nonlinearity::zero())),
                other => Err(CliError::Config(format!("unknown nonlinearity {other:?}"))),
            },
        }
    }

    pub fn vector(&self, values: &Option<Vec<f64>>, n: usize, what: &str) -> Result<Option<DVector<f64>>, CliError> {
        match values {
            None => Ok(None),
            Some(v) if v.len() == n => Ok(Some(DVector::from_column_slice(v))),
            Some(v) => Err(CliError::Config(format!("{what} has length {}, expected {n}", v.len()))),
        }
    }

    /// Returns a copy with one sweep parameter replaced.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self, CliError> {
        let mut cfg = self.clone();
        match param {
            "lambda" => cfg.weight.lambda = value,
            "lambda1" => cfg.lambda1 = Some(value),
            "gamma" => cfg.gamma = Some(value),
            "T" => cfg.weight.horizon = Some(value),
            "kappa" => match cfg.nonlinearity.as_mut() {
                Some(nl) => nl.kappa = value,
                None => return Err(CliError::Config("kappa sweep needs a nonlinearity".into())),
            },
            "y0_norm" => cfg.y0_norm = Some(value),
            other => return Err(CliError::Config(format!("unknown sweep parameter {other:?}"))),
        }
        cfg.sweep = None;
        Ok(cfg)
    }
}
