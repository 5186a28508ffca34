//! Pack interchange format.

use gramstab::gramian::{StabilizerPack, WeightKind, WeightProfile};
use gramstab::linalg::{to_rows, OperatorMatrix};
use gramstab::models::ControlSystem;
use serde::{Deserialize, Serialize};

use crate::output::{ser_f64, ser_opt_f64, ser_rows};
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightJson {
    pub kind: String,
    #[serde(rename = "T", serialize_with = "ser_opt_f64")]
    pub horizon: Option<f64>,
    #[serde(rename = "T_star", serialize_with = "ser_opt_f64")]
    pub t_star: Option<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub truncation_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackJson {
    pub n: usize,
    pub m: usize,
    #[serde(serialize_with = "ser_f64")]
    pub lambda: f64,
    pub weight: WeightJson,
    #[serde(rename = "Q", serialize_with = "ser_rows")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R", serialize_with = "ser_rows")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "W", serialize_with = "ser_rows")]
    pub w: Vec<Vec<f64>>,
    #[serde(serialize_with = "ser_f64")]
    pub identity_residual: f64,
}

impl PackJson {
    pub fn from_pack(pack: &StabilizerPack) -> Self {
        let weight = pack.weight();
        let custom = weight.custom_rho();
        Self {
            n: pack.state_dim(),
            m: pack.input_dim(),
            lambda: pack.lambda(),
            weight: WeightJson {
                kind: weight.kind().as_str().to_string(),
                horizon: weight.horizon(),
                t_star: weight.t_star(),
                truncation_tol: weight.truncation_tol(),
                knots: custom.map(|c| c.knots().to_vec()),
                values: custom.map(|c| c.values().to_vec()),
            },
            q: to_rows(pack.q()),
            r: to_rows(pack.r()),
            w: to_rows(pack.w()),
            identity_residual: pack.identity_residual(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pack serialization");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("pack file: {e}")))
    }

    fn profile(&self) -> Result<WeightProfile, CliError> {
        let w = &self.weight;
        let need_t = || w.horizon.ok_or_else(|| CliError::Config("pack weight lacks T".into()));
        let profile = match w.kind.as_str() {
            k if k == WeightKind::Komornik.as_str() => WeightProfile::komornik(self.lambda, need_t()?)?,
            k if k == WeightKind::Urquiza.as_str() => WeightProfile::urquiza_with_tol(self.lambda, w.truncation_tol)?,
            k if k == WeightKind::Custom.as_str() => WeightProfile::custom(
                self.lambda,
                need_t()?,
                w.knots.clone().unwrap_or_default(),
                w.values.clone().unwrap_or_default(),
            )?,
            other => return Err(CliError::Config(format!("unknown weight kind {other:?} in pack"))),
        };
        Ok(profile)
    }

    /// Rebuilds the pack against `system`; the residual is recomputed.
    pub fn to_pack(&self, system: &ControlSystem) -> Result<StabilizerPack, CliError> {
        if self.n != system.state_dim() || self.m != system.input_dim() {
            return Err(CliError::Config(format!(
                "pack is for n={}, m={} but the system has n={}, m={}",
                self.n,
                self.m,
                system.state_dim(),
                system.input_dim()
            )));
        }
        let q = OperatorMatrix::from_rows(&self.q)?.into_inner();
        let r = OperatorMatrix::from_rows(&self.r)?.into_inner();
        let w = OperatorMatrix::from_rows(&self.w)?.into_inner();
        Ok(StabilizerPack::from_parts(system, q, r, w, self.profile()?)?)
    }
}
