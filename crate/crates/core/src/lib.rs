//! Weighted controllability Gramians and the feedback laws built on them.
//!
//! A [`gramian::StabilizerPack`] holds `(Q, R, W, λ)` satisfying
//! `AQ + QAᵀ − BWBᵀ + QRQ + 2λQ = 0`. The [`feedback`] module assembles
//! static and dynamic closed loops from a pack, and [`simulate`] integrates
//! them and audits decay, energy, coupling and transposition identities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod feedback;
pub mod gramian;
pub mod linalg;
pub mod models;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
pub use feedback::{ClosedLoop, LoopMode, Nonlinearity};
pub use gramian::{build_pack, StabilizerPack, WeightProfile};
pub use linalg::OperatorMatrix;
pub use models::ControlSystem;
pub use simulate::{DecayReport, Trajectory};
