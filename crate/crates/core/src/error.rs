use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Inconsistent shapes when assembling a model or program by hand.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("model file {path}: {message}")]
    Schema { path: String, message: String },

    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("model failed validation: {}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("dynamics maps (state {state}, control {control}, noise {noise_id}) to {next}, outside the state list")]
    DynamicsOutOfRange {
        state: usize,
        control: usize,
        noise_id: i64,
        next: usize,
    },

    #[error("plan does not match model: {0}")]
    Plan(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("linear program is infeasible: {0}")]
    Infeasible(String),

    #[error("linear program is unbounded: {0}")]
    Unbounded(String),

    #[error("{0}")]
    Analysis(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
