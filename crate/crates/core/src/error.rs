//! Crate-wide error type. Messages name the module that produced them so
//! CLI output points at the failing component.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("kaplan_meier: {0}")]
    KaplanMeier(String),

    #[error("regression: {0}")]
    Regression(String),

    #[error("qlearning: insufficient data at stage {stage}, action {action}")]
    InsufficientData { stage: usize, action: usize },

    #[error("qlearning: {0}")]
    QLearning(String),

    #[error("trial_sim: {0}")]
    TrialSim(String),

    #[error("trial_sim: oracle did not converge at maximum resolution: {0}")]
    OracleNonConvergence(String),

    #[error("evaluate: {0}")]
    Evaluate(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
