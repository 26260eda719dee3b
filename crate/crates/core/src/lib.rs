//! Censored Q-learning for multistage decision problems with a flexible
//! number of stages.
//!
//! Trajectories whose rewards are survival times may be cut short by
//! censoring and may have a patient-dependent number of stages. This crate
//! transforms such trajectories into a fixed-horizon auxiliary problem,
//! estimates the censoring distribution with a role-interchanged
//! Kaplan-Meier estimator, fits stage-wise Q-functions by
//! inverse-probability-of-censoring-weighted least squares, and extracts
//! greedy treatment policies.
//!
//! A simulated two-treatment cancer trial ([`trial_sim`]) provides data
//! generation, exact value oracles for fixed and optimal policies, and the
//! experiment grid used by the command-line interface.

pub mod error;
pub mod evaluate;
pub mod kaplan_meier;
pub mod qlearning;
pub mod regression;
pub mod trajectory;
pub mod trial_sim;

pub use error::{Error, Result};
