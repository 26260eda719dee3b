//! Flexible-stage trajectory data model and the fixed-length auxiliary
//! transformation.
//!
//! A [`Trajectory`] records the states, actions and per-stage censoring
//! indicators of one patient. Stage rewards are survival-time increments and
//! live redundantly inside each state's `prev_reward` field; the trajectory
//! exposes a derived rewards view so the two can never diverge.
//!
//! [`to_auxiliary`] completes a trajectory to a fixed horizon `T`: failed
//! trajectories are padded with terminal states, and trajectories whose total
//! survival reaches `tau` are truncated so the auxiliary reward sum is
//! exactly `min(total survival, tau)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State at the start of a stage: covariates (or the terminal marker) plus
/// the reward earned in the preceding stage (`R_0 = 0` by convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    /// Covariate vector, or `None` for the terminal marker.
    #[serde(rename = "z")]
    pub covariates: Option<Vec<f64>>,
    /// Survival time accrued in the stage that ended at this state, months-
    /// free real time units (years in the simulated trial).
    #[serde(rename = "r")]
    pub prev_reward: f64,
}

impl StageState {
    pub fn new(covariates: Vec<f64>, prev_reward: f64) -> Self {
        StageState {
            covariates: Some(covariates),
            prev_reward,
        }
    }

    pub fn terminal(prev_reward: f64) -> Self {
        StageState {
            covariates: None,
            prev_reward,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.covariates.is_none()
    }
}

/// Observed trajectory of one patient.
///
/// For a trajectory with `k` completed stages that ended by failure or trial
/// horizon, `states` has length `k + 1` and `actions` length `k`. A
/// trajectory censored during its last recorded stage has equally many
/// states and actions: the state that would close the censored stage was
/// never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StageState>,
    pub actions: Vec<usize>,
    pub censoring_time: Option<f64>,
    pub deltas: Vec<u8>,
}

impl Trajectory {
    /// True when the trajectory was censored during its last recorded stage.
    pub fn is_censored(&self) -> bool {
        self.deltas.last() == Some(&0)
    }

    /// Rewards of the completed stages, derived from the states.
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().skip(1).map(|s| s.prev_reward)
    }

    /// Number of stages with a recorded reward.
    pub fn completed_stages(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Number of recorded stages including a censored final stage.
    pub fn recorded_stages(&self) -> usize {
        self.actions.len()
    }

    /// Total survival time up to and including stage `t` (left-fold sum).
    pub fn cumulative_time(&self, through_stage: usize) -> Result<f64> {
        if through_stage > self.completed_stages() {
            return Err(Error::Trajectory(format!(
                "cumulative_time: stage {} out of range (have {} completed stages)",
                through_stage,
                self.completed_stages()
            )));
        }
        Ok(self.rewards().take(through_stage).sum())
    }
}

/// Outcome of [`validate`]: a list of human-readable invariant violations.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every data-model invariant of a trajectory; an empty report means
/// the trajectory is well formed.
pub fn validate(traj: &Trajectory, tau: f64) -> ValidationReport {
    let mut v = Vec::new();

    if traj.states.is_empty() {
        v.push("empty states".to_string());
        return ValidationReport { violations: v };
    }
    if traj.states[0].prev_reward != 0.0 {
        v.push("initial state reward (R_0 must be 0)".to_string());
    }
    if traj.states[0].is_terminal() {
        v.push("initial state terminal".to_string());
    }
    for s in &traj.states {
        if !s.prev_reward.is_finite() || s.prev_reward < 0.0 {
            v.push("reward sign".to_string());
            break;
        }
    }

    if traj.deltas.len() != traj.actions.len() {
        v.push("delta count (one indicator per recorded stage)".to_string());
    }
    if traj.deltas.iter().any(|d| *d > 1) {
        v.push("delta domain (must be 0/1)".to_string());
    }
    if traj.deltas.windows(2).any(|w| w[0] == 0 && w[1] == 1) {
        v.push("delta monotonicity".to_string());
    }

    let censored = traj.is_censored();
    if censored {
        if traj.actions.len() != traj.states.len() {
            v.push("action/state count (censored trajectory)".to_string());
        }
        match traj.censoring_time {
            None => v.push("censoring time absent on censored trajectory".to_string()),
            Some(c) => {
                if !(0.0..=tau).contains(&c) {
                    v.push("censoring time range".to_string());
                }
                let known: f64 = traj.rewards().sum();
                if c < known {
                    v.push("censoring bound (C below recorded survival)".to_string());
                }
            }
        }
    } else {
        if traj.actions.len() + 1 != traj.states.len() {
            v.push("action/state count (uncensored trajectory)".to_string());
        }
        if traj.censoring_time.is_some() {
            v.push("censoring time present on uncensored trajectory".to_string());
        }
    }

    if let Some(first_terminal) = traj.states.iter().position(StageState::is_terminal) {
        for s in &traj.states[first_terminal + 1..] {
            if !s.is_terminal() || s.prev_reward != 0.0 {
                v.push("terminal tail (states after the terminal must be (∅, 0))".to_string());
                break;
            }
        }
    }

    ValidationReport { violations: v }
}

/// Fixed-horizon trajectory: exactly `T + 1` states, `T` actions and `T`
/// censoring indicators, with reward sum at most `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryTrajectory {
    pub states: Vec<StageState>,
    pub actions: Vec<usize>,
    pub deltas: Vec<u8>,
    pub horizon: usize,
    pub tau: f64,
}

impl AuxiliaryTrajectory {
    /// State at the start of stage `t` (1-based).
    pub fn stage_start(&self, t: usize) -> &StageState {
        &self.states[t - 1]
    }

    /// State at the end of stage `t` (1-based).
    pub fn stage_end(&self, t: usize) -> &StageState {
        &self.states[t]
    }

    /// Reward of stage `t` (1-based).
    pub fn reward(&self, t: usize) -> f64 {
        self.states[t].prev_reward
    }

    /// Censoring indicator of stage `t` (1-based).
    pub fn delta(&self, t: usize) -> u8 {
        self.deltas[t - 1]
    }

    /// Action taken at stage `t` (1-based).
    pub fn action(&self, t: usize) -> usize {
        self.actions[t - 1]
    }

    /// Survival time accumulated before stage `t` begins (left-fold sum).
    pub fn elapsed_before(&self, t: usize) -> f64 {
        self.states[1..t].iter().map(|s| s.prev_reward).sum()
    }

    /// Survival time up to and including stage `t` (left-fold sum).
    pub fn cumulative_through(&self, t: usize) -> f64 {
        self.states[1..=t].iter().map(|s| s.prev_reward).sum()
    }

    /// Sum of all stage rewards (left-fold sum).
    pub fn reward_sum(&self) -> f64 {
        self.states[1..].iter().map(|s| s.prev_reward).sum()
    }

    /// True when all indicators are 1 (no censoring observed).
    pub fn fully_observed(&self) -> bool {
        self.deltas.iter().all(|d| *d == 1)
    }
}

/// Complete a trajectory to the fixed horizon `T`.
///
/// Rewards before the first `tau`-crossing are unchanged; the crossing-stage
/// reward is replaced by `tau` minus the survival accumulated before it and
/// the following state becomes terminal. Missing stages are padded with
/// `(∅, 0)` states and `pad_action`. Trajectories that both cross `tau` and
/// fall short of the horizon are modified twice.
pub fn to_auxiliary(
    traj: &Trajectory,
    horizon: usize,
    tau: f64,
    pad_action: usize,
) -> Result<AuxiliaryTrajectory> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Trajectory(format!("tau must be positive, got {tau}")));
    }
    let report = validate(traj, tau);
    if !report.is_ok() {
        return Err(Error::Trajectory(format!(
            "invalid trajectory: {}",
            report.violations.join("; ")
        )));
    }
    if traj.recorded_stages() > horizon {
        return Err(Error::Trajectory(format!(
            "stage count {} exceeds horizon {}",
            traj.recorded_stages(),
            horizon
        )));
    }

    let censored = traj.is_censored();
    let mut states = vec![traj.states[0].clone()];
    let mut actions = Vec::with_capacity(horizon);
    let mut cum = 0.0f64;
    let mut terminated = false;

    for (j, &action) in traj.actions.iter().enumerate() {
        match traj.states.get(j + 1) {
            None => {
                // Censored during this stage: the closing state was never
                // observed. The filler below is inert because every term of
                // the estimator at or past this stage carries delta = 0.
                actions.push(action);
                break;
            }
            Some(end) => {
                let r = end.prev_reward;
                if cum + r >= tau {
                    actions.push(action);
                    states.push(StageState::terminal(tau - cum));
                    terminated = true;
                    break;
                }
                actions.push(action);
                states.push(end.clone());
                cum += r;
                if end.is_terminal() {
                    terminated = true;
                    break;
                }
            }
        }
    }

    if !censored && !terminated && actions.len() < horizon {
        return Err(Error::Trajectory(
            "uncensored trajectory ends before the horizon without failure or tau-crossing"
                .to_string(),
        ));
    }

    let recorded = actions.len();
    let mut deltas: Vec<u8> = traj.deltas.iter().take(recorded).copied().collect();
    let pad_delta = if censored { 0 } else { 1 };
    while actions.len() < horizon {
        actions.push(pad_action);
    }
    while deltas.len() < horizon {
        deltas.push(pad_delta);
    }
    while states.len() < horizon + 1 {
        states.push(StageState::terminal(0.0));
    }

    Ok(AuxiliaryTrajectory {
        states,
        actions,
        deltas,
        horizon,
        tau,
    })
}

/// Write trajectories as JSON-lines, one per line.
pub fn write_jsonl<P: AsRef<Path>>(path: P, trajectories: &[Trajectory]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read trajectories from a JSON-lines file.
pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
