//! The censored-Q-learning backward recursion: stage models are fitted from
//! the last stage to the first by weighted least squares, where each stage-t
//! row is weighted by `delta_t / S_C(sum of rewards through t)` so that
//! censored survival times stop biasing the regression targets.
//!
//! Two ablation modes are provided for comparison: `IgnoreWeights` keeps the
//! censoring indicator but drops the reweighting, `DropCensored` removes
//! censored trajectories entirely before fitting.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kaplan_meier::KaplanMeierCurve;
use crate::regression::{fit_weighted_least_squares, FeatureKind, FeatureMap, StageQModel};
use crate::trajectory::{AuxiliaryTrajectory, StageState};

/// How censored observations enter the stage-wise minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Inverse-probability-of-censoring weights `delta_t / S_C(...)`.
    Ipcw,
    /// Keep rows with `delta_t = 1` at unit weight (no reweighting).
    IgnoreWeights,
    /// Remove every trajectory with any `delta = 0` before fitting.
    DropCensored,
}

impl WeightMode {
    pub const ALL: [WeightMode; 3] = [
        WeightMode::Ipcw,
        WeightMode::IgnoreWeights,
        WeightMode::DropCensored,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WeightMode::Ipcw => "ipcw",
            WeightMode::IgnoreWeights => "ignore-weights",
            WeightMode::DropCensored => "drop-censored",
        }
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipcw" => Ok(WeightMode::Ipcw),
            "ignore-weights" | "ignore_weights" => Ok(WeightMode::IgnoreWeights),
            "drop-censored" | "drop_censored" => Ok(WeightMode::DropCensored),
            other => Err(Error::QLearning(format!(
                "unknown weight mode '{other}' (expected ipcw|ignore-weights|drop-censored)"
            ))),
        }
    }
}

/// Fitted per-stage Q-functions. Stage `T + 1` is identically zero by
/// convention and is not stored; evaluation on a terminal state returns zero
/// for every action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub stage_models: Vec<StageQModel>,
    pub horizon: usize,
    pub tau: f64,
    pub n_actions: usize,
}

impl QModel {
    /// Evaluate the stage-`t` Q-function (1-based stage).
    pub fn q_value(
        &self,
        state: &StageState,
        elapsed: f64,
        stage: usize,
        action: usize,
    ) -> Result<f64> {
        if stage == 0 || stage > self.horizon {
            return Err(Error::QLearning(format!(
                "stage {stage} outside [1, {}]",
                self.horizon
            )));
        }
        if state.is_terminal() {
            return Ok(0.0);
        }
        let model = &self.stage_models[stage - 1];
        let row = model.feature_map.row(state, elapsed)?;
        model.evaluate_row(&row, action)
    }
}

/// Greedy decision rule over a fitted Q-model; exact ties go to the lowest
/// action index so experiments are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub q_model: QModel,
}

impl Policy {
    pub fn decide(&self, state: &StageState, elapsed: f64, stage: usize) -> Result<usize> {
        let mut best = 0usize;
        let mut best_q = self.q_model.q_value(state, elapsed, stage, 0)?;
        for a in 1..self.q_model.n_actions {
            let q = self.q_model.q_value(state, elapsed, stage, a)?;
            if q > best_q {
                best_q = q;
                best = a;
            }
        }
        Ok(best)
    }
}

/// Regression targets for stage `t`: the stage reward plus the best fitted
/// next-stage value, which is zero past the horizon and on terminal states.
pub fn target_values(
    stage: usize,
    q_next: Option<&StageQModel>,
    trajectories: &[AuxiliaryTrajectory],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let reward = traj.reward(stage);
        let next_state = traj.stage_end(stage);
        let continuation = match (q_next, next_state.is_terminal()) {
            (None, _) | (_, true) => 0.0,
            (Some(model), false) => {
                let row = model.feature_map.row(next_state, traj.cumulative_through(stage))?;
                let mut best = f64::NEG_INFINITY;
                for a in 0..model.coefficients.len() {
                    best = best.max(model.evaluate_row(&row, a)?);
                }
                best
            }
        };
        out.push(reward + continuation);
    }
    Ok(out)
}

/// Fit the stage models backward from the horizon.
///
/// Rows with a terminal stage-start state are always excluded (the
/// Q-function is identically zero there); a `(stage, action)` cell with no
/// usable rows is an error rather than a silent zero model.
pub fn fit_q_functions(
    trajectories: &[AuxiliaryTrajectory],
    km_curve: &KaplanMeierCurve,
    features: FeatureKind,
    mode: WeightMode,
    n_actions: usize,
) -> Result<QModel> {
    if trajectories.is_empty() {
        return Err(Error::QLearning("no trajectories to fit".to_string()));
    }
    let horizon = trajectories[0].horizon;
    let tau = trajectories[0].tau;
    if trajectories
        .iter()
        .any(|t| t.horizon != horizon || t.tau != tau)
    {
        return Err(Error::QLearning(
            "trajectories disagree on horizon or tau".to_string(),
        ));
    }

    let working: Vec<&AuxiliaryTrajectory> = match mode {
        WeightMode::DropCensored => trajectories.iter().filter(|t| t.fully_observed()).collect(),
        _ => trajectories.iter().collect(),
    };

    let mut fitted: Vec<StageQModel> = Vec::with_capacity(horizon);
    for stage in (1..=horizon).rev() {
        let owned: Vec<AuxiliaryTrajectory> = working.iter().map(|t| (*t).clone()).collect();
        let targets = target_values(stage, fitted.last(), &owned)?;

        let feature_map = FeatureMap::new(stage, features, n_actions);
        let mut coefficients = Vec::with_capacity(n_actions);
        for action in 0..n_actions {
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            let mut ws = Vec::new();
            for (traj, y) in working.iter().zip(&targets) {
                let start = traj.stage_start(stage);
                if start.is_terminal() || traj.delta(stage) != 1 || traj.action(stage) != action {
                    continue;
                }
                let weight = match mode {
                    WeightMode::Ipcw => {
                        1.0 / km_curve.evaluate(traj.cumulative_through(stage))?
                    }
                    WeightMode::IgnoreWeights | WeightMode::DropCensored => 1.0,
                };
                rows.push(feature_map.row(start, traj.elapsed_before(stage))?);
                ys.push(*y);
                ws.push(weight);
            }
            if rows.is_empty() {
                return Err(Error::InsufficientData { stage, action });
            }
            coefficients.push(fit_weighted_least_squares(&rows, &ys, &ws)?);
        }
        fitted.push(StageQModel {
            feature_map,
            coefficients,
        });
    }

    fitted.reverse();
    Ok(QModel {
        stage_models: fitted,
        horizon,
        tau,
        n_actions,
    })
}

/// Greedy policy extraction.
pub fn extract_policy(q_model: QModel) -> Policy {
    Policy { q_model }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kaplan_meier::{censoring_samples, fit_censoring_survival};
    use crate::trajectory::{to_auxiliary, Trajectory};

    /// One-stage trajectory ending in failure with the given reward.
    fn single_stage(wellness: f64, action: usize, reward: f64) -> Trajectory {
        Trajectory {
            states: vec![StageState::new(vec![wellness], 0.0), StageState::terminal(reward)],
            actions: vec![action],
            censoring_time: None,
            deltas: vec![1],
        }
    }

    fn censored_stage_one(wellness: f64, action: usize, c: f64) -> Trajectory {
        Trajectory {
            states: vec![StageState::new(vec![wellness], 0.0)],
            actions: vec![action],
            censoring_time: Some(c),
            deltas: vec![0],
        }
    }

    fn aux_all(trajs: &[Trajectory], horizon: usize, tau: f64) -> Vec<AuxiliaryTrajectory> {
        trajs
            .iter()
            .map(|t| to_auxiliary(t, horizon, tau, 0).unwrap())
            .collect()
    }

    fn intercept_q(horizon: usize, values: &[Vec<f64>]) -> QModel {
        QModel {
            stage_models: (1..=horizon)
                .map(|stage| StageQModel {
                    feature_map: FeatureMap::new(stage, FeatureKind::InterceptOnly, values.len()),
                    coefficients: values.to_vec(),
                })
                .collect(),
            horizon,
            tau: 3.0,
            n_actions: values.len(),
        }
    }

    #[test]
    fn q_value_conventions() {
        let q = QModel {
            stage_models: vec![StageQModel {
                feature_map: FeatureMap::new(1, FeatureKind::WellnessElapsed, 1),
                coefficients: vec![vec![0.0, 1.0, 0.0]],
            }],
            horizon: 1,
            tau: 3.0,
            n_actions: 1,
        };
        let s = StageState::new(vec![0.7], 0.0);
        assert_eq!(q.q_value(&s, 0.0, 1, 0).unwrap(), 0.7);
        assert_eq!(q.q_value(&StageState::terminal(1.0), 0.5, 1, 0).unwrap(), 0.0);
        assert!(q.q_value(&s, 0.0, 2, 0).is_err());
        assert!(q.q_value(&s, 0.0, 0, 0).is_err());

        let q0 = intercept_q(1, &[vec![4.5]]);
        let anywhere = StageState::new(vec![0.31], 0.0);
        assert_eq!(q0.q_value(&anywhere, 2.0, 1, 0).unwrap(), 4.5);
    }

    #[test]
    fn target_values_last_stage_is_reward() {
        let trajs = aux_all(
            &[single_stage(0.8, 0, 1.25), single_stage(0.6, 1, 0.5)],
            3,
            3.0,
        );
        // Stage 3 has no next model; padded rewards are zero.
        let y = target_values(3, None, &trajs).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        // Stage 1 with no fitted successor: terminal next states zero the max.
        let y1 = target_values(1, None, &trajs).unwrap();
        assert_eq!(y1, vec![1.25, 0.5]);
    }

    #[test]
    fn target_values_add_constant_next_stage() {
        // Two-stage trajectory whose stage-1 end state is non-terminal; a
        // constant next-stage model adds its value to the stage-1 target.
        let t = Trajectory {
            states: vec![
                StageState::new(vec![0.9], 0.0),
                StageState::new(vec![0.5], 1.0),
                StageState::terminal(0.5),
            ],
            actions: vec![1, 0],
            censoring_time: None,
            deltas: vec![1, 1],
        };
        let auxs = aux_all(&[t], 3, 3.0);
        let next = StageQModel {
            feature_map: FeatureMap::new(2, FeatureKind::InterceptOnly, 2),
            coefficients: vec![vec![0.75], vec![0.75]],
        };
        let y = target_values(1, Some(&next), &auxs).unwrap();
        assert!((y[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn single_stage_intercept_fit_is_weighted_mean() {
        // Known censoring curve: S_C == 0.5 past time 1, so weights are
        // 1 / S_C(r) = 2 for rewards above 1 and 1 below.
        let km = KaplanMeierCurve {
            jump_times: vec![1.0],
            values: vec![0.5],
            floor: 1e-3,
        };
        let trajs = aux_all(
            &[
                single_stage(0.9, 0, 0.5),
                single_stage(0.8, 0, 1.5),
                single_stage(0.7, 0, 2.5),
            ],
            1,
            3.0,
        );
        let q = fit_q_functions(&trajs, &km, FeatureKind::InterceptOnly, WeightMode::Ipcw, 1)
            .unwrap();
        let weights = [1.0, 2.0, 2.0];
        let rewards = [0.5, 1.5, 2.5];
        let expected: f64 = weights
            .iter()
            .zip(&rewards)
            .map(|(w, r)| w * r)
            .sum::<f64>()
            / weights.iter().sum::<f64>();
        assert!((q.stage_models[0].coefficients[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn no_censoring_modes_agree() {
        let trajs = vec![
            single_stage(0.55, 0, 0.4),
            single_stage(0.65, 1, 0.9),
            single_stage(0.75, 0, 1.4),
            single_stage(0.85, 1, 2.1),
            single_stage(0.95, 0, 2.8),
            single_stage(0.6, 1, 1.1),
        ];
        let km = fit_censoring_survival(&censoring_samples(&trajs).unwrap(), 1e-3).unwrap();
        assert!(km.jump_times.is_empty());
        let auxs = aux_all(&trajs, 1, 3.0);
        let models: Vec<QModel> = WeightMode::ALL
            .iter()
            .map(|m| {
                fit_q_functions(&auxs, &km, FeatureKind::WellnessElapsed, *m, 2).unwrap()
            })
            .collect();
        for m in &models[1..] {
            for (a, b) in m.stage_models[0]
                .coefficients
                .iter()
                .flatten()
                .zip(models[0].stage_models[0].coefficients.iter().flatten())
            {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn drop_censored_uses_only_uncensored() {
        // 5 trajectories, 2 censored. Under DropCensored the fit must match
        // a fit on the 3 uncensored ones alone.
        let trajs = vec![
            single_stage(0.55, 0, 0.4),
            single_stage(0.75, 0, 1.6),
            single_stage(0.95, 0, 2.6),
            censored_stage_one(0.6, 0, 0.2),
            censored_stage_one(0.9, 0, 0.7),
        ];
        let km = fit_censoring_survival(&censoring_samples(&trajs).unwrap(), 1e-3).unwrap();
        let auxs = aux_all(&trajs, 1, 3.0);
        let dropped =
            fit_q_functions(&auxs, &km, FeatureKind::WellnessElapsed, WeightMode::DropCensored, 1)
                .unwrap();
        let manual_auxs = aux_all(&trajs[..3], 1, 3.0);
        let manual = fit_q_functions(
            &manual_auxs,
            &km,
            FeatureKind::WellnessElapsed,
            WeightMode::DropCensored,
            1,
        )
        .unwrap();
        assert_eq!(dropped.stage_models[0].coefficients, manual.stage_models[0].coefficients);
    }

    #[test]
    fn empty_cell_is_an_error() {
        // Every stage-1 action is 0; fitting with 2 actions must fail with
        // the stage/action coordinates.
        let trajs = aux_all(&[single_stage(0.8, 0, 1.0)], 1, 3.0);
        let km = KaplanMeierCurve::constant_one(1e-3);
        let err = fit_q_functions(&trajs, &km, FeatureKind::InterceptOnly, WeightMode::Ipcw, 2)
            .unwrap_err();
        match err {
            Error::InsufficientData { stage, action } => {
                assert_eq!((stage, action), (1, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn policy_tie_break_and_argmax() {
        let state = StageState::new(vec![0.5], 0.0);

        // Exact tie goes to the lowest index.
        let tied = extract_policy(intercept_q(1, &[vec![2.0], vec![2.0]]));
        assert_eq!(tied.decide(&state, 0.0, 1).unwrap(), 0);

        // Intercept-only values 2.0 vs 3.0 pick the second action.
        let ordered = extract_policy(intercept_q(1, &[vec![2.0], vec![3.0]]));
        assert_eq!(ordered.decide(&state, 0.0, 1).unwrap(), 1);

        // Positive scaling of the stage model leaves decisions unchanged.
        let mut scaled_q = intercept_q(1, &[vec![2.0], vec![3.0]]);
        for c in &mut scaled_q.stage_models[0].coefficients {
            for x in c {
                *x *= 17.0;
            }
        }
        let scaled = extract_policy(scaled_q);
        assert_eq!(scaled.decide(&state, 0.0, 1).unwrap(), 1);
    }

    #[test]
    fn backward_recursion_has_no_forward_coupling() {
        // Refit stage 1 by hand with the fitted stage-2 model held fixed;
        // the coefficients must reproduce the full fit's stage-1 model.
        let trajs: Vec<Trajectory> = (0..12)
            .map(|i| {
                let w = 0.5 + 0.04 * i as f64;
                if i % 3 == 0 {
                    Trajectory {
                        states: vec![
                            StageState::new(vec![w], 0.0),
                            StageState::new(vec![w * 0.9], 0.8 + 0.01 * i as f64),
                            StageState::terminal(0.4),
                        ],
                        actions: vec![i % 2, (i + 1) % 2],
                        censoring_time: None,
                        deltas: vec![1, 1],
                    }
                } else {
                    single_stage(w, i % 2, 0.5 + 0.1 * i as f64)
                }
            })
            .collect();
        let km = fit_censoring_survival(&censoring_samples(&trajs).unwrap(), 1e-3).unwrap();
        let auxs = aux_all(&trajs, 2, 3.0);
        let q = fit_q_functions(&auxs, &km, FeatureKind::WellnessElapsed, WeightMode::Ipcw, 2)
            .unwrap();

        let targets = target_values(1, Some(&q.stage_models[1]), &auxs).unwrap();
        for action in 0..2 {
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            let mut ws = Vec::new();
            for (traj, y) in auxs.iter().zip(&targets) {
                if traj.stage_start(1).is_terminal()
                    || traj.delta(1) != 1
                    || traj.action(1) != action
                {
                    continue;
                }
                rows.push(
                    q.stage_models[0]
                        .feature_map
                        .row(traj.stage_start(1), 0.0)
                        .unwrap(),
                );
                ys.push(*y);
                ws.push(1.0 / km.evaluate(traj.cumulative_through(1)).unwrap());
            }
            let refit = fit_weighted_least_squares(&rows, &ys, &ws).unwrap();
            for (a, b) in refit.iter().zip(&q.stage_models[0].coefficients[action]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_round_trips_through_json() {
        let trajs = aux_all(
            &[single_stage(0.8, 0, 1.0), single_stage(0.6, 1, 2.0)],
            1,
            3.0,
        );
        let km = KaplanMeierCurve::constant_one(1e-3);
        let q = fit_q_functions(&trajs, &km, FeatureKind::WellnessElapsed, WeightMode::Ipcw, 2)
            .unwrap();
        let json = serde_json::to_string(&q).unwrap();
        let back: QModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);
        let policy = extract_policy(back);
        let s = StageState::new(vec![0.7], 0.0);
        policy.decide(&s, 0.0, 1).unwrap();
    }
}
