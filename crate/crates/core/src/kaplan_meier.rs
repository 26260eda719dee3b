//! Product-limit estimation of the censoring survival function
//! `S_C(x) = P(C >= x)`, with the roles of failure and censoring events
//! interchanged: censoring events are the "events", failures enter the risk
//! set as censored-for-this-estimator observations.
//!
//! Evaluation uses the strict-inequality product over jump times below `x`
//! (the left limit of the conventional `P(C > x)` estimator), which is the
//! quantity the inverse-probability weights require.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const DEFAULT_FLOOR: f64 = 1e-3;

/// Non-increasing step estimate of `P(C >= x)`, clipped below at `floor` so
/// inverse weights stay bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve {
    /// Strictly increasing distinct censoring times.
    pub jump_times: Vec<f64>,
    /// Curve value just after each jump (clipped at `floor`).
    pub values: Vec<f64>,
    pub floor: f64,
}

impl KaplanMeierCurve {
    /// The constant-one curve produced by a sample with no censoring events.
    pub fn constant_one(floor: f64) -> Self {
        KaplanMeierCurve {
            jump_times: Vec::new(),
            values: Vec::new(),
            floor,
        }
    }

    /// Estimated `P(C >= x)`: the product over jump times strictly below `x`.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::KaplanMeier(format!(
                "evaluate: x must be non-negative, got {x}"
            )));
        }
        // Number of jump times strictly below x.
        let idx = self.jump_times.partition_point(|t| *t < x);
        if idx == 0 {
            Ok(1.0)
        } else {
            Ok(self.values[idx - 1])
        }
    }
}

/// Fit the product-limit estimator of the censoring survival function.
///
/// Each sample is an observation time plus an indicator that the censoring
/// event was observed at that time (`true`) rather than a failure/end of
/// follow-up (`false`). Ties between a censoring and a failure time keep the
/// failure in the risk set for that jump (censoring-first), deterministically.
pub fn fit_censoring_survival(samples: &[(f64, bool)], floor: f64) -> Result<KaplanMeierCurve> {
    if samples.is_empty() {
        return Err(Error::KaplanMeier("empty sample list".to_string()));
    }
    if !(0.0..1.0).contains(&floor) || floor == 0.0 {
        return Err(Error::KaplanMeier(format!(
            "floor must lie in (0, 1), got {floor}"
        )));
    }
    for (t, _) in samples {
        if !t.is_finite() || *t < 0.0 {
            return Err(Error::KaplanMeier(format!("negative or non-finite time {t}")));
        }
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.total_cmp(&samples[b].0));

    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut surv = 1.0f64;
    let mut at_risk = samples.len();
    let mut i = 0;
    while i < order.len() {
        let t = samples[order[i]].0;
        let mut censoring_events = 0usize;
        let mut group = 0usize;
        while i + group < order.len() && samples[order[i + group]].0 == t {
            if samples[order[i + group]].1 {
                censoring_events += 1;
            }
            group += 1;
        }
        if censoring_events > 0 {
            // Tied censoring times aggregate into one jump; tied failures
            // are still at risk here and leave the risk set afterwards.
            surv *= 1.0 - censoring_events as f64 / at_risk as f64;
            jump_times.push(t);
            values.push(surv.max(floor));
        }
        at_risk -= group;
        i += group;
    }

    Ok(KaplanMeierCurve {
        jump_times,
        values,
        floor,
    })
}

/// Kaplan-Meier sample for the censoring distribution extracted from
/// trajectories: censored trajectories contribute their censoring time as an
/// event, uncensored ones their total recorded survival as a non-event.
pub fn censoring_samples(trajectories: &[Trajectory]) -> Result<Vec<(f64, bool)>> {
    trajectories
        .iter()
        .map(|t| {
            if t.is_censored() {
                let c = t.censoring_time.ok_or_else(|| {
                    Error::KaplanMeier("censored trajectory without censoring time".to_string())
                })?;
                Ok((c, true))
            } else {
                Ok((t.rewards().sum::<f64>(), false))
            }
        })
        .collect()
}
