//! Weighted linear least squares over a per-stage, per-action feature map.
//!
//! Fitting multiplies rows and targets by the square root of their weights
//! and solves the resulting ordinary problem by singular value decomposition
//! with a relative cutoff, so rank-deficient designs (a constant elapsed-time
//! column at stage one, padded stages) get the minimum-norm solution instead
//! of an error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::StageState;

/// Relative singular-value cutoff for the least-squares solve.
const SVD_RCOND: f64 = 1e-10;

/// Feature construction shared by every stage model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// `[1]` — intercept only.
    InterceptOnly,
    /// `[1, wellness, elapsed time]` — linear in the state's first covariate
    /// and in the survival time accumulated before the stage.
    WellnessElapsed,
}

impl FeatureKind {
    pub fn dimension(self) -> usize {
        match self {
            FeatureKind::InterceptOnly => 1,
            FeatureKind::WellnessElapsed => 3,
        }
    }
}

/// Per-stage description of the regression design: one coefficient block of
/// `dimension` features for each action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub stage: usize,
    pub kind: FeatureKind,
    pub n_actions: usize,
}

impl FeatureMap {
    pub fn new(stage: usize, kind: FeatureKind, n_actions: usize) -> Self {
        FeatureMap {
            stage,
            kind,
            n_actions,
        }
    }

    pub fn dimension(&self) -> usize {
        self.kind.dimension()
    }

    /// Design row for a non-terminal stage-start state.
    pub fn row(&self, state: &StageState, elapsed: f64) -> Result<Vec<f64>> {
        build_design_row_with(self.kind, state, elapsed)
    }
}

/// Design row for the stage-start state of a history: `[1, wellness at stage
/// start, elapsed time at stage start]`. Terminal histories carry no free
/// parameters and must be excluded by the caller.
pub fn build_design_row(state: &StageState, elapsed: f64) -> Result<Vec<f64>> {
    build_design_row_with(FeatureKind::WellnessElapsed, state, elapsed)
}

fn build_design_row_with(kind: FeatureKind, state: &StageState, elapsed: f64) -> Result<Vec<f64>> {
    let covariates = state.covariates.as_ref().ok_or_else(|| {
        Error::Regression("terminal history has no design row (Q is zero there)".to_string())
    })?;
    match kind {
        FeatureKind::InterceptOnly => Ok(vec![1.0]),
        FeatureKind::WellnessElapsed => {
            let wellness = *covariates.first().ok_or_else(|| {
                Error::Regression("state has no covariates for the wellness feature".to_string())
            })?;
            Ok(vec![1.0, wellness, elapsed])
        }
    }
}

/// Coefficients of one stage's Q-function: one vector per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageQModel {
    pub feature_map: FeatureMap,
    /// `coefficients[a]` is the block for action `a`.
    pub coefficients: Vec<Vec<f64>>,
}

impl StageQModel {
    /// Dot product of the action's coefficient block with a design row.
    pub fn evaluate_row(&self, row: &[f64], action: usize) -> Result<f64> {
        let coef = self.coefficients.get(action).ok_or_else(|| {
            Error::Regression(format!("action {action} outside the model's action set"))
        })?;
        if coef.len() != row.len() {
            return Err(Error::Regression(format!(
                "design row length {} does not match coefficient length {}",
                row.len(),
                coef.len()
            )));
        }
        Ok(coef.iter().zip(row).map(|(c, x)| c * x).sum())
    }
}

/// Minimize `sum_i w_i (y_i - x_i' beta)^2`.
///
/// Returns the minimum-norm minimizer when the weighted Gram matrix is
/// singular (singular values below `1e-10 * sigma_max` are dropped).
pub fn fit_weighted_least_squares(
    rows: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::Regression("no rows to fit".to_string()));
    }
    if rows.len() != targets.len() || rows.len() != weights.len() {
        return Err(Error::Regression(format!(
            "dimension mismatch: {} rows, {} targets, {} weights",
            rows.len(),
            targets.len(),
            weights.len()
        )));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Regression("ragged or empty design rows".to_string()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Regression("weights must be finite and non-negative".to_string()));
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(Error::Regression("all weights zero".to_string()));
    }

    let n = rows.len();
    let mut a = DMatrix::<f64>::zeros(n, dim);
    let mut b = DVector::<f64>::zeros(n);
    for (i, ((row, y), w)) in rows.iter().zip(targets).zip(weights).enumerate() {
        let sw = w.sqrt();
        for (j, x) in row.iter().enumerate() {
            a[(i, j)] = sw * x;
        }
        b[i] = sw * y;
    }

    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let solution = svd
        .solve(&b, SVD_RCOND * sigma_max)
        .map_err(|e| Error::Regression(format!("SVD solve failed: {e}")))?;
    Ok(solution.iter().copied().collect())
}
