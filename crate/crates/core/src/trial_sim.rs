//! Simulated two-treatment cancer trial with a flexible number of stages.
//!
//! Patients enter when the tumor reaches its critical size. A treatment
//! immediately lowers wellness and shrinks the tumor; wellness then recovers
//! and the tumor regrows until it is critical again, which starts the next
//! stage. Failure within a stage is exponential with a mean set by the
//! post-treatment state, and a post-treatment wellness below 0.25 is an
//! immediate failure. The trial lasts three years and survival is truncated
//! there.
//!
//! Besides the simulator this module carries exact value oracles: a
//! closed-form stage recursion for fixed and optimal policies, a grid-based
//! dynamic program over (wellness, clock) with refinement control, and
//! bisection calibration of the censoring distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlearning::Policy;
use crate::trajectory::{StageState, Trajectory};

/// Trial duration in years; survival is truncated here, so this is also the
/// reward-sum bound of the auxiliary problem.
pub const TRIAL_YEARS: f64 = 3.0;
/// Horizon of the auxiliary problem: the dynamics allow at most 3 stages.
pub const HORIZON: usize = 3;
/// Wellness below this level is a failure.
pub const WELLNESS_FLOOR: f64 = 0.25;
pub const MONTHS_PER_YEAR: f64 = 12.0;
pub const N_TREATMENTS: usize = 2;

/// The two treatments: `A` is aggressive (strong tumor shrink, large
/// wellness cost), `B` is milder on both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Treatment {
    A,
    B,
}

impl Treatment {
    pub const ALL: [Treatment; 2] = [Treatment::A, Treatment::B];

    pub fn index(self) -> usize {
        match self {
            Treatment::A => 0,
            Treatment::B => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Treatment> {
        match index {
            0 => Ok(Treatment::A),
            1 => Ok(Treatment::B),
            other => Err(Error::TrialSim(format!("no treatment with index {other}"))),
        }
    }

    fn wellness_cost(self) -> f64 {
        match self {
            Treatment::A => 0.5,
            Treatment::B => 0.25,
        }
    }

    fn tumor_divisor(self) -> f64 {
        match self {
            Treatment::A => 10.0,
            Treatment::B => 4.0,
        }
    }
}

impl std::fmt::Display for Treatment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Treatment::A => write!(f, "A"),
            Treatment::B => write!(f, "B"),
        }
    }
}

/// Patient state at a decision point (tumor is critical there).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    pub wellness: f64,
    pub tumor: f64,
    pub clock: f64,
}

/// Censoring mechanism for training-data generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CensoringSpec {
    None,
    Uniform { c: f64 },
    Exponential { rate: f64 },
}

/// Trial configuration: the disease dynamics and the action set are fixed by
/// the model; only the censoring mechanism and the seed vary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub censoring: CensoringSpec,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(censoring: CensoringSpec, seed: u64) -> Result<Self> {
        if let CensoringSpec::Uniform { c } = censoring {
            if c <= TRIAL_YEARS {
                return Err(Error::TrialSim(format!(
                    "uniform censoring needs c > {TRIAL_YEARS}, got {c}"
                )));
            }
        }
        if let CensoringSpec::Exponential { rate } = censoring {
            if rate <= 0.0 {
                return Err(Error::TrialSim(format!(
                    "exponential censoring needs a positive rate, got {rate}"
                )));
            }
        }
        Ok(TrialConfig { censoring, seed })
    }
}

/// Immediate treatment effect at a decision point: post-treatment wellness
/// and tumor size.
pub fn immediate_effect(state: &PatientState, treatment: Treatment) -> (f64, f64) {
    debug_assert!((state.tumor - 1.0).abs() < 1e-9, "treatment starts at critical tumor size");
    let w_post = state.wellness - treatment.wellness_cost();
    let t_post = state.tumor / (treatment.tumor_divisor() * state.wellness);
    (w_post, t_post)
}

/// Wellness recovery `dt` time units after treatment.
pub fn wellness_recovery(w_post: f64, dt: f64) -> f64 {
    w_post + (1.0 - w_post) * (1.0 - (-dt / 2.0).exp2())
}

/// Wellness at absolute time `u >= u_i` given the post-treatment level at `u_i`.
pub fn wellness_at(w_post: f64, u_i: f64, u: f64) -> Result<f64> {
    if u < u_i {
        return Err(Error::TrialSim(format!(
            "wellness_at: u = {u} precedes the stage start {u_i}"
        )));
    }
    Ok(wellness_recovery(w_post, u - u_i))
}

/// Time from treatment until the tumor regrows to its critical size.
pub fn tumor_critical_interval(t_post: f64) -> f64 {
    3.0 * (1.0 - t_post) / (4.0 * t_post)
}

/// Next decision time, or `BeyondTrial` when the tumor stays subcritical
/// until the trial ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextDecision {
    At(f64),
    BeyondTrial,
}

pub fn next_decision_time(t_post: f64, u_i: f64) -> Result<NextDecision> {
    if t_post <= 0.0 {
        return Err(Error::TrialSim(format!(
            "next_decision_time: post-treatment tumor size must be positive, got {t_post}"
        )));
    }
    let u_next = u_i + tumor_critical_interval(t_post);
    if u_next >= TRIAL_YEARS {
        Ok(NextDecision::BeyondTrial)
    } else {
        Ok(NextDecision::At(u_next))
    }
}

/// Mean of the within-stage exponential failure law.
pub fn failure_mean(w_post: f64, t_post: f64) -> f64 {
    3.0 * (w_post + 2.0) / (20.0 * t_post)
}

/// Exponential failure draw measured from the stage start.
pub fn draw_failure_time<R: Rng>(rng: &mut R, w_post: f64, t_post: f64) -> f64 {
    let mean = failure_mean(w_post, t_post);
    -mean * (1.0 - rng.random::<f64>()).ln()
}

/// A decision rule over trial states.
pub trait TreatmentPolicy {
    /// `stage_index` is 0-based; `elapsed` is the survival time so far.
    fn decide_treatment(&self, wellness: f64, elapsed: f64, stage_index: usize)
        -> Result<Treatment>;
}

/// Fixed treatment sequence (A1, A2, A3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedSequence(pub [Treatment; 3]);

impl FixedSequence {
    /// All eight fixed sequences in lexicographic order AAA..BBB.
    pub fn all() -> Vec<FixedSequence> {
        let mut out = Vec::with_capacity(8);
        for a in Treatment::ALL {
            for b in Treatment::ALL {
                for c in Treatment::ALL {
                    out.push(FixedSequence([a, b, c]));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}{}{}", self.0[0], self.0[1], self.0[2])
    }
}

impl TreatmentPolicy for FixedSequence {
    fn decide_treatment(&self, _w: f64, _e: f64, stage_index: usize) -> Result<Treatment> {
        Ok(self.0[stage_index.min(2)])
    }
}

/// Greedy rule over the exact optimal value recursion.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimalPolicy;

impl TreatmentPolicy for OptimalPolicy {
    fn decide_treatment(&self, wellness: f64, elapsed: f64, _stage: usize) -> Result<Treatment> {
        Ok(optimal_treatment_at(wellness, elapsed))
    }
}

impl TreatmentPolicy for Policy {
    fn decide_treatment(&self, wellness: f64, elapsed: f64, stage_index: usize)
        -> Result<Treatment> {
        let stage = (stage_index + 1).min(self.q_model.horizon);
        let state = StageState::new(vec![wellness], 0.0);
        Treatment::from_index(self.decide(&state, elapsed, stage)?)
    }
}

/// Where actions come from during simulation.
pub enum ActionSource<'a> {
    /// Each treatment with probability 1/2 (the trial's exploration design).
    UniformExploration,
    Policy(&'a dyn TreatmentPolicy),
}

impl ActionSource<'_> {
    fn choose<R: Rng>(
        &self,
        wellness: f64,
        elapsed: f64,
        stage_index: usize,
        rng: &mut R,
    ) -> Result<Treatment> {
        match self {
            ActionSource::UniformExploration => Ok(if rng.random::<f64>() < 0.5 {
                Treatment::A
            } else {
                Treatment::B
            }),
            ActionSource::Policy(p) => p.decide_treatment(wellness, elapsed, stage_index),
        }
    }
}

/// One recorded stage of a simulated patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub wellness: f64,
    pub start: f64,
    pub treatment: Treatment,
    pub reward: f64,
}

/// Uncensored simulation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientOutcome {
    pub stages: Vec<StageRecord>,
    pub failed: bool,
    /// Wellness at the trial end, present only for survivors.
    pub final_wellness: Option<f64>,
}

impl PatientOutcome {
    /// Total survival time (left-fold sum; exactly `TRIAL_YEARS` for survivors).
    pub fn total_survival(&self) -> f64 {
        self.stages.iter().map(|s| s.reward).sum()
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn initial_wellness(&self) -> f64 {
        self.stages[0].wellness
    }
}

/// Simulate one patient without censoring.
///
/// Stages emerge from the dynamics. A post-treatment wellness below the
/// floor is an immediate failure: at the first treatment it is recorded as a
/// zero-length stage, while at a later decision point it closes the
/// preceding stage (the stage interval is closed on the right), so stage
/// counts never exceed the horizon.
pub fn simulate_patient<R: Rng>(rng: &mut R, source: &ActionSource) -> Result<PatientOutcome> {
    let mut wellness = 0.5 + 0.5 * rng.random::<f64>();
    let mut clock = 0.0f64;
    let mut recorded = 0.0f64;
    let mut stages: Vec<StageRecord> = Vec::new();

    loop {
        let treatment = source.choose(wellness, clock, stages.len(), rng)?;
        let state = PatientState { wellness, tumor: 1.0, clock };
        let (w_post, t_post) = immediate_effect(&state, treatment);

        if w_post < WELLNESS_FLOOR {
            if stages.is_empty() {
                stages.push(StageRecord { wellness, start: clock, treatment, reward: 0.0 });
            }
            return Ok(PatientOutcome { stages, failed: true, final_wellness: None });
        }

        let failure_at = clock + draw_failure_time(rng, w_post, t_post);
        let next = clock + tumor_critical_interval(t_post);
        let stage_end = next.min(TRIAL_YEARS);

        if failure_at <= stage_end {
            stages.push(StageRecord { wellness, start: clock, treatment, reward: failure_at - clock });
            return Ok(PatientOutcome { stages, failed: true, final_wellness: None });
        }
        if next >= TRIAL_YEARS {
            // Survivor: pin the reward so the fold-total is exactly the
            // trial duration, which the tau-truncation relies on.
            let reward = TRIAL_YEARS - recorded;
            let final_wellness = wellness_recovery(w_post, TRIAL_YEARS - clock);
            stages.push(StageRecord { wellness, start: clock, treatment, reward });
            return Ok(PatientOutcome { stages, failed: false, final_wellness: Some(final_wellness) });
        }

        let reward = next - clock;
        stages.push(StageRecord { wellness, start: clock, treatment, reward });
        recorded += reward;
        wellness = wellness_recovery(w_post, next - clock);
        clock = next;
    }
}

/// Turn a simulated outcome into the observed-data trajectory, applying the
/// censoring time if one occurred before the outcome's end.
pub fn to_trajectory(outcome: &PatientOutcome, censoring_time: Option<f64>) -> Trajectory {
    let mut states = vec![StageState::new(vec![outcome.stages[0].wellness], 0.0)];
    let mut actions = Vec::with_capacity(outcome.stages.len());
    let mut deltas = Vec::with_capacity(outcome.stages.len());
    let mut cum = 0.0f64;

    for (j, stage) in outcome.stages.iter().enumerate() {
        actions.push(stage.treatment.index());
        if let Some(c) = censoring_time {
            if c < cum + stage.reward {
                deltas.push(0);
                return Trajectory { states, actions, censoring_time: Some(c), deltas };
            }
        }
        deltas.push(1);
        cum += stage.reward;
        let last = j + 1 == outcome.stages.len();
        if last {
            if outcome.failed {
                states.push(StageState::terminal(stage.reward));
            } else {
                let w_end = outcome.final_wellness.expect("survivor has final wellness");
                states.push(StageState::new(vec![w_end], stage.reward));
            }
        } else {
            states.push(StageState::new(vec![outcome.stages[j + 1].wellness], stage.reward));
        }
    }

    Trajectory { states, actions, censoring_time: None, deltas }
}

/// Simulate one observed trajectory under the given censoring mechanism.
pub fn simulate_trajectory<R: Rng>(
    rng: &mut R,
    source: &ActionSource,
    censoring: &CensoringSpec,
) -> Result<Trajectory> {
    let outcome = simulate_patient(rng, source)?;
    let censoring_time = draw_censoring_time(rng, censoring);
    Ok(to_trajectory(&outcome, censoring_time))
}

/// Draw a censoring time; the uniform draw is shared across mechanisms so
/// experiments with different censoring levels see comonotone censoring.
pub fn draw_censoring_time<R: Rng>(rng: &mut R, censoring: &CensoringSpec) -> Option<f64> {
    match censoring {
        CensoringSpec::None => None,
        CensoringSpec::Uniform { c } => Some(c * rng.random::<f64>()),
        CensoringSpec::Exponential { rate } => {
            Some(-(1.0 - rng.random::<f64>()).ln() / rate)
        }
    }
}

// ---------------------------------------------------------------------------
// Reproducible random-number streams
// ---------------------------------------------------------------------------

/// Purpose tag of an RNG stream; keeps stream indices disjoint across uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamKind {
    Train = 1,
    Eval = 2,
    Calibration = 3,
    Check = 4,
    CheckAlt = 5,
    Histogram = 6,
}

/// Derives one independent ChaCha stream per (kind, repetition, index), so
/// results do not depend on scheduling or on how many draws a neighbor
/// consumed.
#[derive(Debug, Clone, Copy)]
pub struct StreamSeeder {
    pub master: u64,
}

impl StreamSeeder {
    pub fn new(master: u64) -> Self {
        StreamSeeder { master }
    }

    pub fn rng(&self, kind: StreamKind, rep: u64, index: u64) -> ChaCha12Rng {
        debug_assert!(rep < (1 << 20) && index < (1 << 36));
        let mut rng = ChaCha12Rng::seed_from_u64(self.master);
        rng.set_stream(((kind as u64) << 56) | (rep << 36) | index);
        rng
    }
}

// ---------------------------------------------------------------------------
// Exact value recursion
// ---------------------------------------------------------------------------

/// Expected truncated remaining survival of one stage plus its continuation.
///
/// `continuation(w_next, clock_next)` is the value at the next decision
/// point; it is only consulted when the tumor turns critical before the
/// trial ends.
fn stage_value(
    wellness: f64,
    clock: f64,
    treatment: Treatment,
    continuation: &dyn Fn(f64, f64) -> f64,
) -> f64 {
    let room = TRIAL_YEARS - clock;
    if room <= 0.0 {
        return 0.0;
    }
    let state = PatientState { wellness, tumor: 1.0, clock };
    let (w_post, t_post) = immediate_effect(&state, treatment);
    if w_post < WELLNESS_FLOOR {
        return 0.0;
    }
    let mean = failure_mean(w_post, t_post);
    let dt = tumor_critical_interval(t_post);
    let horizon = dt.min(room);
    let value = mean * (1.0 - (-horizon / mean).exp());
    if dt < room {
        value
            + (-dt / mean).exp()
                * continuation(wellness_recovery(w_post, dt), clock + dt)
    } else {
        value
    }
}

fn optimal_value_rec(wellness: f64, clock: f64, depth: usize) -> f64 {
    if clock >= TRIAL_YEARS || depth > 32 {
        return 0.0;
    }
    let cont = |w: f64, c: f64| optimal_value_rec(w, c, depth + 1);
    Treatment::ALL
        .iter()
        .map(|t| stage_value(wellness, clock, *t, &cont))
        .fold(0.0, f64::max)
}

/// Optimal expected truncated remaining survival (years) at a decision point.
pub fn optimal_value_at(wellness: f64, clock: f64) -> f64 {
    optimal_value_rec(wellness, clock, 0)
}

/// Optimal treatment at a decision point; exact ties pick treatment A.
pub fn optimal_treatment_at(wellness: f64, clock: f64) -> Treatment {
    let cont = |w: f64, c: f64| optimal_value_rec(w, c, 1);
    let qa = stage_value(wellness, clock, Treatment::A, &cont);
    let qb = stage_value(wellness, clock, Treatment::B, &cont);
    if qa >= qb {
        Treatment::A
    } else {
        Treatment::B
    }
}

fn fixed_value_rec(seq: &FixedSequence, wellness: f64, clock: f64, stage_index: usize) -> f64 {
    if clock >= TRIAL_YEARS || stage_index > 32 {
        return 0.0;
    }
    let cont =
        |w: f64, c: f64| fixed_value_rec(seq, w, c, stage_index + 1);
    stage_value(wellness, clock, seq.0[stage_index.min(2)], &cont)
}

const GL5_NODES: [f64; 5] = [
    -0.906179845938664,
    -0.5384693101056831,
    0.0,
    0.5384693101056831,
    0.906179845938664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.23692688505618908,
    0.47862867049936647,
    0.5688888888888889,
    0.47862867049936647,
    0.23692688505618908,
];

/// Average of `f` over the initial-wellness distribution Uniform[0.5, 1],
/// composite 5-point Gauss-Legendre.
pub fn average_over_initial_wellness<F: Fn(f64) -> f64>(f: F, panels: usize) -> f64 {
    let (a, b) = (0.5, 1.0);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            total += w * f(mid + x * h / 2.0) * h / 2.0;
        }
    }
    total / (b - a)
}

/// Exact expected truncated survival (months) of a fixed treatment sequence,
/// by the same stage-integration machinery as the optimal oracle but without
/// the maximization.
pub fn fixed_policy_value(seq: &FixedSequence) -> f64 {
    MONTHS_PER_YEAR * average_over_initial_wellness(|w| fixed_value_rec(seq, w, 0.0, 0), 400)
}

/// Exact optimal value (months) by the continuous recursion; serves as an
/// independent route against the grid oracle.
pub fn optimal_value_exact() -> f64 {
    MONTHS_PER_YEAR * average_over_initial_wellness(|w| optimal_value_at(w, 0.0), 400)
}

// ---------------------------------------------------------------------------
// Grid dynamic-programming oracle
// ---------------------------------------------------------------------------

/// Grid resolution and convergence policy of [`optimal_value_oracle`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleGridSpec {
    /// Wellness grid points on [0.25, 1]; `wellness_points - 1` must be a
    /// multiple of 6 so 0.5 is a node and Simpson weights apply on [0.5, 1].
    pub wellness_points: usize,
    /// Clock grid points on [0, 3].
    pub clock_points: usize,
    /// Refinement stops when halving the spacing moves the value less than
    /// this (months).
    pub tolerance_months: f64,
    pub max_refinements: usize,
}

impl Default for OracleGridSpec {
    fn default() -> Self {
        OracleGridSpec {
            wellness_points: 121,
            clock_points: 181,
            tolerance_months: 0.02,
            max_refinements: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementStep {
    pub wellness_points: usize,
    pub clock_points: usize,
    pub months: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleValue {
    pub months: f64,
    pub refinements: Vec<RefinementStep>,
}

fn grid_dp_value(nw: usize, nu: usize) -> Result<f64> {
    if (nw - 1) % 6 != 0 {
        return Err(Error::TrialSim(format!(
            "wellness grid must have 6k+1 points, got {nw}"
        )));
    }
    if nu < 9 {
        return Err(Error::TrialSim("clock grid too coarse".to_string()));
    }
    let w_lo = WELLNESS_FLOOR;
    let w_hi = 1.0;
    let dw = (w_hi - w_lo) / (nw - 1) as f64;
    let du = TRIAL_YEARS / (nu - 1) as f64;
    // Any stage that leads to another decision lasts at least 0.75 years;
    // coarser clock grids would make the backward sweep self-referential.
    debug_assert!(du < 0.75);

    let mut values = vec![0.0f64; nw * nu];
    let interp = |values: &[f64], w: f64, u: f64| -> f64 {
        let fw = ((w - w_lo) / dw).clamp(0.0, (nw - 1) as f64);
        let fu = (u / du).clamp(0.0, (nu - 1) as f64);
        let iw = (fw as usize).min(nw - 2);
        let iu = (fu as usize).min(nu - 2);
        let tw = fw - iw as f64;
        let tu = fu - iu as f64;
        let v00 = values[iu * nw + iw];
        let v01 = values[iu * nw + iw + 1];
        let v10 = values[(iu + 1) * nw + iw];
        let v11 = values[(iu + 1) * nw + iw + 1];
        (1.0 - tu) * ((1.0 - tw) * v00 + tw * v01) + tu * ((1.0 - tw) * v10 + tw * v11)
    };

    for j in (0..nu - 1).rev() {
        let clock = j as f64 * du;
        for i in 0..nw {
            let wellness = w_lo + i as f64 * dw;
            let mut best = 0.0f64;
            for treatment in Treatment::ALL {
                let state = PatientState { wellness, tumor: 1.0, clock };
                let (w_post, t_post) = immediate_effect(&state, treatment);
                if w_post < WELLNESS_FLOOR {
                    continue;
                }
                let mean = failure_mean(w_post, t_post);
                let dt = tumor_critical_interval(t_post);
                let room = TRIAL_YEARS - clock;
                let horizon = dt.min(room);
                let mut q = mean * (1.0 - (-horizon / mean).exp());
                if dt < room {
                    let w_next = wellness_recovery(w_post, dt);
                    q += (-dt / mean).exp() * interp(&values, w_next, clock + dt);
                }
                best = best.max(q);
            }
            values[j * nw + i] = best;
        }
    }

    // Simpson integration of the clock-zero row over initial wellness
    // Uniform[0.5, 1]; 0.5 sits at index (nw - 1) / 3.
    let start = (nw - 1) / 3;
    let intervals = nw - 1 - start;
    debug_assert!(intervals % 2 == 0);
    let mut integral = 0.0;
    for k in 0..intervals / 2 {
        let i = start + 2 * k;
        integral += dw / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
    }
    Ok(MONTHS_PER_YEAR * integral / 0.5)
}

/// Backward dynamic programming over (wellness, clock), refined until
/// halving the grid spacing moves the value less than the tolerance.
pub fn optimal_value_oracle(spec: &OracleGridSpec) -> Result<OracleValue> {
    let mut nw = spec.wellness_points;
    let mut nu = spec.clock_points;
    let mut refinements = Vec::new();
    let mut previous: Option<f64> = None;
    for _ in 0..=spec.max_refinements {
        let months = grid_dp_value(nw, nu)?;
        refinements.push(RefinementStep { wellness_points: nw, clock_points: nu, months });
        if let Some(prev) = previous {
            if (months - prev).abs() < spec.tolerance_months {
                return Ok(OracleValue { months, refinements });
            }
        }
        previous = Some(months);
        nw = (nw - 1) * 2 + 1;
        nu = (nu - 1) * 2 + 1;
    }
    Err(Error::OracleNonConvergence(format!(
        "value still moving more than {} months after {} refinements",
        spec.tolerance_months, spec.max_refinements
    )))
}

// ---------------------------------------------------------------------------
// Censoring calibration
// ---------------------------------------------------------------------------

/// Result of calibrating a censoring mechanism to a target fraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CensoringCalibration {
    pub target: f64,
    /// Calibrated constant: the uniform upper end `c`, or the exponential rate.
    pub constant: f64,
    pub achieved: f64,
    pub n_sims: usize,
}

pub const CALIBRATION_SIMS: usize = 200_000;
const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Total survival times plus the shared uniform censoring draw, precomputed
/// once so each bisection step is a linear scan.
fn calibration_panel(seeder: &StreamSeeder, n_sims: usize) -> Result<Vec<(f64, f64)>> {
    (0..n_sims)
        .map(|i| {
            let mut rng = seeder.rng(StreamKind::Calibration, 0, i as u64);
            let outcome = simulate_patient(&mut rng, &ActionSource::UniformExploration)?;
            let u = rng.random::<f64>();
            Ok((outcome.total_survival(), u))
        })
        .collect()
}

/// Censoring happens exactly when C falls below the total survival time.
fn censored_fraction(panel: &[(f64, f64)], censoring_time: impl Fn(f64) -> f64) -> f64 {
    let censored = panel
        .iter()
        .filter(|(total, u)| censoring_time(*u) < *total)
        .count();
    censored as f64 / panel.len() as f64
}

/// Calibrate the uniform-[0, c] censoring constant to a target censored
/// fraction (within ±0.01) by bisection over c > 3. A zero target is the
/// no-censoring mode.
pub fn calibrate_uniform_censoring(
    target: f64,
    seeder: &StreamSeeder,
    n_sims: usize,
) -> Result<Option<CensoringCalibration>> {
    if target == 0.0 {
        return Ok(None);
    }
    if !(0.0..1.0).contains(&target) {
        return Err(Error::TrialSim(format!("censoring target {target} outside [0, 1)")));
    }
    let panel = calibration_panel(seeder, n_sims)?;
    let mut lo = TRIAL_YEARS + 1e-9;
    let frac_at = |c: f64| censored_fraction(&panel, |u| c * u);
    let max_achievable = frac_at(lo);
    if max_achievable + CALIBRATION_TOLERANCE < target {
        return Err(Error::TrialSim(format!(
            "target censoring fraction {target:.3} not achievable with c > 3 \
             (maximum ≈ {max_achievable:.3})"
        )));
    }
    let mut hi = 2.0 * TRIAL_YEARS;
    while frac_at(hi) > target && hi < 1e9 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac_at(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let achieved = frac_at(c);
    if (achieved - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::TrialSim(format!(
            "uniform censoring calibration missed the target: wanted {target:.3}, got {achieved:.3}"
        )));
    }
    Ok(Some(CensoringCalibration { target, constant: c, achieved, n_sims }))
}

/// Calibrate the exponential censoring rate to a target censored fraction.
pub fn calibrate_exponential_censoring(
    target: f64,
    seeder: &StreamSeeder,
    n_sims: usize,
) -> Result<CensoringCalibration> {
    if !(0.0..1.0).contains(&target) || target == 0.0 {
        return Err(Error::TrialSim(format!(
            "exponential censoring target must lie in (0, 1), got {target}"
        )));
    }
    let panel = calibration_panel(seeder, n_sims)?;
    let frac_at = |rate: f64| censored_fraction(&panel, |u| -(1.0 - u).ln() / rate);
    let mut lo = 1e-9;
    let mut hi = 1.0;
    while frac_at(hi) < target && hi < 1e9 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let rate = 0.5 * (lo + hi);
    let achieved = frac_at(rate);
    if (achieved - target).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::TrialSim(format!(
            "exponential censoring calibration missed the target: wanted {target:.3}, got {achieved:.3}"
        )));
    }
    Ok(CensoringCalibration { target, constant: rate, achieved, n_sims })
}
