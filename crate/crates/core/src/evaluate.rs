//! Monte Carlo policy evaluation, the auxiliary-problem value-equivalence
//! check, the inverse-weight identity diagnostic, and the experiment grid
//! (sample sizes x censoring levels x repetitions x weight modes).
//!
//! Repetitions, cells and evaluation draws all use indexed RNG streams, so
//! adding repetitions or running cells concurrently never changes earlier
//! results, the weight modes of one repetition share their training data,
//! and every evaluation uses fresh trajectories never seen in training.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kaplan_meier::{censoring_samples, fit_censoring_survival};
use crate::qlearning::{extract_policy, fit_q_functions, Policy, WeightMode};
use crate::regression::FeatureKind;
use crate::trajectory::{to_auxiliary, AuxiliaryTrajectory, Trajectory};
use crate::trial_sim::{
    calibrate_exponential_censoring, calibrate_uniform_censoring, simulate_patient,
    simulate_trajectory, to_trajectory, ActionSource, CensoringCalibration, CensoringSpec,
    StreamKind, StreamSeeder, TreatmentPolicy, CALIBRATION_SIMS, HORIZON, MONTHS_PER_YEAR,
    TRIAL_YEARS,
};

/// Default master seed; fixed so documented runs reproduce verbatim.
pub const DEFAULT_SEED: u64 = 20120401;
pub const DEFAULT_KM_FLOOR: f64 = 1e-3;

/// A censoring level of the experiment grid, by target censored fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CensoringLevel {
    None,
    Uniform { fraction: f64 },
    Exponential { fraction: f64 },
}

impl CensoringLevel {
    pub fn label(&self) -> String {
        match self {
            CensoringLevel::None => "none".to_string(),
            CensoringLevel::Uniform { fraction } => format!("uniform:{fraction:.2}"),
            CensoringLevel::Exponential { fraction } => format!("exponential:{fraction:.2}"),
        }
    }

    /// Parse the CLI grammar `none | uniform:frac | exponential:frac`.
    pub fn parse(text: &str) -> Result<CensoringLevel> {
        if text == "none" {
            return Ok(CensoringLevel::None);
        }
        let (kind, frac) = text.split_once(':').ok_or_else(|| {
            Error::Evaluate(format!(
                "bad censoring level '{text}' (expected none|uniform:frac|exponential:frac)"
            ))
        })?;
        let fraction: f64 = frac
            .parse()
            .map_err(|_| Error::Evaluate(format!("bad censoring fraction '{frac}'")))?;
        match kind {
            "uniform" => Ok(CensoringLevel::Uniform { fraction }),
            "exponential" => Ok(CensoringLevel::Exponential { fraction }),
            _ => Err(Error::Evaluate(format!("unknown censoring kind '{kind}'"))),
        }
    }

    /// Resolve the level into a concrete mechanism by bisection calibration.
    pub fn resolve(
        &self,
        seeder: &StreamSeeder,
        n_sims: usize,
    ) -> Result<(CensoringSpec, Option<CensoringCalibration>)> {
        match self {
            CensoringLevel::None => Ok((CensoringSpec::None, None)),
            CensoringLevel::Uniform { fraction } => {
                match calibrate_uniform_censoring(*fraction, seeder, n_sims)? {
                    None => Ok((CensoringSpec::None, None)),
                    Some(cal) => Ok((CensoringSpec::Uniform { c: cal.constant }, Some(cal))),
                }
            }
            CensoringLevel::Exponential { fraction } => {
                let cal = calibrate_exponential_censoring(*fraction, seeder, n_sims)?;
                Ok((CensoringSpec::Exponential { rate: cal.constant }, Some(cal)))
            }
        }
    }
}

/// Experiment grid configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sample_sizes: Vec<usize>,
    pub censoring_levels: Vec<CensoringLevel>,
    pub repetitions: usize,
    pub test_size: usize,
    pub weight_modes: Vec<WeightMode>,
    pub master_seed: u64,
    pub km_floor: f64,
}

impl ExperimentConfig {
    /// Desk-scale defaults: minutes of runtime, 3-standard-error resolution.
    pub fn desk_default() -> Self {
        ExperimentConfig {
            sample_sizes: (1..=10).map(|k| 40 * k).collect(),
            censoring_levels: vec![
                CensoringLevel::None,
                CensoringLevel::Uniform { fraction: 0.10 },
                CensoringLevel::Uniform { fraction: 0.20 },
                CensoringLevel::Uniform { fraction: 0.30 },
            ],
            repetitions: 50,
            test_size: 1_000,
            weight_modes: vec![WeightMode::Ipcw],
            master_seed: DEFAULT_SEED,
            km_floor: DEFAULT_KM_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty()
            || self.censoring_levels.is_empty()
            || self.weight_modes.is_empty()
            || self.repetitions == 0
            || self.test_size == 0
        {
            return Err(Error::Evaluate("empty experiment grid".to_string()));
        }
        Ok(())
    }
}

/// One grid-cell repetition. A repetition that could not be fitted carries
/// the error message instead of a value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub sample_size: usize,
    pub censoring_level: String,
    pub weight_mode: WeightMode,
    pub repetition: usize,
    pub mean_survival_months: Option<f64>,
    pub std_error: Option<f64>,
    /// Stage counts 1..=3 of the evaluation trajectories.
    pub stage_count_histogram: [u64; 3],
    pub flagged: Option<String>,
}

/// Mean and standard error (months) of truncated survival under a policy,
/// over `n_test` fresh uncensored trajectories.
pub fn monte_carlo_value(
    policy: &dyn TreatmentPolicy,
    n_test: usize,
    seeder: &StreamSeeder,
    rep: u64,
) -> Result<(f64, Option<f64>)> {
    if n_test == 0 {
        return Err(Error::Evaluate("monte_carlo_value needs n_test >= 1".to_string()));
    }
    let (mean, se, _) = evaluation_statistics(policy, n_test, seeder, rep)?;
    Ok((mean, se))
}

fn evaluation_statistics(
    policy: &dyn TreatmentPolicy,
    n_test: usize,
    seeder: &StreamSeeder,
    rep: u64,
) -> Result<(f64, Option<f64>, [u64; 3])> {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut hist = [0u64; 3];
    for i in 0..n_test {
        let mut rng = seeder.rng(StreamKind::Eval, rep, i as u64);
        let outcome = simulate_patient(&mut rng, &ActionSource::Policy(policy))?;
        let months = MONTHS_PER_YEAR * outcome.total_survival().min(TRIAL_YEARS);
        sum += months;
        sumsq += months * months;
        hist[(outcome.stage_count() - 1).min(2)] += 1;
    }
    let n = n_test as f64;
    let mean = sum / n;
    let se = if n_test >= 2 {
        let var = (sumsq - n * mean * mean) / (n - 1.0);
        Some((var.max(0.0) / n).sqrt())
    } else {
        None
    };
    Ok((mean, se, hist))
}

/// Report of the auxiliary-vs-raw value equivalence check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma41Report {
    pub auxiliary_mean_months: f64,
    pub raw_mean_months: f64,
    pub difference_months: f64,
    pub combined_se_months: f64,
    pub passes_3se: bool,
    /// Largest pathwise |auxiliary sum - min(raw total, tau)| over shared
    /// streams; exactly zero by the truncation invariant.
    pub pathwise_max_abs_diff: f64,
    pub n: usize,
}

/// Compare the expected auxiliary reward sum against the expected truncated
/// raw survival under the same policy: independent streams for the two
/// estimates, plus a shared-stream pathwise variant that must be exactly
/// zero.
pub fn lemma41_check(
    policy: &dyn TreatmentPolicy,
    n: usize,
    seeder: &StreamSeeder,
    rep: u64,
) -> Result<Lemma41Report> {
    if n == 0 {
        return Err(Error::Evaluate("lemma41_check needs n >= 1".to_string()));
    }
    let mut aux_sum = 0.0;
    let mut aux_sumsq = 0.0;
    let mut raw_sum = 0.0;
    let mut raw_sumsq = 0.0;
    let mut pathwise: f64 = 0.0;

    for i in 0..n {
        // Auxiliary side.
        let mut rng = seeder.rng(StreamKind::Check, rep, i as u64);
        let outcome = simulate_patient(&mut rng, &ActionSource::Policy(policy))?;
        let traj = to_trajectory(&outcome, None);
        let aux = to_auxiliary(&traj, HORIZON, TRIAL_YEARS, 0)?;
        let aux_months = MONTHS_PER_YEAR * aux.reward_sum();
        aux_sum += aux_months;
        aux_sumsq += aux_months * aux_months;
        // Pathwise: the same draw stream on both sides.
        let raw_months = MONTHS_PER_YEAR * outcome.total_survival().min(TRIAL_YEARS);
        pathwise = pathwise.max((aux_months - raw_months).abs());

        // Independent raw side.
        let mut rng2 = seeder.rng(StreamKind::CheckAlt, rep, i as u64);
        let outcome2 = simulate_patient(&mut rng2, &ActionSource::Policy(policy))?;
        let months2 = MONTHS_PER_YEAR * outcome2.total_survival().min(TRIAL_YEARS);
        raw_sum += months2;
        raw_sumsq += months2 * months2;
    }

    let nf = n as f64;
    let aux_mean = aux_sum / nf;
    let raw_mean = raw_sum / nf;
    let aux_var = ((aux_sumsq - nf * aux_mean * aux_mean) / (nf - 1.0).max(1.0)).max(0.0);
    let raw_var = ((raw_sumsq - nf * raw_mean * raw_mean) / (nf - 1.0).max(1.0)).max(0.0);
    let combined_se = ((aux_var + raw_var) / nf).sqrt();
    let difference = aux_mean - raw_mean;
    Ok(Lemma41Report {
        auxiliary_mean_months: aux_mean,
        raw_mean_months: raw_mean,
        difference_months: difference,
        combined_se_months: combined_se,
        passes_3se: difference.abs() <= 3.0 * combined_se,
        pathwise_max_abs_diff: pathwise,
        n,
    })
}

/// Per-stage outcome of the inverse-weight identity diagnostic: the mean of
/// `delta_t / S_C(cumulative survival through t)` over trajectories whose
/// auxiliary form reaches stage t, with the true censoring survival plugged
/// in, should sit near one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageIdentity {
    pub stage: usize,
    pub n_reaching: usize,
    pub mean: f64,
    pub std_error: f64,
    pub within_3se_of_one: bool,
}

/// Run the identity diagnostic on freshly simulated data with a known
/// censoring law. Stages reached by fewer than `min_reaching` trajectories
/// are omitted.
pub fn ipcw_identity_check(
    censoring: &CensoringSpec,
    true_survival: impl Fn(f64) -> f64,
    n: usize,
    seeder: &StreamSeeder,
    min_reaching: usize,
) -> Result<Vec<StageIdentity>> {
    let mut per_stage: Vec<Vec<f64>> = vec![Vec::new(); HORIZON];
    for i in 0..n {
        let mut rng = seeder.rng(StreamKind::Check, 0, i as u64);
        let traj = simulate_trajectory(&mut rng, &ActionSource::UniformExploration, censoring)?;
        let aux = to_auxiliary(&traj, HORIZON, TRIAL_YEARS, 0)?;
        for stage in 1..=HORIZON {
            if aux.stage_start(stage).is_terminal() {
                continue;
            }
            let weight = if aux.delta(stage) == 1 {
                1.0 / true_survival(aux.cumulative_through(stage))
            } else {
                0.0
            };
            per_stage[stage - 1].push(weight);
        }
    }
    let mut out = Vec::new();
    for (idx, weights) in per_stage.iter().enumerate() {
        if weights.len() < min_reaching {
            continue;
        }
        let nf = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / nf;
        let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (nf - 1.0);
        let se = (var / nf).sqrt();
        out.push(StageIdentity {
            stage: idx + 1,
            n_reaching: weights.len(),
            mean,
            std_error: se,
            within_3se_of_one: (mean - 1.0).abs() <= 3.0 * se,
        });
    }
    Ok(out)
}

/// Train one policy: simulate `n` trajectories under uniform exploration,
/// fit the censoring curve, transform, fit Q-functions, extract.
pub fn train_policy(
    n: usize,
    censoring: &CensoringSpec,
    mode: WeightMode,
    seeder: &StreamSeeder,
    rep: u64,
    km_floor: f64,
) -> Result<Policy> {
    let trajectories = training_set(n, censoring, seeder, rep)?;
    fit_from_trajectories(&trajectories, mode, km_floor)
}

/// The training set of one repetition; datasets of different sizes share a
/// prefix, and different censoring levels share the patient randomness.
pub fn training_set(
    n: usize,
    censoring: &CensoringSpec,
    seeder: &StreamSeeder,
    rep: u64,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .map(|i| {
            let mut rng = seeder.rng(StreamKind::Train, rep, i as u64);
            simulate_trajectory(&mut rng, &ActionSource::UniformExploration, censoring)
        })
        .collect()
}

/// Fit the full pipeline on observed trajectories.
pub fn fit_from_trajectories(
    trajectories: &[Trajectory],
    mode: WeightMode,
    km_floor: f64,
) -> Result<Policy> {
    let km = fit_censoring_survival(&censoring_samples(trajectories)?, km_floor)?;
    let auxs: Vec<AuxiliaryTrajectory> = trajectories
        .iter()
        .map(|t| to_auxiliary(t, HORIZON, TRIAL_YEARS, 0))
        .collect::<Result<_>>()?;
    let q = fit_q_functions(&auxs, &km, FeatureKind::WellnessElapsed, mode, 2)?;
    Ok(extract_policy(q))
}

/// Everything `run_experiment` produces: per-repetition rows plus the
/// calibration constants behind each censoring level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub calibrations: BTreeMap<String, CensoringCalibration>,
}

/// Run the full grid. Fitting failures (insufficient data at small sample
/// sizes) become flagged rows, not aborts; everything else propagates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let seeder = StreamSeeder::new(config.master_seed);

    let mut specs = Vec::new();
    let mut calibrations = BTreeMap::new();
    for level in &config.censoring_levels {
        let (spec, cal) = level.resolve(&seeder, CALIBRATION_SIMS)?;
        if let Some(cal) = cal {
            calibrations.insert(level.label(), cal);
        }
        specs.push((level.label(), spec));
    }

    let mut cells = Vec::new();
    for &size in &config.sample_sizes {
        for (label, spec) in &specs {
            for rep in 0..config.repetitions {
                cells.push((size, label.clone(), *spec, rep));
            }
        }
    }

    let rows: Result<Vec<Vec<ResultRow>>> = cells
        .par_iter()
        .map(|(size, label, spec, rep)| {
            let trajectories = training_set(*size, spec, &seeder, *rep as u64)?;
            let mut out = Vec::with_capacity(config.weight_modes.len());
            for &mode in &config.weight_modes {
                let row = match fit_from_trajectories(&trajectories, mode, config.km_floor) {
                    Ok(policy) => {
                        let (mean, se, hist) = evaluation_statistics(
                            &policy,
                            config.test_size,
                            &seeder,
                            *rep as u64,
                        )?;
                        ResultRow {
                            sample_size: *size,
                            censoring_level: label.clone(),
                            weight_mode: mode,
                            repetition: *rep,
                            mean_survival_months: Some(mean),
                            std_error: se,
                            stage_count_histogram: hist,
                            flagged: None,
                        }
                    }
                    Err(err @ Error::InsufficientData { .. }) => ResultRow {
                        sample_size: *size,
                        censoring_level: label.clone(),
                        weight_mode: mode,
                        repetition: *rep,
                        mean_survival_months: None,
                        std_error: None,
                        stage_count_histogram: [0; 3],
                        flagged: Some(err.to_string()),
                    },
                    Err(other) => return Err(other),
                };
                out.push(row);
            }
            Ok(out)
        })
        .collect();

    let mut rows: Vec<ResultRow> = rows?.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.sample_size, &a.censoring_level, a.weight_mode.label(), a.repetition).cmp(&(
            b.sample_size,
            &b.censoring_level,
            b.weight_mode.label(),
            b.repetition,
        ))
    });
    Ok(ExperimentOutput { rows, calibrations })
}

/// Aggregate of one experiment cell across repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub sample_size: usize,
    pub censoring_level: String,
    pub weight_mode: WeightMode,
    pub repetitions: usize,
    pub flagged: usize,
    pub mean_months: Option<f64>,
    pub std_across_reps: Option<f64>,
    /// Min, lower quartile, median, upper quartile, max of the repetition means.
    pub quantiles: Option<[f64; 5]>,
    pub stage_count_histogram: [u64; 3],
}

/// Collapse rows into per-cell summaries (boxplot data across repetitions).
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, String, &'static str), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.sample_size, row.censoring_level.clone(), row.weight_mode.label()))
            .or_default()
            .push(row);
    }
    groups
        .into_values()
        .map(|group| {
            let mut values: Vec<f64> =
                group.iter().filter_map(|r| r.mean_survival_months).collect();
            values.sort_by(f64::total_cmp);
            let flagged = group.iter().filter(|r| r.flagged.is_some()).count();
            let mut hist = [0u64; 3];
            for r in &group {
                for (h, x) in hist.iter_mut().zip(r.stage_count_histogram) {
                    *h += x;
                }
            }
            let mean = if values.is_empty() {
                None
            } else {
                Some(values.iter().sum::<f64>() / values.len() as f64)
            };
            let std = if values.len() >= 2 {
                let m = mean.unwrap();
                Some(
                    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                        / (values.len() - 1) as f64)
                        .sqrt(),
                )
            } else {
                None
            };
            let quantiles = if values.is_empty() {
                None
            } else {
                let q = |p: f64| {
                    let idx = p * (values.len() - 1) as f64;
                    let lo = idx.floor() as usize;
                    let hi = idx.ceil() as usize;
                    let t = idx - lo as f64;
                    values[lo] * (1.0 - t) + values[hi] * t
                };
                Some([values[0], q(0.25), q(0.5), q(0.75), values[values.len() - 1]])
            };
            let first = group[0];
            CellSummary {
                sample_size: first.sample_size,
                censoring_level: first.censoring_level.clone(),
                weight_mode: first.weight_mode,
                repetitions: group.len(),
                flagged,
                mean_months: mean,
                std_across_reps: std,
                quantiles,
                stage_count_histogram: hist,
            }
        })
        .collect()
}

/// Treatment-count distribution among failure-free test patients by initial
/// wellness bin (10 equal bins over [0.5, 1]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellnessBinHistogram {
    pub bin_low: f64,
    pub bin_high: f64,
    /// Counts of failure-free patients needing 1, 2 and 3 treatments.
    pub counts: [u64; 3],
}

impl WellnessBinHistogram {
    pub fn modal_count(&self) -> Option<usize> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return None;
        }
        let (idx, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        Some(idx + 1)
    }
}

/// Simulate `n` uncensored patients under a policy and bin the failure-free
/// ones by initial wellness.
pub fn treatment_count_histogram(
    policy: &dyn TreatmentPolicy,
    n: usize,
    seeder: &StreamSeeder,
) -> Result<Vec<WellnessBinHistogram>> {
    let bins = 10usize;
    let mut hist = vec![[0u64; 3]; bins];
    for i in 0..n {
        let mut rng = seeder.rng(StreamKind::Histogram, 0, i as u64);
        let outcome = simulate_patient(&mut rng, &ActionSource::Policy(policy))?;
        if outcome.failed {
            continue;
        }
        let w0 = outcome.initial_wellness();
        let bin = (((w0 - 0.5) / 0.5) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        hist[bin][(outcome.stage_count() - 1).min(2)] += 1;
    }
    Ok(hist
        .into_iter()
        .enumerate()
        .map(|(b, counts)| WellnessBinHistogram {
            bin_low: 0.5 + 0.05 * b as f64,
            bin_high: 0.5 + 0.05 * (b + 1) as f64,
            counts,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Results CSV, one line per repetition; flagged rows have empty value fields.
pub fn write_results_csv<P: AsRef<Path>>(path: P, rows: &[ResultRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "sample_size,censoring_level,weight_mode,repetition,mean_survival_months,std_error"
    )?;
    for row in rows {
        let mean = row
            .mean_survival_months
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        let se = row.std_error.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.sample_size,
            row.censoring_level,
            row.weight_mode.label(),
            row.repetition,
            mean,
            se
        )?;
    }
    Ok(())
}

/// Stage-count histogram CSV: treatment counts of failure-free patients per
/// initial-wellness bin.
pub fn write_stage_hist_csv<P: AsRef<Path>>(
    path: P,
    hist: &[WellnessBinHistogram],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "bin_low,bin_high,treatments_1,treatments_2,treatments_3,modal")?;
    for bin in hist {
        writeln!(
            out,
            "{:.2},{:.2},{},{},{},{}",
            bin.bin_low,
            bin.bin_high,
            bin.counts[0],
            bin.counts[1],
            bin.counts[2],
            bin.modal_count().map(|m| m.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial_sim::{FixedSequence, Treatment};

    #[test]
    fn level_labels_parse_back() {
        for text in ["none", "uniform:0.20", "exponential:0.50"] {
            let level = CensoringLevel::parse(text).unwrap();
            assert_eq!(CensoringLevel::parse(&level.label()).unwrap(), level);
        }
        assert!(CensoringLevel::parse("uniform").is_err());
        assert!(CensoringLevel::parse("gamma:0.2").is_err());
    }

    #[test]
    fn monte_carlo_value_is_deterministic() {
        let seq = FixedSequence([Treatment::B; 3]);
        let seeder = StreamSeeder::new(DEFAULT_SEED);
        let a = monte_carlo_value(&seq, 500, &seeder, 0).unwrap();
        let b = monte_carlo_value(&seq, 500, &seeder, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.1.is_some());
        let single = monte_carlo_value(&seq, 1, &seeder, 0).unwrap();
        assert!(single.1.is_none());
    }

    #[test]
    fn lemma41_pathwise_is_exact_and_3se_holds() {
        let seeder = StreamSeeder::new(DEFAULT_SEED);
        let seq = FixedSequence([Treatment::B, Treatment::A, Treatment::B]);
        let report = lemma41_check(&seq, 4_000, &seeder, 0).unwrap();
        assert_eq!(report.pathwise_max_abs_diff, 0.0);
        assert!(report.passes_3se, "{report:?}");
    }

    #[test]
    fn experiment_produces_expected_row_count() {
        let config = ExperimentConfig {
            sample_sizes: vec![60],
            censoring_levels: vec![CensoringLevel::None],
            repetitions: 2,
            test_size: 50,
            weight_modes: vec![WeightMode::Ipcw, WeightMode::IgnoreWeights],
            master_seed: DEFAULT_SEED,
            km_floor: DEFAULT_KM_FLOOR,
        };
        let output = run_experiment(&config).unwrap();
        assert_eq!(output.rows.len(), 4);
        // Zero censoring: paired modes agree repetition by repetition.
        for rep in 0..2 {
            let values: Vec<Option<f64>> = output
                .rows
                .iter()
                .filter(|r| r.repetition == rep)
                .map(|r| r.mean_survival_months)
                .collect();
            assert_eq!(values[0], values[1]);
        }
    }

    #[test]
    fn experiment_is_reproducible_and_prefix_stable() {
        let mut config = ExperimentConfig {
            sample_sizes: vec![80],
            censoring_levels: vec![CensoringLevel::Uniform { fraction: 0.20 }],
            repetitions: 2,
            test_size: 40,
            weight_modes: vec![WeightMode::Ipcw],
            master_seed: 7,
            km_floor: DEFAULT_KM_FLOOR,
        };
        let first = run_experiment(&config).unwrap();
        config.repetitions = 4;
        let second = run_experiment(&config).unwrap();
        for (a, b) in first.rows.iter().zip(&second.rows) {
            assert_eq!(a.mean_survival_months, b.mean_survival_months);
            assert_eq!(a.repetition, b.repetition);
        }
    }

    #[test]
    fn summaries_group_and_count_flags() {
        let rows = vec![
            ResultRow {
                sample_size: 40,
                censoring_level: "none".into(),
                weight_mode: WeightMode::Ipcw,
                repetition: 0,
                mean_survival_months: Some(15.0),
                std_error: Some(0.3),
                stage_count_histogram: [5, 3, 1],
                flagged: None,
            },
            ResultRow {
                sample_size: 40,
                censoring_level: "none".into(),
                weight_mode: WeightMode::Ipcw,
                repetition: 1,
                mean_survival_months: None,
                std_error: None,
                stage_count_histogram: [0; 3],
                flagged: Some("qlearning: insufficient data at stage 3, action 1".into()),
            },
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].repetitions, 2);
        assert_eq!(summary[0].flagged, 1);
        assert_eq!(summary[0].mean_months, Some(15.0));
        assert_eq!(summary[0].stage_count_histogram, [5, 3, 1]);
    }

    #[test]
    fn histogram_bins_cover_wellness_range() {
        let seeder = StreamSeeder::new(3);
        let hist = treatment_count_histogram(&OptimalLike, 20_000, &seeder).unwrap();
        assert_eq!(hist.len(), 10);
        let total: u64 = hist.iter().flat_map(|b| b.counts).sum();
        assert!(total > 0);
        assert!((hist[0].bin_low - 0.5).abs() < 1e-12);
        assert!((hist[9].bin_high - 1.0).abs() < 1e-12);
    }

    /// Simple wellness-threshold rule used as a stand-in policy in tests.
    struct OptimalLike;
    impl TreatmentPolicy for OptimalLike {
        fn decide_treatment(&self, wellness: f64, _e: f64, _s: usize) -> Result<Treatment> {
            Ok(if wellness >= 0.75 { Treatment::A } else { Treatment::B })
        }
    }

    #[test]
    fn csv_writers_produce_expected_headers() {
        let dir = std::env::temp_dir().join("cqlearn_eval_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.csv");
        write_results_csv(
            &path,
            &[ResultRow {
                sample_size: 40,
                censoring_level: "none".into(),
                weight_mode: WeightMode::Ipcw,
                repetition: 0,
                mean_survival_months: Some(15.0),
                std_error: None,
                stage_count_histogram: [0; 3],
                flagged: None,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "sample_size,censoring_level,weight_mode,repetition,mean_survival_months,std_error"
        ));
        assert!(text.contains("40,none,ipcw,0,15.000000,"));
    }
}
