//! Measurement synthesis, bound sweeps and Monte Carlo MSE sweeps.
//!
//! Each sweep point replaces the prior of every biased beacon with the
//! measured histogram [`BiasModel::table_one`] at bin width `Δ`.
//!
//! Trial `k` of a Monte Carlo sweep draws from its own ChaCha8 stream
//! `(base_seed, k)`, so any trial can be replayed alone and results do not
//! depend on thread scheduling. The same streams are reused at every `Δ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bias::BiasModel;
use crate::crb::{biased_modes, crb, CoeffMode};
use crate::error::{Error, Result};
use crate::estimators::{ml_informed, ml_joint, EstimatorSettings};
use crate::geometry::Scenario;
use crate::quadrature::QuadratureSpec;

/// Default sweep grid, Δ = 0.1, 0.2, …, 1.0 m.
pub fn default_deltas() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

/// Largest failed-trial fraction for which an MSE record stays valid.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub r: Vec<f64>,
    pub trial_index: u64,
    pub seed: u64,
}

/// Random stream of trial `trial_index` under `seed`.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// `r_m = d_m + ε_m + b_m` with `ε_m ~ N(0, σ_m²)` and `b_m` drawn from the
/// prior of biased beacons. Per beacon, the noise is drawn before the bias.
pub fn sample_ranges<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Vec<f64>> {
    (0..scenario.beacon_count())
        .map(|m| {
            let d = scenario.distance(m)?;
            let z: f64 = StandardNormal.sample(rng);
            let eps = scenario.noise_std[m] * z;
            let bias = scenario.bias_model(m).map_or(0.0, |b| b.sample(rng));
            Ok(d + eps + bias)
        })
        .collect()
}

pub fn sample_measurements(scenario: &Scenario, seed: u64, trial_index: u64) -> Result<MeasurementSet> {
    let mut rng = trial_rng(seed, trial_index);
    Ok(MeasurementSet {
        r: sample_ranges(scenario, &mut rng)?,
        trial_index,
        seed,
    })
}

/// One row of a bound or MSE sweep. Bounds are MSE bounds in m².
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub delta: f64,
    /// κ/σ of the first biased beacon.
    pub kappa_over_sigma: f64,
    pub bound_exact: f64,
    /// Present only when κ < σ on every biased beacon.
    pub bound_approx: Option<f64>,
    pub bound_discarded: f64,
    pub bound_unbiased: f64,
    pub mse_informed: Option<f64>,
    pub mse_joint: Option<f64>,
    /// Standard errors of the two MSE estimates.
    pub se_informed: Option<f64>,
    pub se_joint: Option<f64>,
    pub trials: usize,
    pub failures: usize,
}

impl SweepRecord {
    pub fn is_valid(&self) -> bool {
        self.failures as f64 <= MAX_FAILURE_FRACTION * self.trials as f64
    }
}

/// The template with [`BiasModel::table_one`]`(delta)` on every biased beacon.
pub fn instantiate(template: &Scenario, delta: f64) -> Result<Scenario> {
    if template.biased_count() == 0 {
        return Err(Error::InvalidArgument(
            "sweeps need at least one biased beacon".into(),
        ));
    }
    Ok(template.with_bias_model(&BiasModel::table_one(delta)?))
}

/// Bound columns of one sweep row.
pub fn bound_record(template: &Scenario, delta: f64, spec: &QuadratureSpec) -> Result<SweepRecord> {
    let scenario = instantiate(template, delta)?;
    scenario.ensure_valid()?;
    let bound = |mode| crb(&scenario, &biased_modes(&scenario, mode), spec).map(|c| c.mse_bound);
    let bound_approx = match bound(CoeffMode::Approximate) {
        Ok(b) => Some(b),
        Err(Error::ApproximationDomain { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(SweepRecord {
        delta,
        kappa_over_sigma: scenario.bias_models[0].std_dev() / scenario.noise_std[0],
        bound_exact: bound(CoeffMode::NumericExact)?,
        bound_approx,
        bound_discarded: bound(CoeffMode::Discarded)?,
        bound_unbiased: bound(CoeffMode::Unbiased)?,
        mse_informed: None,
        mse_joint: None,
        se_informed: None,
        se_joint: None,
        trials: 0,
        failures: 0,
    })
}

pub fn run_bound_sweep(
    template: &Scenario,
    deltas: &[f64],
    spec: &QuadratureSpec,
) -> Vec<Result<SweepRecord>> {
    deltas
        .par_iter()
        .map(|&d| bound_record(template, d, spec))
        .collect()
}

/// Mean and standard error of the mean.
fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

/// Squared location errors of both estimators on one trial. `None` marks an
/// estimator failure.
pub fn trial_errors(
    scenario: &Scenario,
    settings: &EstimatorSettings,
    seed: u64,
    trial_index: u64,
    spec: &QuadratureSpec,
) -> Result<(Option<f64>, Option<f64>)> {
    let config = settings.config_for(scenario);
    let ms = sample_measurements(scenario, seed, trial_index)?;
    let sq = |p: &crate::geometry::Point| scenario.target.distance_to(p).powi(2);
    let informed = ml_informed(&ms.r, scenario, &config, spec).ok();
    let joint = ml_joint(&ms.r, scenario, &config, spec).ok();
    Ok((
        informed.map(|e| sq(&e.location)),
        joint.map(|e| sq(&e.location)),
    ))
}

/// One MSE row: bounds plus the Monte Carlo MSE of both estimators.
pub fn ml_record(
    template: &Scenario,
    delta: f64,
    trials: usize,
    base_seed: u64,
    settings: &EstimatorSettings,
    spec: &QuadratureSpec,
) -> Result<SweepRecord> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut record = bound_record(template, delta, spec)?;
    let scenario = instantiate(template, delta)?;
    let errors: Vec<(Option<f64>, Option<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|k| trial_errors(&scenario, settings, base_seed, k, spec))
        .collect::<Result<_>>()?;
    let informed: Vec<f64> = errors.iter().filter_map(|e| e.0).collect();
    let joint: Vec<f64> = errors.iter().filter_map(|e| e.1).collect();
    let failures = errors
        .iter()
        .filter(|e| e.0.is_none() || e.1.is_none())
        .count();
    (record.mse_informed, record.se_informed) = mean_and_se(&informed);
    (record.mse_joint, record.se_joint) = mean_and_se(&joint);
    record.trials = trials;
    record.failures = failures;
    Ok(record)
}

pub fn run_ml_mse(
    template: &Scenario,
    deltas: &[f64],
    trials: usize,
    base_seed: u64,
    settings: &EstimatorSettings,
    spec: &QuadratureSpec,
) -> Vec<Result<SweepRecord>> {
    deltas
        .iter()
        .map(|&d| ml_record(template, d, trials, base_seed, settings, spec))
        .collect()
}
