//! Maximum-likelihood location estimators.
//!
//! The log-likelihood of a location `p` and indicator flags `s` is
//! `Σ_m L_m(p, s_m)` where
//!
//! - `s_m = true` (unbiased): `L_m = ln φ_σ(r_m − d_m(p))`,
//! - `s_m = false` (biased): `L_m = ln ∫ p(b) φ_σ(r_m − d_m(p) − b) db` with
//!   `p(b)` the beacon's candidate bias prior.
//!
//! [`ml_informed`] maximizes over `p` with the true flags of the scenario.
//! [`ml_joint`] also maximizes over all `2^M` flag vectors.

use serde::{Deserialize, Serialize};

use crate::bias::BiasModel;
use crate::crb::BiasedRange;
use crate::error::{Error, Result};
use crate::geometry::{euclidean, Point, Scenario};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::quadrature::QuadratureSpec;

/// Largest beacon count accepted by [`ml_joint`].
pub const MAX_JOINT_BEACONS: usize = 16;

/// Relative inflation of the beacon bounding box for the default search box.
pub const BOX_INFLATION: f64 = 0.2;

const TIE_TOL: f64 = 1e-12;

/// How the bias-marginalized likelihood term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalEval {
    /// Normal-CDF expression of the Gaussian-smoothed prior.
    #[default]
    ClosedForm,
    /// Adaptive quadrature over the prior support.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (lo, hi))| x >= lo && x <= hi)
    }

    pub fn translated(&self, t: &[f64]) -> SearchBox {
        SearchBox {
            lo: self.lo.iter().zip(t).map(|(a, b)| a + b).collect(),
            hi: self.hi.iter().zip(t).map(|(a, b)| a + b).collect(),
        }
    }

    /// Bounding box of the beacons, padded by [`BOX_INFLATION`] of its extent
    /// on every side. A flat axis is padded with the largest extent.
    pub fn around_beacons(beacons: &[Point]) -> SearchBox {
        let dim = beacons.first().map_or(0, Point::dim);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for b in beacons {
            for (i, c) in b.coords().iter().enumerate() {
                lo[i] = lo[i].min(*c);
                hi[i] = hi[i].max(*c);
            }
        }
        let widest = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
            .max(1.0);
        for i in 0..dim {
            let extent = hi[i] - lo[i];
            let pad = BOX_INFLATION * if extent > 0.0 { extent } else { widest };
            lo[i] -= pad;
            hi[i] += pad;
        }
        SearchBox { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub search_box: SearchBox,
    /// Optimizer starts per axis.
    pub grid: usize,
    /// Simplex size at which a start counts as converged, meters.
    pub conv_tol: f64,
    pub max_iters: usize,
    /// Prior used for beacon `m` whenever `s_m = false`.
    pub candidate_bias_pdfs: Vec<BiasModel>,
    pub marginal: MarginalEval,
}

impl EstimatorConfig {
    /// Defaults for `scenario`: box around the beacons, 5 starts per axis,
    /// 1e-6 m tolerance, 500 iterations. Biased beacons get their own prior
    /// as candidate, every other beacon the prior of the first biased one.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let candidate_bias_pdfs = match scenario.bias_models.first() {
            Some(first) => (0..scenario.beacon_count())
                .map(|m| scenario.bias_model(m).unwrap_or(first).clone())
                .collect(),
            None => Vec::new(),
        };
        EstimatorConfig {
            search_box: SearchBox::around_beacons(&scenario.beacons),
            grid: 5,
            conv_tol: 1e-6,
            max_iters: 500,
            candidate_bias_pdfs,
            marginal: MarginalEval::default(),
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.search_box.lo.len() != dim || self.search_box.hi.len() != dim {
            return bad(format!("search box must have {dim} coordinates per corner"));
        }
        if self
            .search_box
            .lo
            .iter()
            .zip(&self.search_box.hi)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return bad("search box must be finite and nonempty".into());
        }
        if self.grid < 2 {
            return bad(format!("grid must be at least 2, got {}", self.grid));
        }
        if !(self.conv_tol > 0.0) {
            return bad(format!("conv_tol must be positive, got {}", self.conv_tol));
        }
        Ok(())
    }
}

/// File-level estimator options. Unset fields fall back to the defaults of
/// [`EstimatorConfig::for_scenario`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub search_box: Option<SearchBox>,
    pub grid: Option<usize>,
    pub conv_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub marginal: Option<MarginalEval>,
    #[serde(skip)]
    pub candidate_bias_pdfs: Option<Vec<BiasModel>>,
}

impl EstimatorSettings {
    pub fn config_for(&self, scenario: &Scenario) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::for_scenario(scenario);
        if let Some(b) = &self.search_box {
            cfg.search_box = b.clone();
        }
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(t) = self.conv_tol {
            cfg.conv_tol = t;
        }
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(m) = self.marginal {
            cfg.marginal = m;
        }
        if let Some(c) = &self.candidate_bias_pdfs {
            cfg.candidate_bias_pdfs = c.clone();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub location: Point,
    /// `true` where the measurement is treated as unbiased.
    pub indicators: Vec<bool>,
    pub loglik: f64,
    /// Simplex iterations summed over all starts (and all flag vectors for
    /// the joint estimator).
    pub iterations: usize,
    pub converged: bool,
    /// Another start reached a distinct location with the same likelihood.
    pub ambiguous: bool,
}

/// Per-beacon evaluation of `L_m` for fixed measurements.
struct Likelihood<'a> {
    beacons: &'a [Point],
    sigma: &'a [f64],
    log_norm: Vec<f64>,
    candidates: &'a [BiasModel],
    ranges: &'a [f64],
    marginal: MarginalEval,
    spec: QuadratureSpec,
}

impl<'a> Likelihood<'a> {
    fn new(
        ranges: &'a [f64],
        scenario: &'a Scenario,
        config: &'a EstimatorConfig,
        spec: &QuadratureSpec,
    ) -> Result<Self> {
        if ranges.len() != scenario.beacon_count() {
            return Err(Error::InvalidArgument(format!(
                "{} measurements for {} beacons",
                ranges.len(),
                scenario.beacon_count()
            )));
        }
        Ok(Likelihood {
            beacons: &scenario.beacons,
            sigma: &scenario.noise_std,
            log_norm: scenario
                .noise_std
                .iter()
                .map(|s| -0.5 * (2.0 * std::f64::consts::PI * s * s).ln())
                .collect(),
            candidates: &config.candidate_bias_pdfs,
            ranges,
            marginal: config.marginal,
            spec: *spec,
        })
    }

    fn candidate(&self, m: usize) -> Result<&'a BiasModel> {
        self.candidates.get(m).ok_or_else(|| {
            Error::InvalidArgument(format!("no candidate bias prior for beacon {}", m + 1))
        })
    }

    fn check_flags(&self, s: &[bool]) -> Result<()> {
        if s.len() != self.beacons.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indicator flags for {} beacons",
                s.len(),
                self.beacons.len()
            )));
        }
        for (m, _) in s.iter().enumerate().filter(|(_, f)| !**f) {
            self.candidate(m)?;
        }
        Ok(())
    }

    fn term(&self, m: usize, p: &[f64], unbiased: bool) -> Result<f64> {
        let x = self.ranges[m] - euclidean(p, self.beacons[m].coords());
        let sigma = self.sigma[m];
        if unbiased {
            return Ok(self.log_norm[m] - 0.5 * (x / sigma) * (x / sigma));
        }
        let model = self.candidate(m)?;
        let density = match self.marginal {
            MarginalEval::ClosedForm => model.gaussian_convolution(x, sigma),
            MarginalEval::Quadrature => BiasedRange { sigma, model }.marginal(x, &self.spec)?,
        };
        Ok(density.ln())
    }

    fn total(&self, p: &[f64], s: &[bool]) -> Result<f64> {
        let mut sum = 0.0;
        for (m, &flag) in s.iter().enumerate() {
            sum += self.term(m, p, flag)?;
        }
        Ok(sum)
    }
}

/// `L_m(p, s_m)` for measurement `r_m` of beacon `m`. Returns `-∞` when the
/// marginal density underflows.
pub fn loglik_term(
    p: &Point,
    unbiased: bool,
    r_m: f64,
    m: usize,
    scenario: &Scenario,
    config: &EstimatorConfig,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let ranges = [r_m];
    let beacons = std::slice::from_ref(&scenario.beacons[m]);
    let sigma = std::slice::from_ref(&scenario.noise_std[m]);
    let lik = Likelihood {
        beacons,
        sigma,
        log_norm: vec![-0.5 * (2.0 * std::f64::consts::PI * sigma[0] * sigma[0]).ln()],
        candidates: match unbiased {
            true => &[],
            false => std::slice::from_ref(
                config.candidate_bias_pdfs.get(m).ok_or_else(|| {
                    Error::InvalidArgument(format!("no candidate bias prior for beacon {}", m + 1))
                })?,
            ),
        },
        ranges: &ranges,
        marginal: config.marginal,
        spec: *spec,
    };
    lik.term(0, p.coords(), unbiased)
}

/// `Σ_m L_m(p, s_m)`.
pub fn loglik(
    p: &Point,
    s: &[bool],
    ranges: &[f64],
    scenario: &Scenario,
    config: &EstimatorConfig,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let lik = Likelihood::new(ranges, scenario, config, spec)?;
    lik.check_flags(s)?;
    lik.total(p.coords(), s)
}

/// Grid of optimizer starts spanning the search box, and the initial simplex
/// step (half the grid spacing).
fn starts(config: &EstimatorConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let b = &config.search_box;
    let dim = b.lo.len();
    let g = config.grid;
    let step: Vec<f64> = (0..dim)
        .map(|i| 0.5 * (b.hi[i] - b.lo[i]) / (g - 1) as f64)
        .collect();
    let total = g.pow(dim as u32);
    let points = (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|i| {
                    let j = k % g;
                    k /= g;
                    b.lo[i] + (b.hi[i] - b.lo[i]) * j as f64 / (g - 1) as f64
                })
                .collect()
        })
        .collect();
    (points, step)
}

struct Maximum {
    location: Vec<f64>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    ambiguous: bool,
}

fn maximize(lik: &Likelihood<'_>, s: &[bool], config: &EstimatorConfig) -> Maximum {
    let (points, step) = starts(config);
    let opts = SimplexOptions {
        tol: config.conv_tol,
        max_iters: config.max_iters,
    };
    let objective = |p: &[f64]| {
        if !config.search_box.contains(p) {
            return f64::INFINITY;
        }
        match lik.total(p, s) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let runs: Vec<_> = points
        .iter()
        .map(|x0| nelder_mead(objective, x0, &step, &opts))
        .collect();
    let iterations = runs.iter().map(|r| r.iterations).sum();

    let pick = |only_converged: bool| {
        runs.iter()
            .filter(|r| !only_converged || r.converged)
            .min_by(|a, b| a.value.total_cmp(&b.value))
    };
    let (best, converged) = match pick(true) {
        Some(b) => (b, true),
        None => (pick(false).expect("at least one start"), false),
    };
    let separation = (1e3 * config.conv_tol).max(1e-3);
    let ambiguous = converged
        && runs.iter().any(|r| {
            r.converged
                && (r.value - best.value).abs() <= 1e-9 * (1.0 + best.value.abs())
                && euclidean(&r.x, &best.x) > separation
        });
    Maximum {
        location: best.x.clone(),
        loglik: -best.value,
        iterations,
        converged,
        ambiguous,
    }
}

/// Indicator flags of the scenario: biased beacons `false`, the rest `true`.
pub fn true_indicators(scenario: &Scenario) -> Vec<bool> {
    (0..scenario.beacon_count())
        .map(|m| !scenario.is_biased(m))
        .collect()
}

fn estimate_with_flags(
    lik: &Likelihood<'_>,
    s: &[bool],
    config: &EstimatorConfig,
) -> Result<EstimateResult> {
    let best = maximize(lik, s, config);
    if !best.converged {
        return Err(Error::OptimizationFailure {
            location: best.location,
            loglik: best.loglik,
        });
    }
    Ok(EstimateResult {
        location: Point(best.location),
        indicators: s.to_vec(),
        loglik: best.loglik,
        iterations: best.iterations,
        converged: true,
        ambiguous: best.ambiguous,
    })
}

/// ML location with the bias membership known.
pub fn ml_informed(
    ranges: &[f64],
    scenario: &Scenario,
    config: &EstimatorConfig,
    spec: &QuadratureSpec,
) -> Result<EstimateResult> {
    config.check(scenario.dim())?;
    let lik = Likelihood::new(ranges, scenario, config, spec)?;
    let s = true_indicators(scenario);
    lik.check_flags(&s)?;
    estimate_with_flags(&lik, &s, config)
}

/// Flag vectors ordered by number of biased flags, then by bit pattern.
fn flag_vectors(m: usize) -> Vec<Vec<bool>> {
    let mut masks: Vec<u32> = (0..1u32 << m).collect();
    masks.sort_by_key(|mask| (mask.count_ones(), *mask));
    masks
        .into_iter()
        .map(|mask| (0..m).map(|i| mask & (1 << i) == 0).collect())
        .collect()
}

/// Joint ML over location and indicator flags.
///
/// Flag vectors whose optimization fails to converge still compete with
/// their best iterate. Ties within 1e-12 go to the vector with fewer biased
/// flags.
pub fn ml_joint(
    ranges: &[f64],
    scenario: &Scenario,
    config: &EstimatorConfig,
    spec: &QuadratureSpec,
) -> Result<EstimateResult> {
    let m = scenario.beacon_count();
    if m > MAX_JOINT_BEACONS {
        return Err(Error::EnumerationTooLarge { beacons: m });
    }
    config.check(scenario.dim())?;
    let lik = Likelihood::new(ranges, scenario, config, spec)?;
    lik.check_flags(&vec![false; m])?;

    let mut best: Option<EstimateResult> = None;
    let mut iterations = 0;
    for s in flag_vectors(m) {
        let found = maximize(&lik, &s, config);
        iterations += found.iterations;
        if !found.loglik.is_finite() {
            continue;
        }
        let better = best
            .as_ref()
            .is_none_or(|b| found.loglik > b.loglik + TIE_TOL);
        if better {
            best = Some(EstimateResult {
                location: Point(found.location),
                indicators: s,
                loglik: found.loglik,
                iterations: 0,
                converged: found.converged,
                ambiguous: found.ambiguous,
            });
        }
    }
    match best {
        Some(mut b) => {
            b.iterations = iterations;
            Ok(b)
        }
        None => Err(Error::OptimizationFailure {
            location: scenario.target.0.iter().map(|_| f64::NAN).collect(),
            loglik: f64::NEG_INFINITY,
        }),
    }
}
