//! Range densities, score, per-beacon Fisher coefficients and the CRB.
//!
//! For a biased beacon with bias prior `p(b)` and Gaussian ranging noise of
//! std `σ`, the Fisher information contributed along the unit direction `q`
//! is `A·q·qᵀ` with
//!
//! ```text
//! A = σ⁻⁴ ∫ α(r)² p(r) dr,   α(r) = E[r − d − b | r]
//! ```
//!
//! An unbiased beacon contributes `σ⁻²·q·qᵀ`. `A` is translation invariant in
//! `d`, so the integrals are carried out over the offset `x = r − d`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bias::{normal_pdf, BiasModel};
use crate::error::{Error, Result};
use crate::geometry::Scenario;
use crate::quadrature::{integrate_with_breaks, QuadratureSpec};

/// Marginal densities below this are treated as underflow.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Condition numbers above this make the FIM unobservable.
pub const MAX_CONDITION: f64 = 1e12;

/// The outer range integral extends this many noise stds past the bias
/// support.
pub const OUTER_RANGE_STDS: f64 = 8.0;

/// Ratio between outer and inner quadrature tolerances.
pub const INNER_TIGHTENING: f64 = 100.0;

/// How the Fisher coefficient of a beacon is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffMode {
    /// Nested quadrature of `σ⁻⁴ ∫ α² p(r) dr`.
    NumericExact,
    /// Point mass `σ⁻²`, Gaussian `(σ² + κ²)⁻¹`.
    ClosedForm,
    /// First-order small-κ approximation `σ⁻²(1 − κ²/σ²)`.
    Approximate,
    /// Measurement dropped, coefficient 0.
    Discarded,
    /// Measurement treated as bias free, coefficient `σ⁻²`.
    Unbiased,
}

impl CoeffMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoeffMode::NumericExact => "numeric",
            CoeffMode::ClosedForm => "closed",
            CoeffMode::Approximate => "approx",
            CoeffMode::Discarded => "discarded",
            CoeffMode::Unbiased => "unbiased",
        }
    }
}

impl fmt::Display for CoeffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoeffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "numeric" => CoeffMode::NumericExact,
            "closed" => CoeffMode::ClosedForm,
            "approx" => CoeffMode::Approximate,
            "discarded" => CoeffMode::Discarded,
            "unbiased" => CoeffMode::Unbiased,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown mode '{other}', expected numeric|closed|approx|discarded|unbiased"
                )))
            }
        })
    }
}

/// `mode` on every biased beacon, [`CoeffMode::Unbiased`] on the rest.
pub fn biased_modes(scenario: &Scenario, mode: CoeffMode) -> Vec<CoeffMode> {
    (0..scenario.beacon_count())
        .map(|m| {
            if scenario.is_biased(m) {
                mode
            } else {
                CoeffMode::Unbiased
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub matrix: DMatrix<f64>,
    /// Per-beacon coefficient `A_m`, 1/m².
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbResult {
    pub crb: DMatrix<f64>,
    /// Trace of `crb`, m².
    pub mse_bound: f64,
    pub fim: Fim,
    pub modes: Vec<CoeffMode>,
}

fn gaussian(y: f64, sigma: f64) -> f64 {
    normal_pdf(y / sigma) / sigma
}

/// Density of the range offset `x = ε + b` and the first moment of `x − b`
/// under the same integrand, for one biased beacon.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BiasedRange<'a> {
    pub sigma: f64,
    pub model: &'a BiasModel,
}

impl BiasedRange<'_> {
    fn breaks(&self, x: f64) -> Vec<f64> {
        let mut breaks = self.model.breakpoints();
        // keep the conditional density's peak away from the middle of a
        // large cell
        breaks.extend([-8.0, -4.0, 0.0, 4.0, 8.0].iter().map(|k| x + k * self.sigma));
        breaks
    }

    /// `∫ φ_σ(x − b)·p(b) db`.
    pub fn marginal(&self, x: f64, spec: &QuadratureSpec) -> Result<f64> {
        match self.model {
            BiasModel::PointMass { value } => Ok(gaussian(x - value, self.sigma)),
            model => {
                let (lo, hi) = model.support();
                let sigma = self.sigma;
                let r = integrate_with_breaks(
                    |b| gaussian(x - b, sigma) * model.pdf(b).unwrap_or(0.0),
                    lo,
                    hi,
                    &self.breaks(x),
                    spec,
                )?;
                Ok(r.value)
            }
        }
    }

    /// `∫ (x − b)·φ_σ(x − b)·p(b) db`.
    pub fn first_moment(&self, x: f64, spec: &QuadratureSpec) -> Result<f64> {
        match self.model {
            BiasModel::PointMass { value } => Ok((x - value) * gaussian(x - value, self.sigma)),
            model => {
                let (lo, hi) = model.support();
                let sigma = self.sigma;
                let r = integrate_with_breaks(
                    |b| (x - b) * gaussian(x - b, sigma) * model.pdf(b).unwrap_or(0.0),
                    lo,
                    hi,
                    &self.breaks(x),
                    spec,
                )?;
                Ok(r.value)
            }
        }
    }

    /// Posterior mean of `x − b` given `x`.
    pub fn alpha(&self, x: f64, spec: &QuadratureSpec) -> Result<Option<f64>> {
        if let BiasModel::PointMass { value } = self.model {
            return Ok(Some(x - value));
        }
        let marginal = self.marginal(x, spec)?;
        if marginal < DENSITY_FLOOR {
            return Ok(None);
        }
        Ok(Some(self.first_moment(x, spec)? / marginal))
    }

    /// `σ⁻⁴ ∫ α(x)² p(x) dx` by nested quadrature.
    pub fn coefficient(&self, spec: &QuadratureSpec) -> Result<f64> {
        let s2 = self.sigma * self.sigma;
        if self.model.is_point_mass() {
            return Ok(1.0 / s2);
        }
        let inner = spec.tightened(INNER_TIGHTENING);
        let (lo, hi) = self.model.support();
        let a = lo - OUTER_RANGE_STDS * self.sigma;
        let b = hi + OUTER_RANGE_STDS * self.sigma;
        let mut breaks = self.model.breakpoints();
        breaks.extend([lo, hi]);
        let failure: Cell<Option<Error>> = Cell::new(None);
        let integrand = |x: f64| {
            let res = self.marginal(x, &inner).and_then(|p| {
                if p < DENSITY_FLOOR {
                    Ok(0.0)
                } else {
                    let n = self.first_moment(x, &inner)?;
                    Ok(n * n / p)
                }
            });
            match res {
                Ok(v) => v,
                Err(e) => {
                    failure.set(Some(e));
                    f64::NAN
                }
            }
        };
        let outer = integrate_with_breaks(integrand, a, b, &breaks, spec);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        Ok(outer?.value / (s2 * s2))
    }
}

fn biased_range<'a>(scenario: &'a Scenario, m: usize) -> Result<BiasedRange<'a>> {
    let model = scenario.bias_model(m).ok_or_else(|| {
        Error::InvalidArgument(format!("beacon {} is not a biased beacon", m + 1))
    })?;
    Ok(BiasedRange {
        sigma: scenario.noise_std[m],
        model,
    })
}

/// Density of range `r` at beacon `m` given bias `b`. `b` is ignored for
/// unbiased beacons.
pub fn conditional_pdf(r: f64, m: usize, b: f64, scenario: &Scenario) -> f64 {
    let d = scenario.raw_distance(m);
    let b = if scenario.is_biased(m) { b } else { 0.0 };
    gaussian(r - d - b, scenario.noise_std[m])
}

/// Density of range `r` at biased beacon `m`, with the bias integrated out.
pub fn marginal_pdf(r: f64, m: usize, scenario: &Scenario, spec: &QuadratureSpec) -> Result<f64> {
    let d = scenario.distance(m)?;
    biased_range(scenario, m)?.marginal(r - d, spec)
}

/// `α_m(r) = E[r − d_m − b_m | r]` at biased beacon `m`.
pub fn posterior_mean_alpha(
    r: f64,
    m: usize,
    scenario: &Scenario,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let d = scenario.distance(m)?;
    biased_range(scenario, m)?
        .alpha(r - d, spec)?
        .ok_or(Error::OutsideSupport { beacon: m + 1, r })
}

/// Gradient of `ln p(r_m)` with respect to the target position.
pub fn score(r: f64, m: usize, scenario: &Scenario, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    let q = scenario.unit_direction(m)?;
    let sigma = scenario.noise_std[m];
    let alpha = if scenario.is_biased(m) {
        posterior_mean_alpha(r, m, scenario, spec)?
    } else {
        r - scenario.distance(m)?
    };
    let w = alpha / (sigma * sigma);
    Ok(q.into_iter().map(|c| w * c).collect())
}

/// Fisher coefficient of biased beacon `m` by nested quadrature.
pub fn coeff_numeric(m: usize, scenario: &Scenario, spec: &QuadratureSpec) -> Result<f64> {
    biased_range(scenario, m)?.coefficient(spec)
}

/// Exact coefficient for a point-mass or Gaussian bias.
pub fn closed_coefficient(sigma: f64, model: &BiasModel) -> Option<f64> {
    match model {
        BiasModel::PointMass { .. } => Some(1.0 / (sigma * sigma)),
        BiasModel::Gaussian { std, .. } => Some(1.0 / (sigma * sigma + std * std)),
        _ => None,
    }
}

pub fn coeff_closed(m: usize, scenario: &Scenario) -> Result<f64> {
    let br = biased_range(scenario, m)?;
    closed_coefficient(br.sigma, br.model).ok_or(Error::NoClosedForm {
        beacon: m + 1,
        variant: br.model.variant_name(),
    })
}

/// `σ⁻²(1 − (κ/σ)²)`, or `None` when `κ ≥ σ`.
pub fn approx_coefficient(sigma: f64, model: &BiasModel) -> Option<f64> {
    let ratio = model.std_dev() / sigma;
    (ratio < 1.0).then(|| (1.0 - ratio * ratio) / (sigma * sigma))
}

pub fn coeff_approx(m: usize, scenario: &Scenario) -> Result<f64> {
    let br = biased_range(scenario, m)?;
    approx_coefficient(br.sigma, br.model).ok_or(Error::ApproximationDomain {
        beacon: m + 1,
        ratio: br.model.std_dev() / br.sigma,
    })
}

fn coefficient(m: usize, mode: CoeffMode, scenario: &Scenario, spec: &QuadratureSpec) -> Result<f64> {
    let unbiased = 1.0 / scenario.noise_std[m].powi(2);
    if !scenario.is_biased(m) {
        return Ok(if mode == CoeffMode::Discarded { 0.0 } else { unbiased });
    }
    match mode {
        CoeffMode::NumericExact => coeff_numeric(m, scenario, spec),
        CoeffMode::ClosedForm => coeff_closed(m, scenario),
        CoeffMode::Approximate => coeff_approx(m, scenario),
        CoeffMode::Discarded => Ok(0.0),
        CoeffMode::Unbiased => Ok(unbiased),
    }
}

/// `Σ A_m q_m q_mᵀ` with `A_m` chosen by `modes[m]`.
///
/// Unbiased beacons contribute `σ⁻²` under every mode except
/// [`CoeffMode::Discarded`].
pub fn fim(scenario: &Scenario, modes: &[CoeffMode], spec: &QuadratureSpec) -> Result<Fim> {
    if modes.len() != scenario.beacon_count() {
        return Err(Error::InvalidArgument(format!(
            "{} modes for {} beacons",
            modes.len(),
            scenario.beacon_count()
        )));
    }
    let dim = scenario.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut coefficients = Vec::with_capacity(modes.len());
    for (m, &mode) in modes.iter().enumerate() {
        let a = coefficient(m, mode, scenario, spec)?;
        coefficients.push(a);
        if a == 0.0 {
            continue;
        }
        let q = scenario.unit_direction(m)?;
        for i in 0..dim {
            for j in 0..dim {
                matrix[(i, j)] += a * q[i] * q[j];
            }
        }
    }
    Ok(Fim {
        matrix,
        coefficients,
    })
}

/// Inverse of a symmetric positive-definite FIM, guarded by
/// [`MAX_CONDITION`].
pub fn invert_fim(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(matrix.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::UnobservableGeometry { condition });
    }
    let inv = matrix
        .clone()
        .cholesky()
        .ok_or(Error::UnobservableGeometry { condition })?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

pub fn crb(scenario: &Scenario, modes: &[CoeffMode], spec: &QuadratureSpec) -> Result<CrbResult> {
    let fim = fim(scenario, modes, spec)?;
    let crb = invert_fim(&fim.matrix)?;
    Ok(CrbResult {
        mse_bound: crb.trace(),
        crb,
        fim,
        modes: modes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn square(model: Option<BiasModel>) -> Scenario {
        Scenario::new(
            vec![
                Point::from([0.0, 0.0]),
                Point::from([10.0, 0.0]),
                Point::from([10.0, 10.0]),
                Point::from([0.0, 10.0]),
            ],
            Point::from([3.0, 4.0]),
            vec![1.0; 4],
            model.into_iter().collect(),
        )
    }

    fn one_beacon(sigma: f64, model: BiasModel) -> Scenario {
        Scenario::new(
            vec![Point::from([0.0, 0.0])],
            Point::from([3.0, 4.0]),
            vec![sigma],
            vec![model],
        )
    }

    fn triangle(sigma: f64) -> Scenario {
        let beacons = [0.0f64, 120.0, 240.0]
            .iter()
            .map(|deg| {
                let t = deg.to_radians();
                Point::from([-5.0 * t.cos(), -5.0 * t.sin()])
            })
            .collect();
        Scenario::new(beacons, Point::from([0.0, 0.0]), vec![sigma; 3], vec![])
    }

    #[test]
    fn conditional_pdf_examples() {
        let s = one_beacon(2.0, BiasModel::point_mass(0.3));
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 4.0).sqrt();
        assert!((conditional_pdf(5.3, 0, 0.3, &s) - peak).abs() < 1e-15);
        assert!((conditional_pdf(7.3, 0, 0.3, &s) - peak * (-0.5f64).exp()).abs() < 1e-15);
        let s1 = one_beacon(1.0, BiasModel::point_mass(0.0));
        assert!((conditional_pdf(8.0, 0, 0.0, &s1) - 0.004_431_848_411_938_008).abs() < 1e-15);
    }

    #[test]
    fn marginal_of_point_mass_is_conditional() {
        let s = one_beacon(0.7, BiasModel::point_mass(0.4));
        for r in [3.0, 5.4, 6.2] {
            assert_eq!(
                marginal_pdf(r, 0, &s, &spec()).unwrap(),
                conditional_pdf(r, 0, 0.4, &s)
            );
        }
    }

    #[test]
    fn marginal_of_gaussian_bias() {
        let (sigma, mu, kappa) = (1.0, 0.2, 0.5);
        let s = one_beacon(sigma, BiasModel::gaussian(mu, kappa).unwrap());
        let v = sigma * sigma + kappa * kappa;
        let got = marginal_pdf(5.0 + mu, 0, &s, &spec()).unwrap();
        assert!((got - 1.0 / (2.0 * std::f64::consts::PI * v).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn marginal_normalizes() {
        let s = one_beacon(1.0, BiasModel::table_one(0.1).unwrap());
        let total = crate::quadrature::integrate(
            |r| marginal_pdf(r, 0, &s, &spec().tightened(100.0)).unwrap(),
            5.0 - 4.0 - 8.0,
            5.0 + 5.0 + 8.0,
            &spec(),
        )
        .unwrap();
        assert!((total.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn alpha_examples() {
        let s = one_beacon(1.0, BiasModel::point_mass(0.4));
        assert_eq!(posterior_mean_alpha(6.0, 0, &s, &spec()).unwrap(), 6.0 - 5.0 - 0.4);

        let (sigma, mu, kappa) = (1.3, 0.2, 0.6);
        let s = one_beacon(sigma, BiasModel::gaussian(mu, kappa).unwrap());
        for r in [3.0, 5.0, 5.7, 8.0] {
            let expect = sigma * sigma / (sigma * sigma + kappa * kappa) * (r - 5.0 - mu);
            let got = posterior_mean_alpha(r, 0, &s, &spec()).unwrap();
            assert!((got - expect).abs() < 1e-9, "r = {r}: {got} vs {expect}");
        }

        let s = one_beacon(1.0, BiasModel::uniform(-0.8, 0.8).unwrap());
        assert!(posterior_mean_alpha(5.0, 0, &s, &spec()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn alpha_underflow_is_an_error() {
        let s = one_beacon(0.01, BiasModel::uniform(0.0, 1.0).unwrap());
        let r = posterior_mean_alpha(5.0 + 40.0, 0, &s, &spec());
        assert!(matches!(r, Err(Error::OutsideSupport { beacon: 1, .. })));
    }

    #[test]
    fn score_examples() {
        let s = square(Some(BiasModel::point_mass(0.5)));
        let d1 = s.distance(1).unwrap();
        assert!(score(d1, 1, &s, &spec()).unwrap().iter().all(|c| *c == 0.0));
        let d0 = s.distance(0).unwrap();
        let q = s.unit_direction(0).unwrap();
        let g = score(d0 + 0.5 + 1.0, 0, &s, &spec()).unwrap();
        for (a, b) in g.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_coefficient_matches_closed_form() {
        let s = one_beacon(1.0, BiasModel::gaussian(0.0, 0.5).unwrap());
        let a = coeff_numeric(0, &s, &spec()).unwrap();
        assert!((a - 0.8).abs() / 0.8 < 1e-4, "{a}");
    }

    #[test]
    fn closed_and_approx_examples() {
        let s = one_beacon(0.5, BiasModel::point_mass(0.1));
        assert_eq!(coeff_closed(0, &s).unwrap(), 4.0);
        assert_eq!(coeff_numeric(0, &s, &spec()).unwrap(), 4.0);
        let s = one_beacon(1.0, BiasModel::gaussian(0.0, 1.0).unwrap());
        assert_eq!(coeff_closed(0, &s).unwrap(), 0.5);
        let s = one_beacon(1.0, BiasModel::table_one(0.1).unwrap());
        assert!(matches!(coeff_closed(0, &s), Err(Error::NoClosedForm { .. })));

        let s = one_beacon(1.0, BiasModel::gaussian(0.3, 0.5).unwrap());
        assert!((coeff_approx(0, &s).unwrap() - 0.75).abs() < 1e-15);
        let s = one_beacon(1.0, BiasModel::point_mass(0.3));
        assert_eq!(coeff_approx(0, &s).unwrap(), 1.0);
        let s = one_beacon(1.0, BiasModel::gaussian(0.0, 1.2).unwrap());
        assert!(matches!(
            coeff_approx(0, &s),
            Err(Error::ApproximationDomain { beacon: 1, .. })
        ));
    }

    #[test]
    fn symmetric_triangle_fim_and_crb() {
        let s = triangle(1.0);
        let modes = biased_modes(&s, CoeffMode::NumericExact);
        let f = fim(&s, &modes, &spec()).unwrap();
        assert!((f.matrix[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((f.matrix[(1, 1)] - 1.5).abs() < 1e-12);
        assert!(f.matrix[(0, 1)].abs() < 1e-12);
        let c = crb(&s, &modes, &spec()).unwrap();
        assert!((c.crb[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.mse_bound - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_beacon_fim_is_rank_one() {
        let s = Scenario::new(
            vec![Point::from([-2.0, 0.0])],
            Point::from([0.0, 0.0]),
            vec![1.0],
            vec![],
        );
        let f = fim(&s, &[CoeffMode::Unbiased], &spec()).unwrap();
        assert_eq!(f.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(
            invert_fim(&f.matrix),
            Err(Error::UnobservableGeometry { .. })
        ));
    }

    #[test]
    fn collinear_beacons_are_unobservable() {
        let s = Scenario::new(
            vec![
                Point::from([-3.0, 0.0]),
                Point::from([4.0, 0.0]),
                Point::from([0.0, 5.0]),
            ],
            Point::from([0.0, 0.0]),
            vec![1.0; 3],
            vec![],
        );
        let modes = [CoeffMode::Unbiased, CoeffMode::Unbiased, CoeffMode::Discarded];
        assert!(matches!(
            crb(&s, &modes, &spec()),
            Err(Error::UnobservableGeometry { .. })
        ));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            CoeffMode::NumericExact,
            CoeffMode::ClosedForm,
            CoeffMode::Approximate,
            CoeffMode::Discarded,
            CoeffMode::Unbiased,
        ] {
            assert_eq!(m.as_str().parse::<CoeffMode>().unwrap(), m);
        }
        assert!("exact".parse::<CoeffMode>().is_err());
    }

    #[test]
    fn numeric_fim_dominates_discarded() {
        let s = square(Some(BiasModel::table_one(1.0).unwrap()));
        let exact = fim(&s, &biased_modes(&s, CoeffMode::NumericExact), &spec()).unwrap();
        let disc = fim(&s, &biased_modes(&s, CoeffMode::Discarded), &spec()).unwrap();
        let diff = &exact.matrix - &disc.matrix;
        let eig = SymmetricEigen::new(diff).eigenvalues;
        assert!(eig.min() >= -1e-12, "{eig}");
        assert!(exact.coefficients[0] > 0.0);
    }
}
