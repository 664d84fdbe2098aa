//! Prior densities of range biases.
//!
//! | Variant | Parameters | Mean | Std |
//! |---|---|---|---|
//! | [`BiasModel::PointMass`] | value | value | 0 |
//! | [`BiasModel::Gaussian`] | mean, std | mean | std |
//! | [`BiasModel::Uniform`] | lo, hi | (lo+hi)/2 | (hi-lo)/√12 |
//! | [`BiasModel::PiecewiseConstant`] | edges Ω₀..Ω_K, masses P₀..P_{K-1} | Σ Pᵢ·midᵢ | see [`BiasModel::moments`] |
//!
//! Piecewise-constant bins are left-open and right-closed: mass `Pᵢ` is
//! spread uniformly over `(Ωᵢ, Ωᵢ₊₁]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin masses of the measured indoor bias histogram, first bin first.
pub const TABLE_ONE_MASSES: [f64; 9] = [0.12, 0.03, 0.31, 0.12, 0.24, 0.12, 0.03, 0.0, 0.03];

/// Left edge of the first bin of [`BiasModel::table_one`], meters.
pub const TABLE_ONE_OFFSET: f64 = 0.1;

/// Gaussian priors are truncated at this many standard deviations when a
/// finite integration range is needed.
pub const GAUSSIAN_TRUNCATION: f64 = 8.0;

const MASS_SUM_TOL: f64 = 1e-9;

/// Prior density of one range bias, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "BiasModelRepr")]
pub enum BiasModel {
    /// Deterministic, known bias.
    PointMass { value: f64 },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    PiecewiseConstant { edges: Vec<f64>, masses: Vec<f64> },
}

/// Accepted JSON forms. `table_one` expands to a piecewise-constant model.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BiasModelRepr {
    PointMass { value: f64 },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    PiecewiseConstant { edges: Vec<f64>, masses: Vec<f64> },
    TableOne { delta: f64 },
}

impl TryFrom<BiasModelRepr> for BiasModel {
    type Error = Error;

    fn try_from(r: BiasModelRepr) -> Result<Self> {
        let model = match r {
            BiasModelRepr::PointMass { value } => BiasModel::PointMass { value },
            BiasModelRepr::Gaussian { mean, std } => BiasModel::Gaussian { mean, std },
            BiasModelRepr::Uniform { lo, hi } => BiasModel::Uniform { lo, hi },
            BiasModelRepr::PiecewiseConstant { edges, masses } => {
                BiasModel::PiecewiseConstant { edges, masses }
            }
            BiasModelRepr::TableOne { delta } => return BiasModel::table_one(delta),
        };
        model.check()?;
        Ok(model)
    }
}

impl BiasModel {
    pub fn point_mass(value: f64) -> Self {
        BiasModel::PointMass { value }
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        let m = BiasModel::Gaussian { mean, std };
        m.check()?;
        Ok(m)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let m = BiasModel::Uniform { lo, hi };
        m.check()?;
        Ok(m)
    }

    pub fn piecewise_constant(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let m = BiasModel::PiecewiseConstant { edges, masses };
        m.check()?;
        Ok(m)
    }

    /// The measured indoor bias histogram with bin width `delta`: edges
    /// `0.1 + i·delta` for `i = 0..=9` and masses [`TABLE_ONE_MASSES`].
    pub fn table_one(delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidBiasModel(format!(
                "bin width must be positive, got {delta}"
            )));
        }
        let edges = (0..=TABLE_ONE_MASSES.len())
            .map(|i| TABLE_ONE_OFFSET + i as f64 * delta)
            .collect();
        Self::piecewise_constant(edges, TABLE_ONE_MASSES.to_vec())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            BiasModel::PointMass { .. } => "point_mass",
            BiasModel::Gaussian { .. } => "gaussian",
            BiasModel::Uniform { .. } => "uniform",
            BiasModel::PiecewiseConstant { .. } => "piecewise_constant",
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, BiasModel::PointMass { .. })
    }

    /// Checks the parameter invariants of the variant.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBiasModel(msg));
        match self {
            BiasModel::PointMass { value } => {
                if !value.is_finite() {
                    return bad(format!("point mass value {value} is not finite"));
                }
            }
            BiasModel::Gaussian { mean, std } => {
                if !mean.is_finite() || !(std.is_finite() && *std > 0.0) {
                    return bad(format!("gaussian needs finite mean and std > 0, got ({mean}, {std})"));
                }
            }
            BiasModel::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return bad(format!("uniform needs lo < hi, got [{lo}, {hi}]"));
                }
            }
            BiasModel::PiecewiseConstant { edges, masses } => {
                if masses.is_empty() || edges.len() != masses.len() + 1 {
                    return bad(format!(
                        "{} edges for {} masses, expected one more edge than masses",
                        edges.len(),
                        masses.len()
                    ));
                }
                if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("edges must be finite and strictly increasing".into());
                }
                if masses.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("masses must be finite and nonnegative".into());
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > MASS_SUM_TOL {
                    return bad(format!("masses sum to {total}, expected 1"));
                }
            }
        }
        Ok(())
    }

    /// Density at `b`. A point mass has no density.
    pub fn pdf(&self, b: f64) -> Result<f64> {
        Ok(match self {
            BiasModel::PointMass { .. } => {
                return Err(Error::UnsupportedOperation("density of a point-mass bias"))
            }
            BiasModel::Gaussian { mean, std } => normal_pdf((b - mean) / std) / std,
            BiasModel::Uniform { lo, hi } => {
                if b >= *lo && b <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            BiasModel::PiecewiseConstant { edges, masses } => {
                // bins are (edges[i], edges[i+1]]
                let k = edges.partition_point(|e| *e < b);
                if k == 0 || k == edges.len() {
                    0.0
                } else {
                    masses[k - 1] / (edges[k] - edges[k - 1])
                }
            }
        })
    }

    /// Exact mean and standard deviation.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            BiasModel::PointMass { value } => (*value, 0.0),
            BiasModel::Gaussian { mean, std } => (*mean, *std),
            BiasModel::Uniform { lo, hi } => (0.5 * (lo + hi), (hi - lo) / 12f64.sqrt()),
            BiasModel::PiecewiseConstant { edges, masses } => {
                let mean: f64 = bins(edges, masses).map(|(a, b, p)| p * 0.5 * (a + b)).sum();
                let var: f64 = bins(edges, masses)
                    .map(|(a, b, p)| {
                        let mid = 0.5 * (a + b) - mean;
                        p * (mid * mid + (b - a) * (b - a) / 12.0)
                    })
                    .sum();
                (mean, var.sqrt())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }

    pub fn std_dev(&self) -> f64 {
        self.moments().1
    }

    /// Interval outside which the density vanishes (Gaussian: truncated at
    /// ±8 std).
    pub fn support(&self) -> (f64, f64) {
        match self {
            BiasModel::PointMass { value } => (*value, *value),
            BiasModel::Gaussian { mean, std } => (
                mean - GAUSSIAN_TRUNCATION * std,
                mean + GAUSSIAN_TRUNCATION * std,
            ),
            BiasModel::Uniform { lo, hi } => (*lo, *hi),
            BiasModel::PiecewiseConstant { edges, .. } => (edges[0], edges[edges.len() - 1]),
        }
    }

    /// Interior points where the density jumps. Quadrature over the support
    /// must start from these subdivisions.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            BiasModel::PiecewiseConstant { edges, .. } => edges[1..edges.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }

    /// Draws one bias. Gaussian draws are not truncated.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BiasModel::PointMass { value } => *value,
            BiasModel::Gaussian { mean, std } => Normal::new(*mean, *std)
                .expect("validated gaussian parameters")
                .sample(rng),
            BiasModel::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            BiasModel::PiecewiseConstant { edges, masses } => {
                let total: f64 = masses.iter().sum();
                let u = rng.random::<f64>() * total;
                let mut cum = 0.0;
                let mut last = 0;
                for (i, &p) in masses.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    last = i;
                    if u < cum + p {
                        return edges[i] + (u - cum) / p * (edges[i + 1] - edges[i]);
                    }
                    cum += p;
                }
                edges[last + 1]
            }
        }
    }

    /// `∫ p(b)·φ_σ(x − b) db` in closed form, where `φ_σ` is the zero-mean
    /// normal density with std `sigma`. This is the density of `x = ε + b`
    /// with `ε ~ N(0, σ²)`.
    pub fn gaussian_convolution(&self, x: f64, sigma: f64) -> f64 {
        match self {
            BiasModel::PointMass { value } => normal_pdf((x - value) / sigma) / sigma,
            BiasModel::Gaussian { mean, std } => {
                let s = sigma.hypot(*std);
                normal_pdf((x - mean) / s) / s
            }
            BiasModel::Uniform { lo, hi } => {
                normal_cdf_diff((x - lo) / sigma, (x - hi) / sigma) / (hi - lo)
            }
            BiasModel::PiecewiseConstant { edges, masses } => bins(edges, masses)
                .filter(|(_, _, p)| *p > 0.0)
                .map(|(a, b, p)| p / (b - a) * normal_cdf_diff((x - a) / sigma, (x - b) / sigma))
                .sum(),
        }
    }
}

fn bins<'a>(edges: &'a [f64], masses: &'a [f64]) -> impl Iterator<Item = (f64, f64, f64)> + 'a {
    edges
        .windows(2)
        .zip(masses)
        .map(|(w, &p)| (w[0], w[1], p))
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `Φ(hi) − Φ(lo)` for `hi ≥ lo`, accurate in both tails.
pub fn normal_cdf_diff(hi: f64, lo: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo * s) - libm::erfc(hi * s))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi * s) - libm::erfc(-lo * s))
    } else {
        1.0 - 0.5 * (libm::erfc(hi * s) + libm::erfc(-lo * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_one_density_examples() {
        let m = BiasModel::table_one(0.1).unwrap();
        assert!((m.pdf(0.35).unwrap() - 3.1).abs() < 1e-12);
        assert_eq!(m.pdf(2.0).unwrap(), 0.0);
        assert_eq!(m.pdf(0.1).unwrap(), 0.0);
        // right edge belongs to its bin
        assert!((m.pdf(0.2).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(BiasModel::uniform(0.0, 2.0).unwrap().pdf(1.0).unwrap(), 0.5);
        assert!(matches!(
            BiasModel::point_mass(0.3).pdf(0.3),
            Err(Error::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn table_one_masses_sum_to_one() {
        assert!((TABLE_ONE_MASSES.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_one_moments_are_linear_in_delta() {
        for k in 1..=10 {
            let delta = k as f64 / 10.0;
            let (mean, std) = BiasModel::table_one(delta).unwrap().moments();
            assert!((mean - (0.1 + 3.49 * delta)).abs() < 1e-12, "mean at {delta}");
            // variance of bin index plus within-bin uniform: 3.2499 + 1/12
            let expect = (3.2499f64 + 1.0 / 12.0).sqrt() * delta;
            assert!((std - expect).abs() < 1e-12, "std at {delta}");
            assert!((std / delta - 1.8257).abs() < 1e-4);
        }
    }

    #[test]
    fn simple_moments() {
        assert_eq!(BiasModel::point_mass(0.7).moments(), (0.7, 0.0));
        assert_eq!(BiasModel::gaussian(0.2, 0.5).unwrap().moments(), (0.2, 0.5));
        let (m, s) = BiasModel::uniform(1.0, 3.0).unwrap().moments();
        assert_eq!(m, 2.0);
        assert!((s - 2.0 / 12f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn supports() {
        let s = BiasModel::table_one(0.1).unwrap().support();
        assert!((s.0 - 0.1).abs() < 1e-15 && (s.1 - 1.0).abs() < 1e-12);
        assert_eq!(BiasModel::gaussian(0.0, 1.0).unwrap().support(), (-8.0, 8.0));
        assert_eq!(BiasModel::point_mass(0.3).support(), (0.3, 0.3));
    }

    #[test]
    fn constructors_reject_bad_parameters() {
        assert!(BiasModel::gaussian(0.0, 0.0).is_err());
        assert!(BiasModel::uniform(1.0, 1.0).is_err());
        assert!(BiasModel::table_one(-0.1).is_err());
        assert!(BiasModel::piecewise_constant(vec![0.0, 1.0, 0.5], vec![0.5, 0.5]).is_err());
        assert!(BiasModel::piecewise_constant(vec![0.0, 1.0, 2.0], vec![0.5, 0.4]).is_err());
        assert!(BiasModel::piecewise_constant(vec![0.0, 1.0, 2.0], vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn json_forms() {
        let m: BiasModel = serde_json::from_str(r#"{"kind":"table_one","delta":0.1}"#).unwrap();
        assert_eq!(m, BiasModel::table_one(0.1).unwrap());
        let g: BiasModel =
            serde_json::from_str(r#"{"kind":"gaussian","mean":0.2,"std":0.5}"#).unwrap();
        assert_eq!(g, BiasModel::gaussian(0.2, 0.5).unwrap());
        let back: BiasModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<BiasModel>(r#"{"kind":"uniform","lo":1,"hi":0}"#).is_err());
        assert!(
            serde_json::from_str::<BiasModel>(r#"{"kind":"point_mass","value":1,"x":2}"#).is_err()
        );
    }

    #[test]
    fn point_mass_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(BiasModel::point_mass(0.7).sample(&mut rng), 0.7);
    }

    #[test]
    fn uniform_sample_mean() {
        let m = BiasModel::uniform(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = m.sample(&mut rng);
            assert!((0.0..=1.0).contains(&x));
            sum += x;
        }
        let se = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn table_one_sample_mean() {
        let m = BiasModel::table_one(0.1).unwrap();
        let (mean, std) = m.moments();
        assert!((mean - 0.449).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| m.sample(&mut rng)).sum();
        assert!((sum / n as f64 - mean).abs() < 3.0 * std / (n as f64).sqrt());
    }

    #[test]
    fn table_one_histogram_chi_square() {
        let delta = 0.1;
        let m = BiasModel::table_one(delta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000usize;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            let b = m.sample(&mut rng);
            let i = (((b - 0.1) / delta).ceil() as usize).clamp(1, 9) - 1;
            counts[i] += 1;
        }
        assert_eq!(counts[7], 0, "empty bin received draws");
        let chi2: f64 = TABLE_ONE_MASSES
            .iter()
            .zip(&counts)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, c)| {
                let e = p * n as f64;
                (*c as f64 - e).powi(2) / e
            })
            .sum();
        // 8 nonempty bins, 7 degrees of freedom; upper 0.001 quantile
        assert!(chi2 < 24.322, "chi2 = {chi2}");
    }

    #[test]
    fn cdf_diff_tails() {
        assert!((normal_cdf_diff(f64::INFINITY, 0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf_diff(1.0, -1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        // far right tail keeps relative precision
        let far = normal_cdf_diff(31.0, 30.0);
        assert!(far > 0.0 && far < 1e-190);
    }
}
