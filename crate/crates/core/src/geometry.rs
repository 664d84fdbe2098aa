//! Beacons, target and scenario wiring.
//!
//! Beacon indices are zero-based in the API. Error messages and validation
//! reports number beacons from 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bias::BiasModel;
use crate::error::{Error, Result};

/// Distances below this are treated as a target sitting on a beacon.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// A position in 2D or 3D Cartesian space, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Point(coords.into())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn distance_to(&self, other: &Point) -> f64 {
        euclidean(&self.0, &other.0)
    }

    pub fn translated(&self, offset: &[f64]) -> Point {
        Point(self.0.iter().zip(offset).map(|(a, b)| a + b).collect())
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Beacons, target, noise levels and the bias priors of the biased beacons.
///
/// The first `bias_models.len()` beacons are the biased ones. Use
/// [`Scenario::with_biased_subset`] to build a scenario from an arbitrary
/// subset of biased beacons.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub beacons: Vec<Point>,
    pub target: Point,
    pub noise_std: Vec<f64>,
    pub bias_models: Vec<BiasModel>,
}

/// The result of [`Scenario::with_biased_subset`]: the canonical scenario
/// together with the original index of every canonical beacon.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub scenario: Scenario,
    pub original_index: Vec<usize>,
}

impl Scenario {
    pub fn new(
        beacons: Vec<Point>,
        target: Point,
        noise_std: Vec<f64>,
        bias_models: Vec<BiasModel>,
    ) -> Self {
        Scenario {
            beacons,
            target,
            noise_std,
            bias_models,
        }
    }

    /// Reorders beacons so that the biased ones come first.
    ///
    /// `biased` holds zero-based beacon indices and `models[i]` is the prior
    /// of beacon `biased[i]`. The relative order of the remaining beacons is
    /// preserved.
    pub fn with_biased_subset(
        beacons: Vec<Point>,
        target: Point,
        noise_std: Vec<f64>,
        biased: &[usize],
        models: Vec<BiasModel>,
    ) -> Result<Canonical> {
        let m = beacons.len();
        if biased.len() != models.len() {
            return Err(Error::InvalidArgument(format!(
                "{} biased beacons but {} bias models",
                biased.len(),
                models.len()
            )));
        }
        if noise_std.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{m} beacons but {} noise std values",
                noise_std.len()
            )));
        }
        let mut seen = vec![false; m];
        for &b in biased {
            if b >= m {
                return Err(Error::InvalidArgument(format!(
                    "biased beacon {} out of range 1..={m}",
                    b + 1
                )));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(Error::InvalidArgument(format!(
                    "beacon {} listed as biased twice",
                    b + 1
                )));
            }
        }
        let order: Vec<usize> = biased
            .iter()
            .copied()
            .chain((0..m).filter(|i| !seen[*i]))
            .collect();
        let scenario = Scenario {
            beacons: order.iter().map(|&i| beacons[i].clone()).collect(),
            target,
            noise_std: order.iter().map(|&i| noise_std[i]).collect(),
            bias_models: models,
        };
        Ok(Canonical {
            scenario,
            original_index: order,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn beacon_count(&self) -> usize {
        self.beacons.len()
    }

    pub fn biased_count(&self) -> usize {
        self.bias_models.len()
    }

    pub fn is_biased(&self, m: usize) -> bool {
        m < self.bias_models.len()
    }

    pub fn bias_model(&self, m: usize) -> Option<&BiasModel> {
        self.bias_models.get(m)
    }

    /// Distance between the target and beacon `m`.
    pub fn distance(&self, m: usize) -> Result<f64> {
        let d = self.raw_distance(m);
        if d < DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateGeometry {
                beacon: m + 1,
                distance: d,
            });
        }
        Ok(d)
    }

    pub(crate) fn raw_distance(&self, m: usize) -> f64 {
        self.target.distance_to(&self.beacons[m])
    }

    /// Unit vector pointing from beacon `m` towards the target.
    pub fn unit_direction(&self, m: usize) -> Result<Vec<f64>> {
        let d = self.distance(m)?;
        Ok(self
            .target
            .0
            .iter()
            .zip(&self.beacons[m].0)
            .map(|(t, b)| (t - b) / d)
            .collect())
    }

    /// Same scenario with the target moved.
    pub fn with_target(&self, target: Point) -> Scenario {
        Scenario {
            target,
            ..self.clone()
        }
    }

    /// Same geometry with every biased beacon given the prior `model`.
    pub fn with_bias_model(&self, model: &BiasModel) -> Scenario {
        Scenario {
            bias_models: vec![model.clone(); self.biased_count()],
            ..self.clone()
        }
    }

    /// Every violated invariant, in beacon order. Empty when the scenario is
    /// valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let dim = self.dim();
        if dim != 2 && dim != 3 {
            out.push(Violation::new(
                ViolationKind::BadDimension,
                None,
                format!("dimension must be 2 or 3, got {dim}"),
            ));
        }
        if !self.target.is_finite() {
            out.push(Violation::new(
                ViolationKind::NonFiniteCoordinate,
                None,
                "target has non-finite coordinates".into(),
            ));
        }
        let m = self.beacon_count();
        let min_beacons = if dim == 3 { 4 } else { 3 };
        if m < min_beacons {
            out.push(Violation::new(
                ViolationKind::TooFewBeacons,
                None,
                format!("too few beacons: {m} given, at least {min_beacons} needed in {dim}D"),
            ));
        }
        if self.noise_std.len() != m {
            out.push(Violation::new(
                ViolationKind::LengthMismatch,
                None,
                format!("{m} beacons but {} noise std values", self.noise_std.len()),
            ));
        }
        if self.biased_count() > m {
            out.push(Violation::new(
                ViolationKind::LengthMismatch,
                None,
                format!(
                    "{} bias models but only {m} beacons",
                    self.biased_count()
                ),
            ));
        }
        for (i, b) in self.beacons.iter().enumerate() {
            if b.dim() != dim {
                out.push(Violation::new(
                    ViolationKind::BadDimension,
                    Some(i),
                    format!("has {} coordinates, expected {dim}", b.dim()),
                ));
                continue;
            }
            if !b.is_finite() {
                out.push(Violation::new(
                    ViolationKind::NonFiniteCoordinate,
                    Some(i),
                    "has non-finite coordinates".into(),
                ));
            } else if self.target.is_finite() && self.raw_distance(i) < DEGENERACY_THRESHOLD {
                out.push(Violation::new(
                    ViolationKind::CoincidentTarget,
                    Some(i),
                    "coincides with the target".into(),
                ));
            }
        }
        for (i, s) in self.noise_std.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                out.push(Violation::new(
                    ViolationKind::NonPositiveNoise,
                    Some(i),
                    format!("non-positive noise std {s}"),
                ));
            }
        }
        for (i, model) in self.bias_models.iter().enumerate() {
            if let Err(e) = model.check() {
                out.push(Violation::new(
                    ViolationKind::InvalidBiasModel,
                    Some(i),
                    e.to_string(),
                ));
            }
        }
        out
    }

    /// `Ok` iff [`Scenario::validate`] reports nothing.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    BadDimension,
    TooFewBeacons,
    LengthMismatch,
    NonFiniteCoordinate,
    CoincidentTarget,
    NonPositiveNoise,
    InvalidBiasModel,
}

/// One broken scenario invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Zero-based beacon index, if the violation concerns one beacon.
    pub beacon: Option<usize>,
    pub reason: String,
}

impl Violation {
    fn new(kind: ViolationKind, beacon: Option<usize>, reason: String) -> Self {
        Violation {
            kind,
            beacon,
            reason,
        }
    }

    /// Renumbers the beacon through `map` (canonical index to file index).
    pub fn remap(mut self, map: &[usize]) -> Self {
        self.beacon = self.beacon.map(|b| map.get(b).copied().unwrap_or(b));
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.beacon {
            Some(b) => write!(f, "beacon {}: {}", b + 1, self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn planar(target: [f64; 2], beacons: &[[f64; 2]]) -> Scenario {
        Scenario::new(
            beacons.iter().map(|b| Point::from(*b)).collect(),
            Point::from(target),
            vec![1.0; beacons.len()],
            vec![],
        )
    }

    #[test]
    fn distance_examples() {
        let s = planar([3.0, 4.0], &[[0.0, 0.0]]);
        assert_eq!(s.distance(0).unwrap(), 5.0);

        let s = planar([1.0, 0.0], &[[1.0, 0.0]]);
        assert!(matches!(
            s.distance(0),
            Err(Error::DegenerateGeometry { beacon: 1, .. })
        ));

        let s = Scenario::new(
            vec![Point::from([0.0, 0.0, 0.0])],
            Point::from([1.0, 1.0, 1.0]),
            vec![1.0],
            vec![],
        );
        assert!((s.distance(0).unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unit_direction_examples() {
        let s = planar([1.0, 0.0], &[[0.0, 0.0]]);
        assert_eq!(s.unit_direction(0).unwrap(), vec![1.0, 0.0]);

        let s = planar([0.0, 0.0], &[[3.0, 4.0]]);
        let q = s.unit_direction(0).unwrap();
        assert!((q[0] + 0.6).abs() < 1e-15 && (q[1] + 0.8).abs() < 1e-15);

        let s = planar([1.0, 1.0], &[[0.0, 0.0]]);
        let q = s.unit_direction(0).unwrap();
        let h = 0.5f64.sqrt();
        assert!((q[0] - h).abs() < 1e-15 && (q[1] - h).abs() < 1e-15);
    }

    #[test]
    fn validate_examples() {
        let mut s = planar(
            [3.0, 4.0],
            &[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
        );
        s.bias_models = vec![BiasModel::table_one(0.1).unwrap()];
        assert!(s.validate().is_empty());

        let s2 = planar([3.0, 4.0], &[[0.0, 0.0], [10.0, 0.0]]);
        let v = s2.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::TooFewBeacons);
        assert!(v[0].to_string().contains("too few beacons"));

        s.noise_std[1] = 0.0;
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NonPositiveNoise);
        assert_eq!(v[0].to_string(), "beacon 2: non-positive noise std 0");
    }

    #[test]
    fn three_d_needs_four_beacons() {
        let s = Scenario::new(
            vec![
                Point::from([0.0, 0.0, 0.0]),
                Point::from([1.0, 0.0, 0.0]),
                Point::from([0.0, 1.0, 0.0]),
            ],
            Point::from([0.3, 0.3, 0.3]),
            vec![1.0; 3],
            vec![],
        );
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::TooFewBeacons);
    }

    #[test]
    fn biased_subset_moves_to_front() {
        let beacons: Vec<Point> = (0..4).map(|i| Point::from([i as f64, 0.0])).collect();
        let c = Scenario::with_biased_subset(
            beacons,
            Point::from([0.5, 2.0]),
            vec![1.0, 2.0, 3.0, 4.0],
            &[2],
            vec![BiasModel::point_mass(0.3)],
        )
        .unwrap();
        assert_eq!(c.original_index, vec![2, 0, 1, 3]);
        assert_eq!(c.scenario.noise_std, vec![3.0, 1.0, 2.0, 4.0]);
        assert_eq!(c.scenario.beacons[0], Point::from([2.0, 0.0]));
        assert!(c.scenario.is_biased(0) && !c.scenario.is_biased(1));
    }

    proptest! {
        #[test]
        fn direction_is_unit_and_distance_symmetric(
            t in prop::array::uniform3(-100.0f64..100.0),
            b in prop::array::uniform3(-100.0f64..100.0),
        ) {
            let s = Scenario::new(vec![Point::from(b)], Point::from(t), vec![1.0], vec![]);
            let swapped = Scenario::new(vec![Point::from(t)], Point::from(b), vec![1.0], vec![]);
            prop_assume!(s.raw_distance(0) > 1e-6);
            let q = s.unit_direction(0).unwrap();
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            prop_assert_eq!(s.distance(0).unwrap(), swapped.distance(0).unwrap());
            prop_assert_eq!(s.unit_direction(0).unwrap(), q);
        }
    }
}
