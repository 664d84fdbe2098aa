//! Globally adaptive Gauss-Kronrod (7, 15) integration on a finite interval.
//!
//! Every cell carries the 15-point Kronrod estimate and an error estimate
//! derived from its difference to the embedded 7-point Gauss rule. The cell
//! with the largest error is bisected until the summed error satisfies
//! `max(rel_tol·|value|, abs_tol)`. Known discontinuities of the integrand
//! are passed as breakpoints and become the initial cells.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_depth: 50,
        }
    }
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        QuadratureSpec {
            rel_tol,
            abs_tol,
            ..Default::default()
        }
    }

    /// Both tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        QuadratureSpec {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            max_depth: self.max_depth,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_depth >= 1) {
            return Err(Error::InvalidArgument(format!(
                "quadrature tolerances must be positive and max_depth >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
}

// Kronrod abscissae on [0, 1]; odd indices are the Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Cell {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    /// Roundoff level of `error`; splitting cannot go below it.
    floor: f64,
    depth: u32,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval<F: FnMut(f64) -> f64>(f: &mut F, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::QuadratureDomain { x })
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, depth: u32) -> Result<Cell> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = eval(f, center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = kronrod.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(f, center - dx)?;
        let f2 = eval(f, center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    let abs_k = abs_k * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * abs_k;
    if abs_k > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(floor);
    }
    Ok(Cell {
        a,
        b,
        value,
        error,
        floor,
        depth,
    })
}

const MAX_CELLS: usize = 200_000;

/// `∫_a^b f(x) dx`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Integral> {
    integrate_with_breaks(f, a, b, &[], spec)
}

/// `∫_a^b f(x) dx` with `breaks` (any order, out-of-range points ignored)
/// used as mandatory initial subdivisions.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    spec: &QuadratureSpec,
) -> Result<Integral> {
    spec.check()?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!(
            "integration interval [{a}, {b}] must be finite with a < b"
        )));
    }
    let mut points: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    points.push(a);
    points.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut heap = BinaryHeap::with_capacity(points.len() * 4);
    for w in points.windows(2) {
        heap.push(gauss_kronrod(&mut f, w[0], w[1], 0)?);
    }

    loop {
        // resum each round so that roundoff does not accumulate
        let (value, error) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), c| (v + c.value, e + c.error));
        if error <= (spec.rel_tol * value.abs()).max(spec.abs_tol) {
            return Ok(Integral {
                value,
                error_estimate: error,
            });
        }
        let worst = heap.pop().expect("at least one cell");
        if worst.error <= worst.floor * (1.0 + 1e-9) {
            // the largest error is pure roundoff, typically because the
            // integrand cancels and |value| is far below ∫|f|
            return Ok(Integral {
                value,
                error_estimate: error,
            });
        }
        let mid = 0.5 * (worst.a + worst.b);
        if worst.depth >= spec.max_depth || heap.len() >= MAX_CELLS || mid <= worst.a || mid >= worst.b {
            return Err(Error::QuadratureConvergence {
                value,
                error_estimate: error,
            });
        }
        heap.push(gauss_kronrod(&mut f, worst.a, mid, worst.depth + 1)?);
        heap.push(gauss_kronrod(&mut f, mid, worst.b, worst.depth + 1)?);
    }
}
