//! Scenario files, CSV output and the `crb-loc` subcommands.
//!
//! Scenario files are JSON:
//!
//! ```json
//! {
//!   "dim": 2,
//!   "beacons": [[0, 0], [10, 0], [10, 10], [0, 10]],
//!   "target": [3, 4],
//!   "noise_std": [1, 1, 1, 1],
//!   "biased": [1],
//!   "bias_models": [{"kind": "table_one", "delta": 0.5}],
//!   "candidate_bias_pdfs": null,
//!   "quadrature": {"rel_tol": 1e-10, "abs_tol": 1e-14},
//!   "estimator": {"grid": 5, "conv_tol": 1e-6}
//! }
//! ```
//!
//! `biased` lists 1-based beacon numbers and `bias_models[i]` belongs to
//! beacon `biased[i]`. Unknown keys are rejected. All CSV columns that refer
//! to beacons use the file's beacon order.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::bias::BiasModel;
use crate::crb::{biased_modes, crb, CoeffMode};
use crate::error::Error;
use crate::estimators::EstimatorSettings;
use crate::experiments::{default_deltas, instantiate, run_bound_sweep, run_ml_mse, SweepRecord};
use crate::geometry::{Point, Scenario};
use crate::quadrature::QuadratureSpec;

/// The bundled example scenario. Its geometry is an invented stand-in.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.json");

/// Significant digits of every number written to CSV.
pub const CSV_DIGITS: usize = 12;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub description: Option<String>,
    pub dim: usize,
    pub beacons: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub biased: Vec<usize>,
    #[serde(default)]
    pub bias_models: Vec<BiasModel>,
    #[serde(default)]
    pub candidate_bias_pdfs: Option<Vec<BiasModel>>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub estimator: Option<EstimatorSettings>,
}

/// A scenario file resolved into canonical beacon order.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// File index (0-based) of each canonical beacon.
    pub original_index: Vec<usize>,
    pub quadrature: QuadratureSpec,
    pub estimator: EstimatorSettings,
}

impl LoadedScenario {
    /// Reorders per-beacon values from canonical to file order.
    pub fn to_file_order<T: Clone>(&self, values: &[T]) -> Vec<T> {
        let mut out = values.to_vec();
        for (canon, &orig) in self.original_index.iter().enumerate() {
            out[orig] = values[canon].clone();
        }
        out
    }
}

/// CLI failure with its exit code and a stable error code.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        CliError {
            code: "parse",
            message: message.into(),
            exit: 2,
        }
    }

    fn io(message: impl Into<String>) -> Self {
        CliError {
            code: "io",
            message: message.into(),
            exit: 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: e.code(),
            message: e.to_string(),
            exit: 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.code, self.message.replace('\n', " "))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn parse_scenario(text: &str) -> CliResult<ScenarioFile> {
    serde_json::from_str(text).map_err(|e| CliError::parse(e.to_string()))
}

pub fn read_scenario(path: &Path) -> CliResult<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

/// Builds the canonical scenario. Structural problems and invariant
/// violations come back as [`Error::InvalidScenario`] naming file beacons.
pub fn resolve(file: &ScenarioFile) -> Result<LoadedScenario, Error> {
    use crate::geometry::Violation;
    let m = file.beacons.len();
    let structural = |reason: String| {
        Error::InvalidScenario(vec![Violation {
            kind: crate::geometry::ViolationKind::LengthMismatch,
            beacon: None,
            reason,
        }])
    };
    if file.target.len() != file.dim {
        return Err(structural(format!(
            "target has {} coordinates but dim is {}",
            file.target.len(),
            file.dim
        )));
    }
    if file.biased.iter().any(|&b| b == 0 || b > m) {
        return Err(structural(format!("biased beacon numbers must lie in 1..={m}")));
    }
    if let Some(c) = &file.candidate_bias_pdfs {
        if c.len() != m {
            return Err(structural(format!(
                "{} candidate bias pdfs for {m} beacons",
                c.len()
            )));
        }
    }
    let biased: Vec<usize> = file.biased.iter().map(|b| b - 1).collect();
    let canonical = Scenario::with_biased_subset(
        file.beacons.iter().cloned().map(Point).collect(),
        Point(file.target.clone()),
        file.noise_std.clone(),
        &biased,
        file.bias_models.clone(),
    )
    .map_err(|e| structural(e.to_string()))?;
    let violations: Vec<_> = canonical
        .scenario
        .validate()
        .into_iter()
        .map(|v| v.remap(&canonical.original_index))
        .collect();
    if !violations.is_empty() {
        return Err(Error::InvalidScenario(violations));
    }
    let quadrature = file.quadrature.unwrap_or_default();
    quadrature.check()?;
    let mut estimator = file.estimator.clone().unwrap_or_default();
    estimator.candidate_bias_pdfs = file.candidate_bias_pdfs.as_ref().map(|c| {
        canonical
            .original_index
            .iter()
            .map(|&i| c[i].clone())
            .collect()
    });
    Ok(LoadedScenario {
        scenario: canonical.scenario,
        original_index: canonical.original_index,
        quadrature,
        estimator,
    })
}

pub fn load(path: &Path) -> CliResult<LoadedScenario> {
    Ok(resolve(&read_scenario(path)?)?)
}

/// `x` with [`CSV_DIGITS`] significant digits, `%g` style.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", CSV_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= CSV_DIGITS as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (CSV_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Parses `start:step:end` or a comma separated list.
pub fn parse_deltas(spec: &str) -> CliResult<Vec<f64>> {
    let bad = |m: String| CliError {
        code: "invalid-argument",
        message: m,
        exit: 2,
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("'{s}' is not a number")))
    };
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("range '{spec}' must be start:step:end")));
        }
        let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(bad(format!("range '{spec}' needs step > 0 and end >= start")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                // snap accumulated roundoff to the printed precision
                fmt_num(start + i as f64 * step).parse().expect("formatted number")
            })
            .collect()
    } else {
        spec.split(',').map(num).collect::<CliResult<_>>()?
    };
    if values.is_empty() || values.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(bad(format!("deltas in '{spec}' must be positive")));
    }
    Ok(values)
}

/// Prints violations on `out`. Ok iff the file is valid.
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let file = read_scenario(path)?;
    match resolve(&file) {
        Ok(loaded) => {
            writeln!(
                out,
                "ok: {} beacons, {} biased, dim {}",
                loaded.scenario.beacon_count(),
                loaded.scenario.biased_count(),
                loaded.scenario.dim()
            )
            .map_err(|e| CliError::io(e.to_string()))?;
            Ok(())
        }
        Err(Error::InvalidScenario(violations)) => {
            for v in &violations {
                writeln!(out, "{v}").map_err(|e| CliError::io(e.to_string()))?;
            }
            Err(Error::InvalidScenario(violations).into())
        }
        Err(e) => Err(e.into()),
    }
}

/// The scenario with its bias priors replaced by the measured histogram of
/// bin width `delta`, if given.
fn with_delta(loaded: &LoadedScenario, delta: Option<f64>) -> CliResult<Scenario> {
    match delta {
        Some(d) => Ok(instantiate(&loaded.scenario, d)?),
        None => Ok(loaded.scenario.clone()),
    }
}

/// One CSV row with the coefficients, CRB entries and MSE bound. Returns the
/// CSV text and the bound.
pub fn cmd_bound(path: &Path, mode: CoeffMode, delta: Option<f64>) -> CliResult<(String, f64)> {
    let loaded = load(path)?;
    let scenario = with_delta(&loaded, delta)?;
    let result = crb(&scenario, &biased_modes(&scenario, mode), &loaded.quadrature)?;
    let m = scenario.beacon_count();
    let dim = scenario.dim();
    let mut header: Vec<String> = (1..=m).map(|i| format!("A_{i}")).collect();
    for i in 1..=dim {
        for j in 1..=dim {
            header.push(format!("crb_{i}{j}"));
        }
    }
    header.push("mse_bound".into());
    let mut row: Vec<String> = loaded
        .to_file_order(&result.fim.coefficients)
        .into_iter()
        .map(fmt_num)
        .collect();
    for i in 0..dim {
        for j in 0..dim {
            row.push(fmt_num(result.crb[(i, j)]));
        }
    }
    row.push(fmt_num(result.mse_bound));
    Ok((
        format!("{}\n{}\n", header.join(","), row.join(",")),
        result.mse_bound,
    ))
}

pub const SWEEP_HEADER: &str =
    "delta,kappa_over_sigma,bound_exact,bound_approx,bound_discarded,bound_unbiased";
pub const MSE_COLUMNS: &str = "mse_informed,mse_joint,trials";

fn bound_cells(r: &SweepRecord) -> String {
    [
        fmt_num(r.delta),
        fmt_num(r.kappa_over_sigma),
        fmt_num(r.bound_exact),
        opt_num(r.bound_approx),
        fmt_num(r.bound_discarded),
        fmt_num(r.bound_unbiased),
    ]
    .join(",")
}

/// CSV of a sweep. The last column is `ok`, `invalid:<failures>` or
/// `error:<code>`. The flag is true iff every row is ok.
pub fn sweep_csv(deltas: &[f64], rows: &[Result<SweepRecord, Error>], with_mse: bool) -> (String, bool) {
    let mut out = String::from(SWEEP_HEADER);
    if with_mse {
        out.push(',');
        out.push_str(MSE_COLUMNS);
    }
    out.push_str(",status\n");
    let mut all_ok = true;
    let empty_cells = if with_mse { 8 } else { 5 };
    for (delta, row) in deltas.iter().zip(rows) {
        match row {
            Ok(r) => {
                out.push_str(&bound_cells(r));
                if with_mse {
                    out.push_str(&format!(
                        ",{},{},{}",
                        opt_num(r.mse_informed),
                        opt_num(r.mse_joint),
                        r.trials
                    ));
                }
                let status = if !with_mse || r.is_valid() {
                    "ok".to_string()
                } else {
                    all_ok = false;
                    format!("invalid:{}", r.failures)
                };
                out.push_str(&format!(",{status}\n"));
            }
            Err(e) => {
                all_ok = false;
                out.push_str(&fmt_num(*delta));
                out.push_str(&",".repeat(empty_cells));
                out.push_str(&format!(",error:{}\n", e.code()));
            }
        }
    }
    (out, all_ok)
}

pub fn cmd_sweep(path: &Path, deltas: Option<&[f64]>) -> CliResult<(String, bool)> {
    let loaded = load(path)?;
    let deltas = deltas.map_or_else(default_deltas, <[f64]>::to_vec);
    let rows = run_bound_sweep(&loaded.scenario, &deltas, &loaded.quadrature);
    Ok(sweep_csv(&deltas, &rows, false))
}

pub fn cmd_mlmse(
    path: &Path,
    deltas: Option<&[f64]>,
    trials: usize,
    seed: u64,
) -> CliResult<(String, bool)> {
    let loaded = load(path)?;
    let deltas = deltas.map_or_else(default_deltas, <[f64]>::to_vec);
    let rows = run_ml_mse(
        &loaded.scenario,
        &deltas,
        trials,
        seed,
        &loaded.estimator,
        &loaded.quadrature,
    );
    Ok(sweep_csv(&deltas, &rows, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.5e-7), "-2.5e-7");
        assert_eq!(fmt_num(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt_num(1.825741858350554), "1.82574185835");
        assert_eq!(fmt_num(99999.9999999999), "100000");
    }

    #[test]
    fn delta_lists() {
        let d = parse_deltas("0.1:0.1:1.0").unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d[2], 0.3);
        assert_eq!(d[9], 1.0);
        assert_eq!(parse_deltas("0.5, 1").unwrap(), vec![0.5, 1.0]);
        assert!(parse_deltas("0.1:0:1").is_err());
        assert!(parse_deltas("-0.1").is_err());
        assert!(parse_deltas("a,b").is_err());
    }

    #[test]
    fn default_scenario_resolves() {
        let file = parse_scenario(DEFAULT_SCENARIO).unwrap();
        assert!(file.description.unwrap().to_lowercase().contains("invented"));
        let loaded = resolve(&parse_scenario(DEFAULT_SCENARIO).unwrap()).unwrap();
        assert_eq!(loaded.scenario.beacon_count(), 4);
        assert_eq!(loaded.scenario.biased_count(), 1);
        assert_eq!(loaded.original_index, vec![0, 1, 2, 3]);
    }

    #[test]
    fn biased_subset_is_reported_in_file_order() {
        let text = r#"{
            "dim": 2,
            "beacons": [[0,0],[10,0],[10,10],[0,10]],
            "target": [3,4],
            "noise_std": [1, 0, 1, 1],
            "biased": [3],
            "bias_models": [{"kind": "point_mass", "value": 0.2}]
        }"#;
        match resolve(&parse_scenario(text).unwrap()) {
            Err(Error::InvalidScenario(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].to_string(), "beacon 2: non-positive noise std 0");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = DEFAULT_SCENARIO.replacen("\"dim\"", "\"colour\": 1, \"dim\"", 1);
        assert_eq!(parse_scenario(&text).unwrap_err().exit, 2);
    }

    #[test]
    fn file_order_mapping() {
        let loaded = LoadedScenario {
            scenario: Scenario::new(vec![], Point(vec![]), vec![], vec![]),
            original_index: vec![2, 0, 1],
            quadrature: QuadratureSpec::default(),
            estimator: EstimatorSettings::default(),
        };
        assert_eq!(loaded.to_file_order(&["c", "a", "b"]), vec!["a", "b", "c"]);
    }

    #[test]
    fn error_line_is_single_line() {
        let e: CliError = Error::ApproximationDomain {
            beacon: 1,
            ratio: 1.83,
        }
        .into();
        let line = e.to_string();
        assert!(line.starts_with("error: approximation-domain: "));
        assert!(!line.contains('\n'));
    }
}
