//! Scenario construction and method dispatch.

use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

use spectral_flow::flowcore::{
    spectral_flow_corollary, spectral_flow_crossings, spectral_flow_integral, spectral_flow_via_winding_with,
    CrossingOptions, FlowReport, Method, WindingOptions, FLOW_LOOP_TARGET_RESIDUAL,
};
use spectral_flow::funcalc::{eigvalsh, CMatrix, HermitianMatrix};
use spectral_flow::models::{
    conjugate_scenario, make_circle_dirac, make_crossing_path, make_random_path, make_theta_model, Scenario,
    Summability,
};
use spectral_flow::normfun::{Density, FamilySpec};
use spectral_flow::{Error, OperatorPath};

use crate::config::{Generator, PsiSpec, RunConfig, ScenarioSpec};

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let base = match &spec.generator {
        Generator::RandomPath { dim, degree } => make_random_path(*dim, spec.seed, *degree),
        Generator::CrossingPath { crossings } => make_crossing_path(crossings)?,
        Generator::CircleDirac { n, window } => make_circle_dirac(*n, *window)?,
        Generator::ThetaModel { n, window } => make_theta_model(*n, *window)?,
        Generator::MatrixPolynomial { real, imag, interval } => {
            let coefficients = polynomial_coefficients(real, imag.as_deref())?;
            let path = OperatorPath::polynomial(coefficients, *interval)?;
            Scenario {
                provenance: format!("matrix polynomial of degree {}", real.len() - 1),
                path,
                expected_flow: None,
                truncation_dim: None,
                summability: Summability::Finite,
            }
        }
    };
    Ok(match spec.conjugate_seed {
        Some(seed) => conjugate_scenario(&base, seed),
        None => base,
    })
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        bail!("config.scenario.{what}: every coefficient must be a nonempty square array");
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn polynomial_coefficients(real: &[Vec<Vec<f64>>], imag: Option<&[Vec<Vec<f64>>]>) -> Result<Vec<HermitianMatrix>> {
    if real.is_empty() {
        bail!("config.scenario.coefficients: at least one coefficient is required");
    }
    if let Some(im) = imag {
        if im.len() != real.len() {
            bail!("config.scenario.imag: expected {} matrices, got {}", real.len(), im.len());
        }
    }
    real.iter()
        .enumerate()
        .map(|(k, re)| {
            let re = square(re, "coefficients")?;
            let im = match imag {
                Some(im) => square(&im[k], "imag")?,
                None => DMatrix::zeros(re.nrows(), re.ncols()),
            };
            if im.shape() != re.shape() {
                bail!("config.scenario.imag: coefficient {k} has the wrong shape");
            }
            let m = CMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
            HermitianMatrix::new(m).with_context(|| format!("config.scenario.coefficients[{k}]"))
        })
        .collect()
}

/// Result of one method: a report, or a report that missed its residual
/// threshold, or an error.
#[derive(Debug)]
pub enum MethodOutcome {
    Done(FlowReport),
    NotConverged { report: FlowReport, reason: String },
    Failed(String),
}

impl MethodOutcome {
    pub fn report(&self) -> Option<&FlowReport> {
        match self {
            MethodOutcome::Done(r) | MethodOutcome::NotConverged { report: r, .. } => Some(r),
            MethodOutcome::Failed(_) => None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            MethodOutcome::Done(_) => "ok",
            MethodOutcome::NotConverged { .. } => "not_converged",
            MethodOutcome::Failed(_) => "error",
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            MethodOutcome::Done(_) => None,
            MethodOutcome::NotConverged { reason, .. } => Some(reason),
            MethodOutcome::Failed(e) => Some(e),
        }
    }
}

#[derive(Debug)]
pub struct MethodRun {
    pub method: Method,
    pub outcome: MethodOutcome,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Every method finished and all integers coincide.
    Agree(i64),
    /// Integers differ, or a method stopped short of its residual threshold.
    Disagree,
    /// A method could not run.
    Error,
}

impl Verdict {
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::Agree(_) => 0,
            Verdict::Error => 1,
            Verdict::Disagree => 2,
        }
    }
}

pub struct RunOutcome {
    pub scenario: Scenario,
    pub runs: Vec<MethodRun>,
    pub verdict: Verdict,
}

fn psi_density(config: &RunConfig) -> Result<Density> {
    Ok(match config.psi {
        PsiSpec::Cauchy => Density::cauchy(),
        PsiSpec::Power { q } => Density::power(q).map_err(|e| anyhow!("config.psi: {e}"))?,
        PsiSpec::Gaussian { s } => Density::gaussian(s).map_err(|e| anyhow!("config.psi: {e}"))?,
        PsiSpec::ChiPrime => {
            let chi = config.chi.expect("validated").build()?;
            Density::from_normalizing(&chi).map_err(|e| anyhow!("config.psi: {e}"))?
        }
    })
}

fn winding_options(config: &RunConfig) -> Option<WindingOptions> {
    let t = &config.tolerances;
    if t.winding_initial_points.is_none() && t.winding_max_points.is_none() && t.winding_target_residual.is_none() {
        // the library picks the grid from the path speed
        if t.winding_max_residual == WindingOptions::default().max_residual {
            return None;
        }
    }
    let defaults = WindingOptions::default();
    let max_points = t.winding_max_points.unwrap_or(defaults.max_points);
    Some(WindingOptions {
        initial_points: t.winding_initial_points.unwrap_or(defaults.initial_points).min(max_points),
        max_points,
        target_residual: t.winding_target_residual.unwrap_or(FLOW_LOOP_TARGET_RESIDUAL),
        max_residual: t.winding_max_residual,
    })
}

fn winding_delta(config: &RunConfig) -> Option<f64> {
    config.tolerances.winding_delta.or(match config.chi {
        Some(FamilySpec::Involutive { delta }) => Some(delta),
        _ => None,
    })
}

fn run_method(method: Method, path: &OperatorPath, config: &RunConfig) -> Result<FlowReport, Error> {
    let t = &config.tolerances;
    match method {
        Method::Crossings => spectral_flow_crossings(
            path,
            &CrossingOptions {
                initial_samples: t.crossing_initial_samples,
                max_evaluations: t.crossing_max_evaluations,
                ..CrossingOptions::default()
            },
        ),
        Method::Winding => spectral_flow_via_winding_with(path, winding_delta(config), winding_options(config)),
        Method::Integral => {
            let chi = config.chi.expect("validated").build()?;
            spectral_flow_integral(path, &chi, t.integral)
        }
        Method::Corollary => {
            let psi = psi_density(config).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            spectral_flow_corollary(path, &psi, t.corollary)
        }
    }
}

/// Runs every configured method in order.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let scenario = build_scenario(&config.scenario)?;
    let runs: Vec<MethodRun> = config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = match run_method(method, &scenario.path, config) {
                Ok(r) => MethodOutcome::Done(r),
                Err(Error::NotConverged { reason, report, .. }) => MethodOutcome::NotConverged {
                    report: *report,
                    reason,
                },
                Err(e) => MethodOutcome::Failed(e.to_string()),
            };
            MethodRun {
                method,
                outcome,
                elapsed: start.elapsed(),
            }
        })
        .collect();
    let verdict = verdict(&runs);
    Ok(RunOutcome {
        scenario,
        runs,
        verdict,
    })
}

pub fn verdict(runs: &[MethodRun]) -> Verdict {
    if runs.iter().any(|r| matches!(r.outcome, MethodOutcome::Failed(_))) {
        return Verdict::Error;
    }
    if runs.iter().any(|r| matches!(r.outcome, MethodOutcome::NotConverged { .. })) {
        return Verdict::Disagree;
    }
    let ints: Vec<i64> = runs.iter().filter_map(|r| r.outcome.report()).map(|r| r.integer).collect();
    match ints.first() {
        Some(&k) if ints.iter().all(|&j| j == k) => Verdict::Agree(k),
        _ => Verdict::Disagree,
    }
}

/// Sorted eigenvalues at `samples` evenly spaced times.
pub fn eigenvalue_samples(path: &OperatorPath, samples: usize) -> Vec<(f64, Vec<f64>)> {
    let (a, b) = path.interval();
    (0..samples)
        .map(|k| {
            let t = a + (b - a) * k as f64 / (samples - 1) as f64;
            (t, eigvalsh(&path.evaluate(t)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn config(v: serde_json::Value) -> RunConfig {
        RunConfig::from_value(v).unwrap()
    }

    #[test]
    fn crossing_path_all_methods_agree() {
        let c = config(json!({
            "scenario": {"generator": "crossing_path", "crossings": [[0.3, 1], [0.6, 1], [0.8, -1]]},
            "methods": ["crossings", "winding", "integral"],
            "chi": {"family": "chi_p", "p": 2}
        }));
        let out = run(&c).unwrap();
        assert_eq!(out.verdict, Verdict::Agree(1));
        assert_eq!(out.scenario.expected_flow, Some(1));
    }

    #[test]
    fn coarse_winding_cap_disagrees() {
        let c = config(json!({
            "scenario": {"generator": "random_path", "dim": 6, "degree": 3, "seed": 2},
            "methods": ["crossings", "winding"],
            "chi": {"family": "chi_p", "p": 2},
            "tolerances": {"winding_initial_points": 8, "winding_max_points": 8}
        }));
        let out = run(&c).unwrap();
        assert_eq!(out.verdict, Verdict::Disagree, "{:?}", out.runs);
        let rep = out.runs[1].outcome.report().expect("partial report kept");
        assert!(rep.diagnostics.flagged);
    }

    #[test]
    fn corollary_without_equivalence_is_an_error() {
        let c = config(json!({
            "scenario": {"generator": "random_path", "dim": 2, "degree": 1, "seed": 1},
            "methods": ["corollary"]
        }));
        assert_eq!(run(&c).unwrap().verdict, Verdict::Error);
    }

    #[test]
    fn polynomial_from_arrays() {
        let c = config(json!({
            "scenario": {
                "generator": "matrix_polynomial",
                "coefficients": [[[-0.5, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 0.0]]],
                "imag": [[[0.0, 0.2], [-0.2, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
            },
            "methods": ["crossings", "integral"],
            "chi": {"family": "chi_theta", "s": 1.0}
        }));
        let out = run(&c).unwrap();
        assert_eq!(out.verdict, Verdict::Agree(1));
    }

    #[test]
    fn non_hermitian_coefficient_rejected() {
        let c = config(json!({
            "scenario": {"generator": "matrix_polynomial", "coefficients": [[[0.0, 1.0], [0.0, 0.0]]]},
            "methods": ["crossings"]
        }));
        let err = format!("{:#}", run(&c).err().unwrap());
        assert!(err.contains("coefficients[0]"), "{err}");
    }

    #[test]
    fn plot_samples_of_circle() {
        let s = build_scenario(&config(json!({
            "scenario": {"generator": "circle_dirac", "n": 8},
            "methods": ["crossings"]
        })).scenario)
        .unwrap();
        let rows = eigenvalue_samples(&s.path, 3);
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|(_, ev)| ev.len() == 17));
        assert_eq!(rows[0].1[8], 0.5);
    }
}
