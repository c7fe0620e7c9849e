use super::path::OperatorPath;
use super::report::{Diagnostics, FlowReport, FlowTerms, Method, FAIL_RESIDUAL};
use crate::error::{Error, Result};
use crate::funcalc::{apply_function, eigh, spectral_projection_nonneg_of, HermitianMatrix};
use crate::normfun::{Density, NormalizingFunction};
use crate::quad::{improper_integral, integrate_adaptive_with, QuadratureOptions, QuadratureResult};

/// Tolerance on `‖U D_a U* - D_b‖` for the unitarily-equivalent endpoint
/// formula.
pub const EQUIVALENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralOptions {
    pub tol: f64,
    /// Initial panel count; estimated from the path speed when `None`.
    pub initial_panels: Option<usize>,
    pub max_evaluations: usize,
}

impl Default for IntegralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            initial_panels: None,
            max_evaluations: 200_000,
        }
    }
}

/// `∫_a^b Tr(Ḋ_t g(D_t)) dt`.
///
/// Enough initial panels are used that an eigenvalue moving at the path's
/// top speed spends several panels inside a feature of width `scale` of `g`.
pub fn trace_integral(
    path: &OperatorPath,
    g: &(dyn Fn(f64) -> f64 + Sync),
    scale: f64,
    opts: &IntegralOptions,
) -> Result<QuadratureResult> {
    let (a, b) = path.interval();
    let panels = opts.initial_panels.unwrap_or_else(|| {
        let speed = path.speed_bound(16);
        ((4.0 * (b - a) * speed / scale).ceil() as usize).clamp(8, 4096)
    });
    let quad_opts = QuadratureOptions {
        tol: opts.tol,
        initial_panels: panels,
        max_evaluations: opts.max_evaluations,
        breakpoints: path.breakpoints().to_vec(),
        ..QuadratureOptions::default()
    };
    integrate_adaptive_with(
        |t| {
            let decomp = eigh(&path.evaluate(t));
            let rate = path.derivative_or_difference(t);
            decomp.trace_with(&rate, g).unwrap_or(f64::NAN)
        },
        a,
        b,
        &quad_opts,
    )
}

/// `½ Tr(2P - 1 - χ(D))` with `P = 1_{≥0}(D)`.
fn endpoint_term(d: &HermitianMatrix, chi: &NormalizingFunction, t: f64) -> Result<f64> {
    let decomp = eigh(d);
    let spectral = spectral_projection_nonneg_of(&decomp);
    if spectral.is_sign_ambiguous() {
        return Err(Error::NonInvertibleEndpoint {
            t,
            gap: decomp.min_abs_eigenvalue(),
        });
    }
    let chi_d = apply_function(d, |x| chi.chi(x))?;
    let rank = spectral.projection.rank() as f64;
    Ok(0.5 * (2.0 * rank - d.dim() as f64 - chi_d.trace()))
}

pub fn spectral_flow_integral(path: &OperatorPath, chi: &NormalizingFunction, tol: f64) -> Result<FlowReport> {
    spectral_flow_integral_with(
        path,
        chi,
        &IntegralOptions {
            tol,
            ..IntegralOptions::default()
        },
    )
}

/// `½∫ Tr(Ḋ_t χ′(D_t)) dt + ½Tr(2P_b - 1 - χ(D_b)) - ½Tr(2P_a - 1 - χ(D_a))`.
///
/// `chi` is assumed to pass `validate_normalizing`. The report's terms are
/// `integral = ½∫…`, `endpoint_b`, `endpoint_a`, with
/// `value = integral + endpoint_b - endpoint_a`.
pub fn spectral_flow_integral_with(
    path: &OperatorPath,
    chi: &NormalizingFunction,
    opts: &IntegralOptions,
) -> Result<FlowReport> {
    let (a, b) = path.interval();
    let endpoint_a = endpoint_term(&path.evaluate(a), chi, a)?;
    let endpoint_b = endpoint_term(&path.evaluate(b), chi, b)?;
    let quad = trace_integral(path, &|x| chi.chi_prime(x), chi.feature_scale(), opts)?;
    let integral = 0.5 * quad.value;
    let diagnostics = Diagnostics {
        quadrature_error: Some(0.5 * quad.error_estimate),
        evaluations: quad.evaluations,
        ..Diagnostics::default()
    };
    FlowReport::new(
        Method::Integral,
        integral + endpoint_b - endpoint_a,
        FlowTerms {
            integral,
            endpoint_b,
            endpoint_a,
        },
        diagnostics,
    )
    .require_residual(FAIL_RESIDUAL, "quadrature or path resolution failure")
}

/// Rejects weights that are not even, nonnegative and positive at zero.
fn check_density(psi: &Density) -> Result<()> {
    let psi0 = psi.eval(0.0);
    if !(psi0 > 0.0 && psi0.is_finite()) {
        return Err(Error::InvalidArgument(format!("{}: psi(0) = {psi0} must be positive", psi.label())));
    }
    for x in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 37.3] {
        let (p, m) = (psi.eval(x), psi.eval(-x));
        if !(p.is_finite() && m.is_finite() && p >= 0.0 && m >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: psi must be finite and nonnegative, psi({x}) = {p}, psi(-{x}) = {m}",
                psi.label()
            )));
        }
        if (p - m).abs() > 1e-12 * p.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "{}: psi is not even at x = {x}: {p} vs {m}",
                psi.label()
            )));
        }
    }
    Ok(())
}

/// `(1/C) ∫ Tr(Ḋ_t ψ(D_t)) dt` with `C = ∫ψ`, for paths whose endpoints are
/// unitarily equivalent through the unitary attached to the path.
pub fn spectral_flow_corollary(path: &OperatorPath, psi: &Density, tol: f64) -> Result<FlowReport> {
    let equivalence = path.endpoint_equivalence().ok_or_else(|| {
        Error::InvalidArgument(format!("path {} carries no endpoint unitary", path.label()))
    })?;
    let defect = equivalence.defect(&path.start(), &path.end());
    if !(defect <= EQUIVALENCE_TOL) {
        return Err(Error::EquivalenceCheck { defect });
    }
    check_density(psi)?;
    let normalization = improper_integral(|x| psi.eval(x), psi.tail(), 1e-10)?;
    let c = normalization.value;
    let quad = trace_integral(
        path,
        &|x| psi.eval(x),
        1.0,
        &IntegralOptions {
            tol,
            ..IntegralOptions::default()
        },
    )?;
    let value = quad.value / c;
    let diagnostics = Diagnostics {
        quadrature_error: Some(quad.error_estimate / c + value.abs() * normalization.error_estimate / c),
        evaluations: quad.evaluations + normalization.evaluations,
        normalization: Some(c),
        ..Diagnostics::default()
    };
    FlowReport::new(
        Method::Corollary,
        value,
        FlowTerms {
            integral: value,
            endpoint_b: 0.0,
            endpoint_a: 0.0,
        },
        diagnostics,
    )
    .require_residual(FAIL_RESIDUAL, "truncation or quadrature failure")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::path::{reverse, EndpointEquivalence};
    use crate::funcalc::CMatrix;
    use crate::normfun::{make_chi_p, make_chi_theta, make_involutive_spline};
    use crate::quad::TailDecay;

    fn line() -> OperatorPath {
        OperatorPath::new(1, (0.0, 1.0), |t| HermitianMatrix::from_real_diagonal(&[t - 0.25]))
    }

    fn families() -> Vec<NormalizingFunction> {
        vec![
            make_chi_p(1.0).unwrap(),
            make_chi_p(2.0).unwrap(),
            make_chi_p(3.0).unwrap(),
            make_chi_theta(1.0).unwrap(),
            make_involutive_spline(0.2).unwrap(),
        ]
    }

    #[test]
    fn telescoping_line() {
        for chi in families() {
            let r = spectral_flow_integral(&line(), &chi, 1e-12).unwrap();
            assert_eq!(r.integer, 1, "{}", chi.label());
            assert!(r.residual < 1e-10, "{}: {}", chi.label(), r.residual);
            // ½(χ(3/4) - χ(-1/4)) + ½(1 - χ(3/4)) + ½(1 + χ(-1/4))
            let expected_integral = 0.5 * (chi.chi(0.75) - chi.chi(-0.25));
            assert!((r.terms.integral - expected_integral).abs() < 1e-10);
            assert!((r.terms.endpoint_b - 0.5 * (1.0 - chi.chi(0.75))).abs() < 1e-14);
            assert!((r.terms.endpoint_a + 0.5 * (1.0 + chi.chi(-0.25))).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_path_is_zero() {
        let d = HermitianMatrix::from_real_diagonal(&[0.3, -2.0, 5.0]);
        let p = OperatorPath::constant(d, (0.0, 1.0));
        for chi in families() {
            let r = spectral_flow_integral(&p, &chi, 1e-10).unwrap();
            assert_eq!(r.integer, 0);
            assert_eq!(r.terms.integral, 0.0);
            assert!(r.residual < 1e-14);
        }
    }

    #[test]
    fn difference_derivative_matches_analytic() {
        let analytic = line().with_derivative(|_| HermitianMatrix::identity(1));
        let chi = make_chi_p(2.0).unwrap();
        let x = spectral_flow_integral(&line(), &chi, 1e-10).unwrap();
        let y = spectral_flow_integral(&analytic, &chi, 1e-10).unwrap();
        assert!((x.value - y.value).abs() < 1e-8);
        let r = spectral_flow_integral(&reverse(&analytic), &chi, 1e-10).unwrap();
        assert_eq!(r.integer, -1);
    }

    #[test]
    fn non_invertible_endpoint() {
        let p = OperatorPath::new(1, (0.0, 1.0), |t| HermitianMatrix::from_real_diagonal(&[t - 1.0]));
        let chi = make_chi_p(2.0).unwrap();
        assert!(matches!(
            spectral_flow_integral(&p, &chi, 1e-8),
            Err(Error::NonInvertibleEndpoint { t, .. }) if t == 1.0
        ));
    }

    #[test]
    fn corollary_constant_path() {
        let p = OperatorPath::constant(HermitianMatrix::from_real_diagonal(&[1.0, -0.5]), (0.0, 1.0));
        let r = spectral_flow_corollary(&p, &Density::cauchy(), 1e-10).unwrap();
        assert_eq!(r.integer, 0);
        assert!((r.diagnostics.normalization.unwrap() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn corollary_requires_equivalence() {
        let chi = Density::cauchy();
        assert!(matches!(
            spectral_flow_corollary(&line(), &chi, 1e-8),
            Err(Error::InvalidArgument(_))
        ));
        let wrong = line().with_endpoint_equivalence(EndpointEquivalence::exact(CMatrix::identity(1, 1)));
        assert!(matches!(
            spectral_flow_corollary(&wrong, &chi, 1e-8),
            Err(Error::EquivalenceCheck { .. })
        ));
    }

    #[test]
    fn corollary_rejects_bad_weights() {
        let p = OperatorPath::constant(HermitianMatrix::from_real_diagonal(&[1.0]), (0.0, 1.0));
        let tail = TailDecay::Gaussian {
            rate: 1.0,
            constant: 3.0,
        };
        let odd = Density::new("odd", tail, |x| (-x * x).exp() * (1.0 + 0.5 * x.tanh()));
        assert!(spectral_flow_corollary(&p, &odd, 1e-8).is_err());
        let negative = Density::new("negative", tail, |x| (-x * x).exp() * (1.0 - x * x));
        assert!(spectral_flow_corollary(&p, &negative, 1e-8).is_err());
        let vanishing = Density::new("vanishing", tail, |x| x * x * (-x * x).exp());
        assert!(spectral_flow_corollary(&p, &vanishing, 1e-8).is_err());
    }
}
