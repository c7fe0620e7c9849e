use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use super::path::OperatorPath;
use super::report::{Diagnostics, FlowReport, FlowTerms, Method};
use crate::error::{Error, Result};
use crate::funcalc::{eigh, eigvalsh, max_abs, CMatrix};
use crate::normfun::make_involutive_spline;

type UnitaryFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

/// Tolerance for `‖s*s - I‖` and `‖s(0) - s(1)‖`.
pub const UNITARITY_TOL: f64 = 1e-9;

/// A periodic family `x ↦ s(x)` of unitaries on `[0, 1]`.
#[derive(Clone)]
pub struct UnitaryLoop {
    dim: usize,
    eval: UnitaryFn,
    derivative: Option<UnitaryFn>,
    label: String,
}

impl fmt::Debug for UnitaryLoop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnitaryLoop")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .finish()
    }
}

impl UnitaryLoop {
    pub fn new(dim: usize, eval: impl Fn(f64) -> CMatrix + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            derivative: None,
            label: String::from("loop"),
        }
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> CMatrix + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `diag(e^{2πi k_j x})` with its analytic derivative.
    pub fn diagonal(windings: &[i64]) -> Self {
        let ks: Arc<Vec<f64>> = Arc::new(windings.iter().map(|&k| k as f64).collect());
        let dim = ks.len();
        let ks2 = ks.clone();
        Self::new(dim, move |x| {
            CMatrix::from_diagonal(&ks.iter().map(|k| Complex64::cis(2.0 * PI * k * x)).collect::<Vec<_>>().into())
        })
        .with_derivative(move |x| {
            CMatrix::from_diagonal(
                &ks2.iter()
                    .map(|k| Complex64::new(0.0, 2.0 * PI * k) * Complex64::cis(2.0 * PI * k * x))
                    .collect::<Vec<_>>()
                    .into(),
            )
        })
        .with_label(format!("diag{windings:?}"))
    }

    pub fn constant(u: CMatrix) -> Self {
        let dim = u.nrows();
        Self::new(dim, move |_| u.clone())
            .with_derivative(move |_| CMatrix::zeros(dim, dim))
            .with_label("constant")
    }

    /// Pointwise product `x ↦ s(x)·r(x)`.
    pub fn product(&self, other: &UnitaryLoop) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let (s, r) = (self.eval.clone(), other.eval.clone());
        let mut out = Self::new(self.dim, move |x| s(x) * r(x));
        if let (Some(ds), Some(dr)) = (self.derivative.clone(), other.derivative.clone()) {
            let (s, r) = (self.eval.clone(), other.eval.clone());
            out = out.with_derivative(move |x| ds(x) * r(x) + s(x) * dr(x));
        }
        Ok(out.with_label(format!("{}*{}", self.label, other.label)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn evaluate(&self, x: f64) -> CMatrix {
        (self.eval)(x)
    }

    pub fn derivative(&self, x: f64) -> Option<CMatrix> {
        self.derivative.as_ref().map(|d| d(x))
    }

    /// Unitarity at `samples` evenly spaced points and periodicity.
    pub fn check_invariants(&self, samples: usize) -> Result<()> {
        let id = CMatrix::identity(self.dim, self.dim);
        for k in 0..=samples.max(1) {
            let x = k as f64 / samples.max(1) as f64;
            let s = self.evaluate(x);
            if s.nrows() != self.dim || s.ncols() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: s.nrows(),
                });
            }
            let defect = max_abs(&(s.adjoint() * &s - &id));
            if defect > UNITARITY_TOL {
                return Err(Error::PathInvariant(format!(
                    "loop {} is not unitary at x = {x}: defect {defect:e}",
                    self.label
                )));
            }
        }
        let gap = max_abs(&(self.evaluate(0.0) - self.evaluate(1.0)));
        if gap > UNITARITY_TOL {
            return Err(Error::PathInvariant(format!(
                "loop {} is not closed: |s(0) - s(1)| = {gap:e}",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingOptions {
    pub initial_points: usize,
    pub max_points: usize,
    /// Refinement stops once the integer is stable over three levels and the
    /// residual is at most this.
    pub target_residual: f64,
    /// Residuals above this after the refinement cap are failures.
    pub max_residual: f64,
}

impl Default for WindingOptions {
    fn default() -> Self {
        Self {
            initial_points: 64,
            max_points: 1 << 16,
            target_residual: 1e-8,
            max_residual: 1e-4,
        }
    }
}

/// `Tr(s* d)` as an entrywise sum.
fn trace_adjoint_product(s: &CMatrix, d: &CMatrix) -> Complex64 {
    s.iter().zip(d.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn winding_number(lp: &UnitaryLoop, quad_points: usize) -> Result<FlowReport> {
    winding_number_with(
        lp,
        &WindingOptions {
            initial_points: quad_points,
            ..WindingOptions::default()
        },
    )
}

/// `(1/2πi) ∫₀¹ Tr(s⁻¹ s′) dx` by the periodic trapezoid rule, with `s′`
/// analytic or from a five-point periodic stencil on the grid itself. The
/// grid is doubled until the rounded value is stable over three levels.
pub fn winding_number_with(lp: &UnitaryLoop, opts: &WindingOptions) -> Result<FlowReport> {
    lp.check_invariants(16)?;
    let mut m = opts.initial_points.max(8);
    if m > opts.max_points {
        return Err(Error::InvalidArgument(format!(
            "initial quadrature points {m} exceed the cap {}",
            opts.max_points
        )));
    }
    let analytic = lp.derivative.is_some();
    let eval_at = |m: usize, offset: f64| -> Vec<(CMatrix, Option<CMatrix>)> {
        (0..m)
            .into_par_iter()
            .map(|k| {
                let x = (k as f64 + offset) / m as f64;
                (lp.evaluate(x), lp.derivative(x))
            })
            .collect()
    };
    let mut samples = eval_at(m, 0.0);
    let mut evaluations = m;
    let mut history: Vec<i64> = Vec::new();

    loop {
        let h = 1.0 / m as f64;
        let sum: Complex64 = (0..m)
            .into_par_iter()
            .map(|k| {
                let (s, d) = &samples[k];
                match d {
                    Some(d) => trace_adjoint_product(s, d),
                    None => {
                        let at = |j: isize| &samples[(k as isize + j).rem_euclid(m as isize) as usize].0;
                        let d = (at(-2) - at(-1) * Complex64::from(8.0) + at(1) * Complex64::from(8.0) - at(2)) / Complex64::from(12.0 * h);
                        trace_adjoint_product(s, &d)
                    }
                }
            })
            .sum::<Complex64>()
            * h;
        // (1/2πi)·sum
        let value = sum.im / (2.0 * PI);
        let imaginary = -sum.re / (2.0 * PI);
        let integer = value.round() as i64;
        let residual = (value - integer as f64).abs();
        history.push(integer);
        let stable = history.len() >= 3 && history[history.len() - 3..].iter().all(|&k| k == integer);
        let done = stable && residual <= opts.target_residual;
        if done || 2 * m > opts.max_points {
            let mut diagnostics = Diagnostics {
                evaluations,
                quad_points: Some(m),
                refinement_depth: history.len() as u32 - 1,
                imaginary_part: Some(imaginary),
                ..Diagnostics::default()
            };
            if !analytic {
                diagnostics.warnings.push("derivative from five-point stencil".into());
            }
            if !done {
                diagnostics
                    .warnings
                    .push(format!("stopped at the {} point cap", opts.max_points));
            }
            let mut report = FlowReport::new(Method::Winding, value, FlowTerms::default(), diagnostics);
            if !done {
                report.diagnostics.flagged = true;
            }
            return report.require_residual(
                opts.max_residual.max(f64::MIN_POSITIVE),
                "loop undersampled or not differentiable",
            );
        }
        let fresh = eval_at(m, 0.5);
        evaluations += m;
        let mut merged = Vec::with_capacity(2 * m);
        for (old, new) in samples.into_iter().zip(fresh) {
            merged.push(old);
            merged.push(new);
        }
        samples = merged;
        m *= 2;
    }
}

/// The loop `x ↦ exp(πi(χ(D_t)+1))`, `t = a + x(b-a)`, for the involutive
/// spline of half-width `delta`. It is the identity at both ends when
/// `delta` is below both endpoint gaps.
pub fn flow_loop(path: &OperatorPath, delta: f64) -> Result<UnitaryLoop> {
    let chi = make_involutive_spline(delta)?;
    let (a, b) = path.interval();
    let p = path.clone();
    Ok(UnitaryLoop::new(path.dim(), move |x| {
        let decomp = eigh(&p.evaluate(a + x * (b - a)));
        let phases: Vec<Complex64> = decomp
            .eigenvalues
            .iter()
            .map(|&l| Complex64::cis(PI * (chi.chi(l) + 1.0)))
            .collect();
        let v = &decomp.eigenvectors;
        let mut scaled = v.clone();
        for (j, ph) in phases.iter().enumerate() {
            for z in scaled.column_mut(j).iter_mut() {
                *z *= ph;
            }
        }
        scaled * v.adjoint()
    })
    .with_label(format!("exp(pi i (chi(D)+1)) along {}", path.label())))
}

/// Smallest `|eigenvalue|` over the two endpoints.
fn endpoint_gap(path: &OperatorPath) -> (f64, f64) {
    let (a, b) = path.interval();
    let gap = |t: f64| {
        eigvalsh(&path.evaluate(t))
            .iter()
            .fold(f64::INFINITY, |acc, l| acc.min(l.abs()))
    };
    let (ga, gb) = (gap(a), gap(b));
    if ga <= gb {
        (a, ga)
    } else {
        (b, gb)
    }
}

/// Stopping residual for loops built from a path. The spline is only C², so
/// the trapezoid error falls like `h³` and `1e-8` costs several times more.
pub const FLOW_LOOP_TARGET_RESIDUAL: f64 = 1e-6;

/// Spectral flow as the winding number of `exp(πi(χ(D_t)+1))`. `delta`
/// defaults to half the smaller endpoint gap.
pub fn spectral_flow_via_winding(path: &OperatorPath, delta: Option<f64>) -> Result<FlowReport> {
    spectral_flow_via_winding_with(path, delta, None)
}

pub fn spectral_flow_via_winding_with(
    path: &OperatorPath,
    delta: Option<f64>,
    opts: Option<WindingOptions>,
) -> Result<FlowReport> {
    let (t_gap, gap) = endpoint_gap(path);
    if gap <= 1e-10 {
        return Err(Error::NonInvertibleEndpoint { t: t_gap, gap });
    }
    let delta = delta.unwrap_or(0.5 * gap);
    if !(delta > 0.0) || delta >= gap {
        return Err(Error::InvalidArgument(format!(
            "delta = {delta} must lie in (0, {gap}), the smaller endpoint gap"
        )));
    }
    let opts = opts.unwrap_or_else(|| {
        let speed = path.speed_bound(16).max(1e-12);
        let per_feature = 8.0 * speed * path.length() / (2.0 * delta);
        let defaults = WindingOptions::default();
        let start = (per_feature.ceil() as usize)
            .next_power_of_two()
            .clamp(64, defaults.max_points / 8);
        WindingOptions {
            initial_points: start,
            target_residual: FLOW_LOOP_TARGET_RESIDUAL,
            ..defaults
        }
    });
    let lp = flow_loop(path, delta)?;
    winding_number_with(&lp, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::path::reverse;
    use crate::funcalc::HermitianMatrix;

    #[test]
    fn scalar_winding() {
        let r = winding_number(&UnitaryLoop::diagonal(&[1]), 64).unwrap();
        assert_eq!(r.integer, 1);
        assert!(r.residual < 1e-12);
        let r = winding_number(&UnitaryLoop::constant(CMatrix::identity(3, 3)), 64).unwrap();
        assert_eq!(r.integer, 0);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn diagonal_windings_add() {
        for (k1, k2) in [(2, -3), (0, 3), (-1, -1)] {
            let r = winding_number(&UnitaryLoop::diagonal(&[k1, k2]), 64).unwrap();
            assert_eq!(r.integer, k1 + k2);
        }
    }

    #[test]
    fn stencil_route_converges() {
        let analytic = UnitaryLoop::diagonal(&[3, -2]);
        let f = analytic.eval.clone();
        let stencil = UnitaryLoop::new(2, move |x| f(x));
        let r = winding_number(&stencil, 64).unwrap();
        assert_eq!(r.integer, 1);
        assert!(r.residual < 1e-8, "{}", r.residual);
        assert!(r.diagnostics.quad_points.unwrap() <= 4096);
    }

    #[test]
    fn product_of_commuting_loops() {
        let s = UnitaryLoop::diagonal(&[2, 1]);
        let r = UnitaryLoop::diagonal(&[-1, 3]);
        let w = winding_number(&s.product(&r).unwrap(), 64).unwrap();
        assert_eq!(w.integer, 5);
    }

    #[test]
    fn invariants_enforced() {
        let not_unitary = UnitaryLoop::new(1, |_| CMatrix::from_element(1, 1, Complex64::new(2.0, 0.0)));
        assert!(winding_number(&not_unitary, 64).is_err());
        let open = UnitaryLoop::new(1, |x| CMatrix::from_element(1, 1, Complex64::cis(PI * x)));
        assert!(matches!(winding_number(&open, 64), Err(Error::PathInvariant(_))));
    }

    #[test]
    fn undersampled_loop_fails() {
        let opts = WindingOptions {
            initial_points: 8,
            max_points: 16,
            ..WindingOptions::default()
        };
        let f = UnitaryLoop::diagonal(&[7]).eval.clone();
        let lp = UnitaryLoop::new(1, move |x| f(x));
        assert!(matches!(
            winding_number_with(&lp, &opts),
            Err(Error::NotConverged { method: "winding", .. })
        ));
    }

    #[test]
    fn cap_before_stability_is_flagged() {
        let opts = WindingOptions {
            initial_points: 8,
            max_points: 8,
            ..WindingOptions::default()
        };
        let r = winding_number_with(&UnitaryLoop::diagonal(&[0, 0]), &opts).unwrap();
        assert_eq!(r.integer, 0);
        assert!(r.diagnostics.flagged);
    }

    fn line() -> OperatorPath {
        OperatorPath::new(1, (0.0, 1.0), |t| HermitianMatrix::from_real_diagonal(&[t - 0.25]))
    }

    #[test]
    fn flow_through_winding() {
        let r = spectral_flow_via_winding(&line(), Some(0.2)).unwrap();
        assert_eq!(r.integer, 1);
        assert!(r.residual < 1e-4);
        let r = spectral_flow_via_winding(&reverse(&line()), Some(0.2)).unwrap();
        assert_eq!(r.integer, -1);
        let c = OperatorPath::constant(HermitianMatrix::from_real_diagonal(&[0.5, -1.0]), (0.0, 1.0));
        let r = spectral_flow_via_winding(&c, None).unwrap();
        assert_eq!(r.integer, 0);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn loop_is_identity_at_ends() {
        let lp = flow_loop(&line(), 0.2).unwrap();
        let id = CMatrix::identity(1, 1);
        assert!(max_abs(&(lp.evaluate(0.0) - &id)) < 1e-14);
        assert!(max_abs(&(lp.evaluate(1.0) - &id)) < 1e-14);
    }

    #[test]
    fn delta_must_stay_below_gap() {
        assert!(matches!(
            spectral_flow_via_winding(&line(), Some(0.25)),
            Err(Error::InvalidArgument(_))
        ));
        let touching = OperatorPath::new(1, (0.0, 1.0), |t| HermitianMatrix::from_real_diagonal(&[t]));
        assert!(matches!(
            spectral_flow_via_winding(&touching, None),
            Err(Error::NonInvertibleEndpoint { .. })
        ));
    }
}
