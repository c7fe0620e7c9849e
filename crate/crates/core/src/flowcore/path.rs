use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::funcalc::{eigvalsh, CMatrix, HermitianMatrix};

type MatrixFn = Arc<dyn Fn(f64) -> HermitianMatrix + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative step of the central difference used when no analytic derivative
/// is attached.
pub const DERIVATIVE_STEP: f64 = 1e-5;

/// A unitary `U` with `U D_a U* = D_b`, optionally checked only on a block of
/// modes (the rest may carry known truncation defects).
#[derive(Debug, Clone)]
pub struct EndpointEquivalence {
    pub unitary: CMatrix,
    pub checked_modes: Option<Vec<usize>>,
}

impl EndpointEquivalence {
    pub fn exact(unitary: CMatrix) -> Self {
        Self {
            unitary,
            checked_modes: None,
        }
    }

    /// Largest entry of `U D_a U* - D_b`, restricted to the checked modes.
    pub fn defect(&self, start: &HermitianMatrix, end: &HermitianMatrix) -> f64 {
        let diff = start.conjugate_by(&self.unitary).matrix() - end.matrix();
        let modes: Vec<usize> = match &self.checked_modes {
            Some(m) => m.clone(),
            None => (0..diff.nrows()).collect(),
        };
        let mut worst = 0.0_f64;
        for &i in &modes {
            for &j in &modes {
                worst = worst.max(diff[(i, j)].norm());
            }
        }
        worst
    }
}

/// A C¹ family `t ↦ D_t` of Hermitian matrices on `[a, b]`.
///
/// Evaluation must be reentrant: the flow algorithms sample paths from
/// several threads.
#[derive(Clone)]
pub struct OperatorPath {
    dim: usize,
    interval: (f64, f64),
    eval: MatrixFn,
    derivative: Option<MatrixFn>,
    breakpoints: Vec<f64>,
    label: String,
    equivalence: Option<EndpointEquivalence>,
}

impl fmt::Debug for OperatorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorPath")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("interval", &self.interval)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl OperatorPath {
    pub fn new(
        dim: usize,
        interval: (f64, f64),
        eval: impl Fn(f64) -> HermitianMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            interval,
            eval: Arc::new(eval),
            derivative: None,
            breakpoints: Vec::new(),
            label: String::from("path"),
            equivalence: None,
        }
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> HermitianMatrix + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn without_derivative(mut self) -> Self {
        self.derivative = None;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Interior points where the path is only piecewise smooth.
    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn with_endpoint_equivalence(mut self, equivalence: EndpointEquivalence) -> Self {
        self.equivalence = Some(equivalence);
        self
    }

    /// `D_t = A + (t - t0)·B` on `interval`.
    pub fn affine(a: HermitianMatrix, b: HermitianMatrix, interval: (f64, f64)) -> Self {
        let t0 = interval.0;
        let dim = a.dim();
        let slope = b.clone();
        Self::new(dim, interval, move |t| &a + &(&b * (t - t0)))
            .with_derivative(move |_| slope.clone())
            .with_label("affine")
    }

    /// `D_t = Σ_k t^k C_k`.
    pub fn polynomial(coefficients: Vec<HermitianMatrix>, interval: (f64, f64)) -> Result<Self> {
        let dim = coefficients
            .first()
            .map(HermitianMatrix::dim)
            .ok_or_else(|| Error::InvalidArgument("polynomial path needs at least one coefficient".into()))?;
        if let Some(bad) = coefficients.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let coefficients = Arc::new(coefficients);
        let c2 = coefficients.clone();
        Ok(Self::new(dim, interval, move |t| {
            // Horner
            let mut acc = HermitianMatrix::zeros(dim);
            for c in coefficients.iter().rev() {
                acc = &(&acc * t) + c;
            }
            acc
        })
        .with_derivative(move |t| {
            let mut acc = HermitianMatrix::zeros(dim);
            for (k, c) in c2.iter().enumerate().skip(1).rev() {
                acc = &(&acc * t) + &(c * k as f64);
            }
            acc
        })
        .with_label("polynomial"))
    }

    pub fn constant(d: HermitianMatrix, interval: (f64, f64)) -> Self {
        let dim = d.dim();
        Self::new(dim, interval, move |_| d.clone())
            .with_derivative(move |_| HermitianMatrix::zeros(dim))
            .with_label("constant")
            .with_endpoint_equivalence(EndpointEquivalence::exact(CMatrix::identity(dim, dim)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn length(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn endpoint_equivalence(&self) -> Option<&EndpointEquivalence> {
        self.equivalence.as_ref()
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn evaluate(&self, t: f64) -> HermitianMatrix {
        (self.eval)(t)
    }

    pub fn start(&self) -> HermitianMatrix {
        self.evaluate(self.interval.0)
    }

    pub fn end(&self) -> HermitianMatrix {
        self.evaluate(self.interval.1)
    }

    /// Analytic derivative, if attached.
    pub fn derivative(&self, t: f64) -> Option<HermitianMatrix> {
        self.derivative.as_ref().map(|d| d(t))
    }

    /// Analytic derivative when available, otherwise a second-order
    /// difference with step `DERIVATIVE_STEP · (b - a)` (one-sided within a
    /// step of the ends).
    pub fn derivative_or_difference(&self, t: f64) -> HermitianMatrix {
        if let Some(d) = self.derivative(t) {
            return d;
        }
        let (a, b) = self.interval;
        let h = DERIVATIVE_STEP * (b - a);
        if t - h < a {
            let (d0, d1, d2) = (self.evaluate(t), self.evaluate(t + h), self.evaluate(t + 2.0 * h));
            &(&(&d1 * 4.0) - &(&d0 * 3.0)) - &d2
        } else if t + h > b {
            let (d0, d1, d2) = (self.evaluate(t), self.evaluate(t - h), self.evaluate(t - 2.0 * h));
            &(&(&d0 * 3.0) - &(&d1 * 4.0)) + &d2
        } else {
            &self.evaluate(t + h) - &self.evaluate(t - h)
        }
        .pipe(|m| &m * (0.5 / h))
    }

    /// Smallest `|eigenvalue|` at the two endpoints.
    pub fn endpoint_gaps(&self) -> (f64, f64) {
        let gap = |m: &HermitianMatrix| eigvalsh(m).iter().fold(f64::INFINITY, |acc, l| acc.min(l.abs()));
        (gap(&self.start()), gap(&self.end()))
    }

    /// Upper estimate of `max_t ‖Ḋ_t‖₂` from `samples` evenly spaced points,
    /// padded by 25%. Eigenvalues of the path are Lipschitz with this constant.
    pub fn speed_bound(&self, samples: usize) -> f64 {
        let (a, b) = self.interval;
        let n = samples.max(2);
        let max = (0..=n)
            .map(|k| {
                let t = a + (b - a) * k as f64 / n as f64;
                let d = self.derivative_or_difference(t);
                eigvalsh(&d).iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
            })
            .fold(0.0_f64, f64::max);
        1.25 * max
    }

    /// Checks the C¹ hypothesis of an attached derivative at `samples`
    /// seeded random points: `‖(D_{t+h} - D_{t-h})/2h - Ḋ_t‖ <= 1e-5 (1 + ‖Ḋ_t‖)`
    /// with `h = 1e-4`.
    pub fn check_derivative(&self, samples: usize, seed: u64) -> Result<()> {
        let Some(derivative) = &self.derivative else {
            return Ok(());
        };
        let (a, b) = self.interval;
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let t = rng.random_range((a + h)..(b - h));
            let fd = &(&self.evaluate(t + h) - &self.evaluate(t - h)) * (0.5 / h);
            let exact = derivative(t);
            let err = (&fd - &exact).norm();
            if err > 1e-5 * (1.0 + exact.norm()) {
                return Err(Error::PathInvariant(format!(
                    "derivative mismatch {err:e} at t = {t} on {}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

trait Pipe: Sized {
    fn pipe<R>(self, f: impl FnOnce(Self) -> R) -> R {
        f(self)
    }
}

impl<T> Pipe for T {}

/// `path1` followed by `path2`, on `[a1, b1 + (b2 - a2)]`.
pub fn concatenate(path1: &OperatorPath, path2: &OperatorPath) -> Result<OperatorPath> {
    if path1.dim != path2.dim {
        return Err(Error::DimensionMismatch {
            expected: path1.dim,
            found: path2.dim,
        });
    }
    let mismatch = path1.end().max_abs_diff(&path2.start());
    if mismatch > 1e-10 {
        return Err(Error::JunctionMismatch { mismatch });
    }
    let (a1, b1) = path1.interval;
    let (a2, b2) = path2.interval;
    let shift = b1 - a2;
    let (p1, p2) = (path1.clone(), path2.clone());
    let mut out = OperatorPath::new(path1.dim, (a1, b2 + shift), move |t| {
        if t <= b1 {
            p1.evaluate(t)
        } else {
            p2.evaluate(t - shift)
        }
    });
    if let (Some(d1), Some(d2)) = (path1.derivative.clone(), path2.derivative.clone()) {
        out = out.with_derivative(move |t| if t <= b1 { d1(t) } else { d2(t - shift) });
    }
    let mut breakpoints = path1.breakpoints.clone();
    breakpoints.push(b1);
    breakpoints.extend(path2.breakpoints.iter().map(|&t| t + shift));
    Ok(out
        .with_breakpoints(breakpoints)
        .with_label(format!("{} ++ {}", path1.label, path2.label)))
}

/// The same path on a subinterval `[c, d]` of `[a, b]`.
pub fn restrict(path: &OperatorPath, window: (f64, f64)) -> Result<OperatorPath> {
    let (a, b) = path.interval;
    let (c, d) = window;
    if !(a <= c && c < d && d <= b) {
        return Err(Error::InvalidArgument(format!(
            "[{c}, {d}] is not a subinterval of [{a}, {b}]"
        )));
    }
    let mut out = path.clone();
    out.interval = window;
    out.equivalence = None;
    out.breakpoints.retain(|&t| t > c && t < d);
    out.label = format!("{}|[{c}, {d}]", path.label);
    Ok(out)
}

/// `t ↦ D_{a + b - t}`.
pub fn reverse(path: &OperatorPath) -> OperatorPath {
    let (a, b) = path.interval;
    let p = path.clone();
    let mut out = OperatorPath::new(path.dim, path.interval, move |t| p.evaluate(a + b - t));
    if let Some(d) = path.derivative.clone() {
        out = out.with_derivative(move |t| -&d(a + b - t));
    }
    if let Some(eq) = &path.equivalence {
        out = out.with_endpoint_equivalence(EndpointEquivalence {
            unitary: eq.unitary.adjoint(),
            checked_modes: eq.checked_modes.clone(),
        });
    }
    out.with_breakpoints(path.breakpoints.iter().map(|&t| a + b - t).collect())
        .with_label(format!("reverse({})", path.label))
}

/// A monotone increasing C¹ change of parameter `σ: [c, d] → [a, b]`.
#[derive(Clone)]
pub struct Reparametrization {
    pub domain: (f64, f64),
    map: ScalarFn,
    derivative: Option<ScalarFn>,
}

impl Reparametrization {
    pub fn new(
        domain: (f64, f64),
        map: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: Option<ScalarFn>,
    ) -> Self {
        Self {
            domain,
            map: Arc::new(map),
            derivative,
        }
    }

    /// `σ(s) = a + (b - a)·((s - a)/(b - a))^k` on `[a, b]`.
    pub fn power(interval: (f64, f64), k: f64) -> Self {
        let (a, b) = interval;
        let w = b - a;
        Self {
            domain: interval,
            map: Arc::new(move |s| a + w * ((s - a) / w).powf(k)),
            derivative: Some(Arc::new(move |s| k * ((s - a) / w).powf(k - 1.0))),
        }
    }

    pub fn apply(&self, s: f64) -> f64 {
        (self.map)(s)
    }
}

/// `s ↦ D_{σ(s)}`.
pub fn reparametrize(path: &OperatorPath, sigma: &Reparametrization) -> Result<OperatorPath> {
    let (a, b) = path.interval;
    let (c, d) = sigma.domain;
    let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
    if (sigma.apply(c) - a).abs() > tol || (sigma.apply(d) - b).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "reparametrization maps [{c}, {d}] onto [{}, {}], not [{a}, {b}]",
            sigma.apply(c),
            sigma.apply(d)
        )));
    }
    let mut last = f64::NEG_INFINITY;
    for k in 0..=256 {
        let v = sigma.apply(c + (d - c) * k as f64 / 256.0);
        if v < last {
            return Err(Error::InvalidArgument("reparametrization is not monotone increasing".into()));
        }
        last = v;
    }
    let (p, map) = (path.clone(), sigma.map.clone());
    let mut out = OperatorPath::new(path.dim, sigma.domain, move |s| p.evaluate(map(s).clamp(a, b)));
    if let (Some(dp), Some(ds)) = (path.derivative.clone(), sigma.derivative.clone()) {
        let map = sigma.map.clone();
        out = out.with_derivative(move |s| &dp(map(s).clamp(a, b)) * ds(s));
    }
    if let Some(eq) = &path.equivalence {
        out = out.with_endpoint_equivalence(eq.clone());
    }
    Ok(out.with_label(format!("reparam({})", path.label)))
}

/// `D_t + ε·sin²(π(t-a)/(b-a))·H`: a perturbation that vanishes with its
/// derivative at both endpoints.
pub fn with_interior_bump(path: &OperatorPath, direction: &HermitianMatrix, epsilon: f64) -> Result<OperatorPath> {
    if direction.dim() != path.dim {
        return Err(Error::DimensionMismatch {
            expected: path.dim,
            found: direction.dim(),
        });
    }
    let (a, b) = path.interval;
    let w = b - a;
    let bump = move |t: f64| (std::f64::consts::PI * (t - a) / w).sin().powi(2);
    let bump_prime = move |t: f64| std::f64::consts::PI / w * (2.0 * std::f64::consts::PI * (t - a) / w).sin();
    let (p, h) = (path.clone(), direction * epsilon);
    let h2 = h.clone();
    let mut out = OperatorPath::new(path.dim, path.interval, move |t| &p.evaluate(t) + &(&h * bump(t)));
    if let Some(d) = path.derivative.clone() {
        out = out.with_derivative(move |t| &d(t) + &(&h2 * bump_prime(t)));
    }
    Ok(out
        .with_breakpoints(path.breakpoints.clone())
        .with_label(format!("bump({})", path.label)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_random_path, random_hermitian};

    fn scalar_path(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> OperatorPath {
        OperatorPath::new(1, (0.0, 1.0), move |t| HermitianMatrix::from_real_diagonal(&[f(t)]))
    }

    #[test]
    fn difference_derivative_near_ends() {
        let p = scalar_path(|t| t * t * t);
        for t in [0.0, 1e-7, 0.5, 1.0 - 1e-7, 1.0] {
            let d = p.derivative_or_difference(t).trace();
            assert!((d - 3.0 * t * t).abs() < 1e-8, "t = {t}: {d}");
        }
    }

    #[test]
    fn polynomial_path_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs: Vec<_> = (0..4).map(|_| random_hermitian(3, 1.0, &mut rng)).collect();
        let p = OperatorPath::polynomial(coeffs.clone(), (-1.0, 1.0)).unwrap();
        let t = 0.3;
        let direct = &(&(&coeffs[0] + &(&coeffs[1] * t)) + &(&coeffs[2] * (t * t))) + &(&coeffs[3] * (t * t * t));
        assert!(p.evaluate(t).max_abs_diff(&direct) < 1e-14);
        p.check_derivative(10, 0).unwrap();
        assert!(OperatorPath::polynomial(vec![], (0.0, 1.0)).is_err());
    }

    #[test]
    fn derivative_check_catches_wrong_derivative() {
        let p = scalar_path(|t| t * t).with_derivative(|t| HermitianMatrix::from_real_diagonal(&[t]));
        assert!(p.check_derivative(10, 1).is_err());
        let ok = make_random_path(4, 3, 2).path;
        ok.check_derivative(10, 1).unwrap();
    }

    #[test]
    fn concatenate_rejects_mismatch() {
        let p = scalar_path(|t| t - 0.25);
        let q = scalar_path(|t| t + 5.0);
        assert!(matches!(concatenate(&p, &q), Err(Error::JunctionMismatch { .. })));
        let r = reverse(&p);
        let loop_path = concatenate(&p, &r).unwrap();
        assert_eq!(loop_path.interval(), (0.0, 2.0));
        assert!((loop_path.evaluate(2.0).trace() + 0.25).abs() < 1e-15);
        assert_eq!(loop_path.breakpoints(), &[1.0]);
    }

    #[test]
    fn restriction_halves_concatenate_back() {
        let p = make_random_path(3, 12, 2).path;
        let left = restrict(&p, (0.0, 0.4)).unwrap();
        let right = restrict(&p, (0.4, 1.0)).unwrap();
        let joined = concatenate(&left, &right).unwrap();
        assert_eq!(joined.interval(), (0.0, 1.0));
        assert!(joined.evaluate(0.7).max_abs_diff(&p.evaluate(0.7)) < 1e-15);
        assert!(restrict(&p, (0.5, 1.5)).is_err());
    }

    #[test]
    fn reparametrize_checks_endpoints_and_monotonicity() {
        let p = scalar_path(|t| t - 0.25).with_derivative(|_| HermitianMatrix::identity(1));
        let sq = reparametrize(&p, &Reparametrization::power((0.0, 1.0), 2.0)).unwrap();
        assert!((sq.evaluate(0.5).trace() - 0.0).abs() < 1e-15);
        assert!((sq.derivative(0.5).unwrap().trace() - 1.0).abs() < 1e-15);
        let bad = Reparametrization::new((0.0, 1.0), |s| s * 0.5, None);
        assert!(reparametrize(&p, &bad).is_err());
        let wiggle = Reparametrization::new((0.0, 1.0), |s| s + 0.2 * (6.0 * std::f64::consts::PI * s).sin(), None);
        assert!(reparametrize(&p, &wiggle).is_err());
    }

    #[test]
    fn bump_vanishes_at_endpoints() {
        let base = make_random_path(3, 8, 2).path;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_hermitian(3, 1.0, &mut rng);
        let bumped = with_interior_bump(&base, &h, 0.3).unwrap();
        assert!(bumped.start().max_abs_diff(&base.start()) < 1e-15);
        assert!(bumped.end().max_abs_diff(&base.end()) < 1e-14);
        assert!(bumped.evaluate(0.5).max_abs_diff(&base.evaluate(0.5)) > 1e-3);
        bumped.check_derivative(10, 5).unwrap();
    }

    #[test]
    fn endpoint_equivalence_defect_on_block() {
        let start = HermitianMatrix::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let end = HermitianMatrix::from_real_diagonal(&[1.0, 2.0, 30.0]);
        let eq = EndpointEquivalence::exact(CMatrix::identity(3, 3));
        assert!((eq.defect(&start, &end) - 27.0).abs() < 1e-12);
        let block = EndpointEquivalence {
            unitary: CMatrix::identity(3, 3),
            checked_modes: Some(vec![0, 1]),
        };
        assert_eq!(block.defect(&start, &end), 0.0);
    }
}
