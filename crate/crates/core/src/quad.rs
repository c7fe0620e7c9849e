//! Adaptive Simpson quadrature, certified improper integrals and central
//! differences of matrix paths.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::OperatorPath;
use crate::funcalc::HermitianMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct QuadratureOptions {
    /// Absolute tolerance on the integral.
    pub tol: f64,
    /// Maximum bisection depth below an initial panel.
    pub max_depth: u32,
    pub max_evaluations: usize,
    /// Number of equal panels the interval is split into before adapting.
    pub initial_panels: usize,
    /// Extra points (inside the interval) that become panel boundaries.
    pub breakpoints: Vec<f64>,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_depth: 50,
            max_evaluations: 2_000_000,
            initial_panels: 1,
            breakpoints: Vec::new(),
        }
    }
}

impl QuadratureOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

/// `∫_a^b f` by adaptive Simpson with the default options.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<QuadratureResult> {
    integrate_adaptive_with(f, a, b, &QuadratureOptions::with_tol(tol))
}

/// Adaptive Simpson with Richardson correction.
///
/// A panel is accepted when its two half-panel Simpson sums differ from the
/// whole-panel sum by at most `15·tol_panel`; the panel tolerance is halved
/// on every split. The reported error estimate is the sum of
/// `|S_halves - S_whole| / 15` over accepted panels.
pub fn integrate_adaptive_with<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    opts: &QuadratureOptions,
) -> Result<QuadratureResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if a == b {
        return Ok(QuadratureResult {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let mut nodes: Vec<f64> = (0..=opts.initial_panels.max(1))
        .map(|k| lo + (hi - lo) * k as f64 / opts.initial_panels.max(1) as f64)
        .collect();
    nodes.extend(opts.breakpoints.iter().copied().filter(|&x| x > lo && x < hi));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    *nodes.last_mut().unwrap() = hi;

    let evaluations = Cell::new(0usize);
    let eval = |x: f64| {
        evaluations.set(evaluations.get() + 1);
        f(x)
    };

    let total_width = hi - lo;
    let mut stack = Vec::new();
    let mut fvals: Vec<f64> = nodes.iter().map(|&x| eval(x)).collect();
    for (i, w) in nodes.windows(2).enumerate() {
        let (pa, pb) = (w[0], w[1]);
        let fm = eval(0.5 * (pa + pb));
        let (fa, fb) = (fvals[i], fvals[i + 1]);
        stack.push(Panel {
            a: pa,
            b: pb,
            fa,
            fm,
            fb,
            whole: (pb - pa) / 6.0 * (fa + 4.0 * fm + fb),
            tol: opts.tol * (pb - pa) / total_width,
            depth: 0,
        });
    }
    fvals.clear();

    let mut value = 0.0;
    let mut error = 0.0;
    let mut capped = false;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = eval(lm);
        let frm = eval(rm);
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        if !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "integrand is not finite on [{}, {}]",
                p.a, p.b
            )));
        }
        let at_cap = p.depth >= opts.max_depth || evaluations.get() >= opts.max_evaluations;
        if delta.abs() <= 15.0 * p.tol || at_cap {
            capped |= at_cap && delta.abs() > 15.0 * p.tol;
            value += left + right + delta / 15.0;
            error += delta.abs() / 15.0;
        } else {
            let tol = 0.5 * p.tol;
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                tol,
                depth: p.depth + 1,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol,
                depth: p.depth + 1,
            });
        }
    }

    let evaluations = evaluations.get();
    let result = QuadratureResult {
        value: sign * value,
        error_estimate: error,
        evaluations,
    };
    if capped && error > opts.tol {
        return Err(Error::Quadrature {
            value: result.value,
            error_estimate: error,
            evaluations,
            tolerance: opts.tol,
        });
    }
    Ok(result)
}

/// Certified decay of an integrand, used to truncate the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailDecay {
    /// `|f(x)| <= constant · |x|^(-exponent)` for `|x| >= 1`.
    Polynomial { exponent: f64, constant: f64 },
    /// `|f(x)| <= constant · exp(-rate · x²)` everywhere.
    Gaussian { rate: f64, constant: f64 },
    /// `f(x) = 0` for `|x| >= radius`.
    Compact { radius: f64 },
}

impl TailDecay {
    /// Upper bound for `∫_{|x|>cutoff} |f|`.
    pub fn tail_bound(&self, cutoff: f64) -> f64 {
        match *self {
            TailDecay::Polynomial { exponent, constant } => {
                2.0 * constant * cutoff.powf(1.0 - exponent) / (exponent - 1.0)
            }
            TailDecay::Gaussian { rate, constant } => {
                // ∫_X^∞ e^{-s x²} dx <= e^{-s X²} / (2 s X)
                2.0 * constant * (-rate * cutoff * cutoff).exp() / (2.0 * rate * cutoff)
            }
            TailDecay::Compact { radius } => {
                if cutoff >= radius {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TailDecay::Polynomial { exponent, constant } => {
                if !(exponent > 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial decay with exponent {exponent} <= 1 is not integrable"
                    )));
                }
                if !(constant >= 0.0 && constant.is_finite()) {
                    return Err(Error::InvalidArgument(format!("invalid decay constant {constant}")));
                }
            }
            TailDecay::Gaussian { rate, constant } => {
                if !(rate > 0.0) {
                    return Err(Error::InvalidArgument(format!("Gaussian decay rate must be positive, got {rate}")));
                }
                if !(constant >= 0.0 && constant.is_finite()) {
                    return Err(Error::InvalidArgument(format!("invalid decay constant {constant}")));
                }
            }
            TailDecay::Compact { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidArgument(format!("invalid support radius {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Smallest cutoff `X >= 1` whose tail bound is at most `budget`.
    pub fn cutoff_for(&self, budget: f64) -> Result<f64> {
        self.validate()?;
        let x = match *self {
            TailDecay::Polynomial { exponent, constant } => {
                let x = (2.0 * constant / ((exponent - 1.0) * budget)).powf(1.0 / (exponent - 1.0));
                x.max(1.0)
            }
            TailDecay::Gaussian { .. } => {
                // the bound is decreasing in x; bisect for bound(x) = budget
                let (mut lo, mut hi) = (1.0, 2.0);
                if self.tail_bound(lo) <= budget {
                    hi = lo;
                }
                while self.tail_bound(hi) > budget && hi < 1e300 {
                    lo = hi;
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.tail_bound(mid) > budget {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
            TailDecay::Compact { radius } => radius,
        };
        if !x.is_finite() || x > 1e300 {
            return Err(Error::InvalidArgument(format!(
                "tail decays too slowly to reach tolerance {budget:e}"
            )));
        }
        Ok(x)
    }
}

/// `∫_ℝ f` over a window `[-X, X]` whose certified tail bound is `tol/2`.
///
/// The window itself is integrated to `tol/100`, so the omitted tail, which
/// shrinks steadily with `tol`, dominates the error. Polynomially decaying
/// integrands are integrated on `|x| > 1` after the substitution `x = 1/u`,
/// which keeps the far window cheap.
pub fn improper_integral<F: Fn(f64) -> f64>(f: F, decay: TailDecay, tol: f64) -> Result<QuadratureResult> {
    let cutoff = decay.cutoff_for(0.5 * tol)?;
    let tail = decay.tail_bound(cutoff);
    let window_tol = 0.01 * tol;
    let mut result = match decay {
        TailDecay::Polynomial { .. } if cutoff > 1.0 => {
            let piece_tol = window_tol / 3.0;
            let core = integrate_adaptive(&f, -1.0, 1.0, piece_tol)?;
            let lo = 1.0 / cutoff;
            let right = integrate_adaptive(|u: f64| f(1.0 / u) / (u * u), lo, 1.0, piece_tol)?;
            let left = integrate_adaptive(|u: f64| f(-1.0 / u) / (u * u), lo, 1.0, piece_tol)?;
            QuadratureResult {
                value: core.value + right.value + left.value,
                error_estimate: core.error_estimate + right.error_estimate + left.error_estimate,
                evaluations: core.evaluations + right.evaluations + left.evaluations,
            }
        }
        _ => {
            let opts = QuadratureOptions {
                tol: window_tol,
                initial_panels: 8,
                ..QuadratureOptions::default()
            };
            integrate_adaptive_with(&f, -cutoff, cutoff, &opts)?
        }
    };
    result.error_estimate += tail;
    Ok(result)
}

/// `(D_{t+h} - D_{t-h}) / 2h`.
pub fn central_difference(path: &OperatorPath, t: f64, h: f64) -> Result<HermitianMatrix> {
    if !(h >= 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "difference step {h:e} is below 1e-12; cancellation would dominate"
        )));
    }
    let (a, b) = path.interval();
    if t - h < a || t + h > b {
        return Err(Error::InvalidArgument(format!(
            "[{}, {}] leaves the path interval [{a}, {b}]",
            t - h,
            t + h
        )));
    }
    let forward = path.evaluate(t + h);
    let backward = path.evaluate(t - h);
    Ok(&(&forward - &backward) * (0.5 / h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_random_path, random_hermitian, random_unitary};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let r = integrate_adaptive(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, 1.0 / 3.0, epsilon = 1e-12);
        assert!(r.error_estimate <= 1e-12);
        let r = integrate_adaptive(|x| 4.0 * x * x * x - x, -1.0, 2.0, 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, 15.0 - 1.5, epsilon = 1e-12);
        assert!(r.error_estimate <= 1e-12);
    }

    #[test]
    fn reversed_bounds_negate() {
        let f = |x: f64| x.sin();
        let fwd = integrate_adaptive(f, 0.0, 2.0, 1e-10).unwrap();
        let bwd = integrate_adaptive(f, 2.0, 0.0, 1e-10).unwrap();
        assert_eq!(fwd.value, -bwd.value);
        assert_abs_diff_eq!(fwd.value, 1.0 - 2.0_f64.cos(), epsilon = 1e-10);
    }

    #[test]
    fn cauchy_density_over_real_line() {
        let r = improper_integral(
            |z| 1.0 / (1.0 + z * z),
            TailDecay::Polynomial { exponent: 2.0, constant: 1.0 },
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value, PI, epsilon = 1e-10);
    }

    #[test]
    fn gaussian_over_real_line() {
        let r = improper_integral(
            |z| (-z * z).exp(),
            TailDecay::Gaussian { rate: 1.0, constant: 1.0 },
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value, PI.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn chi2_density_integrates_to_two() {
        let r = improper_integral(
            |z| (1.0 + z * z).powf(-1.5),
            TailDecay::Polynomial { exponent: 3.0, constant: 1.0 },
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn divergent_polynomial_tail_rejected() {
        let r = improper_integral(
            |z| 1.0 / (1.0 + z.abs()),
            TailDecay::Polynomial { exponent: 1.0, constant: 1.0 },
            1e-6,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn subdivision_cap_reports_failure() {
        let opts = QuadratureOptions {
            tol: 1e-14,
            max_depth: 3,
            ..QuadratureOptions::default()
        };
        let r = integrate_adaptive_with(|x: f64| x.abs().sqrt(), -1.0, 1.0, &opts);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn deterministic_and_tol_monotone() {
        let cases: [(Box<dyn Fn(f64) -> f64>, TailDecay, f64); 2] = [
            (Box::new(|z: f64| 1.0 / (1.0 + z * z)), TailDecay::Polynomial { exponent: 2.0, constant: 1.0 }, PI),
            (Box::new(|z: f64| (-z * z).exp()), TailDecay::Gaussian { rate: 1.0, constant: 1.0 }, PI.sqrt()),
        ];
        for (f, decay, reference) in &cases {
            let mut last = f64::INFINITY;
            let mut tol = 1e-4;
            while tol >= 1e-12 {
                let a = improper_integral(f, *decay, tol).unwrap();
                let b = improper_integral(f, *decay, tol).unwrap();
                assert_eq!(a, b);
                let err = (a.value - reference).abs();
                assert!(err <= last, "tol {tol:e}: error {err:e} grew past {last:e}");
                last = err;
                tol *= 0.5;
            }
        }
        let mut last = f64::INFINITY;
        let mut tol = 1e-4;
        while tol >= 1e-12 {
            let err = (integrate_adaptive(|x| x * x, 0.0, 1.0, tol).unwrap().value - 1.0 / 3.0).abs();
            assert!(err <= last);
            last = err;
            tol *= 0.5;
        }
    }

    #[test]
    fn central_difference_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_hermitian(4, 1.0, &mut rng);
        let b = random_hermitian(4, 1.0, &mut rng);
        let (a2, b2) = (a.clone(), b.clone());
        let affine = OperatorPath::new(4, (0.0, 1.0), move |t| &a2 + &(&b2 * t));
        for h in [1e-3, 1e-5, 0.2] {
            let d = central_difference(&affine, 0.5, h).unwrap();
            assert!(d.max_abs_diff(&b) < 1e-9, "h = {h}");
        }

        let b3 = b.clone();
        let quadratic = OperatorPath::new(4, (-1.0, 1.0), move |t| &b3 * (t * t));
        let h = 1e-3;
        let d = central_difference(&quadratic, 0.0, h).unwrap();
        assert!(d.norm() <= h * h * b.norm());

        let scenario = make_random_path(6, 42, 3);
        for &t in &[0.1, 0.37, 0.9] {
            let fd = central_difference(&scenario.path, t, 1e-4).unwrap();
            let exact = scenario.path.derivative(t).unwrap();
            assert!(fd.max_abs_diff(&exact) < 1e-6);
        }

        assert!(central_difference(&affine, 0.5, 1e-13).is_err());
        assert!(central_difference(&affine, 0.99, 0.1).is_err());
    }

    #[test]
    fn central_difference_commutes_with_constant_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_unitary(5, &mut rng);
        let scenario = make_random_path(5, 7, 2);
        let p = scenario.path.clone();
        let u2 = u.clone();
        let conj = OperatorPath::new(5, p.interval(), move |t| p.evaluate(t).conjugate_by(&u2));
        let lhs = central_difference(&conj, 0.4, 1e-4).unwrap();
        let rhs = central_difference(&scenario.path, 0.4, 1e-4).unwrap().conjugate_by(&u);
        assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }
}
