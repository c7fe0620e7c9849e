//! Normalizing functions: C¹ functions `χ` with `χ⁻¹(0) = {0}`, limits `∓1`
//! at `∓∞` and a nonnegative derivative vanishing at infinity with
//! `χ'(0) > 0`.
//!
//! Three families are provided:
//!
//! * `χ_p(x) = (2/C_p) ∫_0^x (1+z²)^{-(p+1)/2} dz`, polynomial decay;
//! * `χ^s(x) = erf(√s·x)`, Gaussian decay;
//! * an involutive spline that equals `sign(x)` outside `(-δ, δ)`, so that
//!   `χ(D)` is a symmetry whenever the spectrum of `D` avoids `(-δ, δ)`.

use std::f64::consts::{FRAC_2_SQRT_PI, PI};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate_adaptive, TailDecay};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How fast `1 - |χ|` and `χ'` decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayClass {
    /// Envelope `(1+x²)^{-p/2}`.
    Polynomial { p: f64 },
    /// Envelope `exp(-s x²)`.
    Gaussian { s: f64 },
    /// `χ = sign` outside `(-delta, delta)`.
    CompactlyFlat { delta: f64 },
}

impl DecayClass {
    pub fn envelope(&self, x: f64) -> f64 {
        match *self {
            DecayClass::Polynomial { p } => (1.0 + x * x).powf(-0.5 * p),
            DecayClass::Gaussian { s } => (-s * x * x).exp(),
            DecayClass::CompactlyFlat { delta } => {
                if x.abs() < delta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Width of the region where `χ'` is not negligible.
    pub fn feature_scale(&self) -> f64 {
        match *self {
            DecayClass::Polynomial { .. } => 1.0,
            DecayClass::Gaussian { s } => 1.0 / s.sqrt(),
            DecayClass::CompactlyFlat { delta } => delta,
        }
    }
}

#[derive(Clone)]
pub struct NormalizingFunction {
    chi: ScalarFn,
    chi_prime: ScalarFn,
    decay: DecayClass,
    derivative_tail: Option<TailDecay>,
    label: String,
}

impl fmt::Debug for NormalizingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormalizingFunction")
            .field("label", &self.label)
            .field("decay", &self.decay)
            .finish()
    }
}

impl NormalizingFunction {
    /// An arbitrary candidate; nothing is checked until [`validate_normalizing`].
    pub fn custom(
        label: impl Into<String>,
        decay: DecayClass,
        chi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        chi_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            chi: Arc::new(chi),
            chi_prime: Arc::new(chi_prime),
            decay,
            derivative_tail: None,
            label: label.into(),
        }
    }

    pub fn chi(&self, x: f64) -> f64 {
        (self.chi)(x)
    }

    pub fn chi_prime(&self, x: f64) -> f64 {
        (self.chi_prime)(x)
    }

    pub fn decay(&self) -> DecayClass {
        self.decay
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn feature_scale(&self) -> f64 {
        self.decay.feature_scale()
    }

    /// Certified decay of `χ'`, when known.
    pub fn derivative_tail(&self) -> Option<TailDecay> {
        self.derivative_tail
    }
}

/// `∫_0^{atan x} cos^{p-1}θ dθ`, the incomplete `χ_p` integral after `z = tan θ`.
fn cos_power_integral(p: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    match integrate_adaptive(|theta: f64| theta.cos().max(0.0).powf(p - 1.0), lo, hi, tol) {
        Ok(r) => r.value,
        Err(Error::Quadrature { value, .. }) => value,
        Err(_) => f64::NAN,
    }
}

const COS_POWER_PANELS: usize = 256;

/// Running sums of `∫ cos^{p-1}` over equal panels of `[0, π/2]`, so one
/// evaluation only integrates inside a single panel.
struct CosPowerTable {
    p: f64,
    width: f64,
    prefix: Vec<f64>,
}

impl CosPowerTable {
    fn new(p: f64) -> Self {
        let width = 0.5 * PI / COS_POWER_PANELS as f64;
        let mut prefix = Vec::with_capacity(COS_POWER_PANELS + 1);
        prefix.push(0.0);
        for k in 0..COS_POWER_PANELS {
            let lo = k as f64 * width;
            let piece = cos_power_integral(p, lo, lo + width, 1e-17);
            prefix.push(prefix[k] + piece);
        }
        Self { p, width, prefix }
    }

    fn total(&self) -> f64 {
        self.prefix[COS_POWER_PANELS]
    }

    /// `∫_0^upper cos^{p-1}` for `upper ∈ [0, π/2]`.
    fn integral(&self, upper: f64) -> f64 {
        let k = ((upper / self.width) as usize).min(COS_POWER_PANELS - 1);
        let lo = k as f64 * self.width;
        self.prefix[k] + cos_power_integral(self.p, lo, upper, 1e-16)
    }
}

/// `C_p = ∫_ℝ (1+z²)^{-(p+1)/2} dz`.
pub fn chi_p_constant(p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("chi_p needs p >= 1, got {p}")));
    }
    Ok(if p == 1.0 {
        PI
    } else if p == 2.0 {
        2.0
    } else {
        2.0 * CosPowerTable::new(p).total()
    })
}

pub fn make_chi_p(p: f64) -> Result<NormalizingFunction> {
    let c_p = chi_p_constant(p)?;
    let norm = 2.0 / c_p;
    let table = (p != 1.0 && p != 2.0).then(|| CosPowerTable::new(p));
    let chi: ScalarFn = if p == 1.0 {
        Arc::new(|x: f64| 2.0 / PI * x.atan())
    } else if p == 2.0 {
        Arc::new(|x: f64| {
            if x.is_infinite() {
                x.signum()
            } else {
                x / (1.0 + x * x).sqrt()
            }
        })
    } else {
        let table = table.expect("table built for p outside {1, 2}");
        let inv_total = 1.0 / table.total();
        Arc::new(move |x: f64| {
            if x.is_nan() {
                return f64::NAN;
            }
            x.signum() * inv_total * table.integral(x.abs().atan())
        })
    };
    let exponent = 0.5 * (p + 1.0);
    Ok(NormalizingFunction {
        chi,
        chi_prime: Arc::new(move |x: f64| norm * (1.0 + x * x).powf(-exponent)),
        decay: DecayClass::Polynomial { p },
        derivative_tail: Some(TailDecay::Polynomial {
            exponent: p + 1.0,
            constant: norm,
        }),
        label: format!("chi_p(p={p})"),
    })
}

/// `erf(√s·x)`. Twice the displayed `√(s/π)∫_0^x e^{-sz²}dz` normalization,
/// which is what makes the limits `±1`.
pub fn make_chi_theta(s: f64) -> Result<NormalizingFunction> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("chi_theta needs s > 0, got {s}")));
    }
    let root = s.sqrt();
    let peak = FRAC_2_SQRT_PI * root;
    Ok(NormalizingFunction {
        chi: Arc::new(move |x: f64| libm::erf(root * x)),
        chi_prime: Arc::new(move |x: f64| peak * (-s * x * x).exp()),
        decay: DecayClass::Gaussian { s },
        derivative_tail: Some(TailDecay::Gaussian { rate: s, constant: peak }),
        label: format!("chi_theta(s={s})"),
    })
}

/// `sign(x)` outside `(-δ, δ)`, and inside the odd quintic
/// `(15u - 10u³ + 3u⁵)/8` with `u = x/δ`. The join at `±δ` is C²,
/// and `χ' = 15/(8δ)·(1-u²)² ≥ 0`.
pub fn make_involutive_spline(delta: f64) -> Result<NormalizingFunction> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("spline needs delta > 0, got {delta}")));
    }
    Ok(NormalizingFunction {
        chi: Arc::new(move |x: f64| {
            let u = x / delta;
            if u >= 1.0 {
                1.0
            } else if u <= -1.0 {
                -1.0
            } else {
                let u2 = u * u;
                u * (15.0 - 10.0 * u2 + 3.0 * u2 * u2) / 8.0
            }
        }),
        chi_prime: Arc::new(move |x: f64| {
            let u = x / delta;
            if u.abs() >= 1.0 {
                0.0
            } else {
                let w = 1.0 - u * u;
                15.0 / (8.0 * delta) * w * w
            }
        }),
        decay: DecayClass::CompactlyFlat { delta },
        derivative_tail: Some(TailDecay::Compact { radius: delta }),
        label: format!("involutive(delta={delta})"),
    })
}

/// Config-level description of a normalizing function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    ChiP { p: f64 },
    ChiTheta { s: f64 },
    Involutive { delta: f64 },
}

impl FamilySpec {
    pub fn build(&self) -> Result<NormalizingFunction> {
        match *self {
            FamilySpec::ChiP { p } => make_chi_p(p),
            FamilySpec::ChiTheta { s } => make_chi_theta(s),
            FamilySpec::Involutive { delta } => make_involutive_spline(delta),
        }
    }
}

/// Sampling grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ValidationGrid {
    fn default() -> Self {
        Self {
            lo: -50.0,
            hi: 50.0,
            step: 0.01,
        }
    }
}

impl ValidationGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n)
            .map(|k| {
                let x = self.lo + k as f64 * self.step;
                // snap so that 0 is hit exactly on symmetric grids
                if x.abs() < 1e-9 * self.step {
                    0.0
                } else {
                    x
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Grid point where the check is closest to failing (or fails worst).
    pub worst_point: f64,
    pub worst_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub label: String,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Largest admissible `1 - |χ(±X)|` at the grid ends.
const LIMIT_TOL: f64 = 0.05;
const FD_STEP: f64 = 5e-7;
const FD_TOL: f64 = 1e-6;

/// Checks the defining properties of a normalizing function on a grid.
pub fn validate_normalizing(f: &NormalizingFunction, grid: &ValidationGrid) -> Result<ValidationReport> {
    if !(grid.lo <= -50.0 && grid.hi >= 50.0 && grid.step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "validation grid [{}, {}] step {} must cover [-50, 50]",
            grid.lo, grid.hi, grid.step
        )));
    }
    let xs = grid.points();
    let chi: Vec<f64> = xs.iter().map(|&x| f.chi(x)).collect();
    let dchi: Vec<f64> = xs.iter().map(|&x| f.chi_prime(x)).collect();
    let mut checks = Vec::new();

    // χ(0) = 0 and χ(x)·x > 0 away from 0.
    {
        let at_zero = f.chi(0.0).abs();
        let mut worst = (0.0, -at_zero);
        let mut passed = at_zero <= 1e-14;
        for (&x, &c) in xs.iter().zip(&chi) {
            if x == 0.0 {
                continue;
            }
            let signed = c * x.signum();
            if !(signed > 0.0) {
                passed = false;
            }
            if signed < worst.1 || (worst.1 >= 0.0 && signed.abs() < worst.1.abs() && passed) {
                worst = (x, signed);
            }
        }
        checks.push(CheckResult {
            name: "zero_set",
            passed,
            worst_point: worst.0,
            worst_value: worst.1,
        });
    }

    // χ(±X) → ±1, with the deficit shrinking between X/2 and X.
    {
        let (lo, hi) = (xs[0], *xs.last().unwrap());
        let deficit_hi = (1.0 - f.chi(hi)).abs();
        let deficit_lo = (1.0 + f.chi(lo)).abs();
        let mid_hi = (1.0 - f.chi(0.5 * hi)).abs();
        let mid_lo = (1.0 + f.chi(0.5 * lo)).abs();
        let passed = deficit_hi <= LIMIT_TOL
            && deficit_lo <= LIMIT_TOL
            && deficit_hi <= mid_hi + 1e-15
            && deficit_lo <= mid_lo + 1e-15;
        let (worst_point, worst_value) = if deficit_hi >= deficit_lo {
            (hi, deficit_hi)
        } else {
            (lo, deficit_lo)
        };
        checks.push(CheckResult {
            name: "limits",
            passed,
            worst_point,
            worst_value,
        });
    }

    let d0 = f.chi_prime(0.0);
    checks.push(CheckResult {
        name: "derivative_positive_at_zero",
        passed: d0 > 0.0,
        worst_point: 0.0,
        worst_value: d0,
    });

    {
        let (i, &min) = dchi
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let max = dchi.iter().fold(0.0_f64, |acc, &d| acc.max(d));
        checks.push(CheckResult {
            name: "derivative_nonnegative",
            passed: min >= -1e-14 * max.max(1.0),
            worst_point: xs[i],
            worst_value: min,
        });
        let ends = f.chi_prime(xs[0]).abs().max(f.chi_prime(*xs.last().unwrap()).abs());
        checks.push(CheckResult {
            name: "derivative_vanishes_at_infinity",
            passed: ends <= LIMIT_TOL * max,
            worst_point: if f.chi_prime(xs[0]).abs() >= f.chi_prime(*xs.last().unwrap()).abs() {
                xs[0]
            } else {
                *xs.last().unwrap()
            },
            worst_value: ends,
        });
    }

    {
        let mut worst = (0.0, 0.0_f64);
        for (&x, &d) in xs.iter().zip(&dchi) {
            let fd = (f.chi(x + FD_STEP) - f.chi(x - FD_STEP)) / (2.0 * FD_STEP);
            let err = (fd - d).abs();
            if !(err <= worst.1) {
                worst = (x, err);
            }
        }
        checks.push(CheckResult {
            name: "derivative_consistency",
            passed: worst.1 <= FD_TOL,
            worst_point: worst.0,
            worst_value: worst.1,
        });
    }

    Ok(ValidationReport {
        label: f.label.clone(),
        checks,
    })
}

/// Best constant `C` with `numerator(x) <= C · envelope(x)` on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub constant: f64,
    /// Ratio sup over `|x| ∈ [X/2, X]` divided by sup over `|x| ∈ [X/4, X/2]`.
    pub growth: f64,
}

impl EnvelopeFit {
    /// The bound holds with a uniform constant: no power-law growth of the
    /// ratio towards the grid ends.
    pub fn holds(&self) -> bool {
        self.constant.is_finite() && self.growth <= 1.25
    }
}

/// Points where the envelope is below this are skipped: both sides have
/// underflowed and the ratio carries no information.
const ENVELOPE_FLOOR: f64 = 1e-280;

pub fn fit_envelope(
    numerator: impl Fn(f64) -> f64,
    envelope: impl Fn(f64) -> f64,
    grid: &ValidationGrid,
) -> EnvelopeFit {
    let samples: Vec<(f64, f64)> = grid
        .points()
        .into_iter()
        .filter_map(|x| {
            let env = envelope(x);
            (env > ENVELOPE_FLOOR).then(|| (x.abs(), numerator(x).abs() / env))
        })
        .collect();
    let reach = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let mut constant = 0.0_f64;
    let mut outer = 0.0_f64;
    let mut inner = 0.0_f64;
    for &(ax, ratio) in &samples {
        constant = constant.max(ratio);
        if ax >= 0.5 * reach {
            outer = outer.max(ratio);
        } else if ax >= 0.25 * reach {
            inner = inner.max(ratio);
        }
    }
    let growth = if outer == 0.0 {
        0.0
    } else if inner == 0.0 {
        f64::INFINITY
    } else {
        outer / inner
    };
    EnvelopeFit { constant, growth }
}

/// Fit of `|χ²(x) - 1| <= C·envelope(x)` for the function's decay class.
pub fn limit_envelope(f: &NormalizingFunction, grid: &ValidationGrid) -> EnvelopeFit {
    let decay = f.decay();
    fit_envelope(
        |x| {
            let c = f.chi(x);
            (1.0 - c) * (1.0 + c)
        },
        |x| decay.envelope(x),
        grid,
    )
}

/// Fit of `(|x|+1)·χ'(x) <= C·envelope(x)`; for Gaussian decay the weight
/// is dropped and `χ'` itself is compared against `e^{-sx²}`.
pub fn derivative_envelope(f: &NormalizingFunction, grid: &ValidationGrid) -> EnvelopeFit {
    let decay = f.decay();
    let weighted = !matches!(decay, DecayClass::Gaussian { .. });
    fit_envelope(
        |x| if weighted { (x.abs() + 1.0) * f.chi_prime(x) } else { f.chi_prime(x) },
        |x| decay.envelope(x),
        grid,
    )
}

/// An even, nonnegative, integrable weight `ψ` for the unitarily-equivalent
/// endpoint formula.
#[derive(Clone)]
pub struct Density {
    f: ScalarFn,
    tail: TailDecay,
    label: String,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density")
            .field("label", &self.label)
            .field("tail", &self.tail)
            .finish()
    }
}

impl Density {
    pub fn new(label: impl Into<String>, tail: TailDecay, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            tail,
            label: label.into(),
        }
    }

    /// `(1+x²)^{-1}`, total mass `π`.
    pub fn cauchy() -> Self {
        Self::new(
            "cauchy",
            TailDecay::Polynomial {
                exponent: 2.0,
                constant: 1.0,
            },
            |x| 1.0 / (1.0 + x * x),
        )
    }

    /// `(1+x²)^{-q/2}` for `q > 1`.
    pub fn power(q: f64) -> Result<Self> {
        if !(q > 1.0) {
            return Err(Error::InvalidArgument(format!("(1+x^2)^(-q/2) needs q > 1, got {q}")));
        }
        Ok(Self::new(
            format!("power(q={q})"),
            TailDecay::Polynomial {
                exponent: q,
                constant: 1.0,
            },
            move |x| (1.0 + x * x).powf(-0.5 * q),
        ))
    }

    /// `exp(-s x²)`.
    pub fn gaussian(s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("gaussian weight needs s > 0, got {s}")));
        }
        Ok(Self::new(
            format!("gaussian(s={s})"),
            TailDecay::Gaussian { rate: s, constant: 1.0 },
            move |x| (-s * x * x).exp(),
        ))
    }

    /// `ψ = χ'` for a normalizing function with known derivative decay.
    pub fn from_normalizing(chi: &NormalizingFunction) -> Result<Self> {
        let tail = chi.derivative_tail().ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no certified derivative decay", chi.label()))
        })?;
        let g = chi.chi_prime.clone();
        Ok(Self {
            f: g,
            tail,
            label: format!("d/dx {}", chi.label()),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn tail(&self) -> TailDecay {
        self.tail
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}
