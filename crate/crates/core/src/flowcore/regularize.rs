use super::path::OperatorPath;
use crate::error::{Error, Result};
use crate::funcalc::{eigvalsh, HermitianMatrix, ZERO_EIGENVALUE_TOL};

fn bump(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

fn bump_prime(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp() / (x * x)
    } else {
        0.0
    }
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`, C^∞ in between.
pub fn smooth_step(x: f64) -> f64 {
    let (f, g) = (bump(x), bump(1.0 - x));
    f / (f + g)
}

pub fn smooth_step_prime(x: f64) -> f64 {
    let (f, g) = (bump(x), bump(1.0 - x));
    let (df, dg) = (bump_prime(x), -bump_prime(1.0 - x));
    let s = f + g;
    (df * g - f * dg) / (s * s)
}

/// Endpoint eigenvalues in `[-epsilon, 0)`, ignoring those within the zero
/// tolerance (which the shift moves to `+epsilon`).
fn blocking_eigenvalues(d: &HermitianMatrix, epsilon: f64) -> Vec<f64> {
    let eig = eigvalsh(d);
    let scale = eig.iter().fold(1.0_f64, |acc, l| acc.max(l.abs()));
    let zero = ZERO_EIGENVALUE_TOL * scale;
    eig.into_iter()
        .filter(|&l| l < -zero && l >= -epsilon)
        .collect()
}

/// Extends the path to `[a-1, b+1]` with flaps `D_a + φ(t)·I` and
/// `D_b + φ(t)·I`, where `φ` rises smoothly from 0 near the junctions to
/// `epsilon` at the outer ends. The new endpoints `D_a + ε` and `D_b + ε`
/// are invertible when no endpoint eigenvalue lies in `[-ε, 0)`.
pub fn endpoint_regularize(path: &OperatorPath, epsilon: f64) -> Result<OperatorPath> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (a, b) = path.interval();
    for (t, d) in [(a, path.start()), (b, path.end())] {
        let blocking = blocking_eigenvalues(&d, epsilon);
        if !blocking.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {epsilon} would move the eigenvalue(s) {blocking:?} at t = {t} onto zero"
            )));
        }
    }
    let (start, end) = (path.start(), path.end());
    let inner = path.clone();
    // support of the flap shift: [a-1, a-½] and [b+½, b+1]
    let left = move |t: f64| epsilon * smooth_step(2.0 * (a - 0.5 - t));
    let right = move |t: f64| epsilon * smooth_step(2.0 * (t - b - 0.5));
    let dim = path.dim();
    let mut out = OperatorPath::new(dim, (a - 1.0, b + 1.0), move |t| {
        if t < a {
            start.shifted(left(t))
        } else if t > b {
            end.shifted(right(t))
        } else {
            inner.evaluate(t)
        }
    });
    let inner = path.clone();
    let has_derivative = path.has_derivative();
    out = out.with_derivative(move |t| {
        if t < a {
            &HermitianMatrix::identity(dim) * (-2.0 * epsilon * smooth_step_prime(2.0 * (a - 0.5 - t)))
        } else if t > b {
            &HermitianMatrix::identity(dim) * (2.0 * epsilon * smooth_step_prime(2.0 * (t - b - 0.5)))
        } else if has_derivative {
            inner.derivative(t).expect("derivative attached")
        } else {
            inner.derivative_or_difference(t)
        }
    });
    let mut breakpoints = vec![a - 0.5, a];
    breakpoints.extend(path.breakpoints().iter().copied());
    breakpoints.extend([b, b + 0.5]);
    Ok(out
        .with_breakpoints(breakpoints)
        .with_label(format!("regularized({})", path.label())))
}

/// Scans `epsilon = scale·2^{-k}`, `k = 0..=30`, and regularizes with the
/// first admissible value.
pub fn endpoint_regularize_auto(path: &OperatorPath) -> Result<(OperatorPath, f64)> {
    let (start, end) = (eigvalsh(&path.start()), eigvalsh(&path.end()));
    let scale = start
        .iter()
        .chain(&end)
        .fold(1.0_f64, |acc, l| acc.max(l.abs()));
    for k in 0..=30 {
        let epsilon = scale * 0.5_f64.powi(k) * 0.5;
        if blocking_eigenvalues(&path.start(), epsilon).is_empty()
            && blocking_eigenvalues(&path.end(), epsilon).is_empty()
        {
            return Ok((endpoint_regularize(path, epsilon)?, epsilon));
        }
    }
    Err(Error::NoAdmissibleEpsilon(format!(
        "every epsilon in [{:e}, {:e}] hits a negative endpoint eigenvalue; supply epsilon explicitly",
        scale * 0.5_f64.powi(31),
        scale * 0.5
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::crossings::{spectral_flow_crossings, CrossingOptions};
    use crate::models::make_random_path;

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for x in [0.1, 0.3, 0.7, 0.9] {
            let fd = (smooth_step(x + 1e-6) - smooth_step(x - 1e-6)) / 2e-6;
            assert!((fd - smooth_step_prime(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_path_gets_invertible_ends() {
        let p = OperatorPath::constant(HermitianMatrix::zeros(1), (0.0, 1.0));
        let r = endpoint_regularize(&p, 0.5).unwrap();
        assert_eq!(r.interval(), (-1.0, 2.0));
        assert!((r.start().trace() - 0.5).abs() < 1e-15);
        assert!((r.end().trace() - 0.5).abs() < 1e-15);
        assert_eq!(r.evaluate(-0.4).trace(), 0.0);
        let flow = spectral_flow_crossings(&r, &CrossingOptions::default()).unwrap();
        assert_eq!(flow.integer, 0);
        r.check_derivative(10, 3).unwrap();
    }

    #[test]
    fn invertible_ends_keep_flow() {
        let s = make_random_path(5, 11, 2);
        let before = spectral_flow_crossings(&s.path, &CrossingOptions::default()).unwrap();
        let (r, eps) = endpoint_regularize_auto(&s.path).unwrap();
        assert!(eps > 0.0);
        let after = spectral_flow_crossings(&r, &CrossingOptions::default()).unwrap();
        assert_eq!(before.integer, after.integer);
    }

    #[test]
    fn epsilon_beyond_gap_rejected() {
        let p = OperatorPath::constant(HermitianMatrix::from_real_diagonal(&[-0.1, 2.0]), (0.0, 1.0));
        assert!(endpoint_regularize(&p, 0.5).is_err());
        assert!(endpoint_regularize(&p, 0.05).is_ok());
    }

    #[test]
    fn entangled_kernel_has_no_epsilon() {
        let p = OperatorPath::constant(HermitianMatrix::from_real_diagonal(&[-3e-10, 1.0]), (0.0, 1.0));
        assert!(matches!(endpoint_regularize_auto(&p), Err(Error::NoAdmissibleEpsilon(_))));
    }
}
