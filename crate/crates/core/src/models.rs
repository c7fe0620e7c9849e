//! Scenario generators: random matrix paths, paths with prescribed
//! crossings, truncated model operators, and unitary conjugations.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowcore::{EndpointEquivalence, OperatorPath};
use crate::funcalc::{apply_function, eigh, eigvalsh, schatten_norm, CMatrix, HermitianMatrix, Projection};

/// Summability class of the model operator. The parameter is a threshold:
/// the condition holds for every exponent (resp. every `s`) strictly above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summability {
    Finite,
    PSummable { p: f64 },
    ThetaSummable { s: f64 },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: OperatorPath,
    pub expected_flow: Option<i64>,
    pub provenance: String,
    pub truncation_dim: Option<usize>,
    pub summability: Summability,
}

fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// GUE sample `scale·(G + G*)/2` with standard complex Gaussian `G`.
pub fn random_hermitian(dim: usize, scale: f64, rng: &mut impl Rng) -> HermitianMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let h = (&g + g.adjoint()) * Complex64::from(0.5 * scale);
    HermitianMatrix::from_hermitian_part(&h)
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for z in q.column_mut(j).iter_mut() {
            *z *= phase;
        }
    }
    q
}

/// Projection onto the span of `rank` Haar-random orthonormal vectors.
pub fn random_projection(dim: usize, rank: usize, rng: &mut impl Rng) -> Projection {
    assert!(rank <= dim, "rank {rank} exceeds dimension {dim}");
    let u = random_unitary(dim, rng);
    Projection::onto_columns(&u.columns(0, rank).into_owned()).expect("orthonormal columns span a projection")
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |acc, l| acc.min(l.abs()))
}

/// Endpoint gap the random generator aims for.
pub const RANDOM_PATH_GAP: f64 = 0.1;

/// `D_t = c + Σ_{k≤degree} (cos(kπt) A_k + sin(kπt) B_k)` on `[0, 1]` with
/// GUE coefficients of scale `1/√dim`; the scalar shift `c` is the smallest
/// multiple of 0.01 (often zero) that gives both endpoints a gap of at least
/// `RANDOM_PATH_GAP`.
///
/// # Panics
/// If `dim` or `degree` is zero.
pub fn make_random_path(dim: usize, seed: u64, degree: usize) -> Scenario {
    assert!(dim >= 1 && degree >= 1, "random path needs dim >= 1 and degree >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut cos_terms = Vec::with_capacity(degree + 1);
    let mut sin_terms = Vec::with_capacity(degree + 1);
    for _ in 0..=degree {
        cos_terms.push(random_hermitian(dim, scale, &mut rng).into_matrix());
        sin_terms.push(random_hermitian(dim, scale, &mut rng).into_matrix());
    }
    let base = move |t: f64, cos_terms: &[CMatrix], sin_terms: &[CMatrix]| {
        let mut acc = CMatrix::zeros(dim, dim);
        for (k, (a, b)) in cos_terms.iter().zip(sin_terms).enumerate() {
            let w = k as f64 * PI;
            acc += a * Complex64::from((w * t).cos());
            if k > 0 {
                acc += b * Complex64::from((w * t).sin());
            }
        }
        acc
    };
    let ends = [
        eigvalsh(&HermitianMatrix::from_hermitian_part(&base(0.0, &cos_terms, &sin_terms))),
        eigvalsh(&HermitianMatrix::from_hermitian_part(&base(1.0, &cos_terms, &sin_terms))),
    ];
    let gap_with = |c: f64| {
        ends.iter()
            .map(|e| min_abs(&e.iter().map(|l| l + c).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min)
    };
    let mut shift = 0.0;
    if gap_with(0.0) < RANDOM_PATH_GAP {
        let candidates = (1..=200).flat_map(|j| [0.01 * j as f64, -0.01 * j as f64]);
        let mut best = (gap_with(0.0), 0.0);
        for c in candidates {
            let g = gap_with(c);
            if g >= RANDOM_PATH_GAP {
                best = (g, c);
                break;
            }
            if g > best.0 {
                best = (g, c);
            }
        }
        shift = best.1;
    }
    let (cos_terms, sin_terms) = (Arc::new(cos_terms), Arc::new(sin_terms));
    let (c2, s2) = (cos_terms.clone(), sin_terms.clone());
    let path = OperatorPath::new(dim, (0.0, 1.0), move |t| {
        HermitianMatrix::from_hermitian_part(&base(t, &cos_terms, &sin_terms)).shifted(shift)
    })
    .with_derivative(move |t| {
        let mut acc = CMatrix::zeros(dim, dim);
        for (k, (a, b)) in c2.iter().zip(s2.iter()).enumerate().skip(1) {
            let w = k as f64 * PI;
            acc += a * Complex64::from(-w * (w * t).sin());
            acc += b * Complex64::from(w * (w * t).cos());
        }
        HermitianMatrix::from_hermitian_part(&acc)
    })
    .with_label(format!("random(dim={dim}, seed={seed}, degree={degree})"));
    Scenario {
        path,
        expected_flow: None,
        provenance: format!("random trigonometric path, endpoint shift {shift}; flow from the crossing oracle"),
        truncation_dim: None,
        summability: Summability::Finite,
    }
}

/// Inert branches added to every crossing path.
const INERT_BRANCHES: [f64; 2] = [-2.0, 2.0];

/// Diagonal path on `[0, 1]` with branch `direction·(t - t_i)` per requested
/// crossing and two constant branches.
pub fn make_crossing_path(crossings: &[(f64, i32)]) -> Result<Scenario> {
    for (k, &(t, dir)) in crossings.iter().enumerate() {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!("crossing at t = {t} is not interior to (0, 1)")));
        }
        if dir != 1 && dir != -1 {
            return Err(Error::InvalidArgument(format!("direction must be +1 or -1, got {dir}")));
        }
        if crossings[..k].iter().any(|&(s, _)| s == t) {
            return Err(Error::InvalidArgument(format!("crossing time {t} repeated")));
        }
    }
    let branches: Arc<Vec<(f64, f64)>> = Arc::new(crossings.iter().map(|&(t, d)| (t, d as f64)).collect());
    let dim = branches.len() + INERT_BRANCHES.len();
    let b2 = branches.clone();
    let path = OperatorPath::new(dim, (0.0, 1.0), move |t| {
        let mut diag: Vec<f64> = branches.iter().map(|&(ti, d)| d * (t - ti)).collect();
        diag.extend(INERT_BRANCHES);
        HermitianMatrix::from_real_diagonal(&diag)
    })
    .with_derivative(move |_| {
        let mut diag: Vec<f64> = b2.iter().map(|&(_, d)| d).collect();
        diag.extend([0.0; INERT_BRANCHES.len()]);
        HermitianMatrix::from_real_diagonal(&diag)
    })
    .with_label(format!("crossings{crossings:?}"));
    Ok(Scenario {
        path,
        expected_flow: Some(crossings.iter().map(|&(_, d)| d as i64).sum()),
        provenance: "sum of prescribed crossing directions".into(),
        truncation_dim: None,
        summability: Summability::Finite,
    })
}

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-12
}

/// `diag(-N, …, N)`, the Fourier truncation of `-i d/dθ` on the circle.
pub fn circle_dirac_operator(n: usize) -> HermitianMatrix {
    let n = n as i64;
    HermitianMatrix::from_real_diagonal(&(-n..=n).map(|k| k as f64).collect::<Vec<_>>())
}

/// `diag(±(k+½))`, `k < N`, in increasing order.
pub fn theta_operator(n: usize) -> HermitianMatrix {
    let mut diag: Vec<f64> = (0..n).map(|k| -(k as f64 + 0.5)).rev().collect();
    diag.extend((0..n).map(|k| k as f64 + 0.5));
    HermitianMatrix::from_real_diagonal(&diag)
}

fn shifted_path(d: HermitianMatrix, window: (f64, f64), label: String) -> OperatorPath {
    let dim = d.dim();
    OperatorPath::new(dim, window, move |t| d.shifted(t))
        .with_derivative(move |_| HermitianMatrix::identity(dim))
        .with_label(label)
}

fn check_window(window: (f64, f64)) -> Result<()> {
    if !(window.0 < window.1 && window.0.is_finite() && window.1.is_finite()) {
        return Err(Error::InvalidArgument(format!("window [{}, {}] is empty", window.0, window.1)));
    }
    Ok(())
}

/// `D + t` on `window` with `D = diag(-N..N)`.
///
/// When the window length is a positive integer `k`, the path carries the
/// cyclic shift `e_n ↦ e_{n-k}` as endpoint equivalence. It is exact except
/// on the `k` top modes, which wrap around; the check is restricted to the
/// modes `k ..= 2N - k`.
pub fn make_circle_dirac(n: usize, window: (f64, f64)) -> Result<Scenario> {
    check_window(window)?;
    if n == 0 {
        return Err(Error::InvalidArgument("circle truncation needs N >= 1".into()));
    }
    let ni = n as i64;
    for t in [window.0, window.1] {
        if near_integer(t) && t.round().abs() <= n as f64 {
            return Err(Error::InvalidArgument(format!(
                "window endpoint {t} puts an eigenvalue of D + t at zero"
            )));
        }
    }
    let expected = (-ni..=ni)
        .filter(|&m| -window.1 < m as f64 && (m as f64) < -window.0)
        .count() as i64;
    let dim = 2 * n + 1;
    let mut path = shifted_path(
        circle_dirac_operator(n),
        window,
        format!("circle_dirac(N={n}, window=[{}, {}])", window.0, window.1),
    );
    let length = window.1 - window.0;
    let mut provenance = format!("branches n + t with n in (-{}, -{}) cross upward", window.1, window.0);
    if near_integer(length) && length.round() >= 1.0 && (length.round() as usize) < dim {
        let k = length.round() as usize;
        let mut u = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            // e_i ↦ e_{i-k} cyclically
            u[((i + dim - k) % dim, i)] = Complex64::new(1.0, 0.0);
        }
        path = path.with_endpoint_equivalence(EndpointEquivalence {
            unitary: u,
            checked_modes: Some((k..=dim - 1 - k).collect()),
        });
        provenance.push_str(&format!("; shift unitary exact except on the {k} wrapped edge mode(s)"));
    }
    Ok(Scenario {
        path,
        expected_flow: Some(expected),
        provenance,
        truncation_dim: Some(dim),
        summability: Summability::PSummable { p: 1.0 },
    })
}

/// `D + t` on `window` with `D = diag(±(k+½))`, `k < N`.
pub fn make_theta_model(n: usize, window: (f64, f64)) -> Result<Scenario> {
    check_window(window)?;
    if n == 0 {
        return Err(Error::InvalidArgument("theta model needs N >= 1".into()));
    }
    let d = theta_operator(n);
    let eig = eigvalsh(&d);
    for t in [window.0, window.1] {
        if let Some(l) = eig.iter().find(|&&l| (l + t).abs() < 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "window endpoint {t} is degenerate: branch {l} + t vanishes"
            )));
        }
    }
    let expected = eig.iter().filter(|&&l| window.0 < -l && -l < window.1).count() as i64;
    Ok(Scenario {
        path: shifted_path(d, window, format!("theta_model(N={n}, window=[{}, {}])", window.0, window.1)),
        expected_flow: Some(expected),
        provenance: "count of branches ±(k+½) + t vanishing inside the window".into(),
        truncation_dim: Some(2 * n),
        summability: Summability::ThetaSummable { s: 0.0 },
    })
}

/// `U_t D_t U_t*` with `U_t = exp(-itH)` for a seeded GUE generator `H`.
pub fn conjugate_scenario(s: &Scenario, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = s.path.dim();
    let h = random_hermitian(dim, 1.0 / (dim as f64).sqrt(), &mut rng);
    conjugate_by_generator(s, &h)
}

/// `U_t D_t U_t*` with `U_t = exp(tK)`, `K = -iH`.
pub fn conjugate_by_generator(s: &Scenario, h: &HermitianMatrix) -> Scenario {
    let decomp = Arc::new(eigh(h));
    let unitary = {
        let decomp = decomp.clone();
        move |t: f64| -> CMatrix {
            let phases = DVector::from_iterator(
                decomp.eigenvalues.len(),
                decomp.eigenvalues.iter().map(|&l| Complex64::cis(-t * l)),
            );
            let v = &decomp.eigenvectors;
            v * CMatrix::from_diagonal(&phases) * v.adjoint()
        }
    };
    let k = h.matrix() * Complex64::new(0.0, -1.0);
    let inner = s.path.clone();
    let u1 = unitary.clone();
    let mut path = OperatorPath::new(s.path.dim(), s.path.interval(), move |t| {
        inner.evaluate(t).conjugate_by(&u1(t))
    });
    let inner = s.path.clone();
    let u2 = unitary.clone();
    path = path.with_derivative(move |t| {
        let u = u2(t);
        let d = inner.evaluate(t).conjugate_by(&u).into_matrix();
        let rate = inner.derivative_or_difference(t).conjugate_by(&u).into_matrix();
        HermitianMatrix::from_hermitian_part(&(&k * &d - &d * &k + rate))
    });
    let (a, b) = s.path.interval();
    let mut provenance = s.provenance.clone();
    if let Some(eq) = s.path.endpoint_equivalence() {
        if eq.checked_modes.is_none() {
            path = path.with_endpoint_equivalence(EndpointEquivalence::exact(
                unitary(b) * &eq.unitary * unitary(a).adjoint(),
            ));
        } else {
            provenance.push_str("; partial endpoint equivalence dropped under conjugation");
        }
    }
    Scenario {
        path: path
            .with_breakpoints(s.path.breakpoints().to_vec())
            .with_label(format!("conjugated({})", s.path.label())),
        expected_flow: s.expected_flow,
        provenance: format!("{provenance}; conjugated by exp(tK)"),
        truncation_dim: s.truncation_dim,
        summability: s.summability,
    }
}

/// `‖(1 + D²)^{-1/2}‖_p`.
pub fn resolvent_schatten_norm(d: &HermitianMatrix, p: f64) -> Result<f64> {
    let r = apply_function(d, |x| 1.0 / (1.0 + x * x).sqrt())?;
    schatten_norm(r.matrix(), p)
}

/// `Tr e^{-sD²}`.
pub fn heat_trace(d: &HermitianMatrix, s: f64) -> f64 {
    eigvalsh(d).iter().map(|l| (-s * l * l).exp()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::{spectral_flow_crossings, CrossingOptions};

    fn oracle(p: &OperatorPath) -> i64 {
        spectral_flow_crossings(p, &CrossingOptions::default()).unwrap().integer
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(6, &mut rng);
        assert!(crate::funcalc::max_abs(&(u.adjoint() * &u - CMatrix::identity(6, 6))) < 1e-13);
        let p = random_projection(6, 2, &mut rng);
        assert_eq!(p.rank(), 2);
    }

    #[test]
    fn random_path_is_deterministic_and_smooth() {
        let a = make_random_path(4, 99, 3);
        let b = make_random_path(4, 99, 3);
        for t in [0.0, 0.37, 1.0] {
            assert_eq!(a.path.evaluate(t).matrix(), b.path.evaluate(t).matrix());
        }
        a.path.check_derivative(10, 0).unwrap();
        let (ga, gb) = a.path.endpoint_gaps();
        assert!(ga >= RANDOM_PATH_GAP && gb >= RANDOM_PATH_GAP);
    }

    #[test]
    fn scalar_random_paths() {
        for seed in 0..20 {
            let s = make_random_path(1, seed, 1);
            let flow = oracle(&s.path);
            assert!((-1..=1).contains(&flow), "seed {seed}: {flow}");
        }
    }

    #[test]
    fn crossing_paths() {
        for (spec, expected) in [
            (vec![(0.25, 1)], 1),
            (vec![(0.3, 1), (0.7, -1)], 0),
            (vec![(0.2, 1), (0.5, 1), (0.8, 1)], 3),
        ] {
            let s = make_crossing_path(&spec).unwrap();
            assert_eq!(s.expected_flow, Some(expected));
            assert_eq!(oracle(&s.path), expected);
        }
        assert!(make_crossing_path(&[(0.0, 1)]).is_err());
        assert!(make_crossing_path(&[(1.0, -1)]).is_err());
        assert!(make_crossing_path(&[(0.4, 2)]).is_err());
        assert!(make_crossing_path(&[(0.4, 1), (0.4, -1)]).is_err());
    }

    #[test]
    fn circle_dirac_examples() {
        for (n, window, expected) in [(64, (0.5, 1.5), 1), (64, (0.25, 0.75), 0), (8, (0.5, 3.5), 3)] {
            let s = make_circle_dirac(n, window).unwrap();
            assert_eq!(s.expected_flow, Some(expected));
            assert_eq!(oracle(&s.path), expected);
        }
        assert!(make_circle_dirac(8, (1.0, 1.5)).is_err());
    }

    #[test]
    fn circle_shift_unitary_on_central_block() {
        let s = make_circle_dirac(6, (0.5, 1.5)).unwrap();
        let eq = s.path.endpoint_equivalence().unwrap();
        assert_eq!(eq.checked_modes.as_ref().unwrap().len(), 2 * 6 - 1);
        assert!(eq.defect(&s.path.start(), &s.path.end()) < 1e-14);
        let full = EndpointEquivalence::exact(eq.unitary.clone());
        assert!(full.defect(&s.path.start(), &s.path.end()) > 1.0);
    }

    #[test]
    fn circle_flow_independent_of_truncation() {
        for n in [4, 5, 8, 16, 33] {
            assert_eq!(oracle(&make_circle_dirac(n, (0.5, 2.5)).unwrap().path), 2);
        }
    }

    #[test]
    fn theta_examples() {
        let s = make_theta_model(32, (0.1, 0.9)).unwrap();
        assert_eq!(s.expected_flow, Some(1));
        assert_eq!(oracle(&s.path), 1);
        let s = make_theta_model(32, (0.6, 0.9)).unwrap();
        assert_eq!(oracle(&s.path), 0);
        let s = make_theta_model(32, (-0.2, 0.2)).unwrap();
        assert_eq!(s.expected_flow, Some(oracle(&s.path)));
        assert!(make_theta_model(4, (0.5, 0.9)).is_err());
    }

    #[test]
    fn schatten_diagnostics() {
        let norms = |p: f64| -> Vec<f64> {
            [16, 32, 64, 128]
                .iter()
                .map(|&n| resolvent_schatten_norm(&circle_dirac_operator(n), p).unwrap())
                .collect()
        };
        let p1 = norms(1.0);
        // grows like 2 log N
        for w in p1.windows(2) {
            assert!(w[1] - w[0] > 1.0);
        }
        let p2 = norms(2.0);
        let steps: Vec<f64> = p2.windows(2).map(|w| w[1] - w[0]).collect();
        for w in steps.windows(2) {
            assert!(w[1] < 0.6 * w[0]);
        }
        let h32 = heat_trace(&theta_operator(32), 1.0);
        let h64 = heat_trace(&theta_operator(64), 1.0);
        assert!((h64 - h32).abs() < 1e-10);
    }

    #[test]
    fn conjugation_keeps_flow() {
        let s = make_random_path(8, 17, 2);
        let c = conjugate_scenario(&s, 3);
        assert_eq!(oracle(&s.path), oracle(&c.path));
        c.path.check_derivative(10, 2).unwrap();
        let zero = conjugate_by_generator(&s, &HermitianMatrix::zeros(8));
        assert!(zero.path.evaluate(0.4).max_abs_diff(&s.path.evaluate(0.4)) < 1e-15);
        let scalar = make_crossing_path(&[(0.3, 1)]).unwrap();
        let one = Scenario {
            path: OperatorPath::new(1, (0.0, 1.0), |t| HermitianMatrix::from_real_diagonal(&[t - 0.3])),
            ..scalar
        };
        let c1 = conjugate_scenario(&one, 9);
        assert!(c1.path.evaluate(0.8).max_abs_diff(&one.path.evaluate(0.8)) < 1e-15);
    }
}
