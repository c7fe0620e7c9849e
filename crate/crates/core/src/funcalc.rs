//! Dense Hermitian linear algebra: eigendecomposition, scalar functional
//! calculus `f(A) = U f(Λ) U*`, traces, Schatten norms and spectral
//! projections.
//!
//! Every matrix that enters the crate as a [`HermitianMatrix`] has passed the
//! hermiticity check and has been symmetrized, so downstream code can rely on
//! exact conjugate symmetry of the stored entries.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on `max |A - A*|`, relative to `max |A|`.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Eigenvalues with `|λ| <= ZERO_EIGENVALUE_TOL * max(1, ‖A‖)` are treated as zero.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-10;
/// Bound on `‖P² - P‖` for a projection.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Bound on `|Tr P - rank|` for a projection.
pub const RANK_RESIDUAL_TOL: f64 = 1e-8;

pub type CMatrix = DMatrix<Complex64>;

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// `max |A_ij - conj(A_ji)|`.
pub fn asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// A square complex matrix with `A = A*`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    inner: CMatrix,
}

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, HERMITICITY_TOL)
    }

    /// Accepts `m` if `max |m - m*| <= tol * max |m|`, storing the symmetrized matrix.
    pub fn with_tolerance(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let asym = asymmetry(&m);
        let bound = tol * max_abs(&m);
        if asym > bound {
            return Err(Error::NotHermitian {
                asymmetry: asym,
                tolerance: bound,
            });
        }
        Ok(Self {
            inner: symmetrize(&m),
        })
    }

    /// Symmetrizes without checking. For products like `U A U*` that are
    /// Hermitian in exact arithmetic.
    pub(crate) fn from_hermitian_part(m: &CMatrix) -> Self {
        Self {
            inner: symmetrize(m),
        }
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        Self { inner: m }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: CMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            inner: CMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.inner
    }

    pub fn into_matrix(self) -> CMatrix {
        self.inner
    }

    pub fn trace(&self) -> f64 {
        self.inner.diagonal().iter().map(|z| z.re).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &HermitianMatrix) -> f64 {
        max_abs(&(&self.inner - &other.inner))
    }

    /// `U A U*` for a unitary (or any square) `U`.
    pub fn conjugate_by(&self, u: &CMatrix) -> HermitianMatrix {
        Self::from_hermitian_part(&(u * &self.inner * u.adjoint()))
    }

    /// `A + c·I`.
    pub fn shifted(&self, c: f64) -> HermitianMatrix {
        let mut m = self.inner.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += Complex64::new(c, 0.0);
        }
        Self { inner: m }
    }

    /// `Tr(A B)` for Hermitian `A`, `B` (always real).
    pub fn trace_product(&self, other: &HermitianMatrix) -> f64 {
        // Tr(AB) = Σ_ij A_ij B_ji = Σ_ij A_ij conj(B_ij)
        self.inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        HermitianMatrix {
            inner: self.inner.scale(rhs),
        }
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        self * -1.0
    }
}

/// `A = U diag(λ) U*` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(values) U*`.
    pub fn synthesize(&self, values: &[f64]) -> HermitianMatrix {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        HermitianMatrix::from_hermitian_part(&(scaled * u.adjoint()))
    }

    pub fn reconstruct(&self) -> HermitianMatrix {
        self.synthesize(&self.eigenvalues)
    }

    /// `f(A)`; fails if `f` is not finite at some eigenvalue.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F) -> Result<HermitianMatrix> {
        let values = self.map_eigenvalues(f)?;
        Ok(self.synthesize(&values))
    }

    fn map_eigenvalues<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        self.eigenvalues
            .iter()
            .map(|&l| {
                let v = f(l);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Domain { eigenvalue: l })
                }
            })
            .collect()
    }

    /// Diagonal of `U* B U`, i.e. `u_i* B u_i` for each eigenvector.
    pub fn diagonal_in_eigenbasis(&self, b: &HermitianMatrix) -> Vec<f64> {
        let u = &self.eigenvectors;
        let bu = b.matrix() * u;
        (0..self.dim())
            .map(|i| u.column(i).dotc(&bu.column(i)).re)
            .collect()
    }

    /// `Tr(B f(A)) = Σ_i f(λ_i) u_i* B u_i`, without forming `f(A)`.
    pub fn trace_with<F: Fn(f64) -> f64>(&self, b: &HermitianMatrix, f: F) -> Result<f64> {
        let values = self.map_eigenvalues(f)?;
        Ok(values
            .iter()
            .zip(self.diagonal_in_eigenbasis(b))
            .map(|(v, d)| v * d)
            .sum())
    }

    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, l| acc.min(l.abs()))
    }

    pub fn count_negative(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l < 0.0).count()
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn eigh(a: &HermitianMatrix) -> SpectralDecomposition {
    let n = a.dim();
    if n == 0 {
        return SpectralDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: CMatrix::zeros(0, 0),
        };
    }
    if let Some(diag) = exact_diagonal(a) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
        let mut eigenvectors = CMatrix::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            eigenvectors[(i, c)] = Complex64::new(1.0, 0.0);
        }
        return SpectralDecomposition {
            eigenvalues: order.iter().map(|&i| diag[i]).collect(),
            eigenvectors,
        };
    }
    let eig = a.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// The real diagonal when every off-diagonal entry is exactly zero.
fn exact_diagonal(a: &HermitianMatrix) -> Option<Vec<f64>> {
    let m = a.matrix();
    let n = m.nrows();
    for c in 0..n {
        for r in 0..n {
            if r != c && m[(r, c)] != Complex64::new(0.0, 0.0) {
                return None;
            }
        }
    }
    Some((0..n).map(|i| m[(i, i)].re).collect())
}

/// Sorted eigenvalues only.
pub fn eigvalsh(a: &HermitianMatrix) -> Vec<f64> {
    if let Some(mut diag) = exact_diagonal(a) {
        diag.sort_by(f64::total_cmp);
        return diag;
    }
    let mut values: Vec<f64> = a.matrix().clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// `f(A)` through the eigendecomposition.
pub fn apply_function<F: Fn(f64) -> f64>(a: &HermitianMatrix, f: F) -> Result<HermitianMatrix> {
    eigh(a).apply(f)
}

/// `(Σ σ_i^p)^{1/p}` over the singular values; `p = ∞` gives the operator norm.
pub fn schatten_norm(a: &CMatrix, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "Schatten exponent must be >= 1, got {p}"
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sv = a.clone().singular_values();
    let largest = sv.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    if largest == 0.0 || p.is_infinite() {
        return Ok(largest);
    }
    let sum: f64 = sv.iter().map(|&s| (s / largest).powf(p)).sum();
    Ok(largest * sum.powf(1.0 / p))
}

/// An orthogonal projection together with its rank.
#[derive(Debug, Clone)]
pub struct Projection {
    matrix: HermitianMatrix,
    rank: usize,
}

impl Projection {
    pub fn new(matrix: HermitianMatrix) -> Result<Self> {
        let m = matrix.matrix();
        let defect = max_abs(&(m * m - m));
        let trace = matrix.trace();
        let rank = trace.round().max(0.0);
        let trace_residual = (trace - rank).abs();
        if defect > PROJECTION_TOL || trace_residual > RANK_RESIDUAL_TOL {
            return Err(Error::NotProjection {
                idempotency_defect: defect,
                trace_residual,
            });
        }
        Ok(Self {
            matrix,
            rank: rank as usize,
        })
    }

    /// Orthogonal projection onto the span of the given orthonormal columns.
    pub fn onto_columns(basis: &CMatrix) -> Result<Self> {
        let m = HermitianMatrix::from_hermitian_part(&(basis * basis.adjoint()));
        Self::new(m)
    }

    pub fn matrix(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `2P - 1`.
    pub fn symmetry(&self) -> HermitianMatrix {
        (&self.matrix * 2.0).shifted(-1.0)
    }
}

/// Result of [`spectral_projection_nonneg`]: the projection and the
/// eigenvalues whose sign is numerically ambiguous.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    pub projection: Projection,
    /// Eigenvalues within the zero tolerance; they are counted as nonnegative.
    pub near_zero: Vec<f64>,
}

impl SpectralProjection {
    pub fn is_sign_ambiguous(&self) -> bool {
        !self.near_zero.is_empty()
    }
}

/// `1_{≥0}(A)`: projection onto eigenvectors with eigenvalue ≥ 0.
pub fn spectral_projection_nonneg(a: &HermitianMatrix) -> SpectralProjection {
    spectral_projection_nonneg_of(&eigh(a))
}

pub fn spectral_projection_nonneg_of(decomp: &SpectralDecomposition) -> SpectralProjection {
    let scale = decomp
        .eigenvalues
        .iter()
        .fold(1.0_f64, |acc, l| acc.max(l.abs()));
    let zero_tol = ZERO_EIGENVALUE_TOL * scale;
    let near_zero: Vec<f64> = decomp
        .eigenvalues
        .iter()
        .copied()
        .filter(|l| l.abs() <= zero_tol)
        .collect();
    let indicator: Vec<f64> = decomp
        .eigenvalues
        .iter()
        .map(|&l| if l >= -zero_tol { 1.0 } else { 0.0 })
        .collect();
    let rank = indicator.iter().filter(|&&v| v == 1.0).count();
    let matrix = decomp.synthesize(&indicator);
    SpectralProjection {
        // Built from an orthonormal eigenbasis, so the invariants hold up to
        // eigensolver error; the rank is known exactly.
        projection: Projection { matrix, rank },
        near_zero,
    }
}

/// Complex entry in the `{re, im}` JSON matrix format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEntry {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Array-of-rows JSON representation of a complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixRows(pub Vec<Vec<ComplexEntry>>);

impl MatrixRows {
    pub fn from_matrix(m: &CMatrix) -> Self {
        MatrixRows(
            (0..m.nrows())
                .map(|i| {
                    (0..m.ncols())
                        .map(|j| ComplexEntry {
                            re: m[(i, j)].re,
                            im: m[(i, j)].im,
                        })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if let Some(bad) = self.0.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        Ok(CMatrix::from_fn(rows, cols, |i, j| {
            let e = self.0[i][j];
            Complex64::new(e.re, e.im)
        }))
    }

    pub fn to_hermitian(&self) -> Result<HermitianMatrix> {
        HermitianMatrix::new(self.to_matrix()?)
    }
}
