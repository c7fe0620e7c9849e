use serde::Serialize;

use super::path::OperatorPath;
use crate::error::{Error, Result};
use crate::funcalc::{eigh, CMatrix, HermitianMatrix, Projection};

/// Singular values at or below this count as zero in rank computations.
pub const SINGULAR_VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ProjectionPair {
    p: Projection,
    q: Projection,
}

impl ProjectionPair {
    pub fn new(p: Projection, q: Projection) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: q.dim(),
            });
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> &Projection {
        &self.p
    }

    pub fn q(&self) -> &Projection {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RelativeIndex {
    /// `round(Tr(P - Q))`.
    pub trace: i64,
    /// `dim ker(QP|ran P) - dim(ran Q ⊖ QP ran P)`.
    pub fredholm: i64,
    pub kernel: usize,
    pub cokernel: usize,
}

/// Orthonormal basis of the range, from the eigenvectors with eigenvalue
/// above ½.
fn range_basis(p: &Projection) -> CMatrix {
    let decomp = eigh(p.matrix());
    let cols: Vec<usize> = (0..decomp.dim()).filter(|&j| decomp.eigenvalues[j] > 0.5).collect();
    decomp.eigenvectors.select_columns(&cols)
}

fn numerical_rank(m: &CMatrix) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .singular_values()
        .iter()
        .filter(|&&s| s > SINGULAR_VALUE_TOL)
        .count()
}

/// Both computations of the relative index, without asserting agreement.
pub fn relative_index_detail(pair: &ProjectionPair) -> RelativeIndex {
    let trace = (pair.p.matrix() - pair.q.matrix()).trace().round() as i64;
    let (vp, vq) = (range_basis(&pair.p), range_basis(&pair.q));
    // QP: ran P → ran Q in these bases
    let rank = numerical_rank(&(vq.adjoint() * &vp));
    let kernel = vp.ncols() - rank;
    let cokernel = vq.ncols() - rank;
    RelativeIndex {
        trace,
        fredholm: kernel as i64 - cokernel as i64,
        kernel,
        cokernel,
    }
}

/// `ind(P, Q)`; fails when the trace and the Fredholm index of `QP` disagree.
pub fn relative_index(pair: &ProjectionPair) -> Result<i64> {
    let detail = relative_index_detail(pair);
    if detail.trace != detail.fredholm {
        return Err(Error::IndexMismatch {
            trace: detail.trace,
            fredholm: detail.fredholm,
        });
    }
    Ok(detail.trace)
}

/// `t ↦ t(2P-1) + (1-t)(2Q-1)` on `[0, 1]`.
pub fn segment_path(pair: &ProjectionPair) -> OperatorPath {
    let (sp, sq) = (pair.p.symmetry(), pair.q.symmetry());
    let slope: HermitianMatrix = &sp - &sq;
    let slope2 = slope.clone();
    OperatorPath::new(pair.dim(), (0.0, 1.0), move |t| &sq + &(&slope * t))
        .with_derivative(move |_| slope2.clone())
        .with_label("segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::crossings::{spectral_flow_crossings, CrossingOptions};
    use crate::models::{random_projection, random_unitary};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> Projection {
        Projection::new(HermitianMatrix::from_real_diagonal(d)).unwrap()
    }

    #[test]
    fn diagonal_pair() {
        let pair = ProjectionPair::new(diag(&[1.0, 1.0, 0.0]), diag(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(relative_index(&pair).unwrap(), 1);
        let d = relative_index_detail(&pair);
        assert_eq!((d.kernel, d.cokernel), (1, 0));
        let flow = spectral_flow_crossings(&segment_path(&pair), &CrossingOptions::default()).unwrap();
        assert_eq!(flow.integer, 1);
    }

    #[test]
    fn equal_projections() {
        let p = diag(&[1.0, 0.0, 1.0]);
        let pair = ProjectionPair::new(p.clone(), p.clone()).unwrap();
        assert_eq!(relative_index(&pair).unwrap(), 0);
        let path = segment_path(&pair);
        assert!(path.evaluate(0.3).max_abs_diff(&p.symmetry()) < 1e-15);
    }

    #[test]
    fn orthogonal_rank_one_lines() {
        let pair = ProjectionPair::new(diag(&[1.0, 0.0]), diag(&[0.0, 1.0])).unwrap();
        let d = relative_index_detail(&pair);
        assert_eq!(d, RelativeIndex { trace: 0, fredholm: 0, kernel: 1, cokernel: 1 });
        let flow = spectral_flow_crossings(&segment_path(&pair), &CrossingOptions::default()).unwrap();
        assert_eq!(flow.integer, 0);
    }

    #[test]
    fn rotated_projection_has_index_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_projection(8, 3, &mut rng);
        // R = exp(-iεH) close to the identity
        let u = random_unitary(8, &mut rng);
        let angles = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(8, |k, _| {
            Complex64::cis(0.05 * (k as f64 - 3.5))
        }));
        let r = &u * angles * u.adjoint();
        let q = Projection::new(p.matrix().conjugate_by(&r)).unwrap();
        let pair = ProjectionPair::new(p, q).unwrap();
        assert_eq!(relative_index(&pair).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(ProjectionPair::new(diag(&[1.0]), diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn rank_deficiency_counts_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, rp, rq) in [(6, 4, 1), (6, 0, 2), (5, 5, 0), (7, 3, 3)] {
            let pair = ProjectionPair::new(random_projection(n, rp, &mut rng), random_projection(n, rq, &mut rng))
                .unwrap();
            assert_eq!(relative_index(&pair).unwrap(), rp as i64 - rq as i64);
        }
    }
}
