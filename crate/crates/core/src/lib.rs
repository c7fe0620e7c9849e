//! Spectral flow of paths of Hermitian matrices.
//!
//! Three independent routes compute the same integer: counting eigenvalue
//! sign changes, the winding number of `exp(πi(χ(D_t)+1))`, and an integral
//! formula with endpoint corrections. Truncations of the circle Dirac
//! operator and of a harmonic-oscillator-like spectrum show how the formulas
//! behave as the truncation grows.

pub mod error;
pub mod flowcore;
pub mod funcalc;
pub mod models;
pub mod normfun;
pub mod quad;

pub use error::{Error, Result};
pub use flowcore::{FlowReport, OperatorPath};
pub use funcalc::{CMatrix, HermitianMatrix, Projection};
pub use normfun::{Density, FamilySpec, NormalizingFunction};
