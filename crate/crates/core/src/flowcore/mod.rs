//! Spectral flow of Hermitian matrix paths by eigenvalue crossings, by the
//! winding number of an exponential loop, and by an integral formula with
//! endpoint corrections; plus the relative index of projection pairs.

mod crossings;
mod index;
mod integral;
mod path;
mod regularize;
mod report;
mod winding;

pub use crossings::{spectral_flow_crossings, CrossingOptions};
pub use index::{relative_index, relative_index_detail, segment_path, ProjectionPair, RelativeIndex, SINGULAR_VALUE_TOL};
pub use integral::{
    spectral_flow_corollary, spectral_flow_integral, spectral_flow_integral_with, trace_integral, IntegralOptions,
    EQUIVALENCE_TOL,
};
pub use path::{
    concatenate, reparametrize, restrict, reverse, with_interior_bump, EndpointEquivalence, OperatorPath, Reparametrization,
    DERIVATIVE_STEP,
};
pub use regularize::{endpoint_regularize, endpoint_regularize_auto, smooth_step};
pub use report::{Crossing, Diagnostics, FlowReport, FlowTerms, Method, FAIL_RESIDUAL, WARN_RESIDUAL};
pub use winding::{
    flow_loop, spectral_flow_via_winding, spectral_flow_via_winding_with, winding_number, winding_number_with,
    UnitaryLoop, WindingOptions, FLOW_LOOP_TARGET_RESIDUAL, UNITARITY_TOL,
};
