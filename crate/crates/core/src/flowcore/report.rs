use serde::Serialize;

use crate::error::Error;

/// Residuals at or above this are flagged as warnings.
pub const WARN_RESIDUAL: f64 = 1e-4;
/// Residuals at or above this are failures.
pub const FAIL_RESIDUAL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Crossings,
    Winding,
    Integral,
    Corollary,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Crossings => "crossings",
            Method::Winding => "winding",
            Method::Integral => "integral",
            Method::Corollary => "corollary",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FlowTerms {
    pub integral: f64,
    pub endpoint_b: f64,
    pub endpoint_a: f64,
}

/// A located sign change; `direction` is +1 for an upward crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub t: f64,
    pub direction: i32,
    pub multiplicity: usize,
    pub width: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub quadrature_error: Option<f64>,
    pub evaluations: usize,
    pub refinement_depth: u32,
    pub quad_points: Option<usize>,
    pub imaginary_part: Option<f64>,
    pub normalization: Option<f64>,
    pub touches: usize,
    pub crossings: Vec<Crossing>,
    pub warnings: Vec<String>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub method: Method,
    pub value: f64,
    pub integer: i64,
    pub residual: f64,
    pub terms: FlowTerms,
    pub diagnostics: Diagnostics,
}

impl FlowReport {
    /// Rounds `value`, records the residual and flags it when it reaches
    /// `WARN_RESIDUAL`.
    pub fn new(method: Method, value: f64, terms: FlowTerms, mut diagnostics: Diagnostics) -> Self {
        let integer = value.round() as i64;
        let residual = (value - integer as f64).abs();
        if residual >= WARN_RESIDUAL || !value.is_finite() {
            diagnostics.flagged = true;
            diagnostics
                .warnings
                .push(format!("residual {residual:.3e} exceeds {WARN_RESIDUAL:e}"));
        }
        Self {
            method,
            value,
            integer,
            residual,
            terms,
            diagnostics,
        }
    }

    /// Turns a report with a residual at or above `threshold` (or a
    /// non-finite value) into `Error::NotConverged`.
    pub fn require_residual(self, threshold: f64, reason: &str) -> crate::error::Result<Self> {
        if self.value.is_finite() && self.residual < threshold {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                method: self.method.name(),
                reason: format!("{reason}: residual {:.3e}", self.residual),
                report: Box::new(self),
            })
        }
    }

    pub fn flagged(&self) -> bool {
        self.diagnostics.flagged
    }
}
