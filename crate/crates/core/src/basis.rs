//! Truncated-polynomial age basis shared by the OLS learner and the simulation
//! outcome model.

use serde::{Deserialize, Serialize};

use crate::error::{ActeError, Result};

/// Default knot (peak age) used throughout.
pub const DEFAULT_PEAK_AGE: f64 = 25.0;

/// Number of non-intercept basis terms.
pub const N_TERMS: usize = 3;

/// Knot placement for the three-term truncated basis
/// `(a-k)^2, (a-k)^2 1(a>k), (a-k)^3 1(a>k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub peak_age: f64,
    pub include_intercept: bool,
}

impl Default for SplineSpec {
    fn default() -> Self {
        SplineSpec {
            peak_age: DEFAULT_PEAK_AGE,
            include_intercept: false,
        }
    }
}

impl SplineSpec {
    pub fn new(peak_age: f64) -> Result<Self> {
        if !peak_age.is_finite() {
            return Err(ActeError::Domain(format!("peak age must be finite, got {peak_age}")));
        }
        Ok(SplineSpec {
            peak_age,
            include_intercept: false,
        })
    }

    pub fn with_intercept(mut self) -> Self {
        self.include_intercept = true;
        self
    }

    pub fn len(&self) -> usize {
        N_TERMS + usize::from(self.include_intercept)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes the basis for `age` into `out` (length [`SplineSpec::len`]).
    /// The intercept, when requested, comes first.
    pub fn fill(&self, age: f64, out: &mut [f64]) {
        let (start, rest) = if self.include_intercept {
            out[0] = 1.0;
            (1, &mut out[1..])
        } else {
            (0, out)
        };
        debug_assert!(rest.len() >= N_TERMS, "basis buffer too short (offset {start})");
        let d = age - self.peak_age;
        let sq = d * d;
        rest[0] = sq;
        if age > self.peak_age {
            rest[1] = sq;
            rest[2] = sq * d;
        } else {
            rest[1] = 0.0;
            rest[2] = 0.0;
        }
    }
}

/// `((a-k)^2, (a-k)^2 1(a>k), (a-k)^3 1(a>k))`, with a leading 1 when the spec
/// asks for an intercept.
pub fn truncated_basis(age: f64, spec: &SplineSpec) -> Result<Vec<f64>> {
    if !age.is_finite() {
        return Err(ActeError::Domain(format!("age must be finite, got {age}")));
    }
    if !spec.peak_age.is_finite() {
        return Err(ActeError::Domain("peak age must be finite".into()));
    }
    let mut out = vec![0.0; spec.len()];
    spec.fill(age, &mut out);
    Ok(out)
}
