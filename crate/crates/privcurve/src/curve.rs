//! The exact privacy curve `pi(rho)`: the maximum MMSE any query response
//! can force on the querier while staying within recoverability budget `rho`.
//!
//! The curve is piecewise affine. Starting from `pi(0) = n - r`, each unit of
//! budget spent on the component with the smallest singular value buys
//! privacy at rate `1/s_k^2`; the component saturates after `s_k^2` of
//! budget, the slope drops to the next component's rate, and once every
//! component is saturated (`rho >= sum s_i^2`) the curve is flat at `n`.
//!
//! Two independent evaluation routes are kept deliberately: the segment form
//! (located by binary search over breakpoints) and the min-envelope form
//! ([`PrivacyCurve::min_envelope_terms`]); the two are cross-checked in the
//! test suites.

use serde::Serialize;

use crate::linmap::SvdFactorization;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("rho must be nonnegative, got {0}")]
    NegativeRho(f64),
    #[error("privacy target {target} outside attainable range [{lo}, {hi}]")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("rho grid must be ascending (violated at index {0})")]
    UnsortedGrid(usize),
    #[error("rho grid entry {index} is negative ({value})")]
    NegativeGridValue { index: usize, value: f64 },
    #[error("singular values must be positive and ascending (violated at index {0})")]
    InvalidSingularValues(usize),
    #[error("rank {r} exceeds dimension {n}")]
    RankExceedsDimension { r: usize, n: usize },
}

/// Piecewise-affine description of `pi(rho)`.
///
/// `breakpoints[k] = (rho_k, pi_k)` for `k = 0..=r`, with `rho_k` the
/// cumulative sum of the first `k` squared singular values and
/// `pi_k = n - r + k`. Segment `k` (between breakpoints `k-1` and `k`) has
/// slope `1/s_k^2`; past `rho_r` the curve is the constant `n`.
#[derive(Debug, Clone, Serialize)]
pub struct PrivacyCurve {
    n: usize,
    r: usize,
    s_squared: Vec<f64>,
    breakpoints: Vec<(f64, f64)>,
    #[serde(skip)]
    slopes: Vec<f64>,
    saturation_rho: f64,
}

/// Builds the curve from a factorization; `n` must be the map's column count.
pub fn build_curve(svd: &SvdFactorization, n: usize) -> PrivacyCurve {
    assert_eq!(n, svd.cols(), "n must equal the map's column count");
    PrivacyCurve::from_singular_values(n, svd.singular_values())
        .expect("factorization invariants already guarantee a valid curve")
}

impl PrivacyCurve {
    /// Builds the curve for an `n`-dimensional datum and ascending positive
    /// singular values.
    pub fn from_singular_values(n: usize, singular_values: &[f64]) -> Result<Self, CurveError> {
        let r = singular_values.len();
        if r > n {
            return Err(CurveError::RankExceedsDimension { r, n });
        }
        for (i, w) in singular_values.windows(2).enumerate() {
            if w[0] > w[1] {
                return Err(CurveError::InvalidSingularValues(i + 1));
            }
        }
        if let Some(i) = singular_values.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(CurveError::InvalidSingularValues(i));
        }

        let s_squared: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
        let base = (n - r) as f64;
        let mut breakpoints = Vec::with_capacity(r + 1);
        breakpoints.push((0.0, base));
        let mut cum = 0.0;
        for (k, sq) in s_squared.iter().enumerate() {
            cum += sq;
            breakpoints.push((cum, base + (k + 1) as f64));
        }
        let slopes = s_squared.iter().map(|sq| 1.0 / sq).collect();
        Ok(Self {
            n,
            r,
            s_squared,
            breakpoints,
            slopes,
            saturation_rho: cum,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn s_squared(&self) -> &[f64] {
        &self.s_squared
    }

    /// `(rho_k, pi_k)` for `k = 0..=r`.
    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Per-segment slopes `1/s_k^2`, nonincreasing.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Budget beyond which the curve is flat: `sum s_i^2 = var(AX)`.
    pub fn saturation_rho(&self) -> f64 {
        self.saturation_rho
    }

    /// The flat ceiling `n = var(X)`.
    pub fn saturation_value(&self) -> f64 {
        self.n as f64
    }

    /// Exact curve value at `rho` (segment form).
    pub fn privacy(&self, rho: f64) -> Result<f64, CurveError> {
        if !(rho >= 0.0) {
            return Err(CurveError::NegativeRho(rho));
        }
        if rho >= self.saturation_rho {
            return Ok(self.n as f64);
        }
        // First breakpoint at or beyond rho; rho < saturation guarantees one.
        let k = self.breakpoints.partition_point(|&(bp, _)| bp < rho);
        if k == 0 {
            return Ok(self.breakpoints[0].1);
        }
        let (rho_prev, pi_prev) = self.breakpoints[k - 1];
        Ok(pi_prev + (rho - rho_prev) / self.s_squared[k - 1])
    }

    /// The `r + 1` candidate terms whose minimum, plus `n - r`, equals
    /// `pi(rho)`: `t_k = k + (rho - sum_{i<=k} s_i^2) / s_{k+1}^2` for
    /// `k < r`, and `t_r = r`.
    ///
    /// This is the independent route kept for cross-checking the segment
    /// form, and is also the converse bound evaluated by
    /// [`crate::estimator::converse_certificate`].
    pub fn min_envelope_terms(&self, rho: f64) -> Result<Vec<f64>, CurveError> {
        if !(rho >= 0.0) {
            return Err(CurveError::NegativeRho(rho));
        }
        let mut terms = Vec::with_capacity(self.r + 1);
        for k in 0..self.r {
            let prefix = self.breakpoints[k].0;
            terms.push(k as f64 + (rho - prefix) / self.s_squared[k]);
        }
        terms.push(self.r as f64);
        Ok(terms)
    }

    /// Minimum budget whose privacy reaches `target`; exact piecewise-linear
    /// inversion. At the saturation plateau the left endpoint is returned.
    pub fn inverse_privacy(&self, target: f64) -> Result<f64, CurveError> {
        let lo = (self.n - self.r) as f64;
        let hi = self.n as f64;
        if !(target >= lo && target <= hi) {
            return Err(CurveError::TargetOutOfRange { target, lo, hi });
        }
        // pi values at breakpoints are n - r, n - r + 1, ..., n.
        let k = (target - lo).ceil() as usize;
        if k == 0 {
            return Ok(0.0);
        }
        let (rho_prev, pi_prev) = self.breakpoints[k - 1];
        Ok(rho_prev + (target - pi_prev) * self.s_squared[k - 1])
    }

    /// Evaluates the curve on `grid` merged with every breakpoint, so kinks
    /// appear exactly regardless of the grid.
    pub fn tabulate(&self, grid: &[f64]) -> Result<Vec<(f64, f64)>, CurveError> {
        for (index, &value) in grid.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(CurveError::NegativeGridValue { index, value });
            }
            if index > 0 && value < grid[index - 1] {
                return Err(CurveError::UnsortedGrid(index));
            }
        }
        let mut rhos: Vec<f64> = grid
            .iter()
            .copied()
            .chain(self.breakpoints.iter().map(|&(rho, _)| rho))
            .collect();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        rhos.iter().map(|&rho| Ok((rho, self.privacy(rho)?))).collect()
    }

    /// JSON description with keys `n`, `r`, `s_squared`, `breakpoints`,
    /// `saturation_rho`.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }
}

/// Renders tabulated points as CSV with header `rho,pi` and 12 significant
/// digits.
pub fn table_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("rho,pi\n");
    for &(rho, pi) in points {
        out.push_str(&crate::fmt::sig12(rho));
        out.push(',');
        out.push_str(&crate::fmt::sig12(pi));
        out.push('\n');
    }
    out
}
