//! The querier's side: the linear MMSE readout of the data from a response,
//! its closed-form error, and the converse bound that no response design can
//! beat.
//!
//! For a jointly Gaussian pair the optimal estimator is linear,
//! `x_hat = E[X Z^T] (E[Z Z^T])^+ (z - E[Z])`, so the whole readout is a
//! matrix assembled from the mechanism's parameters. The response covariance
//! of the optimal mechanism is diagonal in reduced coordinates with entries
//! `s_i^2 - rho_i`; fully suppressed components have variance exactly zero
//! and are dropped by the pseudo-inverse tolerance rather than inverted.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::curve::{CurveError, PrivacyCurve};
use crate::linmap::SvdFactorization;
use crate::mechanism::{CoordinateMode, Mechanism};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("response vector has length {got}, estimator expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A linear readout `x_hat = W (z - center)` together with its mean squared
/// error.
///
/// `center` is the response mean: the map's offset `b` for an
/// original-coordinates mechanism, zero otherwise, and the sample mean for
/// estimators refit from data.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    w: DMatrix<f64>,
    center: DVector<f64>,
    mmse_closed_form: f64,
}

impl LinearEstimator {
    pub(crate) fn new(w: DMatrix<f64>, center: DVector<f64>, mmse_closed_form: f64) -> Self {
        Self {
            w,
            center,
            mmse_closed_form,
        }
    }

    /// The `n x k` readout matrix.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// Mean squared estimation error of this readout.
    pub fn mmse_closed_form(&self) -> f64 {
        self.mmse_closed_form
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `x_hat = W (z - center)`.
    pub fn estimate(&self, z: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
        if z.len() != self.w.ncols() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.w.ncols(),
                got: z.len(),
            });
        }
        Ok(&self.w * (z - &self.center))
    }

    /// Residual `||x - x_hat||^2` on a raw row pair; used by the Monte Carlo
    /// passes.
    pub(crate) fn residual_sq(&self, x: &[f64], z: &[f64]) -> f64 {
        let (n, k) = (self.w.nrows(), self.w.ncols());
        let mut total = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..k {
                acc += self.w[(i, j)] * (z[j] - self.center[j]);
            }
            let d = x[i] - acc;
            total += d * d;
        }
        total
    }

    /// JSON with keys `W` (row-major), `mmse_closed_form`, `center`.
    pub fn to_json_string(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            #[serde(rename = "W")]
            w: Vec<Vec<f64>>,
            mmse_closed_form: f64,
            center: Vec<f64>,
        }
        let doc = Doc {
            w: (0..self.w.nrows())
                .map(|i| (0..self.w.ncols()).map(|j| self.w[(i, j)]).collect())
                .collect(),
            mmse_closed_form: self.mmse_closed_form,
            center: self.center.iter().copied().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("estimator serializes")
    }
}

/// Pseudo-inverse tolerance: diagonal entries at or below
/// `max_entry * k * eps` count as zero.
pub(crate) fn pinv_tolerance(max_entry: f64, k: usize) -> f64 {
    max_entry * k as f64 * f64::EPSILON
}

/// The optimal linear readout for a mechanism, from analytic covariances.
///
/// In reduced coordinates `E[X Z^T] = V~ diag(s_i d_a_i)` and
/// `E[Z Z^T] = diag(s_i^2 d_a_i^2 + d_no_i^2) = diag(s_i^2 - rho_i)`; the
/// diagonal is pseudo-inverted entrywise under the tolerance. The
/// original-coordinates readout is the same matrix conjugated by `U~`, and
/// the achieved error is `n - tr(W E[Z X^T])`.
pub fn mmse_estimator_for_mechanism(mech: &Mechanism) -> LinearEstimator {
    let svd = mech.svd();
    let n = mech.input_dim();
    let r = mech.rank();
    let s = svd.singular_values();
    let d_a = mech.attenuation().d_a();
    let d_no = mech.attenuation().d_no();

    // Cross covariance diag(s_i d_a_i) and response variances per component.
    let cross: Vec<f64> = (0..r).map(|i| s[i] * d_a[i]).collect();
    let var: Vec<f64> = (0..r)
        .map(|i| s[i] * s[i] * d_a[i] * d_a[i] + d_no[i] * d_no[i])
        .collect();
    let max_var = var.iter().cloned().fold(0.0, f64::max);
    let tol = pinv_tolerance(max_var, r.max(1));
    let gain: Vec<f64> = (0..r)
        .map(|i| if var[i] > tol { cross[i] / var[i] } else { 0.0 })
        .collect();

    // mmse = n - sum_i gain_i * cross_i (the trace collapses on the diagonal).
    let mmse = (n as f64) - gain.iter().zip(&cross).map(|(g, c)| g * c).sum::<f64>();

    // W_reduced = V~ diag(gain); W_original = W_reduced U~^T.
    let mut w_reduced = svd.v_tilde().clone();
    for (i, g) in gain.iter().enumerate() {
        for row in 0..n {
            w_reduced[(row, i)] *= g;
        }
    }
    let (w, center) = match mech.mode() {
        CoordinateMode::Reduced => (w_reduced, DVector::zeros(r)),
        CoordinateMode::Original => {
            let m = mech.map().rows();
            let center = match mech.map().offset() {
                Some(b) => b.clone(),
                None => DVector::zeros(m),
            };
            (w_reduced * svd.u_tilde().transpose(), center)
        }
    };
    LinearEstimator::new(w, center, mmse)
}

/// The converse upper bound on any `rho`-feasible response's privacy:
/// `n - r + min` over the envelope terms. By the main identity this equals
/// the curve value exactly.
pub fn converse_certificate(
    svd: &SvdFactorization,
    n: usize,
    rho: f64,
) -> Result<f64, CurveError> {
    let curve = PrivacyCurve::from_singular_values(n, svd.singular_values())?;
    let terms = curve.min_envelope_terms(rho)?;
    let min = terms.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((n - curve.rank()) as f64 + min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmap::svd_ascending;
    use crate::mechanism::build_mechanism;
    use crate::testutil::{diag234, diag234_with_offset};

    fn mech234(rho: f64, mode: CoordinateMode) -> Mechanism {
        build_mechanism(diag234(), rho, 0.0, mode).unwrap()
    }

    #[test]
    fn exact_observation_leaves_null_space_error() {
        let est = mmse_estimator_for_mechanism(&mech234(0.0, CoordinateMode::Reduced));
        assert!((est.mmse_closed_form() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn budget_seven_achieves_ten_thirds() {
        let est = mmse_estimator_for_mechanism(&mech234(7.0, CoordinateMode::Reduced));
        assert!((est.mmse_closed_form() - 10.0 / 3.0).abs() < 1e-12);
        let est = mmse_estimator_for_mechanism(&mech234(7.0, CoordinateMode::Original));
        assert!((est.mmse_closed_form() - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_mechanism_reads_nothing() {
        let est = mmse_estimator_for_mechanism(&mech234(1e9, CoordinateMode::Reduced));
        assert_eq!(est.mmse_closed_form(), 5.0);
        assert!(est.w().iter().all(|v| *v == 0.0));
        let z = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        assert_eq!(est.estimate(&z).unwrap(), DVector::zeros(5));
    }

    #[test]
    fn passthrough_estimator_matches_explicit_pseudo_inverse() {
        // At rho = 0, Z = B x with B = diag(s) V~^T, so the readout must
        // equal B^T (B B^T)^{-1}, built here by explicit matrix algebra.
        let mech = mech234(0.0, CoordinateMode::Reduced);
        let est = mmse_estimator_for_mechanism(&mech);
        let svd = mech.svd();
        let (r, n) = (svd.rank(), mech.input_dim());
        let mut b = DMatrix::zeros(r, n);
        for i in 0..r {
            for j in 0..n {
                b[(i, j)] = svd.singular_values()[i] * svd.v_tilde()[(j, i)];
            }
        }
        let gram_inv = (&b * b.transpose()).try_inverse().unwrap();
        let explicit = b.transpose() * gram_inv;
        let diff = est.w() - &explicit;
        assert!(diff.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn passthrough_estimate_is_row_space_projection() {
        let mech = mech234(0.0, CoordinateMode::Reduced);
        let est = mmse_estimator_for_mechanism(&mech);
        let x = DVector::from_vec(vec![0.3, -1.1, 0.8, 2.0, -0.5]);
        let z = mech.respond(&x, &DVector::zeros(3)).unwrap();
        let got = est.estimate(&z).unwrap();
        // Brute-force projector onto the row space of A.
        let projector = mech.svd().v_tilde() * mech.svd().v_tilde().transpose();
        let want = projector * &x;
        for i in 0..5 {
            assert!((got[i] - want[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn estimate_checks_dimensions() {
        let est = mmse_estimator_for_mechanism(&mech234(1.0, CoordinateMode::Reduced));
        let bad = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            est.estimate(&bad),
            Err(EstimatorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn offset_is_subtracted_before_readout() {
        let mech = build_mechanism(diag234_with_offset(), 0.0, 0.0, CoordinateMode::Original)
            .unwrap();
        let est = mmse_estimator_for_mechanism(&mech);
        let x = DVector::from_vec(vec![0.5, 0.25, -1.0, 0.75, 1.5]);
        let z = mech.respond(&x, &DVector::zeros(3)).unwrap();
        let got = est.estimate(&z).unwrap();
        let projector = mech.svd().v_tilde() * mech.svd().v_tilde().transpose();
        let want = projector * &x;
        for i in 0..5 {
            assert!((got[i] - want[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_is_orthogonal_to_response() {
        // E[(X - W Z)(Z - E Z)^T] = C_xz - W C_z = 0 on every component.
        for rho in [0.0, 2.5, 7.0, 13.0, 29.0, 40.0] {
            for mode in [CoordinateMode::Reduced, CoordinateMode::Original] {
                let mech = mech234(rho, mode);
                let est = mmse_estimator_for_mechanism(&mech);
                let svd = mech.svd();
                let r = mech.rank();
                let s = svd.singular_values();
                let d_a = mech.attenuation().d_a();
                let d_no = mech.attenuation().d_no();
                // Reduced-frame covariances, lifted when needed.
                let c_xz_red = {
                    let mut c = svd.v_tilde().clone();
                    for i in 0..r {
                        for row in 0..mech.input_dim() {
                            c[(row, i)] *= s[i] * d_a[i];
                        }
                    }
                    c
                };
                let c_z_red = DMatrix::from_diagonal(&DVector::from_iterator(
                    r,
                    (0..r).map(|i| s[i] * s[i] * d_a[i] * d_a[i] + d_no[i] * d_no[i]),
                ));
                let (c_xz, c_z) = match mode {
                    CoordinateMode::Reduced => (c_xz_red, c_z_red),
                    CoordinateMode::Original => (
                        &c_xz_red * svd.u_tilde().transpose(),
                        svd.u_tilde() * c_z_red * svd.u_tilde().transpose(),
                    ),
                };
                let gap = &c_xz - est.w() * &c_z;
                assert!(
                    gap.iter().all(|v| v.abs() < 1e-9),
                    "normal equations violated at rho={rho}"
                );
            }
        }
    }

    #[test]
    fn converse_matches_examples() {
        let svd = svd_ascending(&diag234(), 0.0).unwrap();
        assert!((converse_certificate(&svd, 5, 7.0).unwrap() - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(converse_certificate(&svd, 5, 0.0).unwrap(), 2.0);
        assert_eq!(converse_certificate(&svd, 5, 29.0).unwrap(), 5.0);
        assert_eq!(converse_certificate(&svd, 5, 1e9).unwrap(), 5.0);
        assert!(converse_certificate(&svd, 5, -1.0).is_err());
    }

    #[test]
    fn estimator_json_has_expected_keys() {
        let est = mmse_estimator_for_mechanism(&mech234(7.0, CoordinateMode::Reduced));
        let value: serde_json::Value = serde_json::from_str(&est.to_json_string()).unwrap();
        assert!(value.get("W").is_some());
        assert!(value.get("mmse_closed_form").is_some());
        assert_eq!(value["W"].as_array().unwrap().len(), 5);
    }
}
