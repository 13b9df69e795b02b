//! Exact privacy-utility frontier for standard-normal data under
//! linear-function recoverability.
//!
//! A user holds a datum `X ~ N(0, I_n)`. A querier asks for a linear (or
//! affine) function `A X (+ b)` and must be able to recover it from the
//! user's response `Z` within expected squared distance `rho`. Subject to
//! that budget, the user wants the querier's best estimate of `X` itself to
//! be as bad as possible. This crate computes that frontier exactly and
//! constructs the response mechanism achieving it:
//!
//! - [`linmap`]: parse/validate the map, factor it with ascending singular
//!   values, and expose `var(AX)` and `mmse(X|AX)`.
//! - [`curve`]: the piecewise-affine maximum privacy `pi(rho)`, its
//!   envelope form, inverse, and tabulation.
//! - [`allocation`]: greedy per-component distortion budgets and the
//!   attenuation/noise diagonals they induce.
//! - [`mechanism`]: the attenuate-and-add-noise responder in reduced or
//!   original coordinates, with seeded batch sampling.
//! - [`estimator`]: the querier's optimal linear readout, its closed-form
//!   error, and the converse certificate no design can beat.
//! - [`montecarlo`]: seeded empirical verification of every closed form,
//!   plus baseline comparisons.
//! - [`verify`]: the deterministic identity suite behind `privcurve verify`.

pub mod allocation;
pub mod curve;
pub mod estimator;
pub mod linmap;
pub mod mechanism;
pub mod montecarlo;
pub mod rng;
pub mod verify;

pub use allocation::{allocate, attenuation_pair, AttenuationPair, NoiseAllocation};
pub use curve::{build_curve, table_to_csv, CurveError, PrivacyCurve};
pub use estimator::{converse_certificate, mmse_estimator_for_mechanism, LinearEstimator};
pub use linmap::{
    mmse_x_given_ax, parse_linear_map, svd_ascending, var_ax, LinearMap, LinmapError,
    SvdFactorization,
};
pub use mechanism::{build_mechanism, CoordinateMode, Mechanism, SampleBatch};
pub use montecarlo::{
    compare_mechanisms, refit_estimator, simulate, ComparisonRow, ResponseSampler,
    SimulationReport,
};
pub use verify::{run_identity_suite, VerificationReport};

pub(crate) mod fmt {
    /// Decimal text with 12 significant digits; round-trips every tolerance
    /// used by the identity suites.
    pub fn sig12(v: f64) -> String {
        format!("{v:.11e}")
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};

    use crate::linmap::LinearMap;

    /// The 3x5 reference map with singular values (2, 3, 4).
    pub fn diag234() -> LinearMap {
        let mut a = DMatrix::zeros(3, 5);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 3.0;
        a[(2, 2)] = 4.0;
        LinearMap::new(a, None).unwrap()
    }

    /// Same map with an affine offset.
    pub fn diag234_with_offset() -> LinearMap {
        let base = diag234();
        LinearMap::new(
            base.entries().clone(),
            Some(DVector::from_vec(vec![1.0, -2.0, 0.5])),
        )
        .unwrap()
    }
}
