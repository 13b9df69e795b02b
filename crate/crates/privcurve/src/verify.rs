//! Deterministic self-checks on a map: the achievable privacy, the converse
//! bound, and the curve must coincide, the allocation must respect its caps,
//! and the curve must be blind to rotations of the map.

use nalgebra::DVector;

use crate::curve::{build_curve, PrivacyCurve};
use crate::estimator::{converse_certificate, mmse_estimator_for_mechanism};
use crate::linmap::{svd_ascending, LinearMap, LinmapError};
use crate::mechanism::{build_mechanism, CoordinateMode};
use crate::rng::{self, random_orthonormal};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Plain-text pass/fail table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        for check in &self.checks {
            out.push_str(&format!(
                "{:<width$}  {}  max_err={:.3e}  tol={:.1e}\n",
                check.name,
                if check.passed { "PASS" } else { "FAIL" },
                check.max_error,
                check.tolerance,
            ));
        }
        out
    }
}

fn rho_grid(curve: &PrivacyCurve, points: usize) -> Vec<f64> {
    let hi = (1.5 * curve.saturation_rho()).max(1.0);
    let mut grid: Vec<f64> = (0..points)
        .map(|i| hi * i as f64 / (points - 1) as f64)
        .collect();
    grid.extend(curve.breakpoints().iter().map(|&(rho, _)| rho));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Runs the full identity suite on a map.
pub fn run_identity_suite(
    map: &LinearMap,
    rank_tolerance: f64,
    seed: u64,
) -> Result<VerificationReport, LinmapError> {
    let svd = svd_ascending(map, rank_tolerance)?;
    let n = map.cols();
    let curve = build_curve(&svd, n);
    let grid = rho_grid(&curve, 50);
    let mut checks = Vec::new();

    // Main identity: achieved MMSE = converse bound = curve, everywhere.
    let mut max_err = 0.0f64;
    for &rho in &grid {
        let pi = curve.privacy(rho).expect("grid is nonnegative");
        let bound = converse_certificate(&svd, n, rho).expect("grid is nonnegative");
        let mech = build_mechanism(map.clone(), rho, rank_tolerance, CoordinateMode::Reduced)
            .expect("validated map");
        let achieved = mmse_estimator_for_mechanism(&mech).mmse_closed_form();
        max_err = max_err.max((pi - bound).abs()).max((pi - achieved).abs());
    }
    checks.push(CheckResult {
        name: "achievability = converse = curve".into(),
        passed: max_err <= 1e-10,
        max_error: max_err,
        tolerance: 1e-10,
    });

    // Envelope route equals segment route.
    let mut max_err = 0.0f64;
    for &rho in &grid {
        let terms = curve.min_envelope_terms(rho).expect("grid is nonnegative");
        let min = terms.iter().cloned().fold(f64::INFINITY, f64::min);
        let via_env = (n - curve.rank()) as f64 + min;
        max_err = max_err.max((via_env - curve.privacy(rho).unwrap()).abs());
    }
    checks.push(CheckResult {
        name: "envelope route = segment route".into(),
        passed: max_err <= 1e-12,
        max_error: max_err,
        tolerance: 1e-12,
    });

    // Allocation caps and budget conservation.
    let s_squared = svd.s_squared();
    let sat: f64 = s_squared.iter().sum();
    let mut max_err = 0.0f64;
    let mut caps_ok = true;
    for &rho in &grid {
        let alloc = crate::allocation::allocate(&svd, rho).expect("grid is nonnegative");
        for (rho_i, sq) in alloc.per_component().iter().zip(&s_squared) {
            caps_ok &= *rho_i >= 0.0 && *rho_i <= *sq;
        }
        let total: f64 = alloc.per_component().iter().sum();
        max_err = max_err.max((total - rho.min(sat)).abs());
    }
    checks.push(CheckResult {
        name: "allocation caps and budget".into(),
        passed: caps_ok && max_err <= 1e-12,
        max_error: max_err,
        tolerance: 1e-12,
    });

    // Per-component distortion identity of the attenuation pair.
    let mut max_err = 0.0f64;
    for &rho in &grid {
        let alloc = crate::allocation::allocate(&svd, rho).expect("grid is nonnegative");
        let pair = crate::allocation::attenuation_pair(&alloc, &svd).expect("same svd");
        for i in 0..svd.rank() {
            let achieved = s_squared[i] * (1.0 - pair.d_a()[i]).powi(2)
                + pair.d_no()[i] * pair.d_no()[i];
            max_err = max_err.max((achieved - alloc.per_component()[i]).abs());
        }
    }
    checks.push(CheckResult {
        name: "attenuation distortion identity".into(),
        passed: max_err <= 1e-12,
        max_error: max_err,
        tolerance: 1e-12,
    });

    // Original mode = lifted reduced mode at pinned inputs.
    let mut max_err = 0.0f64;
    {
        let mut stream = rng::seeded_rng(rng::shard_seed(seed, 101));
        for &rho in &[0.0, 0.33 * sat.max(1.0), sat, 1.5 * sat + 1.0] {
            let reduced =
                build_mechanism(map.clone(), rho, rank_tolerance, CoordinateMode::Reduced)
                    .expect("validated map");
            let original =
                build_mechanism(map.clone(), rho, rank_tolerance, CoordinateMode::Original)
                    .expect("validated map");
            for _ in 0..4 {
                let mut x = vec![0.0; n];
                let mut noise = vec![0.0; svd.rank()];
                rng::fill_standard_normal(&mut stream, &mut x);
                rng::fill_standard_normal(&mut stream, &mut noise);
                let x = DVector::from_vec(x);
                let noise = DVector::from_vec(noise);
                let zr = reduced.respond(&x, &noise).expect("dims match");
                let zo = original.respond(&x, &noise).expect("dims match");
                let mut lifted = svd.u_tilde() * zr;
                if let Some(b) = map.offset() {
                    lifted += b;
                }
                for i in 0..map.rows() {
                    max_err = max_err.max((zo[i] - lifted[i]).abs());
                }
            }
        }
    }
    checks.push(CheckResult {
        name: "original = lifted reduced".into(),
        passed: max_err <= 1e-10,
        max_error: max_err,
        tolerance: 1e-10,
    });

    // Rotation invariance: the curve of U' A V'^T matches the curve of A.
    let mut max_err = 0.0f64;
    {
        let mut stream = rng::seeded_rng(rng::shard_seed(seed, 202));
        let u_rot = random_orthonormal(map.rows(), &mut stream);
        let v_rot = random_orthonormal(n, &mut stream);
        let rotated = LinearMap::new(u_rot * map.entries() * v_rot.transpose(), None)
            .expect("rotation keeps entries finite");
        let rotated_svd = svd_ascending(&rotated, rank_tolerance)?;
        let rotated_curve = build_curve(&rotated_svd, n);
        for &rho in &grid {
            max_err = max_err
                .max((curve.privacy(rho).unwrap() - rotated_curve.privacy(rho).unwrap()).abs());
        }
    }
    checks.push(CheckResult {
        name: "rotation invariance of the curve".into(),
        passed: max_err <= 1e-8,
        max_error: max_err,
        tolerance: 1e-8,
    });

    // Exact inversion on the rising part of the curve.
    let mut max_err = 0.0f64;
    for &rho in &grid {
        if rho >= curve.saturation_rho() && curve.rank() > 0 {
            continue;
        }
        let target = curve.privacy(rho).unwrap();
        let back = curve.inverse_privacy(target).expect("target in range");
        max_err = max_err.max((back - rho.min(curve.saturation_rho())).abs());
    }
    checks.push(CheckResult {
        name: "inverse round trip".into(),
        passed: max_err <= 1e-9,
        max_error: max_err,
        tolerance: 1e-9,
    });

    Ok(VerificationReport { checks })
}
