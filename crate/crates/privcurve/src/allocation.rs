//! Greedy distortion budgeting across singular-value components, and the
//! attenuation/noise diagonals realizing each budget.
//!
//! A recoverability budget `rho` is poured into the components in ascending
//! singular-value order: component `i` absorbs at most `s_i^2` before the
//! next one starts filling. Budget beyond `sum s_i^2` buys nothing and is
//! discarded. The filled budgets `rho_i` translate into the attenuation
//! factors `1 - rho_i/s_i^2` and noise scales `sqrt(rho_i - rho_i^2/s_i^2)`
//! applied per component by the mechanism.

use thiserror::Error;

use crate::linmap::SvdFactorization;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("rho must be nonnegative, got {0}")]
    NegativeRho(f64),
    #[error("rho must be finite, got {0}")]
    NonFiniteRho(f64),
    #[error("allocation has {allocation} components but the factorization has rank {rank}")]
    RankMismatch { allocation: usize, rank: usize },
}

/// Per-component distortion budgets `rho_1..rho_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAllocation {
    per_component: Vec<f64>,
    total_requested: f64,
    total_effective: f64,
    saturated: bool,
}

impl NoiseAllocation {
    /// Budgets in ascending singular-value order; `0 <= rho_i <= s_i^2`.
    pub fn per_component(&self) -> &[f64] {
        &self.per_component
    }

    pub fn total_requested(&self) -> f64 {
        self.total_requested
    }

    /// `sum rho_i = min(rho, sum s_i^2)`.
    pub fn total_effective(&self) -> f64 {
        self.total_effective
    }

    /// Whether the budget meets or exceeds `sum s_i^2`, the point past which
    /// the response can be made independent of the data.
    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    pub fn len(&self) -> usize {
        self.per_component.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_component.is_empty()
    }
}

/// Attenuation factors `d_a` and noise standard deviations `d_no`, one per
/// component.
///
/// `d_a[i] = 1` exactly when `rho_i = 0` (component passed through) and
/// `d_a[i] = d_no[i] = 0` exactly when `rho_i = s_i^2` (component fully
/// suppressed). Each component's response `d_a s_i x + d_no N` sits at
/// squared distance `s_i^2 (1 - d_a)^2 + d_no^2 = rho_i` from `s_i x` in
/// expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationPair {
    d_a: Vec<f64>,
    d_no: Vec<f64>,
}

impl AttenuationPair {
    pub fn d_a(&self) -> &[f64] {
        &self.d_a
    }

    pub fn d_no(&self) -> &[f64] {
        &self.d_no
    }

    pub fn len(&self) -> usize {
        self.d_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_a.is_empty()
    }
}

/// Greedy fill against the caps `s_i^2`, smallest component first.
pub fn allocate(svd: &SvdFactorization, rho: f64) -> Result<NoiseAllocation, AllocationError> {
    allocate_budget(&svd.s_squared(), rho)
}

/// [`allocate`] on raw squared singular values (ascending).
pub fn allocate_budget(s_squared: &[f64], rho: f64) -> Result<NoiseAllocation, AllocationError> {
    if !(rho >= 0.0) {
        return Err(AllocationError::NegativeRho(rho));
    }
    if !rho.is_finite() {
        return Err(AllocationError::NonFiniteRho(rho));
    }
    // Work from cumulative caps so the partially filled component is a
    // single subtraction from rho, not a chain of them.
    let mut per_component = Vec::with_capacity(s_squared.len());
    let mut prefix = 0.0;
    for &cap in s_squared {
        let already = prefix;
        prefix += cap;
        per_component.push((rho - already).clamp(0.0, cap));
    }
    let saturated = rho >= prefix;
    let total_effective = per_component.iter().sum();
    Ok(NoiseAllocation {
        per_component,
        total_requested: rho,
        total_effective,
        saturated,
    })
}

/// Attenuation/noise diagonals for an allocation produced from `svd`.
pub fn attenuation_pair(
    allocation: &NoiseAllocation,
    svd: &SvdFactorization,
) -> Result<AttenuationPair, AllocationError> {
    attenuation_for(allocation, &svd.s_squared())
}

/// [`attenuation_pair`] on raw squared singular values.
pub fn attenuation_for(
    allocation: &NoiseAllocation,
    s_squared: &[f64],
) -> Result<AttenuationPair, AllocationError> {
    if allocation.len() != s_squared.len() {
        return Err(AllocationError::RankMismatch {
            allocation: allocation.len(),
            rank: s_squared.len(),
        });
    }
    let mut d_a = Vec::with_capacity(s_squared.len());
    let mut d_no = Vec::with_capacity(s_squared.len());
    for (&rho_i, &sq) in allocation.per_component().iter().zip(s_squared) {
        let att = 1.0 - rho_i / sq;
        d_a.push(att);
        // rho_i - rho_i^2/s_i^2, factored so both endpoints (rho_i = 0 and
        // rho_i = s_i^2) give exactly zero noise; the clamp covers roundoff
        // within -1e-12 of zero.
        let mut arg = rho_i * att;
        if arg < 0.0 {
            debug_assert!(arg > -1e-12, "sqrt argument {arg} below roundoff band");
            arg = 0.0;
        }
        d_no.push(arg.sqrt());
    }
    Ok(AttenuationPair { d_a, d_no })
}

#[cfg(test)]
mod tests {
    use super::*;

    const S234: [f64; 3] = [4.0, 9.0, 16.0];

    #[test]
    fn splits_budget_across_first_two_components() {
        let alloc = allocate_budget(&S234, 7.0).unwrap();
        assert_eq!(alloc.per_component(), &[4.0, 3.0, 0.0]);
        assert_eq!(alloc.total_effective(), 7.0);
        assert!(!alloc.is_saturated());
    }

    #[test]
    fn zero_budget_allocates_nothing() {
        let alloc = allocate_budget(&S234, 0.0).unwrap();
        assert_eq!(alloc.per_component(), &[0.0, 0.0, 0.0]);
        assert!(!alloc.is_saturated());
    }

    #[test]
    fn oversized_budget_saturates_every_cap() {
        let alloc = allocate_budget(&S234, 100.0).unwrap();
        assert_eq!(alloc.per_component(), &[4.0, 9.0, 16.0]);
        assert_eq!(alloc.total_effective(), 29.0);
        assert_eq!(alloc.total_requested(), 100.0);
        assert!(alloc.is_saturated());
    }

    #[test]
    fn boundary_budget_is_unambiguous() {
        // rho exactly at a cap boundary: both adjacent fill patterns agree.
        let alloc = allocate_budget(&S234, 4.0).unwrap();
        assert_eq!(alloc.per_component(), &[4.0, 0.0, 0.0]);
        let alloc = allocate_budget(&S234, 29.0).unwrap();
        assert_eq!(alloc.per_component(), &[4.0, 9.0, 16.0]);
        assert!(alloc.is_saturated());
    }

    #[test]
    fn rejects_negative_budget() {
        assert!(matches!(
            allocate_budget(&S234, -0.5),
            Err(AllocationError::NegativeRho(_))
        ));
    }

    #[test]
    fn attenuation_for_partial_fill() {
        let alloc = allocate_budget(&S234, 7.0).unwrap();
        let pair = attenuation_for(&alloc, &S234).unwrap();
        assert_eq!(pair.d_a()[0], 0.0);
        assert!((pair.d_a()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pair.d_a()[2], 1.0);
        assert_eq!(pair.d_no()[0], 0.0);
        assert!((pair.d_no()[1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(pair.d_no()[2], 0.0);
    }

    #[test]
    fn zero_allocation_is_exact_passthrough() {
        let alloc = allocate_budget(&S234, 0.0).unwrap();
        let pair = attenuation_for(&alloc, &S234).unwrap();
        assert_eq!(pair.d_a(), &[1.0, 1.0, 1.0]);
        assert_eq!(pair.d_no(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn saturated_allocation_suppresses_every_component() {
        let alloc = allocate_budget(&S234, 1e9).unwrap();
        let pair = attenuation_for(&alloc, &S234).unwrap();
        assert_eq!(pair.d_a(), &[0.0, 0.0, 0.0]);
        assert_eq!(pair.d_no(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_rank_mismatch() {
        let alloc = allocate_budget(&S234, 1.0).unwrap();
        assert!(matches!(
            attenuation_for(&alloc, &[4.0, 9.0]),
            Err(AllocationError::RankMismatch { .. })
        ));
    }

    #[test]
    fn distortion_identity_per_component() {
        for rho in [0.0, 0.5, 4.0, 7.0, 12.9, 13.0, 22.0, 29.0, 40.0] {
            let alloc = allocate_budget(&S234, rho).unwrap();
            let pair = attenuation_for(&alloc, &S234).unwrap();
            for i in 0..3 {
                let achieved =
                    S234[i] * (1.0 - pair.d_a()[i]).powi(2) + pair.d_no()[i] * pair.d_no()[i];
                assert!(
                    (achieved - alloc.per_component()[i]).abs() <= 1e-12,
                    "rho={rho} component {i}: {achieved} vs {}",
                    alloc.per_component()[i]
                );
            }
        }
    }
}
