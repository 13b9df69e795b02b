//! The queried linear (optionally affine) map and its singular-value
//! structure.
//!
//! Everything downstream — the privacy curve, the noise allocation, the
//! mechanism — depends on the map `A` only through its column count `n`, its
//! numerical rank `r`, and its nonzero singular values. This module parses
//! and validates the map, factors it as `A = U S V^T` with the singular
//! values sorted *ascending* (the order in which components are cheapest to
//! conceal), and provides the two baseline quantities `var(AX) = sum s_i^2`
//! and `mmse(X | AX) = n - r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from parsing, validating, or factoring a linear map.
#[derive(Debug, Error)]
pub enum LinmapError {
    #[error("malformed matrix document: {0}")]
    Malformed(String),
    #[error("dimensions must be positive, got m={m}, n={n}")]
    EmptyDimensions { m: usize, n: usize },
    #[error("entry rows {got} do not match m={expected}")]
    RowCountMismatch { got: usize, expected: usize },
    #[error("ragged matrix: row {row} has {got} entries, expected {expected}")]
    RaggedMatrix {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("matrix entry ({row},{col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("offset entry {index} is not finite")]
    NonFiniteOffset { index: usize },
    #[error("offset length {got} does not match m={expected}")]
    OffsetLengthMismatch { got: usize, expected: usize },
    #[error("rank tolerance must be finite and nonnegative, got {0}")]
    InvalidRankTolerance(f64),
    #[error("singular value decomposition did not converge")]
    SvdFailed,
}

/// The matrix `A` the querier wants applied to the data, with an optional
/// affine offset `b` (the querier then recovers `AX + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    entries: DMatrix<f64>,
    offset: Option<DVector<f64>>,
}

/// On-disk schema: `{"m": .., "n": .., "entries": [[..], ..], "b": [..]?}`.
#[derive(Debug, Serialize, Deserialize)]
struct MatrixDocument {
    m: usize,
    n: usize,
    entries: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

impl LinearMap {
    /// Validates and wraps a dense matrix and optional offset.
    pub fn new(
        entries: DMatrix<f64>,
        offset: Option<DVector<f64>>,
    ) -> Result<Self, LinmapError> {
        let (m, n) = (entries.nrows(), entries.ncols());
        if m == 0 || n == 0 {
            return Err(LinmapError::EmptyDimensions { m, n });
        }
        for i in 0..m {
            for j in 0..n {
                if !entries[(i, j)].is_finite() {
                    return Err(LinmapError::NonFiniteEntry { row: i, col: j });
                }
            }
        }
        if let Some(b) = &offset {
            if b.len() != m {
                return Err(LinmapError::OffsetLengthMismatch {
                    got: b.len(),
                    expected: m,
                });
            }
            if let Some(index) = b.iter().position(|v| !v.is_finite()) {
                return Err(LinmapError::NonFiniteOffset { index });
            }
        }
        Ok(Self { entries, offset })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn offset(&self) -> Option<&DVector<f64>> {
        self.offset.as_ref()
    }

    /// Serializes back to the matrix JSON schema.
    pub fn to_json_string(&self) -> String {
        let doc = MatrixDocument {
            m: self.rows(),
            n: self.cols(),
            entries: (0..self.rows())
                .map(|i| (0..self.cols()).map(|j| self.entries[(i, j)]).collect())
                .collect(),
            b: self.offset.as_ref().map(|b| b.iter().copied().collect()),
        };
        serde_json::to_string_pretty(&doc).expect("matrix document serializes")
    }
}

/// Parses a matrix JSON document into a validated [`LinearMap`].
pub fn parse_linear_map(document: &str) -> Result<LinearMap, LinmapError> {
    let doc: MatrixDocument =
        serde_json::from_str(document).map_err(|e| LinmapError::Malformed(e.to_string()))?;
    if doc.m == 0 || doc.n == 0 {
        return Err(LinmapError::EmptyDimensions { m: doc.m, n: doc.n });
    }
    if doc.entries.len() != doc.m {
        return Err(LinmapError::RowCountMismatch {
            got: doc.entries.len(),
            expected: doc.m,
        });
    }
    for (row, r) in doc.entries.iter().enumerate() {
        if r.len() != doc.n {
            return Err(LinmapError::RaggedMatrix {
                row,
                got: r.len(),
                expected: doc.n,
            });
        }
    }
    let entries = DMatrix::from_fn(doc.m, doc.n, |i, j| doc.entries[i][j]);
    let offset = doc.b.map(DVector::from_vec);
    LinearMap::new(entries, offset)
}

/// A full singular value decomposition `A = U S V^T` with the nonzero
/// singular values sorted ascending.
///
/// `U` is `m x m` and `V` is `n x n`, both orthonormal. `S` is the `m x n`
/// matrix with `s[k]` at position `(k, k)` for `k < r` and zeros elsewhere.
/// The leading `r` columns of `U` and `V` (exposed as `u_tilde`, `v_tilde`)
/// correspond to the kept singular values, smallest first.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    u_tilde: DMatrix<f64>,
    v_tilde: DMatrix<f64>,
    singular_values: Vec<f64>,
    rank: usize,
    rank_tolerance: f64,
}

impl SvdFactorization {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Leading `r` columns of `U` (`m x r`).
    pub fn u_tilde(&self) -> &DMatrix<f64> {
        &self.u_tilde
    }

    /// Leading `r` columns of `V` (`n x r`).
    pub fn v_tilde(&self) -> &DMatrix<f64> {
        &self.v_tilde
    }

    /// Kept singular values, strictly positive and ascending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Squared singular values, ascending.
    pub fn s_squared(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s * s).collect()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The tolerance actually used to drop near-zero singular values.
    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    /// `U S V^T`, reassembled from the kept components.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.u_tilde.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            for i in 0..scaled.nrows() {
                scaled[(i, k)] *= s;
            }
        }
        scaled * self.v_tilde.transpose()
    }
}

/// Extends `partial` (orthonormal columns) to a full `dim x dim` orthonormal
/// matrix whose leading columns are exactly `partial`.
fn complete_orthonormal_basis(partial: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let k = partial.ncols();
    if k == dim {
        return partial.clone();
    }
    // Householder QR of [partial | I] yields a full orthonormal Q whose
    // leading k columns span col(partial); fix signs, then overwrite the
    // leading block with `partial` itself.
    let mut wide = DMatrix::zeros(dim, k + dim);
    wide.view_mut((0, 0), (dim, k)).copy_from(partial);
    for i in 0..dim {
        wide[(i, k + i)] = 1.0;
    }
    let qr = wide.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.view_mut((0, 0), (dim, k)).copy_from(partial);
    q
}

/// Factors the map with singular values sorted ascending and the rank
/// truncated at `rank_tolerance` (`0` selects `s_max * max(m,n) * eps`).
pub fn svd_ascending(
    map: &LinearMap,
    rank_tolerance: f64,
) -> Result<SvdFactorization, LinmapError> {
    if !rank_tolerance.is_finite() || rank_tolerance < 0.0 {
        return Err(LinmapError::InvalidRankTolerance(rank_tolerance));
    }
    let (m, n) = (map.rows(), map.cols());
    let svd = map
        .entries()
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(LinmapError::SvdFailed)?;
    let u_thin = svd.u.ok_or(LinmapError::SvdFailed)?;
    let v_t_thin = svd.v_t.ok_or(LinmapError::SvdFailed)?;
    let raw: Vec<f64> = svd.singular_values.iter().copied().collect();

    let s_max = raw.iter().cloned().fold(0.0, f64::max);
    let tol = if rank_tolerance == 0.0 {
        s_max * (m.max(n) as f64) * f64::EPSILON
    } else {
        rank_tolerance
    };

    let mut kept: Vec<(f64, usize)> = raw
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, s)| s > tol)
        .map(|(i, s)| (s, i))
        .collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rank = kept.len();

    let mut u_tilde = DMatrix::zeros(m, rank);
    let mut v_tilde = DMatrix::zeros(n, rank);
    let mut singular_values = Vec::with_capacity(rank);
    for (dst, &(s, src)) in kept.iter().enumerate() {
        singular_values.push(s);
        u_tilde.column_mut(dst).copy_from(&u_thin.column(src));
        v_tilde
            .column_mut(dst)
            .copy_from(&v_t_thin.row(src).transpose());
    }

    let u = complete_orthonormal_basis(&u_tilde, m);
    let v = complete_orthonormal_basis(&v_tilde, n);

    Ok(SvdFactorization {
        u,
        v,
        u_tilde,
        v_tilde,
        singular_values,
        rank,
        rank_tolerance: tol,
    })
}

/// `var(AX) = tr(A A^T) = sum of squared singular values`.
pub fn var_ax(svd: &SvdFactorization) -> f64 {
    svd.singular_values.iter().map(|s| s * s).sum()
}

/// `mmse(X | AX) = n - r`: the part of the data outside the row space of `A`
/// is invisible to an exact observer of `AX`.
pub fn mmse_x_given_ax(svd: &SvdFactorization, n: usize) -> f64 {
    assert_eq!(n, svd.cols(), "n must equal the map's column count");
    (n - svd.rank()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::diag234;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn parses_identity_document() {
        let doc = r#"{"m": 2, "n": 2, "entries": [[1.0, 0.0], [0.0, 1.0]]}"#;
        let map = parse_linear_map(doc).unwrap();
        assert_eq!(map.rows(), 2);
        assert_eq!(map.cols(), 2);
        assert_eq!(map.entries(), &DMatrix::identity(2, 2));
        assert!(map.offset().is_none());
    }

    #[test]
    fn parses_rectangular_document_with_offset() {
        let doc = r#"{
            "m": 3, "n": 5,
            "entries": [[2,0,0,0,0],[0,3,0,0,0],[0,0,4,0,0]],
            "b": [1.0, -2.0, 0.5]
        }"#;
        let map = parse_linear_map(doc).unwrap();
        assert_eq!((map.rows(), map.cols()), (3, 5));
        assert_eq!(map.offset().unwrap()[1], -2.0);
        assert_eq!(map.entries(), diag234().entries());
    }

    #[test]
    fn rejects_ragged_rows() {
        let doc = r#"{"m": 2, "n": 2, "entries": [[1.0, 0.0], [0.0]]}"#;
        match parse_linear_map(doc) {
            Err(LinmapError::RaggedMatrix { row, got, expected }) => {
                assert_eq!((row, got, expected), (1, 1, 2));
            }
            other => panic!("expected ragged matrix error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let doc = r#"{"m": 3, "n": 2, "entries": [[1.0, 0.0], [0.0, 1.0]]}"#;
        assert!(matches!(
            parse_linear_map(doc),
            Err(LinmapError::RowCountMismatch { got: 2, expected: 3 })
        ));
    }

    #[test]
    fn rejects_offset_length_mismatch() {
        let doc = r#"{"m": 2, "n": 2, "entries": [[1, 0], [0, 1]], "b": [1.0]}"#;
        assert!(matches!(
            parse_linear_map(doc),
            Err(LinmapError::OffsetLengthMismatch { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn rejects_malformed_json_and_overflowing_numbers() {
        assert!(parse_linear_map("{not json").is_err());
        // 1e999 overflows f64; whether serde reports it or the finiteness
        // check does, it must not slip through.
        let doc = r#"{"m": 1, "n": 1, "entries": [[1e999]]}"#;
        assert!(parse_linear_map(doc).is_err());
    }

    #[test]
    fn rejects_non_finite_entries() {
        let mut a = DMatrix::identity(2, 2);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(
            LinearMap::new(a, None),
            Err(LinmapError::NonFiniteEntry { row: 1, col: 0 })
        ));
    }

    #[test]
    fn json_round_trip_preserves_values() {
        let map = LinearMap::new(
            DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-7, 3.0, 4.25, 1e12, -0.0625]),
            Some(DVector::from_vec(vec![1.5, -0.75])),
        )
        .unwrap();
        let back = parse_linear_map(&map.to_json_string()).unwrap();
        assert_eq!(&map, &back);
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let map = LinearMap::new(DMatrix::identity(2, 2), None).unwrap();
        let svd = svd_ascending(&map, 0.0).unwrap();
        assert_eq!(svd.rank(), 2);
        assert_eq!(svd.singular_values(), &[1.0, 1.0]);
    }

    #[test]
    fn diag234_singular_values_ascend() {
        let svd = svd_ascending(&diag234(), 0.0).unwrap();
        assert_eq!(svd.rank(), 3);
        for (got, want) in svd.singular_values().iter().zip([2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn rank_deficient_map_drops_zero_value() {
        // Oracle: the eigenvalues of A^T A = [[9,0],[0,0]] are the roots of
        // l^2 - tr l + det = 0; singular values are their square roots.
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let ata = a.transpose() * &a;
        let tr: f64 = ata[(0, 0)] + ata[(1, 1)];
        let det: f64 = ata[(0, 0)] * ata[(1, 1)] - ata[(0, 1)] * ata[(1, 0)];
        let disc = (tr * tr - 4.0 * det).sqrt();
        let mut eig: [f64; 2] = [(tr - disc) / 2.0, (tr + disc) / 2.0];
        eig[0] = eig[0].max(0.0);
        let expected: Vec<f64> = eig
            .iter()
            .copied()
            .map(f64::sqrt)
            .filter(|s| *s > 1e-12)
            .collect();
        assert_eq!(expected, vec![3.0]);

        let map = LinearMap::new(a, None).unwrap();
        let svd = svd_ascending(&map, 0.0).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!((svd.singular_values()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_map_has_rank_zero() {
        let map = LinearMap::new(DMatrix::zeros(3, 4), None).unwrap();
        let svd = svd_ascending(&map, 0.0).unwrap();
        assert_eq!(svd.rank(), 0);
        assert!(svd.singular_values().is_empty());
        assert_eq!(svd.u_tilde().ncols(), 0);
        // The completed bases must still be orthonormal.
        assert!(max_abs(&(svd.u().transpose() * svd.u() - DMatrix::identity(3, 3))) < 1e-10);
        assert!(max_abs(&(svd.v().transpose() * svd.v() - DMatrix::identity(4, 4))) < 1e-10);
    }

    #[test]
    fn explicit_tolerance_truncates_small_values() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        let map = LinearMap::new(a, None).unwrap();
        assert_eq!(svd_ascending(&map, 0.0).unwrap().rank(), 2);
        assert_eq!(svd_ascending(&map, 1e-9).unwrap().rank(), 1);
        assert!(matches!(
            svd_ascending(&map, -1.0),
            Err(LinmapError::InvalidRankTolerance(_))
        ));
    }

    #[test]
    fn factorization_invariants_hold_on_a_dense_map() {
        let map = LinearMap::new(
            DMatrix::from_row_slice(4, 3, &[
                0.5, -1.25, 2.0, //
                3.5, 0.75, -0.5, //
                -2.25, 1.5, 0.25, //
                1.0, -0.125, -3.0,
            ]),
            None,
        )
        .unwrap();
        let svd = svd_ascending(&map, 0.0).unwrap();
        let (m, n) = (map.rows(), map.cols());
        assert!(max_abs(&(svd.u().transpose() * svd.u() - DMatrix::identity(m, m))) < 1e-10);
        assert!(max_abs(&(svd.v().transpose() * svd.v() - DMatrix::identity(n, n))) < 1e-10);
        let s_max = svd.singular_values().last().copied().unwrap_or(0.0);
        assert!(max_abs(&(map.entries() - svd.reconstruct())) <= 1e-8 * s_max.max(1.0));
        for w in svd.singular_values().windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn var_ax_matches_trace_and_examples() {
        let svd = svd_ascending(&diag234(), 0.0).unwrap();
        assert!((var_ax(&svd) - 29.0).abs() < 1e-12);

        let zero = LinearMap::new(DMatrix::zeros(2, 2), None).unwrap();
        assert_eq!(var_ax(&svd_ascending(&zero, 0.0).unwrap()), 0.0);

        let eye = LinearMap::new(DMatrix::identity(2, 2), None).unwrap();
        assert!((var_ax(&svd_ascending(&eye, 0.0).unwrap()) - 2.0).abs() < 1e-12);

        // trace(A A^T) cross-check on a dense map
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.25, 3.0, -1.5]);
        let trace = (&a * a.transpose()).trace();
        let map = LinearMap::new(a, None).unwrap();
        let got = var_ax(&svd_ascending(&map, 0.0).unwrap());
        assert!((got - trace).abs() <= 1e-8 * trace.abs());
    }

    #[test]
    fn mmse_given_exact_function_value() {
        let svd = svd_ascending(&diag234(), 0.0).unwrap();
        assert_eq!(mmse_x_given_ax(&svd, 5), 2.0);

        let eye = LinearMap::new(DMatrix::identity(2, 2), None).unwrap();
        assert_eq!(mmse_x_given_ax(&svd_ascending(&eye, 0.0).unwrap(), 2), 0.0);

        let zero = LinearMap::new(DMatrix::zeros(3, 4), None).unwrap();
        assert_eq!(mmse_x_given_ax(&svd_ascending(&zero, 0.0).unwrap(), 4), 4.0);
    }
}
