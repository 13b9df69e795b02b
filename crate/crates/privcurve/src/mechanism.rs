//! The optimal attenuate-and-add-noise query response, in both coordinate
//! systems, plus the seeded batch sampler.
//!
//! In reduced coordinates the response to a datum `x` is
//! `z = D_a (S V^T x) + D_no N` with `N` standard normal: each of the `r`
//! informative components of the function value is attenuated and then
//! contaminated with just enough independent Gaussian noise to spend its
//! distortion budget. The original-coordinates response
//! `z = U~ D_a U~^T (A x) + U~ D_no N (+ b)` is the same response rotated
//! back into the querier's frame; the two satisfy
//! `original = U~ * reduced + b` exactly.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{self, AllocationError, AttenuationPair, NoiseAllocation};
use crate::linmap::{LinearMap, LinmapError, SvdFactorization};
use crate::rng::{self, DEFAULT_SHARD_COUNT, RNG_ID};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error(transparent)]
    Linmap(#[from] LinmapError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("shard count must be at least 1")]
    NoShards,
}

/// Which frame the response lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateMode {
    /// `r`-dimensional response against the target `S~ V^T x`.
    Reduced,
    /// `m`-dimensional response against the target `A x + b`.
    Original,
}

impl std::str::FromStr for CoordinateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reduced" => Ok(Self::Reduced),
            "original" => Ok(Self::Original),
            other => Err(format!("unknown coordinate mode {other:?} (expected \"reduced\" or \"original\")")),
        }
    }
}

/// A fully assembled optimal query responder.
#[derive(Debug, Clone)]
pub struct Mechanism {
    map: LinearMap,
    svd: SvdFactorization,
    allocation: NoiseAllocation,
    atten: AttenuationPair,
    mode: CoordinateMode,
    // Flat row-major copies of the operators on the sampling hot path.
    reduced_op: Vec<f64>, // r x n: diag(s) V~^T
    u_tilde: Vec<f64>,    // m x r
    offset: Vec<f64>,     // length m (zeros when the map has no offset)
}

/// Factors the map at `rank_tolerance`, fills the budget `rho`, and wires up
/// the responder.
pub fn build_mechanism(
    map: LinearMap,
    rho: f64,
    rank_tolerance: f64,
    mode: CoordinateMode,
) -> Result<Mechanism, MechanismError> {
    let svd = crate::linmap::svd_ascending(&map, rank_tolerance)?;
    let allocation = allocation::allocate(&svd, rho)?;
    let atten = allocation::attenuation_pair(&allocation, &svd)?;

    let (m, n, r) = (map.rows(), map.cols(), svd.rank());
    let mut reduced_op = vec![0.0; r * n];
    for i in 0..r {
        let s = svd.singular_values()[i];
        for j in 0..n {
            reduced_op[i * n + j] = s * svd.v_tilde()[(j, i)];
        }
    }
    let mut u_tilde = vec![0.0; m * r];
    for i in 0..m {
        for k in 0..r {
            u_tilde[i * r + k] = svd.u_tilde()[(i, k)];
        }
    }
    let offset = match map.offset() {
        Some(b) => b.iter().copied().collect(),
        None => vec![0.0; m],
    };

    Ok(Mechanism {
        map,
        svd,
        allocation,
        atten,
        mode,
        reduced_op,
        u_tilde,
        offset,
    })
}

impl Mechanism {
    pub fn map(&self) -> &LinearMap {
        &self.map
    }

    pub fn svd(&self) -> &SvdFactorization {
        &self.svd
    }

    pub fn allocation(&self) -> &NoiseAllocation {
        &self.allocation
    }

    pub fn attenuation(&self) -> &AttenuationPair {
        &self.atten
    }

    pub fn mode(&self) -> CoordinateMode {
        self.mode
    }

    /// The requested recoverability budget.
    pub fn rho(&self) -> f64 {
        self.allocation.total_requested()
    }

    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    pub fn input_dim(&self) -> usize {
        self.map.cols()
    }

    /// `r` in reduced mode, `m` in original mode.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            CoordinateMode::Reduced => self.svd.rank(),
            CoordinateMode::Original => self.map.rows(),
        }
    }

    /// The analytic per-component distortions: exactly the allocated budgets
    /// `rho_i`, summing to `min(rho, sum s_i^2)`.
    pub fn component_distortions_closed_form(&self) -> Vec<f64> {
        self.allocation.per_component().to_vec()
    }

    /// The response to `x` with caller-supplied component noise (length `r`).
    pub fn respond(
        &self,
        x: &DVector<f64>,
        noise: &DVector<f64>,
    ) -> Result<DVector<f64>, MechanismError> {
        let (n, r) = (self.input_dim(), self.rank());
        if x.len() != n {
            return Err(MechanismError::DimensionMismatch {
                what: "data vector",
                expected: n,
                got: x.len(),
            });
        }
        if noise.len() != r {
            return Err(MechanismError::DimensionMismatch {
                what: "noise vector",
                expected: r,
                got: noise.len(),
            });
        }
        let mut reduced = vec![0.0; r];
        self.respond_reduced_into(x.as_slice(), noise.as_slice(), &mut reduced);
        match self.mode {
            CoordinateMode::Reduced => Ok(DVector::from_vec(reduced)),
            CoordinateMode::Original => {
                let mut out = vec![0.0; self.map.rows()];
                self.lift_into(&reduced, &mut out);
                Ok(DVector::from_vec(out))
            }
        }
    }

    /// `out[i] = d_a[i] * (diag(s) V~^T x)[i] + d_no[i] * noise[i]`.
    pub(crate) fn respond_reduced_into(&self, x: &[f64], noise: &[f64], out: &mut [f64]) {
        let n = self.input_dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.reduced_op[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = self.atten.d_a()[i] * acc + self.atten.d_no()[i] * noise[i];
        }
    }

    /// `out = U~ * reduced + b`.
    pub(crate) fn lift_into(&self, reduced: &[f64], out: &mut [f64]) {
        let r = self.rank();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.u_tilde[i * r..(i + 1) * r];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(reduced) {
                acc += a * b;
            }
            *o = acc + self.offset[i];
        }
    }

    /// The recoverability target in this mechanism's output coordinates:
    /// `S~ V^T x` (reduced) or `A x + b` (original).
    pub(crate) fn target_into(&self, x: &[f64], scratch_reduced: &mut [f64], out: &mut [f64]) {
        let n = self.input_dim();
        for (i, t) in scratch_reduced.iter_mut().enumerate() {
            let row = &self.reduced_op[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *t = acc;
        }
        match self.mode {
            CoordinateMode::Reduced => out.copy_from_slice(scratch_reduced),
            CoordinateMode::Original => {
                // A x + b = U~ (diag(s) V~^T x) + b, exactly the lift of the
                // reduced target.
                self.lift_into(scratch_reduced, out);
            }
        }
    }

    /// Draws `count` joint samples `(X, Z, target)` with the default shard
    /// layout.
    pub fn sample_joint(&self, count: usize, seed: u64) -> Result<SampleBatch, MechanismError> {
        self.sample_joint_sharded(count, seed, DEFAULT_SHARD_COUNT)
    }

    /// Draws `count` joint samples split across `shards` independent seeded
    /// streams. The batch is a pure function of `(seed, shards)`.
    pub fn sample_joint_sharded(
        &self,
        count: usize,
        seed: u64,
        shards: usize,
    ) -> Result<SampleBatch, MechanismError> {
        if count == 0 {
            return Err(MechanismError::EmptySample);
        }
        if shards == 0 {
            return Err(MechanismError::NoShards);
        }
        let n = self.input_dim();
        let r = self.rank();
        let k = self.output_dim();

        let mut x = vec![0.0; count * n];
        let mut z = vec![0.0; count * k];
        let mut fx = vec![0.0; count * k];

        // Contiguous row ranges per shard; the first `count % shards` shards
        // take one extra row.
        let shards = shards.min(count);
        let base = count / shards;
        let extra = count % shards;

        let mut jobs = Vec::with_capacity(shards);
        {
            let (mut xs, mut zs, mut fs) = (&mut x[..], &mut z[..], &mut fx[..]);
            for shard in 0..shards {
                let rows = base + usize::from(shard < extra);
                let (x_head, x_tail) = xs.split_at_mut(rows * n);
                let (z_head, z_tail) = zs.split_at_mut(rows * k);
                let (f_head, f_tail) = fs.split_at_mut(rows * k);
                jobs.push((shard as u64, rows, x_head, z_head, f_head));
                xs = x_tail;
                zs = z_tail;
                fs = f_tail;
            }
        }

        jobs.into_par_iter()
            .for_each(|(shard, rows, x_block, z_block, f_block)| {
                let mut rng = rng::seeded_rng(rng::shard_seed(seed, shard));
                let mut noise = vec![0.0; r];
                let mut reduced = vec![0.0; r];
                for row in 0..rows {
                    let xs = &mut x_block[row * n..(row + 1) * n];
                    rng::fill_standard_normal(&mut rng, xs);
                    rng::fill_standard_normal(&mut rng, &mut noise);
                    let zs = &mut z_block[row * k..(row + 1) * k];
                    let fs = &mut f_block[row * k..(row + 1) * k];
                    self.target_into(xs, &mut reduced, fs);
                    match self.mode {
                        CoordinateMode::Reduced => {
                            // Response = attenuated target + noise; reuse the
                            // already computed reduced target.
                            for i in 0..r {
                                zs[i] = self.atten.d_a()[i] * reduced[i]
                                    + self.atten.d_no()[i] * noise[i];
                            }
                        }
                        CoordinateMode::Original => {
                            for i in 0..r {
                                reduced[i] = self.atten.d_a()[i] * reduced[i]
                                    + self.atten.d_no()[i] * noise[i];
                            }
                            self.lift_into(&reduced, zs);
                        }
                    }
                }
            });

        Ok(SampleBatch {
            count,
            dim_x: n,
            dim_z: k,
            x,
            z,
            fx,
            seed,
            shard_count: shards,
            rng_id: RNG_ID.to_string(),
        })
    }

    /// JSON description with keys `m`, `n`, `r`, `rho`, `allocation`,
    /// `saturated`, `d_a`, `d_no`, `U_tilde`, `V_tilde`, `b`, `mode`.
    pub fn to_json_string(&self) -> String {
        let (m, n, r) = (self.map.rows(), self.map.cols(), self.rank());
        let doc = MechanismDocument {
            m,
            n,
            r,
            rho: self.rho(),
            allocation: self.allocation.per_component().to_vec(),
            saturated: self.allocation.is_saturated(),
            d_a: self.atten.d_a().to_vec(),
            d_no: self.atten.d_no().to_vec(),
            u_tilde: matrix_rows(self.svd.u_tilde()),
            v_tilde: matrix_rows(self.svd.v_tilde()),
            b: self.map.offset().map(|b| b.iter().copied().collect()),
            mode: self.mode,
        };
        serde_json::to_string_pretty(&doc).expect("mechanism serializes")
    }
}

#[derive(Serialize)]
struct MechanismDocument {
    m: usize,
    n: usize,
    r: usize,
    rho: f64,
    allocation: Vec<f64>,
    saturated: bool,
    d_a: Vec<f64>,
    d_no: Vec<f64>,
    #[serde(rename = "U_tilde")]
    u_tilde: Vec<Vec<f64>>,
    #[serde(rename = "V_tilde")]
    v_tilde: Vec<Vec<f64>>,
    b: Option<Vec<f64>>,
    mode: CoordinateMode,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// A materialized joint sample of data, responses, and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    count: usize,
    dim_x: usize,
    dim_z: usize,
    x: Vec<f64>,  // count x dim_x, row-major
    z: Vec<f64>,  // count x dim_z, row-major
    fx: Vec<f64>, // count x dim_z, row-major: the recoverability target
    seed: u64,
    shard_count: usize,
    rng_id: String,
}

impl SampleBatch {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        count: usize,
        dim_x: usize,
        dim_z: usize,
        x: Vec<f64>,
        z: Vec<f64>,
        fx: Vec<f64>,
        seed: u64,
        shard_count: usize,
    ) -> Self {
        Self {
            count,
            dim_x,
            dim_z,
            x,
            z,
            fx,
            seed,
            shard_count,
            rng_id: RNG_ID.to_string(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    pub fn rng_id(&self) -> &str {
        &self.rng_id
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim_x..(i + 1) * self.dim_x]
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim_z..(i + 1) * self.dim_z]
    }

    /// The recoverability target for row `i`, in response coordinates.
    pub fn fx_row(&self, i: usize) -> &[f64] {
        &self.fx[i * self.dim_z..(i + 1) * self.dim_z]
    }

    /// CSV with columns `x_1..x_n, z_1..z_k`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for j in 0..self.dim_x {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "x_{}", j + 1)?;
        }
        for j in 0..self.dim_z {
            write!(w, ",z_{}", j + 1)?;
        }
        writeln!(w)?;
        for i in 0..self.count {
            for (j, v) in self.x_row(i).iter().enumerate() {
                if j > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{}", crate::fmt::sig12(*v))?;
            }
            for v in self.z_row(i) {
                write!(w, ",{}", crate::fmt::sig12(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Compact binary layout: magic `PRIVBAT1`, then `count`, `dim_x`,
    /// `dim_z` as little-endian u64, then per row the `x` and `z` values as
    /// little-endian f64.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(BATCH_MAGIC)?;
        w.write_all(&(self.count as u64).to_le_bytes())?;
        w.write_all(&(self.dim_x as u64).to_le_bytes())?;
        w.write_all(&(self.dim_z as u64).to_le_bytes())?;
        for i in 0..self.count {
            for v in self.x_row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in self.z_row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub const BATCH_MAGIC: &[u8; 8] = b"PRIVBAT1";

/// The `(x, z)` table read back from the binary batch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryBatch {
    pub count: usize,
    pub dim_x: usize,
    pub dim_z: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Reads the layout written by [`SampleBatch::write_binary`].
pub fn read_binary_batch<R: Read>(r: &mut R) -> io::Result<BinaryBatch> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "bad magic: not a PRIVBAT1 batch",
        ));
    }
    let mut word = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> io::Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let count = read_u64(r)? as usize;
    let dim_x = read_u64(r)? as usize;
    let dim_z = read_u64(r)? as usize;
    let mut x = vec![0.0; count * dim_x];
    let mut z = vec![0.0; count * dim_z];
    let mut buf = [0u8; 8];
    for i in 0..count {
        for j in 0..dim_x {
            r.read_exact(&mut buf)?;
            x[i * dim_x + j] = f64::from_le_bytes(buf);
        }
        for j in 0..dim_z {
            r.read_exact(&mut buf)?;
            z[i * dim_z + j] = f64::from_le_bytes(buf);
        }
    }
    Ok(BinaryBatch {
        count,
        dim_x,
        dim_z,
        x,
        z,
    })
}
