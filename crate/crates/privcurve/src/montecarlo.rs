//! Independent empirical verification: recoverability distortion,
//! per-component distortions, and MMSE estimated from seeded samples and
//! compared against the closed forms.
//!
//! Everything here is deterministic given `(seed, shard_count)`: shards own
//! derived RNG streams, partial sums are merged in shard order, and the
//! accumulators use Neumaier-compensated summation so million-trial means
//! carry no measurable roundoff.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimator::{self, LinearEstimator};
use crate::linmap::LinearMap;
use crate::mechanism::{build_mechanism, CoordinateMode, Mechanism, MechanismError, SampleBatch};
use crate::rng::{self, shard_ranges, DEFAULT_SHARD_COUNT};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("trials must be >= 2, got {0}")]
    TooFewTrials(usize),
    #[error("refit needs at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("candidate {name:?}: expected dims {expected_in}->{expected_out}, got {got_in}->{got_out}")]
    CandidateDimensionMismatch {
        name: String,
        expected_in: usize,
        expected_out: usize,
        got_in: usize,
        got_out: usize,
    },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: Kahan) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean and standard error of the mean from compensated first/second moments.
fn mean_se(sum: &Kahan, sumsq: &Kahan, count: usize) -> (f64, f64) {
    let nf = count as f64;
    let mean = sum.total() / nf;
    let var = ((sumsq.total() / nf) - mean * mean).max(0.0) * nf / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Everything measured in one simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
    pub shard_count: usize,
    pub rng_id: String,
    /// Mean squared recoverability distortion `||target - Z||^2`.
    pub empirical_distortion: f64,
    pub empirical_distortion_se: f64,
    /// Per-component distortions in ascending singular-value order.
    pub empirical_component_distortions: Vec<f64>,
    pub empirical_component_distortion_ses: Vec<f64>,
    /// Mean `||X - X_hat||^2` under the analytic readout.
    pub empirical_mmse: f64,
    pub empirical_mmse_se: f64,
    /// Mean `||X - X_hat||^2` under a readout refit from sample covariances.
    pub empirical_mmse_refit: f64,
    /// `sum rho_i`.
    pub closed_form_distortion: f64,
    /// `n - r + sum rho_i / s_i^2`.
    pub closed_form_privacy: f64,
    /// Per-component caps `rho_i <= s_i^2` within 3 standard errors.
    pub constraint_pass: Vec<bool>,
}

impl SimulationReport {
    pub fn all_constraints_pass(&self) -> bool {
        self.constraint_pass.iter().all(|&p| p)
    }

    /// One row of the sweep CSV (see [`SWEEP_CSV_HEADER`]).
    pub fn to_sweep_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            crate::fmt::sig12(self.rho),
            crate::fmt::sig12(self.closed_form_privacy),
            crate::fmt::sig12(self.empirical_mmse),
            crate::fmt::sig12(self.empirical_mmse_se),
            crate::fmt::sig12(self.empirical_distortion),
            crate::fmt::sig12(self.empirical_distortion_se),
            self.all_constraints_pass()
        )
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const SWEEP_CSV_HEADER: &str = "rho,pi_closed,mmse_emp,mmse_se,dist_emp,dist_se,pass";

struct StatsPartial {
    dist: Kahan,
    dist_sq: Kahan,
    comp: Vec<Kahan>,
    comp_sq: Vec<Kahan>,
    mmse: Kahan,
    mmse_sq: Kahan,
}

/// Runs the mechanism for `trials` draws and measures every report field
/// with the default shard layout.
pub fn simulate(
    mech: &Mechanism,
    trials: usize,
    seed: u64,
) -> Result<SimulationReport, SimulationError> {
    simulate_with_shards(mech, trials, seed, DEFAULT_SHARD_COUNT)
}

/// [`simulate`] with an explicit shard count.
pub fn simulate_with_shards(
    mech: &Mechanism,
    trials: usize,
    seed: u64,
    shards: usize,
) -> Result<SimulationReport, SimulationError> {
    if trials < 2 {
        return Err(SimulationError::TooFewTrials(trials));
    }
    let batch = mech.sample_joint_sharded(trials, seed, shards)?;
    let est = estimator::mmse_estimator_for_mechanism(mech);
    let r = mech.rank();

    // Rows of U~^T, used to project original-coordinate residuals back onto
    // the singular components. In reduced mode the residual is already
    // componentwise.
    let u_tilde_t: Option<Vec<f64>> = match mech.mode() {
        CoordinateMode::Reduced => None,
        CoordinateMode::Original => {
            let u = mech.svd().u_tilde();
            let m = u.nrows();
            let mut flat = vec![0.0; r * m];
            for c in 0..r {
                for i in 0..m {
                    flat[c * m + i] = u[(i, c)];
                }
            }
            Some(flat)
        }
    };

    let ranges = shard_ranges(trials, batch.shard_count());
    let partials: Vec<StatsPartial> = ranges
        .into_par_iter()
        .map(|range| {
            let mut p = StatsPartial {
                dist: Kahan::default(),
                dist_sq: Kahan::default(),
                comp: vec![Kahan::default(); r],
                comp_sq: vec![Kahan::default(); r],
                mmse: Kahan::default(),
                mmse_sq: Kahan::default(),
            };
            let k = batch.dim_z();
            let mut residual = vec![0.0; k];
            for i in range {
                let z = batch.z_row(i);
                let fx = batch.fx_row(i);
                for j in 0..k {
                    residual[j] = fx[j] - z[j];
                }
                let dist: f64 = residual.iter().map(|v| v * v).sum();
                p.dist.add(dist);
                p.dist_sq.add(dist * dist);

                match &u_tilde_t {
                    None => {
                        for c in 0..r {
                            let d = residual[c] * residual[c];
                            p.comp[c].add(d);
                            p.comp_sq[c].add(d * d);
                        }
                    }
                    Some(ut) => {
                        let m = k;
                        for c in 0..r {
                            let row = &ut[c * m..(c + 1) * m];
                            let mut acc = 0.0;
                            for (a, b) in row.iter().zip(&residual) {
                                acc += a * b;
                            }
                            let d = acc * acc;
                            p.comp[c].add(d);
                            p.comp_sq[c].add(d * d);
                        }
                    }
                }

                let e = est.residual_sq(batch.x_row(i), z);
                p.mmse.add(e);
                p.mmse_sq.add(e * e);
            }
            p
        })
        .collect();

    let mut dist = Kahan::default();
    let mut dist_sq = Kahan::default();
    let mut comp = vec![Kahan::default(); r];
    let mut comp_sq = vec![Kahan::default(); r];
    let mut mmse = Kahan::default();
    let mut mmse_sq = Kahan::default();
    for p in partials {
        dist.merge(p.dist);
        dist_sq.merge(p.dist_sq);
        for c in 0..r {
            comp[c].merge(p.comp[c]);
            comp_sq[c].merge(p.comp_sq[c]);
        }
        mmse.merge(p.mmse);
        mmse_sq.merge(p.mmse_sq);
    }

    let (empirical_distortion, empirical_distortion_se) = mean_se(&dist, &dist_sq, trials);
    let (empirical_mmse, empirical_mmse_se) = mean_se(&mmse, &mmse_sq, trials);
    let mut empirical_component_distortions = Vec::with_capacity(r);
    let mut empirical_component_distortion_ses = Vec::with_capacity(r);
    for c in 0..r {
        let (m, se) = mean_se(&comp[c], &comp_sq[c], trials);
        empirical_component_distortions.push(m);
        empirical_component_distortion_ses.push(se);
    }

    let refit = refit_estimator(&batch)?;
    let empirical_mmse_refit = mean_residual(&batch, &refit);

    let s_squared = mech.svd().s_squared();
    let constraint_pass: Vec<bool> = (0..r)
        .map(|c| {
            empirical_component_distortions[c]
                <= s_squared[c] + 3.0 * empirical_component_distortion_ses[c]
        })
        .collect();

    let closed_form_distortion = mech.allocation().total_effective();
    let n = mech.input_dim();
    let closed_form_privacy = (n - r) as f64
        + mech
            .allocation()
            .per_component()
            .iter()
            .zip(&s_squared)
            .map(|(rho_i, sq)| rho_i / sq)
            .sum::<f64>();

    Ok(SimulationReport {
        rho: mech.rho(),
        trials,
        seed,
        shard_count: batch.shard_count(),
        rng_id: batch.rng_id().to_string(),
        empirical_distortion,
        empirical_distortion_se,
        empirical_component_distortions,
        empirical_component_distortion_ses,
        empirical_mmse,
        empirical_mmse_se,
        empirical_mmse_refit,
        closed_form_distortion,
        closed_form_privacy,
        constraint_pass,
    })
}

/// Mean `||x - W(z - center)||^2` over a batch, merged in shard order.
fn mean_residual(batch: &SampleBatch, est: &LinearEstimator) -> f64 {
    let ranges = shard_ranges(batch.count(), batch.shard_count());
    let partials: Vec<Kahan> = ranges
        .into_par_iter()
        .map(|range| {
            let mut acc = Kahan::default();
            for i in range {
                acc.add(est.residual_sq(batch.x_row(i), batch.z_row(i)));
            }
            acc
        })
        .collect();
    let mut total = Kahan::default();
    for p in partials {
        total.merge(p);
    }
    total.total() / batch.count() as f64
}

struct MomentPartial {
    sum_x: Vec<Kahan>,
    sum_z: Vec<Kahan>,
    sum_xz: Vec<Kahan>,
    sum_zz: Vec<Kahan>,
    sum_xx: Kahan,
}

/// Refits the linear readout from the batch's sample covariances; the
/// independent oracle for the analytic estimator.
pub fn refit_estimator(batch: &SampleBatch) -> Result<LinearEstimator, SimulationError> {
    let n = batch.dim_x();
    let k = batch.dim_z();
    let needed = 10 * (n + k);
    if batch.count() < needed {
        return Err(SimulationError::InsufficientSamples {
            needed,
            got: batch.count(),
        });
    }

    let ranges = shard_ranges(batch.count(), batch.shard_count());
    let partials: Vec<MomentPartial> = ranges
        .into_par_iter()
        .map(|range| {
            let mut p = MomentPartial {
                sum_x: vec![Kahan::default(); n],
                sum_z: vec![Kahan::default(); k],
                sum_xz: vec![Kahan::default(); n * k],
                sum_zz: vec![Kahan::default(); k * k],
                sum_xx: Kahan::default(),
            };
            for i in range {
                let x = batch.x_row(i);
                let z = batch.z_row(i);
                for (j, v) in x.iter().enumerate() {
                    p.sum_x[j].add(*v);
                    p.sum_xx.add(v * v);
                    for (l, w) in z.iter().enumerate() {
                        p.sum_xz[j * k + l].add(v * w);
                    }
                }
                for (j, v) in z.iter().enumerate() {
                    p.sum_z[j].add(*v);
                    for (l, w) in z.iter().enumerate() {
                        p.sum_zz[j * k + l].add(v * w);
                    }
                }
            }
            p
        })
        .collect();

    let mut sum_x = vec![Kahan::default(); n];
    let mut sum_z = vec![Kahan::default(); k];
    let mut sum_xz = vec![Kahan::default(); n * k];
    let mut sum_zz = vec![Kahan::default(); k * k];
    let mut sum_xx = Kahan::default();
    for p in partials {
        for (a, b) in sum_x.iter_mut().zip(p.sum_x) {
            a.merge(b);
        }
        for (a, b) in sum_z.iter_mut().zip(p.sum_z) {
            a.merge(b);
        }
        for (a, b) in sum_xz.iter_mut().zip(p.sum_xz) {
            a.merge(b);
        }
        for (a, b) in sum_zz.iter_mut().zip(p.sum_zz) {
            a.merge(b);
        }
        sum_xx.merge(p.sum_xx);
    }

    let nf = batch.count() as f64;
    let x_mean = DVector::from_iterator(n, sum_x.iter().map(|s| s.total() / nf));
    let z_mean = DVector::from_iterator(k, sum_z.iter().map(|s| s.total() / nf));
    // Centered covariances.
    let mut c_xz = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            c_xz[(i, j)] = sum_xz[i * k + j].total() / nf - x_mean[i] * z_mean[j];
        }
    }
    let mut c_z = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            c_z[(i, j)] = sum_zz[i * k + j].total() / nf - z_mean[i] * z_mean[j];
        }
    }
    let max_entry = c_z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = crate::estimator::pinv_tolerance(max_entry, k.max(1));
    let c_z_pinv = c_z
        .pseudo_inverse(tol)
        .unwrap_or_else(|_| DMatrix::zeros(k, k));
    let w = &c_xz * c_z_pinv;

    let est = LinearEstimator::new(w, z_mean, 0.0);
    let mmse = mean_residual(batch, &est);
    Ok(LinearEstimator::new(
        est.w().clone(),
        est.center().clone(),
        mmse,
    ))
}

/// A candidate query responder measured by [`compare_mechanisms`].
///
/// Implementations draw whatever randomness they need from the supplied
/// per-shard stream, which keeps comparisons reproducible.
pub trait ResponseSampler: Sync {
    fn name(&self) -> &str;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn respond_into(&self, x: &[f64], rng: &mut ChaCha12Rng, out: &mut [f64]);
}

impl ResponseSampler for Mechanism {
    fn name(&self) -> &str {
        "mechanism"
    }

    fn input_dim(&self) -> usize {
        Mechanism::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Mechanism::output_dim(self)
    }

    fn respond_into(&self, x: &[f64], rng: &mut ChaCha12Rng, out: &mut [f64]) {
        let mut noise = vec![0.0; self.rank()];
        rng::fill_standard_normal(rng, &mut noise);
        match self.mode() {
            CoordinateMode::Reduced => self.respond_reduced_into(x, &noise, out),
            CoordinateMode::Original => {
                let mut reduced = vec![0.0; self.rank()];
                self.respond_reduced_into(x, &noise, &mut reduced);
                self.lift_into(&reduced, out);
            }
        }
    }
}

/// Baseline (a): `Z = A x + b + sigma N` with `sigma^2 = rho / m`, the
/// isotropic way to spend the budget.
pub struct IsotropicBaseline {
    a: Vec<f64>, // m x n row-major
    b: Vec<f64>,
    m: usize,
    n: usize,
    sigma: f64,
}

impl IsotropicBaseline {
    pub fn new(map: &LinearMap, rho: f64) -> Self {
        let (m, n) = (map.rows(), map.cols());
        Self {
            a: flat_rows(map),
            b: offset_or_zeros(map),
            m,
            n,
            sigma: (rho / m as f64).sqrt(),
        }
    }
}

impl ResponseSampler for IsotropicBaseline {
    fn name(&self) -> &str {
        "isotropic"
    }

    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.m
    }

    fn respond_into(&self, x: &[f64], rng: &mut ChaCha12Rng, out: &mut [f64]) {
        let mut noise = vec![0.0; self.m];
        rng::fill_standard_normal(rng, &mut noise);
        for i in 0..self.m {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (a, v) in row.iter().zip(x) {
                acc += a * v;
            }
            out[i] = acc + self.b[i] + self.sigma * noise[i];
        }
    }
}

/// Baseline (b): `Z = c A x + b` with `c` chosen so the expected distortion
/// is exactly `rho`: `(1 - c)^2 sum s_i^2 = rho`, clamped to `c = 0` past
/// saturation.
pub struct AttenuationBaseline {
    a: Vec<f64>,
    b: Vec<f64>,
    m: usize,
    n: usize,
    c: f64,
}

impl AttenuationBaseline {
    pub fn new(map: &LinearMap, rho: f64) -> Self {
        let (m, n) = (map.rows(), map.cols());
        // sum s_i^2 = squared Frobenius norm, no factorization needed.
        let frob2: f64 = map.entries().iter().map(|v| v * v).sum();
        let c = if frob2 > 0.0 {
            (1.0 - (rho / frob2).sqrt()).max(0.0)
        } else {
            1.0
        };
        Self {
            a: flat_rows(map),
            b: offset_or_zeros(map),
            m,
            n,
            c,
        }
    }

    pub fn gain(&self) -> f64 {
        self.c
    }
}

impl ResponseSampler for AttenuationBaseline {
    fn name(&self) -> &str {
        "attenuation"
    }

    fn input_dim(&self) -> usize {
        self.n
    }

    fn output_dim(&self) -> usize {
        self.m
    }

    fn respond_into(&self, x: &[f64], _rng: &mut ChaCha12Rng, out: &mut [f64]) {
        for i in 0..self.m {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (a, v) in row.iter().zip(x) {
                acc += a * v;
            }
            out[i] = self.c * acc + self.b[i];
        }
    }
}

fn flat_rows(map: &LinearMap) -> Vec<f64> {
    let (m, n) = (map.rows(), map.cols());
    let mut flat = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            flat[i * n + j] = map.entries()[(i, j)];
        }
    }
    flat
}

fn offset_or_zeros(map: &LinearMap) -> Vec<f64> {
    match map.offset() {
        Some(b) => b.iter().copied().collect(),
        None => vec![0.0; map.rows()],
    }
}

/// Draws `(X, Z, AX + b)` rows from an arbitrary sampler in original
/// coordinates.
pub fn sample_candidate(
    map: &LinearMap,
    sampler: &dyn ResponseSampler,
    trials: usize,
    seed: u64,
    shards: usize,
) -> Result<SampleBatch, SimulationError> {
    let (m, n) = (map.rows(), map.cols());
    if sampler.input_dim() != n || sampler.output_dim() != m {
        return Err(SimulationError::CandidateDimensionMismatch {
            name: sampler.name().to_string(),
            expected_in: n,
            expected_out: m,
            got_in: sampler.input_dim(),
            got_out: sampler.output_dim(),
        });
    }
    if trials == 0 {
        return Err(SimulationError::TooFewTrials(0));
    }
    let a = flat_rows(map);
    let b = offset_or_zeros(map);

    let ranges = shard_ranges(trials, shards.max(1));
    let shard_count = ranges.len();
    let mut x = vec![0.0; trials * n];
    let mut z = vec![0.0; trials * m];
    let mut fx = vec![0.0; trials * m];

    {
        let mut jobs = Vec::with_capacity(shard_count);
        let (mut xs, mut zs, mut fs) = (&mut x[..], &mut z[..], &mut fx[..]);
        for (shard, range) in ranges.iter().enumerate() {
            let rows = range.len();
            let (x_head, x_tail) = xs.split_at_mut(rows * n);
            let (z_head, z_tail) = zs.split_at_mut(rows * m);
            let (f_head, f_tail) = fs.split_at_mut(rows * m);
            jobs.push((shard as u64, rows, x_head, z_head, f_head));
            xs = x_tail;
            zs = z_tail;
            fs = f_tail;
        }
        jobs.into_par_iter()
            .for_each(|(shard, rows, x_block, z_block, f_block)| {
                let mut stream = rng::seeded_rng(rng::shard_seed(seed, shard));
                for row in 0..rows {
                    let xs = &mut x_block[row * n..(row + 1) * n];
                    rng::fill_standard_normal(&mut stream, xs);
                    let fs = &mut f_block[row * m..(row + 1) * m];
                    for i in 0..m {
                        let arow = &a[i * n..(i + 1) * n];
                        let mut acc = 0.0;
                        for (av, xv) in arow.iter().zip(xs.iter()) {
                            acc += av * xv;
                        }
                        fs[i] = acc + b[i];
                    }
                    sampler.respond_into(xs, &mut stream, &mut z_block[row * m..(row + 1) * m]);
                }
            });
    }

    Ok(SampleBatch::from_parts(
        trials,
        n,
        m,
        x,
        z,
        fx,
        seed,
        shard_count,
    ))
}

/// One measured row of a mechanism comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub empirical_distortion: f64,
    pub empirical_distortion_se: f64,
    pub empirical_mmse: f64,
    pub empirical_mmse_se: f64,
}

pub const COMPARISON_CSV_HEADER: &str = "name,dist_emp,dist_se,mmse_emp,mmse_se";

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.name,
            crate::fmt::sig12(row.empirical_distortion),
            crate::fmt::sig12(row.empirical_distortion_se),
            crate::fmt::sig12(row.empirical_mmse),
            crate::fmt::sig12(row.empirical_mmse_se),
        ));
    }
    out
}

/// Measures the built-in baselines (isotropic, attenuation, optimal) plus
/// any extra candidates at budget `rho`.
///
/// Each candidate's readout is refit on a fitting batch and scored on a
/// second batch with derived seeds, so reported MMSEs are honest
/// out-of-sample estimates.
pub fn compare_mechanisms(
    map: &LinearMap,
    rho: f64,
    extras: &[&dyn ResponseSampler],
    trials: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>, SimulationError> {
    compare_mechanisms_with_shards(map, rho, extras, trials, seed, DEFAULT_SHARD_COUNT)
}

pub fn compare_mechanisms_with_shards(
    map: &LinearMap,
    rho: f64,
    extras: &[&dyn ResponseSampler],
    trials: usize,
    seed: u64,
    shards: usize,
) -> Result<Vec<ComparisonRow>, SimulationError> {
    if trials < 2 {
        return Err(SimulationError::TooFewTrials(trials));
    }
    let isotropic = IsotropicBaseline::new(map, rho);
    let attenuation = AttenuationBaseline::new(map, rho);
    let optimal = build_mechanism(map.clone(), rho, 0.0, CoordinateMode::Original)?;

    let mut rows = Vec::new();
    let named: Vec<(&str, &dyn ResponseSampler)> = vec![
        ("isotropic", &isotropic),
        ("attenuation", &attenuation),
        ("optimal", &optimal),
    ];
    for (idx, (name, sampler)) in named
        .into_iter()
        .chain(extras.iter().map(|s| (s.name(), *s)))
        .enumerate()
    {
        let fit_seed = rng::shard_seed(seed, 0x5eed_0000 + 2 * idx as u64);
        let eval_seed = rng::shard_seed(seed, 0x5eed_0001 + 2 * idx as u64);
        let fit = sample_candidate(map, sampler, trials, fit_seed, shards)?;
        let readout = refit_estimator(&fit)?;
        let eval = sample_candidate(map, sampler, trials, eval_seed, shards)?;

        let ranges = shard_ranges(eval.count(), eval.shard_count());
        let partials: Vec<(Kahan, Kahan, Kahan, Kahan)> = ranges
            .into_par_iter()
            .map(|range| {
                let mut dist = Kahan::default();
                let mut dist_sq = Kahan::default();
                let mut mmse = Kahan::default();
                let mut mmse_sq = Kahan::default();
                for i in range {
                    let z = eval.z_row(i);
                    let fx = eval.fx_row(i);
                    let d: f64 = z
                        .iter()
                        .zip(fx)
                        .map(|(zv, fv)| (fv - zv) * (fv - zv))
                        .sum();
                    dist.add(d);
                    dist_sq.add(d * d);
                    let e = readout.residual_sq(eval.x_row(i), z);
                    mmse.add(e);
                    mmse_sq.add(e * e);
                }
                (dist, dist_sq, mmse, mmse_sq)
            })
            .collect();
        let mut dist = Kahan::default();
        let mut dist_sq = Kahan::default();
        let mut mmse = Kahan::default();
        let mut mmse_sq = Kahan::default();
        for (a, b, c, d) in partials {
            dist.merge(a);
            dist_sq.merge(b);
            mmse.merge(c);
            mmse_sq.merge(d);
        }
        let (empirical_distortion, empirical_distortion_se) =
            mean_se(&dist, &dist_sq, eval.count());
        let (empirical_mmse, empirical_mmse_se) = mean_se(&mmse, &mmse_sq, eval.count());
        rows.push(ComparisonRow {
            name: name.to_string(),
            empirical_distortion,
            empirical_distortion_se,
            empirical_mmse,
            empirical_mmse_se,
        });
    }
    Ok(rows)
}
