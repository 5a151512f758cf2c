//! Monte-Carlo evaluation of the analytic state-evolution recursion, used to
//! check numerically that block-diagonal states stay block-diagonal and that
//! i.i.d. priors keep every block a scaled identity.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::denoiser::{theta_from_llr, DenoiserGain, StateFactor};
use crate::error::{Error, Result};
use crate::numerics::{complex_normal, exponential_correlation, CMatrix, CovarianceFactor, HermitianMatrix, C64};

/// Eigenvalue floor applied to every Monte-Carlo state estimate.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Samples per parallel work item.
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct SePrior {
    pub cov: HermitianMatrix,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeConfig {
    pub priors: Vec<SePrior>,
    pub noise_var: f64,
    pub pilot_length: usize,
    pub block_sizes: Vec<usize>,
    /// Draws per state-evolution step, shared evenly across devices (every
    /// device gets at least one).
    pub mc_samples: usize,
    pub iterations: usize,
    pub rng_seed: u64,
}

impl SeConfig {
    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 || self.pilot_length == 0 || self.mc_samples == 0 {
            return Err(Error::Config("state evolution needs dim, L and mc_samples ≥ 1".into()));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
        for p in &self.priors {
            if p.cov.dim() != dim {
                return Err(Error::Dimension(format!("prior of size {} for state of size {dim}", p.cov.dim())));
            }
            if !(0.0..=1.0).contains(&p.eps) {
                return Err(Error::Config(format!("activity probability {} outside [0, 1]", p.eps)));
            }
            if block_offmass(&p.cov, &self.block_sizes) > 1e-12 {
                return Err(Error::Config("prior covariance is not block-diagonal in block_sizes".into()));
            }
        }
        Ok(())
    }

    fn samples_for(&self, device: usize) -> usize {
        let n = self.priors.len();
        let base = self.mc_samples / n + usize::from(device < self.mc_samples % n);
        base.max(1)
    }
}

/// Σ⁰ = σ²I + (1/L)·Σ_n R_n.
pub fn se_initial(cfg: &SeConfig) -> HermitianMatrix {
    let dim = cfg.dim();
    let mut acc = CMatrix::identity(dim, dim) * C64::new(cfg.noise_var, 0.0);
    for p in &cfg.priors {
        acc += p.cov.as_matrix() / C64::new(cfg.pilot_length as f64, 0.0);
    }
    HermitianMatrix::symmetrized(acc)
}

/// Per-device quantities that stay fixed over one step, flattened row-major.
struct DeviceKernel {
    eps: f64,
    prior: CovarianceFactor,
    psi: Vec<C64>,
    omega: Vec<C64>,
    logdet_ratio: f64,
    samples: usize,
}

fn row_major(m: &CMatrix) -> Vec<C64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

/// Sum of e·eᴴ over `count` draws, e = g(x + v) − x, as a row-major d×d block.
fn error_outer_sum(k: &DeviceKernel, noise_l: &[C64], dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let mut acc = vec![C64::new(0.0, 0.0); dim * dim];
    let zero = C64::new(0.0, 0.0);
    let mut w = vec![zero; dim];
    let mut x = vec![zero; dim];
    let mut xi = vec![zero; dim];
    let mut e = vec![zero; dim];
    for _ in 0..count {
        let active = rng.random::<f64>() < k.eps;
        if active {
            for v in w.iter_mut() {
                *v = complex_normal(rng);
            }
            k.prior.apply(&w, &mut x);
        } else {
            x.fill(zero);
        }
        for v in w.iter_mut() {
            *v = complex_normal(rng);
        }
        for i in 0..dim {
            let noise: C64 = (0..=i).map(|j| noise_l[i * dim + j] * w[j]).sum();
            xi[i] = x[i] + noise;
        }
        let mut quad = 0.0;
        for i in 0..dim {
            let row: C64 = (0..dim).map(|j| k.omega[i * dim + j] * xi[j]).sum();
            quad += (xi[i].conj() * row).re;
        }
        let theta = theta_from_llr(k.logdet_ratio - quad, k.eps);
        for i in 0..dim {
            let g: C64 = (0..dim).map(|j| k.psi[i * dim + j] * xi[j]).sum::<C64>() * theta;
            e[i] = g - x[i];
        }
        for i in 0..dim {
            for j in i..dim {
                acc[i * dim + j] += e[i] * e[j].conj();
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            acc[i * dim + j] = acc[j * dim + i].conj();
        }
    }
    acc
}

/// One Monte-Carlo step Σ → σ²I + (1/L)·Σ_n Ê[(g(x_n+v) − x_n)(·)ᴴ].
///
/// A base seed is drawn from `rng`; each (device, chunk) work item then runs
/// on its own ChaCha stream, and partial sums are merged in index order, so
/// the result does not depend on the number of worker threads.
pub fn se_step_mc<R: Rng + ?Sized>(sigma: &HermitianMatrix, cfg: &SeConfig, rng: &mut R) -> Result<HermitianMatrix> {
    cfg.validate()?;
    let dim = cfg.dim();
    if sigma.dim() != dim {
        return Err(Error::Dimension(format!("state of size {} for blocks summing to {dim}", sigma.dim())));
    }
    let base_seed: u64 = rng.random();
    let state = StateFactor::new(sigma)?;
    let noise_l = row_major(&sigma.factor("state")?.lower());
    let kernels = cfg
        .priors
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let gain = DenoiserGain::new(&p.cov, sigma, &state)?;
            Ok(DeviceKernel {
                eps: p.eps,
                prior: CovarianceFactor::new(&p.cov),
                psi: row_major(&gain.psi),
                omega: row_major(gain.omega.as_matrix()),
                logdet_ratio: gain.logdet_ratio,
                samples: cfg.samples_for(n),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut work = Vec::new();
    for (n, k) in kernels.iter().enumerate() {
        for (c, start) in (0..k.samples).step_by(CHUNK).enumerate() {
            work.push((n, c, CHUNK.min(k.samples - start)));
        }
    }
    let partials: Vec<(usize, Vec<C64>)> = work
        .par_iter()
        .enumerate()
        .map(|(idx, &(n, _, count))| {
            let mut chunk_rng = ChaCha8Rng::seed_from_u64(base_seed);
            chunk_rng.set_stream(idx as u64);
            (n, error_outer_sum(&kernels[n], &noise_l, dim, count, &mut chunk_rng))
        })
        .collect();

    let mut per_device = vec![vec![C64::new(0.0, 0.0); dim * dim]; kernels.len()];
    for (n, part) in partials {
        for (a, b) in per_device[n].iter_mut().zip(part) {
            *a += b;
        }
    }
    let mut next = CMatrix::identity(dim, dim) * C64::new(cfg.noise_var, 0.0);
    let l = cfg.pilot_length as f64;
    for (k, sum) in kernels.iter().zip(per_device) {
        let w = 1.0 / (l * k.samples as f64);
        for i in 0..dim {
            for j in 0..dim {
                next[(i, j)] += sum[i * dim + j] * w;
            }
        }
    }
    Ok(HermitianMatrix::symmetrized(next).floor_eigenvalues(EIGEN_FLOOR))
}

/// ‖off-block entries‖_F / ‖Σ‖_F.
pub fn block_offmass(sigma: &HermitianMatrix, block_sizes: &[usize]) -> f64 {
    let m = sigma.as_matrix();
    let mut owner = Vec::with_capacity(m.nrows());
    for (b, &s) in block_sizes.iter().enumerate() {
        owner.extend(std::iter::repeat_n(b, s));
    }
    assert_eq!(owner.len(), m.nrows(), "block sizes must sum to the matrix dimension");
    let total = sigma.frobenius();
    if total == 0.0 {
        return 0.0;
    }
    let mut off = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if owner[i] != owner[j] {
                off += m[(i, j)].norm_sqr();
            }
        }
    }
    off.sqrt() / total
}

/// ‖Σ_b − τI‖_F / ‖Σ_b‖_F with τ = tr(Σ_b)/M.
pub fn identity_deviation(block: &HermitianMatrix) -> f64 {
    let total = block.frobenius();
    if total == 0.0 {
        return 0.0;
    }
    let tau = block.trace() / block.dim() as f64;
    block.sub(&HermitianMatrix::scaled_identity(block.dim(), tau)).frobenius() / total
}

fn block_offsets(block_sizes: &[usize]) -> Vec<usize> {
    block_sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRecord {
    pub iteration: usize,
    pub block_offmass: f64,
    pub identity_deviation: Vec<f64>,
    pub mc_samples: usize,
}

impl SeRecord {
    fn of(iteration: usize, sigma: &HermitianMatrix, cfg: &SeConfig) -> Self {
        let identity_deviation = block_offsets(&cfg.block_sizes)
            .into_iter()
            .zip(&cfg.block_sizes)
            .map(|(o, &s)| identity_deviation(&sigma.block(o, s)))
            .collect();
        Self {
            iteration,
            block_offmass: block_offmass(sigma, &cfg.block_sizes),
            identity_deviation,
            mc_samples: cfg.mc_samples,
        }
    }
}

/// Runs `cfg.iterations` Monte-Carlo steps from Σ⁰, returning the states
/// (Σ⁰ first) and one record per state.
pub fn se_run(cfg: &SeConfig) -> Result<(Vec<HermitianMatrix>, Vec<SeRecord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut sigma = se_initial(cfg);
    let mut states = vec![sigma.clone()];
    let mut records = vec![SeRecord::of(0, &sigma, cfg)];
    for t in 1..=cfg.iterations {
        sigma = se_step_mc(&sigma, cfg, &mut rng)?;
        records.push(SeRecord::of(t, &sigma, cfg));
        states.push(sigma.clone());
    }
    Ok((states, records))
}

/// CSV with columns iteration, block_offmass, identity_deviation_<b>..., mc_samples.
pub fn write_records<W: Write>(out: W, records: &[SeRecord]) -> Result<()> {
    let blocks = records.first().map_or(0, |r| r.identity_deviation.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "block_offmass".to_string()];
    header.extend((0..blocks).map(|b| format!("identity_deviation_{b}")));
    header.push("mc_samples".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.iteration.to_string(), r.block_offmass.to_string()];
        row.extend(r.identity_deviation.iter().map(f64::to_string));
        row.push(r.mc_samples.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shape of a small multi-block test instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockInstance {
    pub num_blocks: usize,
    pub block_size: usize,
    pub num_devices: usize,
    pub pilot_length: usize,
    pub eps: f64,
    /// Exponential correlation coefficient inside each block; `None` gives ρ·I blocks.
    pub correlation: Option<f64>,
    pub noise_var: f64,
    pub iterations: usize,
}

impl Default for BlockInstance {
    fn default() -> Self {
        Self {
            num_blocks: 3,
            block_size: 2,
            num_devices: 50,
            pilot_length: 25,
            eps: 0.2,
            correlation: Some(0.5),
            noise_var: 1.0,
            iterations: 5,
        }
    }
}

impl BlockInstance {
    /// Draws per-block gains log-uniformly in [0.2, 5] and builds the config.
    pub fn config(&self, mc_samples: usize, seed: u64) -> SeConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10c);
        let priors = (0..self.num_devices)
            .map(|_| {
                let blocks: Vec<HermitianMatrix> = (0..self.num_blocks)
                    .map(|_| {
                        let beta = (rng.random_range(0.2f64.ln()..5f64.ln())).exp();
                        match self.correlation {
                            Some(r) => exponential_correlation(self.block_size, beta, r, rng.random_range(-1.0..1.0)),
                            None => HermitianMatrix::scaled_identity(self.block_size, beta),
                        }
                    })
                    .collect();
                SePrior { cov: HermitianMatrix::block_diagonal(&blocks), eps: self.eps }
            })
            .collect();
        SeConfig {
            priors,
            noise_var: self.noise_var,
            pilot_length: self.pilot_length,
            block_sizes: vec![self.block_size; self.num_blocks],
            mc_samples,
            iterations: self.iterations,
            rng_seed: seed,
        }
    }
}

/// Least-squares slope of ln(value) against ln(samples).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(s, v)| (s.ln(), v.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Decay of a structural statistic with the Monte-Carlo budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub mc_samples: Vec<usize>,
    /// Statistic per budget, averaged over the iterations after Σ⁰.
    pub values: Vec<f64>,
    pub slope: f64,
}

/// Runs the instance at each budget and summarizes `stat` over iterations.
pub fn decay_study(
    inst: &BlockInstance,
    budgets: &[usize],
    seed: u64,
    stat: impl Fn(&SeRecord) -> f64,
) -> Result<DecayReport> {
    let mut values = Vec::with_capacity(budgets.len());
    for &mc in budgets {
        let (_, records) = se_run(&inst.config(mc, seed))?;
        let later = &records[1..];
        values.push(later.iter().map(&stat).sum::<f64>() / later.len() as f64);
    }
    let points: Vec<(f64, f64)> = budgets.iter().map(|&b| b as f64).zip(values.iter().copied()).collect();
    Ok(DecayReport { mc_samples: budgets.to_vec(), values, slope: log_log_slope(&points) })
}
