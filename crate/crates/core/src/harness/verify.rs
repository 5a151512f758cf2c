//! Invariant suites run by `verify --suite <name|all>`. Each check reports
//! the observed statistic next to the bound it must satisfy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocation::{self, AvgAp, FullPower, MasterAp, PowerScheme};
use crate::amp::denoiser::{iid_fast_path, mmse_denoise, onsager_matrix};
use crate::amp::{run_camp, run_damp, AmpConfig};
use crate::detection::{fuse_llrs, GammaGrid, LlrReport, ScorePool};
use crate::error::{Error, Result};
use crate::numerics::{complex_normal, exponential_correlation, max_abs_diff, CMatrix, CVector, HermitianMatrix, C64};
use crate::scenario::{build_scenario, sample_realization, ActivityProb, NetworkConfig};
use crate::state_evolution::{decay_study, se_initial, se_step_mc, BlockInstance};

pub const SUITES: [&str; 9] = [
    "theorem1",
    "corollary1",
    "denoiser",
    "jacobian",
    "additivity",
    "detection",
    "numerics",
    "allocation",
    "state_evolution",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub module: String,
    pub invariant: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub selector: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Recorder<'a> {
    suite: &'a str,
    module: &'a str,
    checks: Vec<Check>,
}

impl<'a> Recorder<'a> {
    fn new(suite: &'a str, module: &'a str) -> Self {
        Self { suite, module, checks: Vec::new() }
    }

    /// Records `observed ≤ bound`.
    fn at_most(&mut self, invariant: &str, observed: f64, bound: f64) {
        self.checks.push(Check {
            suite: self.suite.into(),
            module: self.module.into(),
            invariant: invariant.into(),
            passed: observed <= bound,
            observed,
            bound,
        });
    }
}

/// Runs one suite by name, or every suite for `all`.
pub fn run_property_suite(selector: &str) -> Result<SuiteReport> {
    let selector = selector.trim();
    if selector.is_empty() {
        return Err(Error::Config(format!("empty suite selector; choose one of: all, {}", SUITES.join(", "))));
    }
    let names: Vec<&str> = if selector == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&selector) {
        vec![selector]
    } else {
        return Err(Error::UnknownStrategy { kind: "suite", name: selector.into() });
    };
    let mut checks = Vec::new();
    for name in names {
        checks.extend(match name {
            "theorem1" => theorem1(&[10_000, 100_000, 1_000_000])?,
            "corollary1" => corollary1(&[10_000, 100_000, 1_000_000])?,
            "denoiser" => denoiser()?,
            "jacobian" => jacobian()?,
            "additivity" => additivity()?,
            "detection" => detection()?,
            "numerics" => numerics()?,
            "allocation" => allocation_suite()?,
            "state_evolution" => state_evolution()?,
            _ => unreachable!(),
        });
    }
    Ok(SuiteReport { selector: selector.into(), passed: checks.iter().all(|c| c.passed), checks })
}

/// Off-block mass of the Monte-Carlo state under correlated block priors:
/// small at the lowest budget and decaying like budget^(−1/2).
pub fn theorem1(budgets: &[usize]) -> Result<Vec<Check>> {
    let mut r = Recorder::new("theorem1", "state_evolution");
    let inst = BlockInstance::default();
    let d = decay_study(&inst, budgets, 11, |rec| rec.block_offmass)?;
    r.at_most("block_offmass at smallest budget", d.values[0], 0.05);
    r.at_most("|log-log slope + 0.5|", (d.slope + 0.5).abs(), 0.2);
    Ok(r.checks)
}

/// Per-block deviation from a scaled identity under i.i.d. priors.
pub fn corollary1(budgets: &[usize]) -> Result<Vec<Check>> {
    let mut r = Recorder::new("corollary1", "state_evolution");
    let inst = BlockInstance { correlation: None, ..BlockInstance::default() };
    for b in 0..inst.num_blocks {
        let d = decay_study(&inst, budgets, 12, |rec| rec.identity_deviation[b])?;
        r.at_most(&format!("block {b} identity_deviation at smallest budget"), d.values[0], 0.05);
        r.at_most(&format!("block {b} |log-log slope + 0.5|"), (d.slope + 0.5).abs(), 0.2);
    }
    Ok(r.checks)
}

fn random_pd(dim: usize, rng: &mut ChaCha8Rng, scale: f64, shift: f64) -> HermitianMatrix {
    let a = CMatrix::from_fn(dim, dim, |_, _| complex_normal(rng) * scale);
    HermitianMatrix::symmetrized(&a * a.adjoint() + CMatrix::identity(dim, dim) * C64::new(shift, 0.0))
}

/// Self-normalized importance-sampling posterior mean with prior draws as
/// proposals. Returns the estimate and per-component standard errors.
fn is_posterior_mean(
    xi: &CVector,
    r: &HermitianMatrix,
    sigma: &HermitianMatrix,
    eps: f64,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(CVector, Vec<f64>)> {
    let m = xi.len();
    let sinv = sigma.inverse()?;
    let root = crate::numerics::CovarianceFactor::new(r);
    let mut samples = Vec::with_capacity(draws);
    let mut logw = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x = if rng.random::<f64>() < eps { root.sample(rng) } else { CVector::zeros(m) };
        let d = xi - &x;
        let q = (d.adjoint() * sinv.as_matrix() * &d)[(0, 0)].re;
        logw.push(-q);
        samples.push(x);
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut mean = CVector::zeros(m);
    for (x, &wi) in samples.iter().zip(&w) {
        mean += x * C64::new(wi / total, 0.0);
    }
    let mut var = vec![0.0; m];
    for (x, &wi) in samples.iter().zip(&w) {
        let p = wi / total;
        for a in 0..m {
            var[a] += p * p * (x[a] - mean[a]).norm_sqr();
        }
    }
    Ok((mean, var.into_iter().map(f64::sqrt).collect()))
}

pub fn denoiser() -> Result<Vec<Check>> {
    let mut r = Recorder::new("denoiser", "amp_core");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let m = if i % 2 == 0 { 1 } else { 2 };
        let prior = random_pd(m, &mut rng, 1.0, 0.2);
        let sigma = random_pd(m, &mut rng, 0.5, 0.2);
        let eps = rng.random_range(0.1..0.9);
        let x = if rng.random::<f64>() < eps { crate::numerics::sample_gaussian(&prior, &mut rng) } else { CVector::zeros(m) };
        let xi = x + crate::numerics::sample_gaussian(&sigma, &mut rng);
        let got = mmse_denoise(&xi, &prior, &sigma, eps)?.estimate;
        let (oracle, se) = is_posterior_mean(&xi, &prior, &sigma, eps, 100_000, &mut rng)?;
        let err = (&got - &oracle).norm();
        let se_norm = se.iter().map(|s| s * s).sum::<f64>().sqrt();
        worst = worst.max(err / se_norm.max(1e-300));
    }
    r.at_most("max ‖mmse − IS oracle‖ / ‖IS standard error‖ over 50 instances", worst, 3.0);

    let mut gap = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=4);
        let (rho, tau, eps): (f64, f64, f64) =
            (rng.random_range(0.01..10.0), rng.random_range(0.05..5.0), rng.random_range(0.05..0.95));
        let xi = CVector::from_fn(m, |_, _| complex_normal(&mut rng) * (rho + tau).sqrt());
        let a = iid_fast_path(&xi, rho, tau, eps)?;
        let b = mmse_denoise(&xi, &HermitianMatrix::scaled_identity(m, rho), &HermitianMatrix::scaled_identity(m, tau), eps)?;
        gap = gap.max((a.estimate - b.estimate).norm()).max((a.log_lr - b.log_lr).abs() / (1.0 + b.log_lr.abs()));
    }
    r.at_most("max |iid fast path − general path| over 100 instances", gap, 1e-10);
    Ok(r.checks)
}

/// Wirtinger derivative ∂g/∂ξ by central differences in the real and
/// imaginary parts of each coordinate.
fn fd_jacobian(xi: &CVector, prior: &HermitianMatrix, sigma: &HermitianMatrix, eps: f64) -> Result<CMatrix> {
    let m = xi.len();
    let h = 1e-6;
    let g = |v: &CVector| mmse_denoise(v, prior, sigma, eps).map(|o| o.estimate);
    let mut j = CMatrix::zeros(m, m);
    for b in 0..m {
        let step = |d: C64| {
            let mut p = xi.clone();
            p[b] += d;
            p
        };
        let dre = (g(&step(C64::new(h, 0.0)))? - g(&step(C64::new(-h, 0.0)))?) / C64::new(2.0 * h, 0.0);
        let dim = (g(&step(C64::new(0.0, h)))? - g(&step(C64::new(0.0, -h)))?) / C64::new(2.0 * h, 0.0);
        let col = (dre - dim * C64::new(0.0, 1.0)) * C64::new(0.5, 0.0);
        j.set_column(b, &col);
    }
    Ok(j)
}

pub fn jacobian() -> Result<Vec<Check>> {
    let mut r = Recorder::new("jacobian", "amp_core");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let m = 1 + i % 3;
        let prior = exponential_correlation(m, rng.random_range(0.5..3.0), 0.5, rng.random_range(-1.0..1.0));
        let sigma = random_pd(m, &mut rng, 0.7, 0.3);
        let eps = rng.random_range(0.05..0.95);
        let xi = CVector::from_fn(m, |_, _| complex_normal(&mut rng) * 1.5);
        let out = mmse_denoise(&xi, &prior, &sigma, eps)?;
        let u = onsager_matrix(&[(out, xi.clone())], 1, m);
        let fd = fd_jacobian(&xi, &prior, &sigma, eps)?;
        worst = worst.max((&u - &fd).norm() / fd.norm().max(1e-12));
    }
    r.at_most("max relative ‖U − finite-difference Jacobian‖ over 100 instances", worst, 1e-5);
    Ok(r.checks)
}

fn small_network(seed: u64) -> NetworkConfig {
    NetworkConfig {
        num_aps: 6,
        antennas_per_ap: 2,
        num_devices: 60,
        area_side: 0.6,
        pilot_length: 20,
        activity_prob: ActivityProb::Uniform(0.15),
        rng_seed: seed,
        ..NetworkConfig::default()
    }
}

pub fn additivity() -> Result<Vec<Check>> {
    let mut r = Recorder::new("additivity", "detection");
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(41 + trial);
        let dcc = if trial % 2 == 0 { None } else { Some(3) };
        let s = build_scenario(&small_network(trial), &FullPower, dcc, &mut rng)?;
        let real = sample_realization(&s, &mut rng);
        let out = run_damp(&real, &s, &AmpConfig { iterations: 8, ..AmpConfig::default() })?;
        for (n, set) in s.clusters.device_sets.iter().enumerate() {
            let sum: f64 = set.iter().map(|&k| out.report.get(k, n).unwrap_or(f64::NAN)).sum();
            worst = worst.max((out.global_llr[n] - sum).abs() / (1.0 + sum.abs()));
        }
    }
    r.at_most("max |fused LLR − Σ local LLRs| (relative) over 5 trials", worst, 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut perm_gap = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(1..8);
        let mut rep = LlrReport::new(1);
        for ap in 0..k {
            rep.insert(ap, 0, rng.random_range(-30.0..30.0));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.reverse();
        let a = fuse_llrs(&rep, &[(0..k).collect()])?[0];
        let b = fuse_llrs(&rep, &[order])?[0];
        perm_gap = perm_gap.max((a - b).abs());
    }
    r.at_most("max |fusion difference| under serving-set permutation", perm_gap, 1e-12);
    Ok(r.checks)
}

pub fn detection() -> Result<Vec<Check>> {
    let mut r = Recorder::new("detection", "detection");
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut pool = ScorePool::new();
    for _ in 0..50 {
        let truth: Vec<bool> = (0..100).map(|_| rng.random::<f64>() < 0.2).collect();
        let scores: Vec<f64> = truth.iter().map(|&a| rng.random_range(-5.0..5.0) - if a { 3.0 } else { 0.0 }).collect();
        pool.add_trial(&scores, &truth);
    }
    let curve = pool.roc(&GammaGrid::default().log_gammas())?;
    let violations = curve.points.windows(2).filter(|w| w[1].pfa < w[0].pfa || w[1].pmd > w[0].pmd).count();
    r.at_most("ROC monotonicity violations", violations as f64, 0.0);
    let (first, last) = (curve.points[0], curve.points[curve.points.len() - 1]);
    r.at_most("endpoint distance from (0, 1) and (1, 0)", first.pfa + (1.0 - first.pmd) + (1.0 - last.pfa) + last.pmd, 0.0);
    let mut cubed = ScorePool::new();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..50 {
        let truth: Vec<bool> = (0..100).map(|_| rng.random::<f64>() < 0.2).collect();
        let scores: Vec<f64> =
            truth.iter().map(|&a| (rng.random_range(-5.0f64..5.0) - if a { 3.0 } else { 0.0 }).powi(3)).collect();
        cubed.add_trial(&scores, &truth);
    }
    let gap = (pool.min_error()? - cubed.min_error()?).abs();
    r.at_most("min-error change under a monotone score transform", gap, 0.0);
    Ok(r.checks)
}

pub fn numerics() -> Result<Vec<Check>> {
    let mut r = Recorder::new("numerics", "numerics");
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (mut inv_err, mut logdet_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(1..6);
        let a = random_pd(m, &mut rng, 1.0, 0.1);
        let inv = a.inverse()?;
        inv_err = inv_err.max(max_abs_diff(&(a.as_matrix() * inv.as_matrix()), &CMatrix::identity(m, m)));
        logdet_err = logdet_err.max((a.logdet()? + inv.logdet()?).abs());
    }
    r.at_most("max |A·A⁻¹ − I|", inv_err, 1e-9);
    r.at_most("max |ln|A| + ln|A⁻¹||", logdet_err, 1e-9);
    let non_pd = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
    r.at_most("non-PD input accepted", f64::from(u8::from(non_pd.inverse().is_ok())), 0.0);
    Ok(r.checks)
}

pub fn allocation_suite() -> Result<Vec<Check>> {
    let mut r = Recorder::new("allocation", "allocation");
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut over = 0.0f64;
    let mut duality = 0usize;
    for seed in 0..5 {
        let cfg = NetworkConfig { rng_seed: seed, ..small_network(seed) };
        for scheme in [&FullPower as &dyn PowerScheme, &MasterAp, &AvgAp] {
            let s = build_scenario(&cfg, scheme, Some(rng.random_range(1..4)), &mut rng)?;
            over = over.max(s.power.powers.iter().map(|p| p / s.max_power - 1.0).fold(f64::NEG_INFINITY, f64::max));
            for (n, set) in s.clusters.device_sets.iter().enumerate() {
                duality += set.iter().filter(|&&k| !s.clusters.ap_sets[k].contains(&n)).count();
            }
        }
    }
    r.at_most("max p_n / p_max − 1", over, 1e-12);
    r.at_most("serving-set duality violations", duality as f64, 0.0);
    let lsfc = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let full = allocation::allocate(&FullPower, &lsfc, &[0.5, 0.5], 1.0)?;
    r.at_most("full-power deviation from p_max", full.powers.iter().map(|p| (p - 1.0).abs()).sum(), 0.0);
    Ok(r.checks)
}

pub fn state_evolution() -> Result<Vec<Check>> {
    let mut r = Recorder::new("state_evolution", "state_evolution");
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut increase = f64::NEG_INFINITY;
    for seed in 0..5 {
        let inst = BlockInstance { eps: rng.random_range(0.05..0.9), ..BlockInstance::default() };
        let cfg = inst.config(20_000, seed);
        let s0 = se_initial(&cfg);
        let s1 = se_step_mc(&s0, &cfg, &mut rng)?;
        increase = increase.max(s1.trace() - s0.trace());
    }
    r.at_most("max trace(Σ¹) − trace(Σ⁰)", increase, 0.0);
    let cfg = BlockInstance::default().config(5_000, 3);
    let s0 = se_initial(&cfg);
    let a = se_step_mc(&s0, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
    let b = se_step_mc(&s0, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;
    r.at_most("same-seed step difference", max_abs_diff(a.as_matrix(), b.as_matrix()), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let s = build_scenario(&NetworkConfig { num_aps: 1, ..small_network(1) }, &FullPower, None, &mut rng)?;
    let real = sample_realization(&s, &mut rng);
    let amp = AmpConfig::default();
    let gap = run_damp(&real, &s, &amp)?
        .global_llr
        .iter()
        .zip(&run_camp(&real, &s, &amp)?.global_llr)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    r.at_most("single-AP dAMP vs cAMP LLR gap", gap, 0.0);
    Ok(r.checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_errors() {
        assert!(matches!(run_property_suite(""), Err(Error::Config(_))));
        assert!(matches!(run_property_suite("  "), Err(Error::Config(_))));
        assert!(matches!(run_property_suite("nope"), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn fast_suites_pass() {
        for s in ["jacobian", "additivity", "detection", "numerics", "allocation"] {
            let rep = run_property_suite(s).unwrap();
            assert!(rep.passed, "{s}: {:?}", rep.failures().collect::<Vec<_>>());
            assert!(!rep.checks.is_empty());
        }
    }
}
