//! Likelihood-ratio fusion, thresholding, hard-decision fusion and ROC
//! aggregation.
//!
//! Log-likelihood ratios are log p(ξ | inactive) / p(ξ | active), so a small
//! value is evidence of activity.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::amp::denoiser::LLR_CLAMP;
use crate::error::{Error, Result};

/// Local log-likelihood ratios keyed by (AP, device).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlrReport {
    pub iteration: usize,
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl LlrReport {
    pub fn new(iteration: usize) -> Self {
        Self { iteration, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, ap: usize, device: usize, log_lr: f64) {
        self.entries.insert((ap, device), log_lr);
    }

    pub fn get(&self, ap: usize, device: usize) -> Option<f64> {
        self.entries.get(&(ap, device)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: LlrReport) {
        self.iteration = self.iteration.max(other.iteration);
        self.entries.extend(other.entries);
    }
}

/// Global LLR per device: the plain sum of local LLRs over its serving APs.
pub fn fuse_llrs(report: &LlrReport, serving_sets: &[Vec<usize>]) -> Result<Vec<f64>> {
    serving_sets
        .iter()
        .enumerate()
        .map(|(n, set)| {
            set.iter().try_fold(0.0, |acc, &k| {
                report.get(k, n).map(|v| acc + v).ok_or(Error::MissingLlr { ap: k, device: n })
            })
        })
        .collect()
}

/// Declares a device active iff log ℓ < log γ.
pub fn decide(log_lr: f64, gamma: f64) -> bool {
    assert!(gamma > 0.0, "threshold must be positive");
    decide_log(log_lr, gamma.ln())
}

pub fn decide_log(log_lr: f64, log_gamma: f64) -> bool {
    log_lr < log_gamma
}

/// Thresholds on log γ.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GammaGrid {
    pub log_min: f64,
    pub log_max: f64,
    pub points: usize,
    /// Adds one threshold below and one above the LLR clamp so the curve
    /// always reaches (0, 1) and (1, 0).
    #[serde(default = "yes")]
    pub with_endpoints: bool,
}

fn yes() -> bool {
    true
}

impl Default for GammaGrid {
    fn default() -> Self {
        Self { log_min: -50.0, log_max: 50.0, points: 201, with_endpoints: true }
    }
}

impl GammaGrid {
    pub fn log_gammas(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.points + 2);
        if self.with_endpoints {
            v.push(-LLR_CLAMP - 1.0);
        }
        match self.points {
            0 => {}
            1 => v.push(self.log_min),
            p => {
                let step = (self.log_max - self.log_min) / (p - 1) as f64;
                v.extend((0..p).map(|i| self.log_min + step * i as f64));
            }
        }
        if self.with_endpoints {
            v.push(LLR_CLAMP + 1.0);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub log_gamma: f64,
    pub pfa: f64,
    pub pmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub trial_count: usize,
}

/// Scores and ground truth pooled over trials, kept sorted for threshold sweeps.
#[derive(Debug, Clone, Default)]
pub struct ScorePool {
    active: Vec<f64>,
    inactive: Vec<f64>,
    trials: usize,
    sorted: bool,
}

impl ScorePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_trial(&mut self, log_lr: &[f64], truth: &[bool]) {
        assert_eq!(log_lr.len(), truth.len());
        for (&s, &a) in log_lr.iter().zip(truth) {
            if a {
                self.active.push(s);
            } else {
                self.inactive.push(s);
            }
        }
        self.trials += 1;
        self.sorted = false;
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn num_inactive(&self) -> usize {
        self.inactive.len()
    }

    fn ensure_sorted(&mut self) {
        if !self.sorted {
            self.active.sort_by(f64::total_cmp);
            self.inactive.sort_by(f64::total_cmp);
            self.sorted = true;
        }
    }

    fn check_rates(&self) -> Result<()> {
        if self.active.is_empty() {
            return Err(Error::UndefinedRate("no active devices in the pooled trials"));
        }
        if self.inactive.is_empty() {
            return Err(Error::UndefinedRate("no inactive devices in the pooled trials"));
        }
        Ok(())
    }

    /// (pfa, pmd) at one threshold.
    pub fn rates_at(&mut self, log_gamma: f64) -> Result<(f64, f64)> {
        self.check_rates()?;
        self.ensure_sorted();
        let fa = self.inactive.partition_point(|&s| s < log_gamma);
        let detected = self.active.partition_point(|&s| s < log_gamma);
        let missed = self.active.len() - detected;
        Ok((fa as f64 / self.inactive.len() as f64, missed as f64 / self.active.len() as f64))
    }

    /// Missed-detection rate at the largest threshold whose false-alarm rate
    /// does not exceed `target_pfa`.
    pub fn pmd_at_pfa(&mut self, target_pfa: f64) -> Result<OperatingPoint> {
        self.check_rates()?;
        self.ensure_sorted();
        let n0 = self.inactive.len();
        let allowed = ((target_pfa * n0 as f64).floor() as usize).min(n0);
        let log_gamma = if allowed == n0 { f64::INFINITY } else { self.inactive[allowed] };
        let (pfa, pmd) = self.rates_at(log_gamma)?;
        Ok(OperatingPoint { log_gamma, pfa, pmd, num_active: self.active.len(), num_inactive: n0 })
    }

    /// Smallest pooled error probability (false alarms + misses over all
    /// decisions) over every threshold.
    pub fn min_error(&mut self) -> Result<f64> {
        self.check_rates()?;
        self.ensure_sorted();
        let total = (self.active.len() + self.inactive.len()) as f64;
        let mut best = self.active.len().min(self.inactive.len());
        let mut candidates: Vec<f64> = self.active.iter().chain(&self.inactive).copied().collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        for &c in &candidates {
            // threshold just above c
            let t = next_up(c);
            let fa = self.inactive.partition_point(|&s| s < t);
            let md = self.active.len() - self.active.partition_point(|&s| s < t);
            best = best.min(fa + md);
        }
        Ok(best as f64 / total)
    }

    pub fn roc(&mut self, log_gammas: &[f64]) -> Result<RocCurve> {
        if log_gammas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("threshold grid must be strictly increasing".into()));
        }
        let points = log_gammas
            .iter()
            .map(|&lg| self.rates_at(lg).map(|(pfa, pmd)| RocPoint { log_gamma: lg, pfa, pmd }))
            .collect::<Result<Vec<_>>>()?;
        Ok(RocCurve { points, trial_count: self.trials })
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub log_gamma: f64,
    pub pfa: f64,
    pub pmd: f64,
    pub num_active: usize,
    pub num_inactive: usize,
}

impl OperatingPoint {
    /// Binomial standard error of the missed-detection estimate.
    pub fn pmd_std_err(&self) -> f64 {
        (self.pmd * (1.0 - self.pmd) / self.num_active as f64).sqrt()
    }
}

/// Pooled ROC over per-trial fused LLRs and ground truth.
pub fn roc(trials: &[(Vec<f64>, Vec<bool>)], log_gammas: &[f64]) -> Result<RocCurve> {
    if trials.is_empty() {
        return Err(Error::UndefinedRate("no trials"));
    }
    let mut pool = ScorePool::new();
    for (s, t) in trials {
        pool.add_trial(s, t);
    }
    pool.roc(log_gammas)
}

pub const RATE_CLAMP: f64 = 1e-6;

/// Operating error rates of one AP's local hard decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ApErrorRates {
    pub pfa: f64,
    pub pmd: f64,
}

impl ApErrorRates {
    pub fn clamped(self) -> Self {
        Self {
            pfa: self.pfa.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP),
            pmd: self.pmd.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP),
        }
    }
}

/// Minimum-error local threshold on log ℓ for prior ε: ln(ε/(1−ε)).
pub fn map_log_threshold(eps: f64) -> f64 {
    (eps / (1.0 - eps)).ln()
}

/// Local hard decision of AP k on device n at the minimum-error threshold.
pub fn local_decision(log_lr: f64, eps: f64) -> bool {
    decide_log(log_lr, map_log_threshold(eps))
}

/// Counts local decision errors per AP; feed several calibration trials.
#[derive(Debug, Clone)]
pub struct RateCalibrator {
    false_alarms: Vec<usize>,
    inactive: Vec<usize>,
    misses: Vec<usize>,
    active: Vec<usize>,
}

impl RateCalibrator {
    pub fn new(num_aps: usize) -> Self {
        Self {
            false_alarms: vec![0; num_aps],
            inactive: vec![0; num_aps],
            misses: vec![0; num_aps],
            active: vec![0; num_aps],
        }
    }

    pub fn add_trial(&mut self, report: &LlrReport, truth: &[bool], eps: &[f64]) {
        for (&(k, n), &v) in &report.entries {
            let d = local_decision(v, eps[n]);
            if truth[n] {
                self.active[k] += 1;
                self.misses[k] += usize::from(!d);
            } else {
                self.inactive[k] += 1;
                self.false_alarms[k] += usize::from(d);
            }
        }
    }

    /// Adds the counts of another calibrator over the same APs.
    pub fn merge(&mut self, other: &RateCalibrator) {
        for (a, b) in [
            (&mut self.false_alarms, &other.false_alarms),
            (&mut self.inactive, &other.inactive),
            (&mut self.misses, &other.misses),
            (&mut self.active, &other.active),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Per-AP rates; an AP without observations of one class gets 0.5.
    pub fn rates(&self) -> Vec<ApErrorRates> {
        let ratio = |num: usize, den: usize| if den == 0 { 0.5 } else { num as f64 / den as f64 };
        (0..self.active.len())
            .map(|k| {
                ApErrorRates {
                    pfa: ratio(self.false_alarms[k], self.inactive[k]),
                    pmd: ratio(self.misses[k], self.active[k]),
                }
                .clamped()
            })
            .collect()
    }
}

/// Fused log-odds of activity from independent binary local decisions.
pub fn hard_fusion_score(decisions: &[(usize, bool)], rates: &[ApErrorRates], eps: f64) -> f64 {
    let prior = (eps / (1.0 - eps)).ln();
    decisions.iter().fold(prior, |acc, &(k, d)| {
        let r = rates[k].clamped();
        acc + if d {
            ((1.0 - r.pmd) / r.pfa).ln()
        } else {
            (r.pmd / (1.0 - r.pfa)).ln()
        }
    })
}

/// Hard-decision fusion: each serving AP thresholds its local LLR at the
/// minimum-error point, the CPU combines the bits with per-AP reliabilities.
pub fn hard_fusion_baseline(
    report: &LlrReport,
    serving_sets: &[Vec<usize>],
    rates: &[ApErrorRates],
    eps: &[f64],
) -> Result<Vec<bool>> {
    Ok(hard_fusion_scores(report, serving_sets, rates, eps)?.into_iter().map(|s| s > 0.0).collect())
}

pub fn hard_fusion_scores(
    report: &LlrReport,
    serving_sets: &[Vec<usize>],
    rates: &[ApErrorRates],
    eps: &[f64],
) -> Result<Vec<f64>> {
    serving_sets
        .iter()
        .enumerate()
        .map(|(n, set)| {
            let decisions = set
                .iter()
                .map(|&k| {
                    report
                        .get(k, n)
                        .map(|v| (k, local_decision(v, eps[n])))
                        .ok_or(Error::MissingLlr { ap: k, device: n })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(hard_fusion_score(&decisions, rates, eps[n]))
        })
        .collect()
}
