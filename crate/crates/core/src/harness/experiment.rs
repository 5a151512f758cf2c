//! Seeded, paired Monte-Carlo trials over every (scheme, power, dcc, L)
//! combination.
//!
//! Per trial, the layout, the pilots of each L and the realization stream
//! are derived from (master seed, trial, label). Activities and small-scale
//! fading are drawn first from the realization stream, so every
//! configuration of a trial sees the same devices and channels.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::{dcc_assign, PowerRegistry, PowerScheme};
use crate::amp::run_damp;
use crate::detection::{ApErrorRates, OperatingPoint, RateCalibrator, ScorePool};
use crate::error::{Error, Result};
use crate::harness::detectors::{Detection, Detector, DetectorRegistry, TrialContext};
use crate::harness::output::{self, LlrWriter};
use crate::harness::seed::stream;
use crate::harness::{DccMode, ExperimentConfig};
use crate::scenario::{generate_pilots, sample_realization, Layout, Realization, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ConfigKey {
    pub scheme: String,
    pub power: String,
    pub dcc: DccMode,
    pub pilot_length: usize,
}

/// Everything a trial needs besides its index, resolved once.
struct Plan {
    cfg: ExperimentConfig,
    detectors: Vec<Arc<dyn Detector>>,
    powers: Vec<Arc<dyn PowerScheme>>,
    lengths: Vec<usize>,
}

impl Plan {
    fn new(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<Self> {
        cfg.validate()?;
        let power_registry = PowerRegistry::default();
        Ok(Self {
            detectors: cfg.schemes.iter().map(|s| registry.get(s)).collect::<Result<_>>()?,
            powers: cfg.power_schemes.iter().map(|p| power_registry.get(p)).collect::<Result<_>>()?,
            lengths: cfg.pilot_lengths(),
            cfg: cfg.clone(),
        })
    }

    /// Number of (L, power, dcc) units.
    fn units(&self) -> usize {
        self.lengths.len() * self.powers.len() * self.cfg.dcc.len()
    }

    fn keys(&self) -> Vec<ConfigKey> {
        let mut keys = Vec::new();
        for &l in &self.lengths {
            for p in &self.powers {
                for &dcc in &self.cfg.dcc {
                    for d in &self.detectors {
                        keys.push(ConfigKey {
                            scheme: d.name().to_string(),
                            power: p.name().to_string(),
                            dcc,
                            pilot_length: l,
                        });
                    }
                }
            }
        }
        keys
    }

    fn needs_calibration(&self) -> bool {
        self.detectors.iter().any(|d| d.needs_calibration())
    }

    /// Calls `f(unit, scenario, realization)` for every unit of one trial,
    /// restricted to the first `num_powers` power schemes. Returns the
    /// trial's ground-truth activities.
    fn for_each_unit(
        &self,
        trial: usize,
        label: &str,
        num_powers: usize,
        mut f: impl FnMut(usize, &Scenario, &Realization) -> Result<()>,
    ) -> Result<Vec<bool>> {
        let master = self.cfg.master_seed();
        let t = trial as u64;
        let layout = Layout::draw(&self.cfg.network, &mut stream(master, t, &format!("{label}/layout"), 0))?;
        let mut truth: Option<Vec<bool>> = None;
        let dccs = &self.cfg.dcc;
        for (li, &l) in self.lengths.iter().enumerate() {
            let net = crate::scenario::NetworkConfig { pilot_length: l, ..self.cfg.network.clone() };
            let mut pilot_rng = stream(master, t, &format!("{label}/pilots"), l as u64);
            let pilots = generate_pilots(l, net.num_devices, &mut pilot_rng);
            for (pi, power) in self.powers.iter().enumerate().take(num_powers) {
                let base = Scenario::assemble(&net, &layout, pilots.clone(), power.as_ref(), None)?;
                let mut real_rng = stream(master, t, &format!("{label}/realization"), 0);
                let realization = sample_realization(&base, &mut real_rng);
                match &truth {
                    None => truth = Some(realization.activities.clone()),
                    Some(a) => debug_assert_eq!(a, &realization.activities),
                }
                for (di, &dcc) in dccs.iter().enumerate() {
                    let unit = (li * self.powers.len() + pi) * dccs.len() + di;
                    match dcc.cluster_size() {
                        None => f(unit, &base, &realization)?,
                        Some(c) => {
                            let s = base.with_clusters(dcc_assign(&layout.lsfc, c)?);
                            f(unit, &s, &realization)?
                        }
                    }
                }
            }
        }
        Ok(truth.unwrap_or_default())
    }

    /// Per-unit AP error rates from the calibration stream.
    fn calibrate(&self, pool: &rayon::ThreadPool) -> Result<Vec<Vec<ApErrorRates>>> {
        if !self.needs_calibration() {
            return Ok(Vec::new());
        }
        let amp = self.cfg.amp_config();
        let amp = crate::amp::AmpConfig { record_history: false, ..amp };
        let k = self.cfg.network.num_aps;
        let per_trial = pool.install(|| {
            (0..self.cfg.calibration_trials)
                .into_par_iter()
                .map(|t| {
                    let mut cals = vec![RateCalibrator::new(k); self.units()];
                    self.for_each_unit(t, "calibration", self.powers.len(), |unit, s, r| {
                        let out = run_damp(r, s, &amp)?;
                        cals[unit].add_trial(&out.report, &r.activities, &s.activity_probs);
                        Ok(())
                    })?;
                    Ok(cals)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut total = vec![RateCalibrator::new(k); self.units()];
        for cals in &per_trial {
            for (a, b) in total.iter_mut().zip(cals) {
                a.merge(b);
            }
        }
        Ok(total.iter().map(RateCalibrator::rates).collect())
    }

    fn run_trial(&self, trial: usize, calibration: &[Vec<ApErrorRates>]) -> Result<TrialOutput> {
        let amp = self.cfg.amp_config();
        let mut detections = Vec::with_capacity(self.units() * self.detectors.len());
        let truth = self.for_each_unit(trial, "trial", self.powers.len(), |unit, s, r| {
            let rates = calibration.get(unit).map(Vec::as_slice);
            let ctx = TrialContext::new(s, r, &amp, rates);
            for d in &self.detectors {
                detections.push(d.detect(&ctx)?);
            }
            Ok(())
        })?;
        Ok(TrialOutput { trial, truth, detections })
    }

    fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }

    /// Runs all trials in batches, handing results to `sink` in trial order.
    fn stream_trials(
        &self,
        calibration: &[Vec<ApErrorRates>],
        pool: &rayon::ThreadPool,
        mut sink: impl FnMut(usize, Result<TrialOutput>) -> Result<()>,
    ) -> Result<()> {
        let batch = (self.cfg.workers * 4).max(1);
        let trials: Vec<usize> = (0..self.cfg.trials).collect();
        for chunk in trials.chunks(batch) {
            let outs: Vec<Result<TrialOutput>> =
                pool.install(|| chunk.par_iter().map(|&t| self.run_trial(t, calibration)).collect());
            for (&t, out) in chunk.iter().zip(outs) {
                sink(t, out)?;
            }
        }
        Ok(())
    }
}

/// Ground truth and one detection per configuration key, in key order.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub trial: usize,
    pub truth: Vec<bool>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

/// Pooled scores and timings of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub keys: Vec<ConfigKey>,
    pub pools: Vec<ScorePool>,
    /// Per key, (trial, seconds) of every successful trial.
    pub seconds: Vec<Vec<(usize, f64)>>,
    pub failures: Vec<TrialFailure>,
    pub trials_requested: usize,
    /// Per (L, power, dcc) unit, the calibrated AP error rates.
    pub calibration: Vec<Vec<ApErrorRates>>,
}

impl ExperimentResults {
    fn new(keys: Vec<ConfigKey>, trials: usize, calibration: Vec<Vec<ApErrorRates>>) -> Self {
        let n = keys.len();
        Self {
            keys,
            pools: vec![ScorePool::new(); n],
            seconds: vec![Vec::new(); n],
            failures: Vec::new(),
            trials_requested: trials,
            calibration,
        }
    }

    fn absorb(&mut self, t: usize, out: Result<TrialOutput>) {
        match out {
            Ok(out) => {
                for (i, d) in out.detections.iter().enumerate() {
                    self.pools[i].add_trial(&d.scores, &out.truth);
                    self.seconds[i].push((t, d.seconds));
                }
            }
            Err(e) => self.failures.push(TrialFailure { trial: t, error: e.to_string() }),
        }
    }

    pub fn index_of(&self, scheme: &str, power: &str, dcc: DccMode, pilot_length: usize) -> Option<usize> {
        self.keys
            .iter()
            .position(|k| k.scheme == scheme && k.power == power && k.dcc == dcc && k.pilot_length == pilot_length)
    }

    pub fn pool(&self, scheme: &str, power: &str, dcc: DccMode, pilot_length: usize) -> Result<ScorePool> {
        self.index_of(scheme, power, dcc, pilot_length)
            .map(|i| self.pools[i].clone())
            .ok_or_else(|| Error::Config(format!("no results for {scheme}/{power}/{dcc}/L={pilot_length}")))
    }

    /// Pooled missed-detection rate at the given false-alarm rate.
    pub fn pmd_at_pfa(
        &self,
        scheme: &str,
        power: &str,
        dcc: DccMode,
        pilot_length: usize,
        pfa: f64,
    ) -> Result<OperatingPoint> {
        self.pool(scheme, power, dcc, pilot_length)?.pmd_at_pfa(pfa)
    }

    pub fn completed(&self) -> usize {
        self.trials_requested - self.failures.len()
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.trials_requested as f64
    }
}

/// Runs an experiment in memory with the built-in detectors.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_trials_with(cfg, &DetectorRegistry::default())
}

pub fn run_trials_with(cfg: &ExperimentConfig, registry: &DetectorRegistry) -> Result<ExperimentResults> {
    let plan = Plan::new(cfg, registry)?;
    let pool = Plan::thread_pool(cfg.workers)?;
    let calibration = plan.calibrate(&pool)?;
    let mut results = ExperimentResults::new(plan.keys(), cfg.trials, calibration.clone());
    plan.stream_trials(&calibration, &pool, |t, out| {
        results.absorb(t, out);
        Ok(())
    })?;
    Ok(results)
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub trials_requested: usize,
    pub trials_completed: usize,
    pub failures: Vec<TrialFailure>,
}

impl RunSummary {
    /// More than 1% of trials failed.
    pub fn failed(&self) -> bool {
        self.failures.len() as f64 > 0.01 * self.trials_requested as f64
    }
}

/// Runs all trials and writes llr.csv, roc.csv, timing.csv and manifest.json
/// into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let plan = Plan::new(cfg, &DetectorRegistry::default())?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let pool = Plan::thread_pool(cfg.workers)?;
    let calibration = plan.calibrate(&pool)?;
    let keys = plan.keys();
    let mut results = ExperimentResults::new(keys.clone(), cfg.trials, calibration.clone());
    let mut llr = LlrWriter::create(&out_dir.join(output::LLR_FILE), cfg.llr_output)?;
    plan.stream_trials(&calibration, &pool, |t, out| {
        if let Ok(o) = &out {
            for (key, d) in keys.iter().zip(&o.detections) {
                llr.write_detection(t, key, d)?;
            }
        }
        results.absorb(t, out);
        Ok(())
    })?;
    llr.finish()?;

    output::write_roc(&out_dir.join(output::ROC_FILE), &results, &cfg.gamma_grid.log_gammas())?;
    // Timing rows follow the (scheme, dcc, L) schema, so only the first
    // power scheme is reported.
    let first_power = plan.powers[0].name();
    let rows: Vec<output::TimingRow> = results
        .keys
        .iter()
        .zip(&results.seconds)
        .filter(|(k, _)| k.power == first_power)
        .flat_map(|(k, secs)| {
            secs.iter().map(move |&(trial, seconds)| output::TimingRow {
                scheme: k.scheme.clone(),
                dcc: k.dcc.to_string(),
                pilot_length: k.pilot_length,
                trial,
                seconds,
            })
        })
        .collect();
    output::write_timing(&out_dir.join(output::TIMING_FILE), &rows)?;

    let summary = RunSummary {
        output_dir: out_dir.to_path_buf(),
        trials_requested: cfg.trials,
        trials_completed: results.completed(),
        failures: results.failures.clone(),
    };
    output::write_manifest(out_dir, cfg, &summary, &results.calibration, started.elapsed().as_secs_f64())?;
    Ok(summary)
}

/// Per-trial wall time of every (scheme, dcc, L) for the first power scheme,
/// measured on a single worker with no work shared between detectors.
pub fn measure_runtime(cfg: &ExperimentConfig) -> Result<Vec<output::TimingRow>> {
    let single = ExperimentConfig { workers: 1, ..cfg.clone() };
    let plan = Plan::new(&single, &DetectorRegistry::default())?;
    let pool = Plan::thread_pool(1)?;
    let calibration = plan.calibrate(&pool)?;
    let amp = single.amp_config();
    let mut rows = Vec::new();
    for t in 0..single.trials {
        pool.install(|| {
            plan.for_each_unit(t, "trial", 1, |unit, s, r| {
                let rates = calibration.get(unit).map(Vec::as_slice);
                let di = unit % single.dcc.len();
                let li = unit / (single.dcc.len() * plan.powers.len());
                for d in &plan.detectors {
                    let ctx = TrialContext::new(s, r, &amp, rates);
                    let det = d.detect(&ctx)?;
                    rows.push(output::TimingRow {
                        scheme: d.name().to_string(),
                        dcc: single.dcc[di].to_string(),
                        pilot_length: plan.lengths[li],
                        trial: t,
                        seconds: det.seconds,
                    });
                }
                Ok(())
            })
        })?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ActivityProb, NetworkConfig};

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            network: NetworkConfig {
                num_aps: 4,
                antennas_per_ap: 2,
                num_devices: 40,
                pilot_length: 20,
                area_side: 0.5,
                activity_prob: ActivityProb::Uniform(0.2),
                rng_seed: 7,
                ..NetworkConfig::default()
            },
            schemes: vec!["camp".into(), "damp".into(), "hard_fusion".into()],
            power_schemes: vec!["full".into(), "avg".into()],
            dcc: vec![DccMode::AllAps, DccMode::TopC(2)],
            pilot_lengths: vec![20, 10],
            trials: 4,
            amp_iterations: 5,
            calibration_trials: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn keys_follow_loop_order() {
        let plan = Plan::new(&tiny(), &DetectorRegistry::default()).unwrap();
        let keys = plan.keys();
        assert_eq!(keys.len(), 2 * 2 * 2 * 3);
        assert_eq!((keys[0].scheme.as_str(), keys[0].pilot_length), ("camp", 20));
        assert_eq!(keys[3].dcc, DccMode::TopC(2));
        assert_eq!(keys[6].power, "avg");
        assert_eq!(keys[12].pilot_length, 10);
    }

    #[test]
    fn all_configurations_share_activities_and_fading() {
        let plan = Plan::new(&tiny(), &DetectorRegistry::default()).unwrap();
        let mut seen: Vec<(usize, Vec<bool>, crate::numerics::CMatrix)> = Vec::new();
        plan.for_each_unit(2, "trial", 2, |_, s, r| {
            seen.push((s.pilot_length, r.activities.clone(), r.small_scale.clone()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), plan.units());
        for w in &seen {
            assert_eq!(w.1, seen[0].1);
            assert_eq!(w.2, seen[0].2);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let a = run_trials(&tiny()).unwrap();
        let b = run_trials(&ExperimentConfig { workers: 3, ..tiny() }).unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.calibration, b.calibration);
        for (p, q) in a.pools.iter().zip(&b.pools) {
            let (mut p, mut q) = (p.clone(), q.clone());
            assert_eq!(p.roc(&[-5.0, 0.0, 5.0]).unwrap(), q.roc(&[-5.0, 0.0, 5.0]).unwrap());
        }
    }

    #[test]
    fn runtime_rows_cover_first_power_only() {
        let cfg = ExperimentConfig { trials: 2, schemes: vec!["damp".into()], ..tiny() };
        let rows = measure_runtime(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        assert!(rows.iter().all(|r| r.seconds > 0.0 && r.scheme == "damp"));
    }
}
