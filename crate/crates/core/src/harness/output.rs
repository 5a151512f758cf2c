//! CSV and manifest writers. Column sets are fixed; floats use Rust's
//! shortest round-trip formatting so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detection::ApErrorRates;
use crate::error::Result;
use crate::harness::detectors::Detection;
use crate::harness::experiment::{ConfigKey, ExperimentResults, RunSummary};
use crate::harness::seed::content_hash;
use crate::harness::{ExperimentConfig, LlrOutput};
use crate::state_evolution::csv_err;

pub const LLR_FILE: &str = "llr.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const LLR_COLUMNS: [&str; 9] = ["trial", "scheme", "power", "dcc", "L", "ap", "device", "iter", "logllr"];
pub const ROC_COLUMNS: [&str; 8] = ["scheme", "power_scheme", "dcc_mode", "L", "gamma", "pfa", "pmd", "trials"];
pub const TIMING_COLUMNS: [&str; 5] = ["scheme", "dcc", "L", "trial", "seconds"];

pub struct LlrWriter {
    out: Option<csv::Writer<BufWriter<File>>>,
    mode: LlrOutput,
}

impl LlrWriter {
    /// With `LlrOutput::None` only the header is written.
    pub fn create(path: &Path, mode: LlrOutput) -> Result<Self> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(LLR_COLUMNS).map_err(csv_err)?;
        Ok(Self { out: Some(w), mode })
    }

    pub fn write_detection(&mut self, trial: usize, key: &ConfigKey, d: &Detection) -> Result<()> {
        let Some(w) = self.out.as_mut() else { return Ok(()) };
        let reports = match self.mode {
            LlrOutput::None => return Ok(()),
            LlrOutput::Final => std::slice::from_ref(&d.report),
            LlrOutput::AllIterations => d.history.as_slice(),
        };
        let (trial, dcc, l) = (trial.to_string(), key.dcc.to_string(), key.pilot_length.to_string());
        for rep in reports {
            let iter = rep.iteration.to_string();
            for (&(ap, dev), &v) in &rep.entries {
                w.write_record([
                    trial.as_str(),
                    &key.scheme,
                    &key.power,
                    &dcc,
                    &l,
                    &ap.to_string(),
                    &dev.to_string(),
                    &iter,
                    &v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(mut w) = self.out.take() {
            w.flush()?;
        }
        Ok(())
    }
}

/// One ROC row per (configuration, threshold). Configurations whose pooled
/// trials lack active or inactive devices are skipped.
pub fn write_roc(path: &Path, results: &ExperimentResults, log_gammas: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(ROC_COLUMNS).map_err(csv_err)?;
    for (key, pool) in results.keys.iter().zip(&results.pools) {
        let Ok(curve) = pool.clone().roc(log_gammas) else { continue };
        for p in &curve.points {
            w.write_record([
                key.scheme.clone(),
                key.power.clone(),
                key.dcc.to_string(),
                key.pilot_length.to_string(),
                p.log_gamma.exp().to_string(),
                p.pfa.to_string(),
                p.pmd.to_string(),
                curve.trial_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scheme: String,
    pub dcc: String,
    #[serde(rename = "L")]
    pub pilot_length: usize,
    pub trial: usize,
    pub seconds: f64,
}

pub fn write_timing(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(TIMING_COLUMNS).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean seconds per (scheme, dcc, L), in first-seen order.
pub fn mean_timings(rows: &[TimingRow]) -> Vec<(String, String, usize, f64)> {
    let mut acc: Vec<(String, String, usize, f64, usize)> = Vec::new();
    for r in rows {
        match acc.iter_mut().find(|a| a.0 == r.scheme && a.1 == r.dcc && a.2 == r.pilot_length) {
            Some(a) => {
                a.3 += r.seconds;
                a.4 += 1;
            }
            None => acc.push((r.scheme.clone(), r.dcc.clone(), r.pilot_length, r.seconds, 1)),
        }
    }
    acc.into_iter().map(|(s, d, l, sum, n)| (s, d, l, sum / n as f64)).collect()
}

pub fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    summary: &RunSummary,
    calibration: &[Vec<ApErrorRates>],
    elapsed_seconds: f64,
) -> Result<()> {
    let config_json = serde_json::to_vec_pretty(cfg)?;
    let mut outputs = serde_json::Map::new();
    for name in [LLR_FILE, ROC_FILE, TIMING_FILE] {
        let bytes = std::fs::read(dir.join(name))?;
        outputs.insert(name.to_string(), json!(content_hash(&bytes)));
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_hash": content_hash(&config_json),
        "master_seed": cfg.master_seed(),
        "trials_requested": summary.trials_requested,
        "trials_completed": summary.trials_completed,
        "failures": summary.failures,
        "calibration_trials": cfg.calibration_trials,
        "calibration_rates": calibration,
        "outputs": outputs,
        "elapsed_seconds": elapsed_seconds,
        "notes": [
            "Monte-Carlo trial count is a configuration choice; pooled rates carry binomial error of order sqrt(p(1-p)/n).",
            "timing.csv reports the first listed power scheme only."
        ],
    });
    let mut f = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
