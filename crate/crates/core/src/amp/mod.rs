//! Distributed (dAMP) and centralized (cAMP) AMP activity detection.
//!
//! Both variants run one chain per AP on that AP's received pilots. dAMP
//! chains never talk to each other; the CPU sums their final local LLRs.
//! cAMP adds a per-iteration exchange: every AP publishes its local LLRs,
//! the CPU fuses them per device and returns a common θ_n that all serving
//! APs use in their denoisers.

pub mod denoiser;
pub mod local;

use serde::{Deserialize, Serialize};

use crate::detection::{fuse_llrs, LlrReport};
use crate::error::{Error, Result};
use crate::numerics::C64;
use crate::scenario::{Realization, Scenario};

pub use denoiser::{DenoiserChoice, DenoiserOutput};
pub use local::{ApProblem, DevicePrior, LocalAmpState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    pub iterations: usize,
    /// Stop once the largest change of any LLR between iterations drops below this.
    #[serde(default)]
    pub early_stop_tol: Option<f64>,
    #[serde(default)]
    pub denoiser: DenoiserChoice,
    /// Keep the LLR report of every iteration, not just the last.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { iterations: 20, early_stop_tol: None, denoiser: DenoiserChoice::Auto, record_history: false }
    }
}

impl AmpConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("AMP needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Per-AP chain inputs for a scenario/realization pair.
pub fn ap_problems<'a>(s: &'a Scenario, r: &'a Realization, choice: DenoiserChoice) -> Vec<ApProblem<'a>> {
    let scalar = match choice {
        DenoiserChoice::Auto => s.is_iid(),
        DenoiserChoice::Iid => true,
        DenoiserChoice::General => false,
    };
    (0..s.num_aps)
        .map(|k| {
            let served = s.clusters.ap_sets[k].clone();
            let priors = served
                .iter()
                .map(|&n| {
                    let eps = s.activity_probs[n];
                    if scalar {
                        DevicePrior::Iid { rho: s.rho(k, n), eps }
                    } else {
                        DevicePrior::General { cov: s.effective_cov(k, n), eps }
                    }
                })
                .collect();
            ApProblem {
                ap: k,
                received: &r.received[k],
                pilots: &s.pilots,
                served,
                priors,
                num_devices: s.num_devices,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AmpOutput {
    /// Local LLRs of the last iteration.
    pub report: LlrReport,
    /// Reports of every iteration when history was requested.
    pub history: Vec<LlrReport>,
    /// Fused per-device LLR used for detection.
    pub global_llr: Vec<f64>,
    /// Final per-AP states, holding the channel estimates.
    pub states: Vec<LocalAmpState>,
    pub served: Vec<Vec<usize>>,
    pub iterations_run: usize,
}

impl AmpOutput {
    /// Channel estimate x̂_kn, if AP k serves device n.
    pub fn channel_estimate(&self, k: usize, n: usize) -> Option<&[C64]> {
        let i = self.served[k].iter().position(|&d| d == n)?;
        Some(self.states[k].estimate(i))
    }
}

fn breakdown(ap: usize, iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Breakdown { ap, iteration, source: Box::new(e) }
}

fn max_change(prev: &[f64], next: &[f64]) -> f64 {
    prev.iter().zip(next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Runs K independent local chains and fuses their final local LLRs.
pub fn run_damp(realization: &Realization, scenario: &Scenario, cfg: &AmpConfig) -> Result<AmpOutput> {
    cfg.validate()?;
    let problems = ap_problems(scenario, realization, cfg.denoiser);
    let mut report = LlrReport::new(0);
    let mut history: Vec<LlrReport> = Vec::new();
    let mut states = Vec::with_capacity(problems.len());
    let mut iterations_run = 0;

    for p in &problems {
        let mut st = LocalAmpState::initial(p);
        let mut last: Vec<f64> = Vec::new();
        for t in 0..cfg.iterations {
            let obs = local::observe(p, &st).map_err(breakdown(p.ap, t))?;
            let thetas: Vec<f64> = obs
                .log_lr
                .iter()
                .zip(&p.priors)
                .map(|(&v, prior)| denoiser::theta_from_llr(v, prior.eps()))
                .collect();
            st = local::apply(p, &st, &obs, &thetas);
            if cfg.record_history {
                if history.len() <= t {
                    history.push(LlrReport::new(t + 1));
                }
                for (&n, &v) in p.served.iter().zip(&obs.log_lr) {
                    history[t].insert(p.ap, n, v);
                }
            }
            let converged = cfg.early_stop_tol.is_some_and(|tol| t > 0 && max_change(&last, &obs.log_lr) < tol);
            last = obs.log_lr;
            if converged {
                break;
            }
        }
        iterations_run = iterations_run.max(st.iteration);
        let mut local = LlrReport::new(st.iteration);
        for (&n, &v) in p.served.iter().zip(&last) {
            local.insert(p.ap, n, v);
        }
        report.merge(local);
        states.push(st);
    }

    let global_llr = fuse_llrs(&report, &scenario.clusters.device_sets)?;
    Ok(AmpOutput {
        report,
        history,
        global_llr,
        states,
        served: problems.iter().map(|p| p.served.clone()).collect(),
        iterations_run,
    })
}

/// Runs the AP chains in lockstep, fusing local LLRs into a common θ_n
/// every iteration.
pub fn run_camp(realization: &Realization, scenario: &Scenario, cfg: &AmpConfig) -> Result<AmpOutput> {
    cfg.validate()?;
    let problems = ap_problems(scenario, realization, cfg.denoiser);
    let serving = &scenario.clusters.device_sets;
    let mut states: Vec<LocalAmpState> = problems.iter().map(LocalAmpState::initial).collect();
    let mut history = Vec::new();
    let mut report = LlrReport::new(0);
    let mut global_llr: Vec<f64> = Vec::new();
    let mut iterations_run = 0;

    for t in 0..cfg.iterations {
        // APs publish local LLRs.
        let observations = problems
            .iter()
            .zip(&states)
            .map(|(p, st)| local::observe(p, st).map_err(breakdown(p.ap, t)))
            .collect::<Result<Vec<_>>>()?;
        let mut published = LlrReport::new(t + 1);
        for (p, obs) in problems.iter().zip(&observations) {
            for (&n, &v) in p.served.iter().zip(&obs.log_lr) {
                published.insert(p.ap, n, v);
            }
        }

        // CPU fuses and broadcasts θ_n.
        let fused = fuse_llrs(&published, serving)?;
        let theta: Vec<f64> = fused
            .iter()
            .zip(&scenario.activity_probs)
            .map(|(&v, &eps)| denoiser::theta_from_llr(v, eps))
            .collect();

        states = problems
            .iter()
            .zip(&states)
            .zip(&observations)
            .map(|((p, st), obs)| {
                let thetas: Vec<f64> = p.served.iter().map(|&n| theta[n]).collect();
                local::apply(p, st, obs, &thetas)
            })
            .collect();
        iterations_run = t + 1;

        let converged = cfg.early_stop_tol.is_some_and(|tol| t > 0 && max_change(&global_llr, &fused) < tol);
        global_llr = fused;
        if cfg.record_history {
            history.push(published.clone());
        }
        report = published;
        if converged {
            break;
        }
    }

    Ok(AmpOutput {
        report,
        history,
        global_llr,
        states,
        served: problems.iter().map(|p| p.served.clone()).collect(),
        iterations_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::FullPower;
    use crate::numerics::{complex_normal, CMatrix};
    use crate::scenario::{build_scenario, sample_realization, FadingModel, NetworkConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            num_aps: 4,
            antennas_per_ap: 2,
            num_devices: 30,
            area_side: 0.5,
            pilot_length: 15,
            activity_prob: crate::scenario::ActivityProb::Uniform(0.2),
            ..NetworkConfig::default()
        }
    }

    fn setup(cfg: &NetworkConfig, dcc: Option<usize>, seed: u64) -> (Scenario, Realization) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = build_scenario(cfg, &FullPower, dcc, &mut rng).unwrap();
        let r = sample_realization(&s, &mut rng);
        (s, r)
    }

    #[test]
    fn initial_state_matches_received_signal() {
        let (s, r) = setup(&small_config(), None, 1);
        let problems = ap_problems(&s, &r, DenoiserChoice::Auto);
        let st = LocalAmpState::initial(&problems[0]);
        assert_eq!(st.residual, r.received[0]);
        assert!(st.estimates.iter().all(|v| v.norm() == 0.0));
        let y = &r.received[0];
        let expect = y.transpose() * y.map(|v| v.conj()) / C64::new(s.pilot_length as f64, 0.0);
        assert!(crate::numerics::max_abs_diff(st.state.as_matrix(), &expect) < 1e-12 * expect.norm());
    }

    #[test]
    fn ap_without_devices_keeps_its_residual() {
        let (s, r) = setup(&small_config(), None, 2);
        let p = ApProblem {
            ap: 0,
            received: &r.received[0],
            pilots: &s.pilots,
            served: vec![],
            priors: vec![],
            num_devices: s.num_devices,
        };
        let st = LocalAmpState::initial(&p);
        let (next, report) = local::local_iteration(&st, &p).unwrap();
        assert!(report.is_empty());
        assert_eq!(next.residual, r.received[0]);
    }

    #[test]
    fn noiseless_orthogonal_pilots_recover_channels() {
        let (l, m) = (8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pilots = CMatrix::identity(l, l);
        let active = [true, false, true, false, false, true, false, false];
        let h: Vec<CMatrix> = (0..l).map(|_| CMatrix::from_fn(1, m, |_, _| complex_normal(&mut rng))).collect();
        let mut y = CMatrix::from_fn(l, m, |_, _| complex_normal(&mut rng) * 1e-5);
        for n in (0..l).filter(|&n| active[n]) {
            y += pilots.column(n) * &h[n];
        }
        let p = ApProblem {
            ap: 0,
            received: &y,
            pilots: &pilots,
            served: (0..l).collect(),
            priors: vec![DevicePrior::Iid { rho: 1.0, eps: 0.3 }; l],
            num_devices: l,
        };
        let mut st = LocalAmpState::initial(&p);
        for _ in 0..30 {
            st = local::local_iteration(&st, &p).unwrap().0;
        }
        for n in 0..l {
            let matched = pilots.column(n).adjoint() * &y;
            for a in 0..m {
                let want = if active[n] { matched[(0, a)] } else { C64::new(0.0, 0.0) };
                let got = st.estimate(n)[a];
                assert!((got - want).norm() < 1e-3, "device {n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn single_ap_damp_equals_camp() {
        let cfg = NetworkConfig { num_aps: 1, ..small_config() };
        let (s, r) = setup(&cfg, None, 4);
        let c = AmpConfig::default();
        let d = run_damp(&r, &s, &c).unwrap();
        let e = run_camp(&r, &s, &c).unwrap();
        assert_eq!(d.global_llr, e.global_llr);
        assert_eq!(d.states, e.states);
    }

    #[test]
    fn runs_are_deterministic_and_states_stay_psd() {
        let (s, r) = setup(&small_config(), Some(2), 5);
        let c = AmpConfig::default();
        for run in [run_damp, run_camp] {
            let a = run(&r, &s, &c).unwrap();
            let b = run(&r, &s, &c).unwrap();
            assert_eq!(a.global_llr, b.global_llr);
            assert!(a.global_llr.iter().all(|v| v.is_finite()));
            for st in &a.states {
                let (ev, _) = st.state.eigen();
                assert!(ev.iter().all(|&e| e >= -1e-12 * st.state.trace()));
            }
        }
    }

    #[test]
    fn first_iteration_is_shared_by_both_variants() {
        let (s, r) = setup(&small_config(), None, 6);
        let c = AmpConfig { record_history: true, ..AmpConfig::default() };
        let d = run_damp(&r, &s, &c).unwrap();
        let e = run_camp(&r, &s, &c).unwrap();
        assert_eq!(d.history[0], e.history[0]);
        assert_eq!(d.history.len(), c.iterations);
        assert_eq!(e.history.len(), c.iterations);
    }

    #[test]
    fn general_path_matches_iid_path_for_single_antenna() {
        // With M = 1 the state is a scalar, so both denoisers see the same τ.
        let cfg = NetworkConfig { antennas_per_ap: 1, ..small_config() };
        let (s, r) = setup(&cfg, Some(3), 7);
        let run = |d| run_camp(&r, &s, &AmpConfig { denoiser: d, ..AmpConfig::default() }).unwrap();
        let (a, b) = (run(DenoiserChoice::Iid), run(DenoiserChoice::General));
        for (x, y) in a.global_llr.iter().zip(&b.global_llr) {
            assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn permuting_aps_permutes_outputs() {
        let (s, r) = setup(&small_config(), None, 8);
        let perm = [2usize, 0, 3, 1];
        let mut s2 = s.clone();
        let mut r2 = r.clone();
        for (new, &old) in perm.iter().enumerate() {
            s2.clusters.ap_sets[new] = s.clusters.ap_sets[old].clone();
            r2.received[new] = r.received[old].clone();
            for n in 0..s.num_devices {
                s2.lsfc[(new, n)] = s.lsfc[(old, n)];
            }
        }
        let c = AmpConfig::default();
        let a = run_camp(&r, &s, &c).unwrap();
        let b = run_camp(&r2, &s2, &c).unwrap();
        for (x, y) in a.global_llr.iter().zip(&b.global_llr) {
            assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn iid_llrs_invariant_under_antenna_rotation() {
        let (s, r) = setup(&small_config(), None, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = CMatrix::from_fn(2, 2, |_, _| complex_normal(&mut rng));
        let q = a.qr().q();
        let mut r2 = r.clone();
        for y in r2.received.iter_mut() {
            *y = &*y * &q;
        }
        let c = AmpConfig::default();
        let x = run_damp(&r, &s, &c).unwrap();
        let z = run_damp(&r2, &s, &c).unwrap();
        for (u, v) in x.global_llr.iter().zip(&z.global_llr) {
            assert!((u - v).abs() < 1e-7 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn correlated_fading_uses_matrix_path() {
        let cfg = NetworkConfig { fading_model: FadingModel::Correlated { r: 0.5, theta: 0.3 }, ..small_config() };
        let (s, r) = setup(&cfg, Some(2), 11);
        let out = run_camp(&r, &s, &AmpConfig::default()).unwrap();
        assert!(out.global_llr.iter().all(|v| v.is_finite()));
        assert!(!s.is_iid());
    }

    #[test]
    fn early_stop_and_zero_iterations() {
        let (s, r) = setup(&small_config(), None, 12);
        let c = AmpConfig { early_stop_tol: Some(1e300), ..AmpConfig::default() };
        assert_eq!(run_camp(&r, &s, &c).unwrap().iterations_run, 2);
        let bad = AmpConfig { iterations: 0, ..AmpConfig::default() };
        assert!(run_damp(&r, &s, &bad).is_err());
    }

    #[test]
    fn full_size_network_gives_finite_llrs() {
        let (s, r) = setup(&NetworkConfig::default(), None, 13);
        let out = run_camp(&r, &s, &AmpConfig::default()).unwrap();
        assert_eq!(out.global_llr.len(), 400);
        assert!(out.global_llr.iter().all(|v| v.is_finite()));
    }
}
