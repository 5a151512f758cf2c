//! One AP's AMP chain: matched filtering against its residual, block
//! denoising, Onsager-corrected residual update and empirical state.

use crate::amp::denoiser::{self, DenoiserGain, StateFactor};
use crate::detection::LlrReport;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, HermitianMatrix, C64};

/// Signal prior of one device as seen by one AP.
#[derive(Debug, Clone)]
pub enum DevicePrior {
    /// R_kn = ρ·I, denoised with the scalar path.
    Iid { rho: f64, eps: f64 },
    General { cov: HermitianMatrix, eps: f64 },
}

impl DevicePrior {
    pub fn eps(&self) -> f64 {
        match self {
            DevicePrior::Iid { eps, .. } | DevicePrior::General { eps, .. } => *eps,
        }
    }
}

/// Inputs of one AP's chain. `served` lists device indices; `priors` is
/// aligned with it.
#[derive(Debug, Clone)]
pub struct ApProblem<'a> {
    pub ap: usize,
    pub received: &'a CMatrix,
    pub pilots: &'a CMatrix,
    pub served: Vec<usize>,
    pub priors: Vec<DevicePrior>,
    /// Total device count N used in the Onsager normalization.
    pub num_devices: usize,
}

impl ApProblem<'_> {
    pub fn pilot_length(&self) -> usize {
        self.received.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.received.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalAmpState {
    pub ap: usize,
    /// Z_k, L×M.
    pub residual: CMatrix,
    /// x̂_kn for served device i at `estimates[i*M..(i+1)*M]`.
    pub estimates: Vec<C64>,
    /// Σ_k
    pub state: HermitianMatrix,
    pub iteration: usize,
}

/// (1/L)·Zᵀ·Z*, symmetrized.
pub fn empirical_state(z: &CMatrix) -> HermitianMatrix {
    let (l, m) = z.shape();
    let data = z.as_slice();
    let mut s = CMatrix::zeros(m, m);
    for i in 0..m {
        let ci = &data[i * l..(i + 1) * l];
        for j in i..m {
            let cj = &data[j * l..(j + 1) * l];
            let v: C64 = ci.iter().zip(cj).map(|(a, b)| a * b.conj()).sum::<C64>() / l as f64;
            s[(i, j)] = v;
            s[(j, i)] = v.conj();
        }
        s[(i, i)].im = 0.0;
    }
    HermitianMatrix::symmetrized(s)
}

impl LocalAmpState {
    /// Z⁰ = Y_k, x̂ = 0, Σ⁰ = (1/L)·Y_kᵀY_k*.
    pub fn initial(problem: &ApProblem<'_>) -> Self {
        Self {
            ap: problem.ap,
            residual: problem.received.clone(),
            estimates: vec![C64::new(0.0, 0.0); problem.served.len() * problem.antennas()],
            state: empirical_state(problem.received),
            iteration: 0,
        }
    }

    pub fn estimate(&self, i: usize) -> &[C64] {
        let m = self.residual.ncols();
        &self.estimates[i * m..(i + 1) * m]
    }
}

enum Gains {
    Iid { shrink: Vec<f64>, omega: Vec<f64> },
    General(Vec<DenoiserGain>),
}

/// Effective observations and local likelihood ratios of one iteration,
/// before any θ is applied.
pub struct Observation {
    /// ξ_kn, laid out like `LocalAmpState::estimates`.
    pub xi: Vec<C64>,
    pub log_lr: Vec<f64>,
    gains: Gains,
}

impl Observation {
    pub fn xi(&self, i: usize, m: usize) -> &[C64] {
        &self.xi[i * m..(i + 1) * m]
    }
}

/// ξ_kn = Z_kᵀφ_n* + x̂_kn and log ℓ_kn for every served device.
pub fn observe(problem: &ApProblem<'_>, st: &LocalAmpState) -> Result<Observation> {
    let (l, m) = st.residual.shape();
    let z = st.residual.as_slice();
    let phi = problem.pilots.as_slice();
    let served = &problem.served;
    let mut xi = vec![C64::new(0.0, 0.0); served.len() * m];
    for (i, &n) in served.iter().enumerate() {
        let p = &phi[n * l..(n + 1) * l];
        for a in 0..m {
            let col = &z[a * l..(a + 1) * l];
            let dot: C64 = col.iter().zip(p).map(|(zv, pv)| zv * pv.conj()).sum();
            xi[i * m + a] = dot + st.estimates[i * m + a];
        }
    }

    let all_iid = problem.priors.iter().all(|p| matches!(p, DevicePrior::Iid { .. }));
    let mut log_lr = Vec::with_capacity(served.len());
    let gains = if all_iid {
        let tau = st.state.trace() / m as f64;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::StateCollapse { tau });
        }
        let mut shrink = Vec::with_capacity(served.len());
        let mut omega = Vec::with_capacity(served.len());
        for (i, prior) in problem.priors.iter().enumerate() {
            let DevicePrior::Iid { rho, .. } = *prior else { unreachable!() };
            let norm: f64 = xi[i * m..(i + 1) * m].iter().map(|v| v.norm_sqr()).sum();
            log_lr.push(denoiser::iid_log_lr(norm, rho, tau, m));
            shrink.push(rho / (rho + tau));
            omega.push(rho / (tau * (rho + tau)));
        }
        Gains::Iid { shrink, omega }
    } else {
        let factor = StateFactor::new(&st.state)?;
        let mut gains = Vec::with_capacity(served.len());
        for (i, prior) in problem.priors.iter().enumerate() {
            let cov = match prior {
                DevicePrior::General { cov, .. } => cov.clone(),
                DevicePrior::Iid { rho, .. } => HermitianMatrix::scaled_identity(m, *rho),
            };
            let g = DenoiserGain::new(&cov, &st.state, &factor)?;
            let xv = nalgebra::DVector::from_column_slice(&xi[i * m..(i + 1) * m]);
            log_lr.push(g.log_lr(&xv));
            gains.push(g);
        }
        Gains::General(gains)
    };
    Ok(Observation { xi, log_lr, gains })
}

/// Applies the posterior activity probabilities `thetas` (aligned with
/// `served`): new estimates, Onsager term, residual and empirical state.
pub fn apply(problem: &ApProblem<'_>, st: &LocalAmpState, obs: &Observation, thetas: &[f64]) -> LocalAmpState {
    let (l, m) = st.residual.shape();
    let mut estimates = vec![C64::new(0.0, 0.0); problem.served.len() * m];
    // Σ of denoiser Jacobians; divided by N and multiplied by N/L below.
    let mut jac_sum = CMatrix::zeros(m, m);
    let mut psi_xi = vec![C64::new(0.0, 0.0); m];
    let mut xi_omega = vec![C64::new(0.0, 0.0); m];
    for (i, &theta) in thetas.iter().enumerate() {
        let xi = obs.xi(i, m);
        match &obs.gains {
            Gains::Iid { shrink, omega } => {
                let s = shrink[i];
                for a in 0..m {
                    estimates[i * m + a] = xi[a] * (theta * s);
                    jac_sum[(a, a)] += C64::new(theta * s, 0.0);
                }
                let w = theta * s * (1.0 - theta) * omega[i];
                if w != 0.0 {
                    for b in 0..m {
                        let xb = xi[b].conj() * w;
                        for a in 0..m {
                            jac_sum[(a, b)] += xi[a] * xb;
                        }
                    }
                }
            }
            Gains::General(gains) => {
                let g = &gains[i];
                for a in 0..m {
                    psi_xi[a] = (0..m).map(|b| g.psi[(a, b)] * xi[b]).sum();
                    estimates[i * m + a] = psi_xi[a] * theta;
                }
                let om = g.omega.as_matrix();
                for b in 0..m {
                    xi_omega[b] = (0..m).map(|a| xi[a].conj() * om[(a, b)]).sum();
                }
                let w = theta * (1.0 - theta);
                for b in 0..m {
                    for a in 0..m {
                        jac_sum[(a, b)] += g.psi[(a, b)] * theta + psi_xi[a] * xi_omega[b] * w;
                    }
                }
            }
        }
    }

    // Z ← Y − Σ_n φ_n x̂_nᵀ + (N/L)·Z·Uᵀ, with U = jac_sum / N. Rows of Z
    // are per-symbol vectors, so column a picks up Σ_b Z_{·b}·∂x̂_a/∂ξ_b.
    let mut z_new = &st.residual * jac_sum.transpose() * C64::new(1.0 / l as f64, 0.0);
    z_new += problem.received;
    let phi = problem.pilots.as_slice();
    let zs = z_new.as_mut_slice();
    for (i, &n) in problem.served.iter().enumerate() {
        let p = &phi[n * l..(n + 1) * l];
        for a in 0..m {
            let x = estimates[i * m + a];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            for (zv, pv) in zs[a * l..(a + 1) * l].iter_mut().zip(p) {
                *zv -= pv * x;
            }
        }
    }
    let state = empirical_state(&z_new);
    LocalAmpState { ap: st.ap, residual: z_new, estimates, state, iteration: st.iteration + 1 }
}

/// One full dAMP iteration at one AP with locally computed θ.
pub fn local_iteration(st: &LocalAmpState, problem: &ApProblem<'_>) -> Result<(LocalAmpState, LlrReport)> {
    let obs = observe(problem, st).map_err(|e| Error::Breakdown {
        ap: problem.ap,
        iteration: st.iteration,
        source: Box::new(e),
    })?;
    let thetas: Vec<f64> = obs
        .log_lr
        .iter()
        .zip(&problem.priors)
        .map(|(&v, p)| denoiser::theta_from_llr(v, p.eps()))
        .collect();
    let next = apply(problem, st, &obs, &thetas);
    let mut report = LlrReport::new(st.iteration + 1);
    for (&n, &v) in problem.served.iter().zip(&obs.log_lr) {
        report.insert(problem.ap, n, v);
    }
    Ok((next, report))
}
