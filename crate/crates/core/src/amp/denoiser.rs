//! Block MMSE denoiser for a Bernoulli-Gaussian coordinate observed in
//! complex Gaussian noise, and its Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, HermitianMatrix, PdFactor, C64};

/// Log-likelihood ratios are clamped to this magnitude before use.
pub const LLR_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserChoice {
    /// Scalar path for i.i.d. Rayleigh scenarios, matrix path otherwise.
    #[default]
    Auto,
    General,
    Iid,
}

#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub estimate: CVector,
    /// Posterior activity probability.
    pub theta: f64,
    /// log of p(ξ | inactive) / p(ξ | active), clamped.
    pub log_lr: f64,
    /// Ψ = R(R+Σ)⁻¹
    pub psi: CMatrix,
    /// Ω = Σ⁻¹ − (R+Σ)⁻¹
    pub omega: HermitianMatrix,
}

pub fn clamp_llr(v: f64) -> f64 {
    if v.is_nan() {
        return v;
    }
    v.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// θ = (1 + ((1−ε)/ε)·exp(log_lr))⁻¹, evaluated without overflow.
pub fn theta_from_llr(log_lr: f64, eps: f64) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    if eps >= 1.0 {
        return 1.0;
    }
    let z = clamp_llr(log_lr) + ((1.0 - eps) / eps).ln();
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::Config(format!("activity probability {eps} outside [0, 1]")))
    }
}

/// Inverse and log-determinant of the current state Σ, shared by all devices
/// denoised against it.
#[derive(Debug, Clone)]
pub struct StateFactor {
    pub inverse: HermitianMatrix,
    pub logdet: f64,
}

impl StateFactor {
    pub fn new(sigma: &HermitianMatrix) -> Result<Self> {
        let f = PdFactor::new(sigma, "state")?;
        Ok(Self { inverse: f.inverse(), logdet: f.logdet() })
    }
}

/// Prior-dependent parts of the denoiser for one device against one state.
#[derive(Debug, Clone)]
pub struct DenoiserGain {
    pub psi: CMatrix,
    pub omega: HermitianMatrix,
    /// ln|R+Σ| − ln|Σ|
    pub logdet_ratio: f64,
}

impl DenoiserGain {
    pub fn new(r: &HermitianMatrix, sigma: &HermitianMatrix, state: &StateFactor) -> Result<Self> {
        let total = r.add(sigma);
        let f = PdFactor::new(&total, "prior plus state")?;
        let total_inv = f.inverse();
        let psi = r.as_matrix() * total_inv.as_matrix();
        let omega = state.inverse.sub(&total_inv);
        Ok(Self { psi, omega, logdet_ratio: f.logdet() - state.logdet })
    }

    pub fn log_lr(&self, xi: &CVector) -> f64 {
        let quad = quadratic_form(self.omega.as_matrix(), xi.as_slice());
        clamp_llr(self.logdet_ratio - quad)
    }
}

/// Re(ξᴴ A ξ) for Hermitian A.
pub fn quadratic_form(a: &CMatrix, xi: &[C64]) -> f64 {
    let m = xi.len();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..m {
        let mut col = C64::new(0.0, 0.0);
        for i in 0..m {
            col += xi[i].conj() * a[(i, j)];
        }
        acc += col * xi[j];
    }
    acc.re
}

/// Posterior mean E[x | ξ] under x ~ (1−ε)δ₀ + ε·CN(0, R), ξ = x + CN(0, Σ).
pub fn mmse_denoise(xi: &CVector, r: &HermitianMatrix, sigma: &HermitianMatrix, eps: f64) -> Result<DenoiserOutput> {
    check_eps(eps)?;
    if xi.len() != sigma.dim() || r.dim() != sigma.dim() {
        return Err(Error::Dimension("denoiser operands disagree in dimension".into()));
    }
    let state = StateFactor::new(sigma)?;
    let gain = DenoiserGain::new(r, sigma, &state)?;
    Ok(denoise_with_gain(xi, gain, eps))
}

pub fn denoise_with_gain(xi: &CVector, gain: DenoiserGain, eps: f64) -> DenoiserOutput {
    let log_lr = gain.log_lr(xi);
    let theta = theta_from_llr(log_lr, eps);
    let estimate = (&gain.psi * xi) * C64::new(theta, 0.0);
    DenoiserOutput { estimate, theta, log_lr, psi: gain.psi, omega: gain.omega }
}

/// Local LLR for R = ρI, Σ = τI.
pub fn iid_log_lr(xi_norm_sqr: f64, rho: f64, tau: f64, m: usize) -> f64 {
    clamp_llr(m as f64 * (rho / tau).ln_1p() - rho * xi_norm_sqr / (tau * (rho + tau)))
}

/// Scalar shortcut of [`mmse_denoise`] for scaled-identity prior and state.
pub fn iid_fast_path(xi: &CVector, rho: f64, tau: f64, eps: f64) -> Result<DenoiserOutput> {
    check_eps(eps)?;
    if !(tau > 0.0) {
        return Err(Error::StateCollapse { tau });
    }
    let m = xi.len();
    let log_lr = iid_log_lr(xi.norm_squared(), rho, tau, m);
    let theta = theta_from_llr(log_lr, eps);
    let shrink = rho / (rho + tau);
    let estimate = xi * C64::new(theta * shrink, 0.0);
    Ok(DenoiserOutput {
        estimate,
        theta,
        log_lr,
        psi: CMatrix::from_diagonal_element(m, m, C64::new(shrink, 0.0)),
        omega: HermitianMatrix::scaled_identity(m, rho / (tau * (rho + tau))),
    })
}

/// Jacobian of g at ξ holding ξ* fixed: θΨ(I + (1−θ)ξξᴴΩ).
pub fn denoiser_jacobian(out: &DenoiserOutput, xi: &CVector) -> CMatrix {
    let m = xi.len();
    let outer = xi * xi.adjoint() * out.omega.as_matrix();
    let inner = CMatrix::identity(m, m) + outer * C64::new(1.0 - out.theta, 0.0);
    &out.psi * inner * C64::new(out.theta, 0.0)
}

/// U = (1/N)·Σ_n θ_nΨ_n(I + (1−θ_n)ξ_nξ_nᴴΩ_n).
pub fn onsager_matrix(batch: &[(DenoiserOutput, CVector)], num_devices: usize, dim: usize) -> CMatrix {
    let mut u = CMatrix::zeros(dim, dim);
    for (out, xi) in batch {
        u += denoiser_jacobian(out, xi);
    }
    u / C64::new(num_devices as f64, 0.0)
}
