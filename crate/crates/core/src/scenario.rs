//! Network geometry, large-scale fading, pilots and per-trial realizations.

use nalgebra::{DMatrix, Dyn, U1};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, ClusterAssignment, PowerAssignment, PowerScheme};
use crate::error::{Error, Result};
use crate::numerics::{complex_normal, exponential_correlation, CMatrix, CovarianceFactor, HermitianMatrix, C64};

/// Distances below this (km) are clamped before evaluating path loss.
pub const DISTANCE_FLOOR_KM: f64 = 0.005;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActivityProb {
    Uniform(f64),
    PerDevice(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingModel {
    IidRayleigh,
    /// Exponential correlation `β·r^|i-j|·e^{jθ(i-j)}` within each AP.
    Correlated { r: f64, theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApLayout {
    /// g×g grid; K must be a perfect square.
    SquareGrid,
    /// Most-square rows×cols grid with rows·cols = K.
    #[default]
    RectGrid,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_devices: usize,
    /// km
    pub area_side: f64,
    pub pilot_length: usize,
    pub activity_prob: ActivityProb,
    /// dBm
    pub max_power: f64,
    /// Hz
    pub bandwidth: f64,
    /// dBm/Hz
    pub noise_psd: f64,
    /// dB
    pub shadow_std: f64,
    /// dB at 1 km
    pub pathloss_intercept: f64,
    /// dB per decade of distance
    pub pathloss_exponent_coeff: f64,
    pub fading_model: FadingModel,
    pub rng_seed: u64,
    #[serde(default)]
    pub ap_layout: ApLayout,
    /// Received SNR (dB) that `p_max·β_th` must reach for power association.
    #[serde(default = "default_threshold_snr_db")]
    pub power_threshold_snr_db: f64,
}

fn default_threshold_snr_db() -> f64 {
    6.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_aps: 20,
            antennas_per_ap: 3,
            num_devices: 400,
            area_side: 2.0,
            pilot_length: 40,
            activity_prob: ActivityProb::Uniform(0.1),
            max_power: 23.0,
            bandwidth: 1e6,
            noise_psd: -169.0,
            shadow_std: 4.0,
            pathloss_intercept: -140.6,
            pathloss_exponent_coeff: 36.7,
            fading_model: FadingModel::IidRayleigh,
            rng_seed: 0,
            ap_layout: ApLayout::RectGrid,
            power_threshold_snr_db: default_threshold_snr_db(),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_aps == 0 || self.antennas_per_ap == 0 || self.num_devices == 0 || self.pilot_length == 0 {
            return bad("num_aps, antennas_per_ap, num_devices and pilot_length must be at least 1");
        }
        if !(self.area_side > 0.0) {
            return bad("area_side must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.shadow_std >= 0.0) {
            return bad("shadow_std must be non-negative");
        }
        if let ActivityProb::PerDevice(v) = &self.activity_prob {
            if v.len() != self.num_devices {
                return bad("activity_prob vector length must equal num_devices");
            }
        }
        if self.activity_probs().iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("activity probabilities must lie in [0, 1]");
        }
        if let FadingModel::Correlated { r, .. } = self.fading_model {
            if !(0.0..1.0).contains(&r) {
                return bad("correlation coefficient r must lie in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn activity_probs(&self) -> Vec<f64> {
        match &self.activity_prob {
            ActivityProb::Uniform(e) => vec![*e; self.num_devices],
            ActivityProb::PerDevice(v) => v.clone(),
        }
    }

    /// Noise variance in watts.
    pub fn noise_var(&self) -> f64 {
        dbm_to_watts(self.noise_psd + 10.0 * self.bandwidth.log10())
    }

    pub fn max_power_watts(&self) -> f64 {
        dbm_to_watts(self.max_power)
    }

    pub fn lsfc_db(&self, distance_km: f64, shadow_db: f64) -> f64 {
        lsfc_db_with(self.pathloss_intercept, self.pathloss_exponent_coeff, distance_km, shadow_db)
    }
}

/// Torus distance on a square of the given side.
pub fn wrap_distance(p: Point, q: Point, side: f64) -> f64 {
    let axis = |a: f64, b: f64| {
        let d = (a - b).abs();
        d.min(side - d)
    };
    axis(p[0], q[0]).hypot(axis(p[1], q[1]))
}

/// Path loss with the default model: −140.6 − 36.7·log10(d) + shadow.
pub fn lsfc_db(distance_km: f64, shadow_db: f64) -> f64 {
    lsfc_db_with(-140.6, 36.7, distance_km, shadow_db)
}

fn lsfc_db_with(intercept: f64, coeff: f64, distance_km: f64, shadow_db: f64) -> f64 {
    intercept - coeff * distance_km.max(DISTANCE_FLOOR_KM).log10() + shadow_db
}

pub fn ap_grid(num_aps: usize, side: f64, layout: ApLayout) -> Result<Vec<Point>> {
    let (rows, cols) = match layout {
        ApLayout::SquareGrid => {
            let g = (num_aps as f64).sqrt().round() as usize;
            if g * g != num_aps {
                return Err(Error::Config(format!("square grid needs a square AP count, got {num_aps}")));
            }
            (g, g)
        }
        ApLayout::RectGrid => {
            let rows = (1..=num_aps)
                .take_while(|r| r * r <= num_aps)
                .filter(|r| num_aps % r == 0)
                .last()
                .unwrap_or(1);
            (rows, num_aps / rows)
        }
        ApLayout::Uniform => return Err(Error::Config("uniform layout is random, not a grid".into())),
    };
    let (dx, dy) = (side / cols as f64, side / rows as f64);
    let mut pts = Vec::with_capacity(num_aps);
    for i in 0..cols {
        for j in 0..rows {
            pts.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
        }
    }
    Ok(pts)
}

/// AP positions (grid or random) and uniformly dropped device positions.
pub fn build_topology<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<(Vec<Point>, Vec<Point>)> {
    let side = config.area_side;
    let aps = match config.ap_layout {
        ApLayout::Uniform => (0..config.num_aps)
            .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
            .collect(),
        layout => ap_grid(config.num_aps, side, layout)?,
    };
    let devices = (0..config.num_devices)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect();
    Ok((aps, devices))
}

/// L×N pilot matrix with i.i.d. complex Gaussian columns scaled to unit energy.
pub fn generate_pilots<R: Rng + ?Sized>(pilot_length: usize, num_devices: usize, rng: &mut R) -> CMatrix {
    let mut phi = CMatrix::from_fn(pilot_length, num_devices, |_, _| complex_normal(rng));
    for mut col in phi.column_iter_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col /= C64::new(norm, 0.0);
    }
    phi
}

/// Geometry and large-scale fading, shared by every pilot length and power scheme.
#[derive(Debug, Clone)]
pub struct Layout {
    pub ap_positions: Vec<Point>,
    pub device_positions: Vec<Point>,
    /// K×N linear gains.
    pub lsfc: DMatrix<f64>,
}

impl Layout {
    pub fn draw<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (ap_positions, device_positions) = build_topology(config, rng)?;
        let shadow = Normal::new(0.0, config.shadow_std).map_err(|e| Error::Config(e.to_string()))?;
        let (k_aps, n_dev) = (ap_positions.len(), device_positions.len());
        let mut lsfc = DMatrix::zeros(k_aps, n_dev);
        for k in 0..k_aps {
            for n in 0..n_dev {
                let d = wrap_distance(ap_positions[k], device_positions[n], config.area_side);
                let db = config.lsfc_db(d, rng.sample(shadow));
                lsfc[(k, n)] = db_to_linear(db);
            }
        }
        Ok(Self { ap_positions, device_positions, lsfc })
    }
}

/// Immutable network description for one pilot length, power scheme and clustering.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub num_aps: usize,
    pub antennas: usize,
    pub num_devices: usize,
    pub pilot_length: usize,
    pub area_side: f64,
    pub ap_positions: Vec<Point>,
    pub device_positions: Vec<Point>,
    pub lsfc: DMatrix<f64>,
    pub pilots: CMatrix,
    pub fading: FadingModel,
    /// R̃_kn, indexed `k * N + n`.
    pub small_scale_cov: Vec<HermitianMatrix>,
    factors: Vec<CovarianceFactor>,
    pub activity_probs: Vec<f64>,
    /// σ² in watts.
    pub noise_var: f64,
    pub max_power: f64,
    pub power: PowerAssignment,
    pub clusters: ClusterAssignment,
}

impl Scenario {
    /// Composes a layout and pilot matrix with power allocation and clustering.
    pub fn assemble(
        config: &NetworkConfig,
        layout: &Layout,
        pilots: CMatrix,
        power_scheme: &dyn PowerScheme,
        dcc_size: Option<usize>,
    ) -> Result<Self> {
        config.validate()?;
        let (k_aps, n_dev) = layout.lsfc.shape();
        if pilots.ncols() != n_dev {
            return Err(Error::Dimension(format!("{} pilots for {n_dev} devices", pilots.ncols())));
        }
        let m = config.antennas_per_ap;
        let mut small_scale_cov = Vec::with_capacity(k_aps * n_dev);
        for k in 0..k_aps {
            for n in 0..n_dev {
                let beta = layout.lsfc[(k, n)];
                small_scale_cov.push(match config.fading_model {
                    FadingModel::IidRayleigh => HermitianMatrix::scaled_identity(m, beta),
                    FadingModel::Correlated { r, theta } => exponential_correlation(m, beta, r, theta),
                });
            }
        }
        let factors = small_scale_cov.iter().map(CovarianceFactor::new).collect();
        let noise_var = config.noise_var();
        let max_power = config.max_power_watts();
        let threshold = allocation::snr_threshold(config.power_threshold_snr_db, noise_var, max_power);
        let power = allocation::allocate(power_scheme, &layout.lsfc, &vec![threshold; n_dev], max_power)?;
        let clusters = match dcc_size {
            Some(c) => allocation::dcc_assign(&layout.lsfc, c)?,
            None => ClusterAssignment::all_aps(k_aps, n_dev),
        };
        Ok(Self {
            num_aps: k_aps,
            antennas: m,
            num_devices: n_dev,
            pilot_length: pilots.nrows(),
            area_side: config.area_side,
            ap_positions: layout.ap_positions.clone(),
            device_positions: layout.device_positions.clone(),
            lsfc: layout.lsfc.clone(),
            pilots,
            fading: config.fading_model,
            small_scale_cov,
            factors,
            activity_probs: config.activity_probs(),
            noise_var,
            max_power,
            power,
            clusters,
        })
    }

    pub fn beta(&self, k: usize, n: usize) -> f64 {
        self.lsfc[(k, n)]
    }

    /// Received signal strength ρ_kn = L·p_n·β_kn.
    pub fn rho(&self, k: usize, n: usize) -> f64 {
        self.gain_scale(n) * self.lsfc[(k, n)]
    }

    /// L·p_n, the factor between R̃_kn and the effective covariance.
    pub fn gain_scale(&self, n: usize) -> f64 {
        self.pilot_length as f64 * self.power.powers[n]
    }

    /// Effective channel covariance R_kn = L·p_n·R̃_kn.
    pub fn effective_cov(&self, k: usize, n: usize) -> HermitianMatrix {
        self.small_scale_cov[k * self.num_devices + n].scale(self.gain_scale(n))
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.fading, FadingModel::IidRayleigh)
    }

    pub fn pilot(&self, n: usize) -> nalgebra::DVectorView<'_, C64> {
        self.pilots.column(n)
    }

    /// The same scenario with a different AP clustering.
    pub fn with_clusters(&self, clusters: ClusterAssignment) -> Self {
        Self { clusters, ..self.clone() }
    }
}

/// Draws topology, large-scale fading and pilots, then assembles a scenario.
pub fn build_scenario<R: Rng + ?Sized>(
    config: &NetworkConfig,
    power_scheme: &dyn PowerScheme,
    dcc_size: Option<usize>,
    rng: &mut R,
) -> Result<Scenario> {
    let layout = Layout::draw(config, rng)?;
    let pilots = generate_pilots(config.pilot_length, config.num_devices, rng);
    Scenario::assemble(config, &layout, pilots, power_scheme, dcc_size)
}

/// One Monte-Carlo draw of activities, channels and noise.
#[derive(Debug, Clone)]
pub struct Realization {
    pub activities: Vec<bool>,
    /// h̃_kn as rows of a (K·N)×M matrix, row `k * N + n`.
    pub small_scale: CMatrix,
    /// Effective channels h_kn = √(L·p_n)·h̃_kn, same layout.
    pub channels: CMatrix,
    pub noise: Vec<CMatrix>,
    pub received: Vec<CMatrix>,
}

impl Realization {
    pub fn channel(&self, num_devices: usize, k: usize, n: usize) -> nalgebra::MatrixView<'_, C64, U1, Dyn, U1, Dyn> {
        self.channels.row(k * num_devices + n)
    }

    pub fn active_count(&self) -> usize {
        self.activities.iter().filter(|&&a| a).count()
    }
}

/// Draws activities, then small-scale fading for every (k, n), then noise.
///
/// The draw order does not depend on powers, so two scenarios sharing a
/// layout see identical activities and small-scale fading from the same seed.
pub fn sample_realization<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Realization {
    let (k_aps, n_dev, m, l) = (s.num_aps, s.num_devices, s.antennas, s.pilot_length);
    let activities: Vec<bool> = s.activity_probs.iter().map(|&e| rng.random::<f64>() < e).collect();

    let mut small_scale = CMatrix::zeros(k_aps * n_dev, m);
    let mut white = vec![C64::new(0.0, 0.0); m];
    let mut out = vec![C64::new(0.0, 0.0); m];
    for (idx, f) in s.factors.iter().enumerate() {
        for w in white.iter_mut() {
            *w = complex_normal(rng);
        }
        f.apply(&white, &mut out);
        for (j, v) in out.iter().enumerate() {
            small_scale[(idx, j)] = *v;
        }
    }
    let mut channels = small_scale.clone();
    for k in 0..k_aps {
        for n in 0..n_dev {
            let mut row = channels.row_mut(k * n_dev + n);
            row *= C64::new(s.gain_scale(n).sqrt(), 0.0);
        }
    }

    let sd = s.noise_var.sqrt();
    let noise: Vec<CMatrix> = (0..k_aps)
        .map(|_| CMatrix::from_fn(l, m, |_, _| complex_normal(rng) * sd))
        .collect();

    let received = (0..k_aps)
        .map(|k| {
            let mut y = noise[k].clone();
            for n in (0..n_dev).filter(|&n| activities[n]) {
                let h = channels.row(k * n_dev + n);
                y += s.pilot(n) * h;
            }
            y
        })
        .collect();

    Realization { activities, small_scale, channels, noise, received }
}
