//! User-centric power allocation and dynamic cooperation clustering.
//!
//! Gains are passed as a K×N matrix `lsfc[(k, n)]` in linear units. AP and
//! device indices are zero-based.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-device coefficient rule `s_n` used to back off transmit power.
pub trait PowerScheme: Send + Sync {
    fn name(&self) -> &'static str;

    /// `gains` holds β_kn for every AP k; `set` is the device's AP set.
    fn coefficient(&self, gains: &[f64], set: &[usize]) -> f64;

    /// Schemes whose coefficient is constant always transmit at full power.
    fn is_uniform(&self) -> bool {
        false
    }
}

pub struct FullPower;
pub struct MasterAp;
pub struct AvgAp;

impl PowerScheme for FullPower {
    fn name(&self) -> &'static str {
        "full"
    }
    fn coefficient(&self, _gains: &[f64], _set: &[usize]) -> f64 {
        1.0
    }
    fn is_uniform(&self) -> bool {
        true
    }
}

impl PowerScheme for MasterAp {
    fn name(&self) -> &'static str {
        "master"
    }
    fn coefficient(&self, gains: &[f64], set: &[usize]) -> f64 {
        set.iter().map(|&k| gains[k]).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl PowerScheme for AvgAp {
    fn name(&self) -> &'static str {
        "avg"
    }
    fn coefficient(&self, gains: &[f64], set: &[usize]) -> f64 {
        set.iter().map(|&k| gains[k]).sum::<f64>() / set.len() as f64
    }
}

/// Power schemes addressable by name.
#[derive(Clone)]
pub struct PowerRegistry {
    schemes: BTreeMap<String, Arc<dyn PowerScheme>>,
}

impl PowerRegistry {
    pub fn empty() -> Self {
        Self { schemes: BTreeMap::new() }
    }

    pub fn register(&mut self, scheme: Arc<dyn PowerScheme>) {
        self.schemes.insert(scheme.name().to_string(), scheme);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn PowerScheme>> {
        self.schemes.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "power scheme",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }
}

impl Default for PowerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(FullPower));
        r.register(Arc::new(MasterAp));
        r.register(Arc::new(AvgAp));
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAssignment {
    pub scheme: String,
    pub thresholds: Vec<f64>,
    /// Augmented AP sets (threshold set plus the strongest AP).
    pub sets: Vec<Vec<usize>>,
    /// Whether at least one AP exceeded the threshold.
    pub eligible: Vec<bool>,
    pub coefficients: Vec<f64>,
    pub powers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub dcc_size: usize,
    pub device_sets: Vec<Vec<usize>>,
    pub ap_sets: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Every device served by every AP.
    pub fn all_aps(num_aps: usize, num_devices: usize) -> Self {
        Self {
            dcc_size: num_aps,
            device_sets: vec![(0..num_aps).collect(); num_devices],
            ap_sets: vec![(0..num_devices).collect(); num_aps],
        }
    }

    pub fn from_device_sets(num_aps: usize, dcc_size: usize, device_sets: Vec<Vec<usize>>) -> Self {
        let mut ap_sets = vec![Vec::new(); num_aps];
        for (n, set) in device_sets.iter().enumerate() {
            for &k in set {
                ap_sets[k].push(n);
            }
        }
        Self { dcc_size, device_sets, ap_sets }
    }
}

/// Index of the largest gain; the lowest index wins ties.
pub fn argmax(gains: &[f64]) -> usize {
    let mut best = 0;
    for (k, &g) in gains.iter().enumerate().skip(1) {
        if g > gains[best] {
            best = k;
        }
    }
    best
}

/// Returns the augmented set and whether the raw threshold set was nonempty.
pub fn associate_power_aps(gains: &[f64], threshold: f64) -> (Vec<usize>, bool) {
    let mut set: Vec<usize> = (0..gains.len()).filter(|&k| gains[k] > threshold).collect();
    let eligible = !set.is_empty();
    let best = argmax(gains);
    if !set.contains(&best) {
        set.push(best);
        set.sort_unstable();
    }
    (set, eligible)
}

pub fn power_coefficients(scheme: &dyn PowerScheme, lsfc: &DMatrix<f64>, sets: &[Vec<usize>]) -> Vec<f64> {
    sets.iter()
        .enumerate()
        .map(|(n, set)| {
            let gains: Vec<f64> = lsfc.column(n).iter().copied().collect();
            scheme.coefficient(&gains, set)
        })
        .collect()
}

/// `p_n = min(s_min / s_n, 1) · p_max` with `s_min` over eligible devices.
pub fn allocate_power(coefficients: &[f64], eligible: &[bool], max_power: f64) -> Result<Vec<f64>> {
    let s_min = coefficients
        .iter()
        .zip(eligible)
        .filter(|(_, &e)| e)
        .map(|(&s, _)| s)
        .fold(f64::INFINITY, f64::min);
    if !s_min.is_finite() {
        return Err(Error::Config(
            "no device exceeds the power-allocation threshold at any AP".into(),
        ));
    }
    Ok(coefficients.iter().map(|&s| (s_min / s).min(1.0) * max_power).collect())
}

/// Runs the full three-step allocation for one scheme.
pub fn allocate(
    scheme: &dyn PowerScheme,
    lsfc: &DMatrix<f64>,
    thresholds: &[f64],
    max_power: f64,
) -> Result<PowerAssignment> {
    let n_dev = lsfc.ncols();
    if thresholds.len() != n_dev {
        return Err(Error::Dimension(format!(
            "{} thresholds for {} devices",
            thresholds.len(),
            n_dev
        )));
    }
    let mut sets = Vec::with_capacity(n_dev);
    let mut eligible = Vec::with_capacity(n_dev);
    for n in 0..n_dev {
        let gains: Vec<f64> = lsfc.column(n).iter().copied().collect();
        let (set, e) = associate_power_aps(&gains, thresholds[n]);
        sets.push(set);
        eligible.push(e);
    }
    let coefficients = power_coefficients(scheme, lsfc, &sets);
    let powers = if scheme.is_uniform() {
        vec![max_power; n_dev]
    } else {
        allocate_power(&coefficients, &eligible, max_power)?
    };
    Ok(PowerAssignment {
        scheme: scheme.name().to_string(),
        thresholds: thresholds.to_vec(),
        sets,
        eligible,
        coefficients,
        powers,
    })
}

/// Threshold β_th such that `p_max · β_th / σ²` equals the given SNR.
pub fn snr_threshold(snr_db: f64, noise_var: f64, max_power: f64) -> f64 {
    noise_var * 10f64.powf(snr_db / 10.0) / max_power
}

/// Serves each device by its `dcc_size` strongest APs.
pub fn dcc_assign(lsfc: &DMatrix<f64>, dcc_size: usize) -> Result<ClusterAssignment> {
    if dcc_size == 0 {
        return Err(Error::Config("cluster size must be at least 1".into()));
    }
    let (k_aps, n_dev) = lsfc.shape();
    let c = dcc_size.min(k_aps);
    let device_sets = (0..n_dev)
        .map(|n| {
            let mut order: Vec<usize> = (0..k_aps).collect();
            // stable sort keeps lower AP index first on ties
            order.sort_by(|&a, &b| lsfc[(b, n)].total_cmp(&lsfc[(a, n)]));
            let mut set: Vec<usize> = order.into_iter().take(c).collect();
            set.sort_unstable();
            set
        })
        .collect();
    Ok(ClusterAssignment::from_device_sets(k_aps, dcc_size, device_sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(g: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(g.len(), 1, g)
    }

    #[test]
    fn association_examples() {
        assert_eq!(associate_power_aps(&[2.0, 5.0, 1.0], 3.0), (vec![1], true));
        assert_eq!(associate_power_aps(&[2.0, 2.5, 1.0], 3.0), (vec![1], false));
        assert_eq!(associate_power_aps(&[4.0, 5.0, 1.0], 3.0), (vec![0, 1], true));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[3.0, 3.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn coefficient_examples() {
        let g = [4.0, 5.0, 1.0];
        let set = [0, 1];
        assert_eq!(FullPower.coefficient(&g, &set), 1.0);
        assert_eq!(MasterAp.coefficient(&g, &set), 5.0);
        assert_eq!(AvgAp.coefficient(&g, &set), 4.5);
    }

    #[test]
    fn power_examples() {
        assert_eq!(allocate_power(&[3.0, 3.0], &[true, true], 0.2).unwrap(), vec![0.2, 0.2]);
        assert_eq!(allocate_power(&[1.0, 2.0], &[true, true], 0.2).unwrap(), vec![0.2, 0.1]);
        assert!(allocate_power(&[1.0, 2.0], &[false, false], 0.2).is_err());
        // ineligible devices do not set s_min but still get power
        assert_eq!(allocate_power(&[1.0, 2.0, 0.5], &[true, true, false], 1.0).unwrap(), vec![1.0, 0.5, 1.0]);
    }

    #[test]
    fn full_power_ignores_eligibility() {
        let lsfc = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let a = allocate(&FullPower, &lsfc, &[10.0, 10.0], 0.2).unwrap();
        assert_eq!(a.powers, vec![0.2, 0.2]);
        assert_eq!(a.eligible, vec![false, false]);
        assert!(allocate(&MasterAp, &lsfc, &[10.0, 10.0], 0.2).is_err());
    }

    #[test]
    fn dcc_examples() {
        let g = column(&[2.0, 5.0, 1.0]);
        assert_eq!(dcc_assign(&g, 1).unwrap().device_sets, vec![vec![1]]);
        assert_eq!(dcc_assign(&g, 5).unwrap().device_sets, vec![vec![0, 1, 2]]);
        let tie = column(&[2.0, 2.0, 2.0]);
        assert_eq!(dcc_assign(&tie, 2).unwrap().device_sets, vec![vec![0, 1]]);
        assert!(dcc_assign(&g, 0).is_err());
    }

    #[test]
    fn registry_resolves_by_name() {
        let r = PowerRegistry::default();
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["avg", "full", "master"]);
        assert_eq!(r.get("master").unwrap().name(), "master");
        assert!(r.get("optimal").is_err());
    }

    fn gains_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..6, 1usize..8).prop_flat_map(|(k, n)| {
            (Just(k), Just(n), prop::collection::vec(1e-3f64..1e3, k * n))
        })
    }

    proptest! {
        #[test]
        fn dcc_duality_and_sizes((k, n, g) in gains_strategy(), c in 1usize..8) {
            let lsfc = DMatrix::from_vec(k, n, g);
            let a = dcc_assign(&lsfc, c).unwrap();
            for (dev, set) in a.device_sets.iter().enumerate() {
                prop_assert_eq!(set.len(), c.min(k));
                for ap in 0..k {
                    prop_assert_eq!(set.contains(&ap), a.ap_sets[ap].contains(&dev));
                }
            }
            let total: usize = a.ap_sets.iter().map(Vec::len).sum();
            prop_assert_eq!(total, n * c.min(k));
            let rebuilt = ClusterAssignment::from_device_sets(k, c, a.device_sets.clone());
            prop_assert_eq!(rebuilt, a);
        }

        #[test]
        fn gain_scaling_leaves_sets_and_ratios_unchanged(
            (k, n, g) in gains_strategy(), scale in 1e-3f64..1e3, th in 1e-2f64..1e2, c in 1usize..4,
        ) {
            let lsfc = DMatrix::from_vec(k, n, g);
            let scaled = &lsfc * scale;
            let th_a = vec![th; n];
            let th_b = vec![th * scale; n];
            for scheme in [&FullPower as &dyn PowerScheme, &MasterAp, &AvgAp] {
                let a = allocate(scheme, &lsfc, &th_a, 1.0);
                let b = allocate(scheme, &scaled, &th_b, 1.0);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        prop_assert_eq!(&a.sets, &b.sets);
                        for (x, y) in a.powers.iter().zip(&b.powers) {
                            prop_assert!((x - y).abs() < 1e-9);
                        }
                    }
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "eligibility changed under scaling"),
                }
            }
            prop_assert_eq!(dcc_assign(&lsfc, c).unwrap(), dcc_assign(&scaled, c).unwrap());
        }

        #[test]
        fn power_non_increasing_in_coefficient(s in prop::collection::vec(1e-3f64..1e3, 2..10)) {
            let eligible = vec![true; s.len()];
            let p = allocate_power(&s, &eligible, 1.0).unwrap();
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if s[i] <= s[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
                prop_assert!(p[i] > 0.0 && p[i] <= 1.0);
            }
        }
    }
}
