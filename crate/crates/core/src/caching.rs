//! Zipf popularity, cache placements, hit ratio and per-AP power accounting.

use thiserror::Error;

use crate::config::{has_transmit_budget, ValidatedConfig};

/// File request probabilities, most popular first.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityModel {
    probs: Vec<f64>,
    /// `prefix[j] = p_1 + ... + p_j`, `prefix[0] = 0`.
    prefix: Vec<f64>,
}

impl PopularityModel {
    /// Builds a model from any descending distribution; normalizes it.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut prefix = Vec::with_capacity(probs.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            prefix.push(acc);
        }
        // pin the catalogue-wide sum so `hit(J)` is exactly 1
        if let Some(last) = prefix.last_mut() {
            *last = 1.0;
        }
        Self { probs, prefix }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_files(&self) -> usize {
        self.probs.len()
    }

    /// Popularity mass of the `j` most popular files.
    pub fn prefix_mass(&self, j: usize) -> f64 {
        self.prefix[j.min(self.probs.len())]
    }

    /// Popularity mass of an arbitrary file set (zero-based indices).
    pub fn set_mass(&self, files: &[usize]) -> f64 {
        files.iter().map(|&f| self.probs[f]).sum()
    }
}

/// `p_j = j^{-δ} / Σ_n n^{-δ}`, `j = 1..J`.
pub fn zipf_popularity(num_files: usize, delta: f64) -> PopularityModel {
    let weights: Vec<f64> = (1..=num_files).map(|j| (j as f64).powf(-delta)).collect();
    PopularityModel::from_weights(&weights)
}

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("AP {ap}: {count} files exceed cache/catalogue capacity {limit}")]
    OverCapacity { ap: usize, count: usize, limit: usize },
    #[error("AP {ap}: caching {count} files leaves no transmit power")]
    OverPower { ap: usize, count: usize },
}

/// Prefix placement: AP `n` caches files `1..=cached[n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachePlacement {
    cached: Vec<usize>,
}

impl CachePlacement {
    pub fn new(cached: Vec<usize>, cfg: &ValidatedConfig) -> Result<Self, PlacementError> {
        let limit = cfg.cache_capacity_files();
        for (ap, &count) in cached.iter().enumerate() {
            if count > limit {
                return Err(PlacementError::OverCapacity { ap, count, limit });
            }
            if count > 0 && !has_transmit_budget(cfg.power_budget(), cfg.caching_power(count)) {
                return Err(PlacementError::OverPower { ap, count });
            }
        }
        Ok(Self { cached })
    }

    pub fn cached(&self, ap: usize) -> usize {
        self.cached[ap]
    }

    pub fn counts(&self) -> &[usize] {
        &self.cached
    }
}

pub fn hit_ratio(placement: &CachePlacement, pop: &PopularityModel, ap: usize) -> f64 {
    pop.prefix_mass(placement.cached(ap))
}

/// Breakdown of `ρ ΣP + ω j s + P_cc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBreakdown {
    pub transmit: f64,
    pub caching: f64,
    pub circuit: f64,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.transmit + self.caching + self.circuit
    }
}

pub fn total_power(
    sum_tx_power: f64,
    placement: &CachePlacement,
    cfg: &ValidatedConfig,
    ap: usize,
) -> PowerBreakdown {
    PowerBreakdown {
        transmit: cfg.power_amp_coeff * sum_tx_power,
        caching: cfg.caching_power(placement.cached(ap)),
        circuit: cfg.circuit_power,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use proptest::prelude::*;

    fn cfg() -> ValidatedConfig {
        NetworkConfig::default().validate().unwrap()
    }

    #[test]
    fn uniform_at_zero_skew() {
        let pop = zipf_popularity(4, 0.0);
        assert_eq!(pop.probs(), &[0.25; 4]);
        let pl = CachePlacement::new(vec![2], &cfg()).unwrap();
        assert!((hit_ratio(&pl, &pop, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_catalogue_is_normalized() {
        let pop = zipf_popularity(1000, 0.8);
        let s: f64 = pop.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(pop.prefix_mass(0), 0.0);
        assert_eq!(pop.prefix_mass(1000), 1.0);
    }

    #[test]
    fn placement_limits() {
        let c = cfg();
        assert!(CachePlacement::new(vec![400, 0], &c).is_ok());
        assert_eq!(
            CachePlacement::new(vec![401], &c),
            Err(PlacementError::OverCapacity {
                ap: 0,
                count: 401,
                limit: 400
            })
        );
        // huge cache: power becomes the binding limit at 1200 files (= 6 W)
        let big = c.with(|c| c.cache_size = 1e15).unwrap();
        assert!(CachePlacement::new(vec![1000], &big).is_ok());
        let tiny_budget = c.with(|c| c.max_power = 3.0).unwrap();
        assert_eq!(
            CachePlacement::new(vec![200], &tiny_budget),
            Err(PlacementError::OverPower { ap: 0, count: 200 })
        );
    }

    #[test]
    fn power_accounting() {
        let c = cfg();
        let empty = CachePlacement::new(vec![0], &c).unwrap();
        assert_eq!(total_power(0.0, &empty, &c, 0).total(), 2.0);
        let full = CachePlacement::new(vec![400], &c).unwrap();
        let p = total_power(1.0, &full, &c, 0);
        assert!((p.caching - 2.0).abs() < 1e-12);
        assert!((p.transmit - 1.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn zipf_ratio_and_monotonicity(j in 2usize..300, delta in 0.0f64..2.0) {
            let pop = zipf_popularity(j, delta);
            let p = pop.probs();
            prop_assert!((p[0] / p[1] - 2f64.powf(delta)).abs() < 1e-9 * 2f64.powf(delta));
            for w in p.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            // hit ratio nondecreasing with nonincreasing increments
            for k in 1..j {
                let inc = pop.prefix_mass(k + 1) - pop.prefix_mass(k);
                let prev = pop.prefix_mass(k) - pop.prefix_mass(k - 1);
                prop_assert!(inc >= -1e-15);
                prop_assert!(inc <= prev + 1e-15);
            }
        }

        #[test]
        fn more_skew_more_hits(j in 2usize..400, cut in 1usize..400, d in 0.0f64..1.5, extra in 0.01f64..1.0) {
            let cut = cut.min(j - 1);
            let low = zipf_popularity(j, d).prefix_mass(cut);
            let high = zipf_popularity(j, d + extra).prefix_mass(cut);
            prop_assert!(high > low);
        }
    }
}
