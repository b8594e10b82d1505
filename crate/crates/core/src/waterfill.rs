//! Volume-adjustable backhaul-constrained water-filling (VABWF).
//!
//! For a fixed cached count `j`, the power left for transmission is
//! `(P_M - P_cc - ω j s) / ρ`. Each UE `k` gets `(L - σ²/g_k)^+`, where the
//! water level `L = B / (ρ μ ln 2)` is set so the whole budget is spent.
//! When the clip is active the multiplier is recomputed over the surviving
//! UEs until every remaining power is positive.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::channel::rate_unchecked;
use crate::config::{has_transmit_budget, ValidatedConfig};

#[derive(Debug, Error, PartialEq)]
pub enum WaterfillError {
    #[error("no UEs to allocate power to")]
    EmptyUserSet,
    #[error("caching {cached} files leaves no transmit budget")]
    NoTransmitBudget { cached: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillResult {
    /// Radiated power per UE, W.
    pub powers: Vec<f64>,
    /// `B / (ρ μ ln 2)`, W.
    pub water_level: f64,
    /// Budget multiplier, 1/W.
    pub mu: f64,
    /// `Σ B log2(1 + P g G / σ²)`, bit/s.
    pub sum_rate: f64,
    /// Indices with strictly positive power, ascending.
    pub active_set: Vec<usize>,
    pub cached: usize,
}

impl WaterfillResult {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Optimal per-UE powers for `cached` files held in the cache.
pub fn vabwf(gains: &[f64], cached: usize, cfg: &ValidatedConfig) -> Result<WaterfillResult, WaterfillError> {
    if gains.is_empty() {
        return Err(WaterfillError::EmptyUserSet);
    }
    let budget = cfg.power_budget();
    let caching = cfg.caching_power(cached);
    if !has_transmit_budget(budget, caching) {
        return Err(WaterfillError::NoTransmitBudget { cached });
    }
    let tx_budget = (budget - caching) / cfg.power_amp_coeff;
    Ok(waterfill(gains, tx_budget, cached, cfg))
}

/// Water-filling of a fixed radiated budget `tx_budget` (W) over `gains`.
pub(crate) fn waterfill(gains: &[f64], tx_budget: f64, cached: usize, cfg: &ValidatedConfig) -> WaterfillResult {
    let floors: Vec<f64> = gains.iter().map(|g| cfg.noise_power / g).collect();
    let mut active: Vec<usize> = (0..gains.len()).collect();
    let level = loop {
        let sum_floor: f64 = active.iter().map(|&k| floors[k]).sum();
        let level = (tx_budget + sum_floor) / active.len() as f64;
        let before = active.len();
        active.retain(|&k| level - floors[k] > 0.0);
        if active.len() == before {
            break level;
        }
        // the weakest UE always survives: its floor sits below the mean level
        debug_assert!(!active.is_empty());
    };
    let mut powers = vec![0.0; gains.len()];
    for &k in &active {
        powers[k] = level - floors[k];
    }
    let sum_rate = gains
        .iter()
        .zip(&powers)
        .map(|(&g, &p)| rate_unchecked(p, g, cfg).rate)
        .sum();
    WaterfillResult {
        powers,
        water_level: level,
        mu: cfg.subchannel_bw / (cfg.power_amp_coeff * level * LN_2),
        sum_rate,
        active_set: active,
        cached,
    }
}

/// Residuals of the optimality conditions, each scaled to be dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `max |ε_k| / (ρμ)` over UEs with positive power.
    pub stationarity: f64,
    /// `|ρ ΣP + ω j s - (P_M - P_cc)| / P_M`.
    pub budget: f64,
    /// `max |ε_k P_k| / (ρμ L)`.
    pub complementary_slackness: f64,
    /// Largest negative multiplier, scaled; zero when dual feasible.
    pub dual_feasibility: f64,
    /// `ε_k = ρμ - B g_k / ((σ² + g_k P_k) ln 2)`.
    pub epsilons: Vec<f64>,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.budget)
            .max(self.complementary_slackness)
            .max(self.dual_feasibility)
    }

    pub fn satisfied(&self, tol: f64) -> bool {
        self.max_residual() < tol
    }
}

pub const DEFAULT_KKT_TOL: f64 = 1e-8;

pub fn verify_kkt(res: &WaterfillResult, gains: &[f64], cached: usize, cfg: &ValidatedConfig) -> KktReport {
    let rho_mu = cfg.power_amp_coeff * res.mu;
    let sigma2 = cfg.noise_power;
    let b = cfg.subchannel_bw;
    let epsilons: Vec<f64> = gains
        .iter()
        .zip(&res.powers)
        .map(|(&g, &p)| rho_mu - b * g / ((sigma2 + g * p) * LN_2))
        .collect();

    let mut stationarity: f64 = 0.0;
    let mut complementary: f64 = 0.0;
    let mut dual: f64 = if res.mu < 0.0 { -res.mu } else { 0.0 };
    for (&eps, &p) in epsilons.iter().zip(&res.powers) {
        if p > 0.0 {
            stationarity = stationarity.max(eps.abs() / rho_mu);
        } else {
            dual = dual.max(-eps / rho_mu);
        }
        complementary = complementary.max((eps * p).abs() / (rho_mu * res.water_level));
    }
    let used = cfg.power_amp_coeff * res.total_power() + cfg.caching_power(cached);
    KktReport {
        stationarity,
        budget: (used - cfg.power_budget()).abs() / cfg.max_power,
        complementary_slackness: complementary,
        dual_feasibility: dual.max(0.0),
        epsilons,
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

    fn rate_sum(gains: &[f64], powers: &[f64], c: &ValidatedConfig) -> f64 {
        gains
            .iter()
            .zip(powers)
            .map(|(&g, &p)| rate_unchecked(p, g, c).rate)
            .sum()
    }

    #[test]
    fn single_ue_takes_everything() {
        let c = cfg();
        let r = vabwf(&[1e-6], 100, &c).unwrap();
        let expect = (8.0 - 2.0 - c.caching_power(100)) / 1.2;
        assert!((r.powers[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn equal_gains_equal_powers_zero_eps() {
        let c = cfg();
        let g = [3e-7; 4];
        let r = vabwf(&g, 0, &c).unwrap();
        for p in &r.powers {
            assert!((p - r.powers[0]).abs() < 1e-15);
        }
        let rep = verify_kkt(&r, &g, 0, &c);
        for e in &rep.epsilons {
            assert!(e.abs() <= 1e-15 * c.power_amp_coeff * r.mu);
        }
    }

    #[test]
    fn errors() {
        let c = cfg();
        assert_eq!(vabwf(&[], 0, &c), Err(WaterfillError::EmptyUserSet));
        let big = c.with(|c| c.cache_size = 1e15).unwrap();
        assert_eq!(
            vabwf(&[1.0], 1200, &big),
            Err(WaterfillError::NoTransmitBudget { cached: 1200 })
        );
        assert!(vabwf(&[1.0], 1199, &big).is_ok());
    }

    #[test]
    fn clipping_kicks_out_weak_users() {
        // G = 1 so the rate objective and the KKT system coincide
        let c = cfg().with(|c| c.beam_gain = 1.0).unwrap();
        let sigma2 = c.noise_power;
        // floors 0.5 W, 1 W and 40 W against a 5 W radiated budget
        let g = [sigma2 / 0.5, sigma2 / 1.0, sigma2 / 40.0];
        let r = vabwf(&g, 0, &c).unwrap();
        assert_eq!(r.active_set, vec![0, 1]);
        assert_eq!(r.powers[2], 0.0);
        // L = (5 + 1.5) / 2
        assert!((r.water_level - 3.25).abs() < 1e-12);
        let rep = verify_kkt(&r, &g, 0, &c);
        assert!(rep.satisfied(DEFAULT_KKT_TOL), "{rep:?}");
        assert!(rep.epsilons[2] > 0.0);
    }

    #[test]
    fn clipped_allocation_beats_grid() {
        let c = cfg().with(|c| c.beam_gain = 1.0).unwrap();
        let sigma2 = c.noise_power;
        let g = [sigma2 / 0.3, sigma2 / 2.0, sigma2 / 4.5];
        let r = vabwf(&g, 0, &c).unwrap();
        let budget = c.power_budget() / c.power_amp_coeff;
        let step = 1e-3;
        let steps = (budget / step).round() as usize;
        let mut best = f64::MIN;
        for a in 0..=steps {
            for b in 0..=steps - a {
                let p = [a as f64 * step, b as f64 * step, budget - (a + b) as f64 * step];
                best = best.max(rate_sum(&g, &p, &c));
            }
        }
        assert!(r.sum_rate >= best - 1e-6 * best.abs(), "{} < {}", r.sum_rate, best);
        assert!(r.sum_rate - best < 0.01 * best);
    }

    #[test]
    fn perturbation_breaks_stationarity() {
        let c = cfg();
        let g = [1e-7, 4e-8, 2e-6];
        let r = vabwf(&g, 50, &c).unwrap();
        assert!(verify_kkt(&r, &g, 50, &c).satisfied(DEFAULT_KKT_TOL));
        let mut bent = r.clone();
        bent.powers[0] += 1e-3;
        bent.powers[1] -= 1e-3;
        let rep = verify_kkt(&bent, &g, 50, &c);
        assert!(rep.stationarity > DEFAULT_KKT_TOL);
        assert!(rep.budget < DEFAULT_KKT_TOL);
    }

    #[test]
    fn more_caching_lowers_level_and_rate() {
        let c = cfg();
        let g = [1e-7, 4e-8, 2e-6, 5e-9];
        let mut prev = vabwf(&g, 0, &c).unwrap();
        for j in (20..=400).step_by(20) {
            let r = vabwf(&g, j, &c).unwrap();
            assert!(r.water_level <= prev.water_level);
            assert!(r.sum_rate <= prev.sum_rate);
            prev = r;
        }
    }

    fn gains_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..-5.0, 1..20)
            .prop_map(|v| v.into_iter().map(|e| 10f64.powf(e)).collect())
    }

    proptest! {
        #[test]
        fn kkt_holds_and_budget_is_spent(g in gains_strategy(), j in 0usize..=400) {
            let c = cfg();
            let r = vabwf(&g, j, &c).unwrap();
            let rep = verify_kkt(&r, &g, j, &c);
            prop_assert!(rep.satisfied(DEFAULT_KKT_TOL), "{:?}", rep);
            prop_assert!(r.powers.iter().all(|&p| p >= 0.0));
            for (k, &p) in r.powers.iter().enumerate() {
                let expect = (r.water_level - c.noise_power / g[k]).max(0.0);
                prop_assert!((p - expect).abs() <= 1e-12 * r.water_level);
            }
        }

        #[test]
        fn beats_random_feasible_points(g in gains_strategy(), seed in any::<u64>()) {
            use rand::Rng;
            let c = cfg();
            let r = vabwf(&g, 0, &c).unwrap();
            let budget = c.power_budget() / c.power_amp_coeff;
            let mut rng = crate::rng::RandomStream::new(seed);
            for _ in 0..20 {
                let w: Vec<f64> = g.iter().map(|_| rng.random::<f64>()).collect();
                let s: f64 = w.iter().sum();
                let p: Vec<f64> = w.iter().map(|x| budget * x / s).collect();
                prop_assert!(r.sum_rate >= rate_sum(&g, &p, &c) - 1e-9 * r.sum_rate);
            }
        }

        #[test]
        fn permutation_invariance(g in gains_strategy(), shift in 0usize..20) {
            let c = cfg();
            let n = g.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let pg: Vec<f64> = perm.iter().map(|&i| g[i]).collect();
            let a = vabwf(&g, 10, &c).unwrap();
            let b = vabwf(&pg, 10, &c).unwrap();
            for (i, &src) in perm.iter().enumerate() {
                prop_assert!((b.powers[i] - a.powers[src]).abs() <= 1e-12 * a.water_level);
            }
        }
    }
}
