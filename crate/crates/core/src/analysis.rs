//! Stochastic-geometry throughput bound.
//!
//! UEs form a PPP of density λ in a disc cell of radius `D`, so a cell holds
//! `λπD²` UEs on average and the serving distance has pdf `2r/D²`. With the
//! water-filling allocation and the mean inverse channel gain substituted for
//! the per-UE floors, the ergodic rate of a typical link is a double integral
//! over distance and rate threshold. It drives the backhaul load
//! `C_n = p_miss · λπD² · B τ` and the bound
//! `R⁺ = min(λπD² N B τ, C + p_hit λπD² N B τ)`.
//!
//! Everywhere below `P_T` is the power an AP *consumes* for transmission,
//! `ρ ΣP`; the radiated power that sets the rate is `P_T / ρ`.

use std::f64::consts::PI;
use std::io::Write;

use thiserror::Error;

use rand::Rng;

use crate::caching::PopularityModel;
use crate::channel::sample_fading;
use crate::config::{floor_tol, ValidatedConfig};
use crate::quadrature::{integrate, QuadratureError};
use crate::rng::RandomStream;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("rate integral failed: {0}")]
    IntegrationFailure(#[from] QuadratureError),
    #[error("transmit power {0} W outside [0, P_M - P_cc]")]
    PowerOutOfRange(f64),
}

/// Quadrature tolerances of the nested rate integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTolerance {
    /// Relative tolerance on the outer distance integral.
    pub outer_rel: f64,
    /// Relative tolerance on each inner threshold integral.
    pub inner_rel: f64,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self {
            outer_rel: 1e-6,
            inner_rel: 1e-9,
        }
    }
}

/// Where the threshold integral is truncated: `exp(-40)` is below f64 significance.
const PSI_CUTOFF: f64 = 40.0;

/// Constants of one link state (LOS or NLOS).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateConstants {
    pub order: u32,
    pub alpha: f64,
    /// `N (N!)^{-1/N}`
    pub eta: f64,
    /// `G N (D/2)^α / (N - 1)`
    pub u: f64,
    pub los: bool,
}

/// Everything the rate integral needs for one transmit power.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    /// Consumed transmit power per AP, W.
    pub p_t: f64,
    /// Mean UEs per cell, `λπD²`.
    pub users_per_cell: f64,
    /// `G / (σ² λ π D²)`
    pub v: f64,
    pub states: [StateConstants; 2],
    beta: f64,
    radius: f64,
    min_distance: f64,
    beam_gain: f64,
    /// `P_T / ρ`
    radiated: f64,
}

pub fn eta(order: u32) -> f64 {
    let n = f64::from(order);
    let ln_fact: f64 = (2..=order).map(|k| f64::from(k).ln()).sum();
    n * (-ln_fact / n).exp()
}

impl RateModel {
    pub fn new(cfg: &ValidatedConfig, p_t: f64) -> Self {
        let d = cfg.cell_radius;
        let users = cfg.ue_density * PI * d * d;
        let state = |order: u32, alpha: f64, los: bool| {
            let n = f64::from(order);
            StateConstants {
                order,
                alpha,
                eta: eta(order),
                u: cfg.beam_gain * n * (d / 2.0).powf(alpha) / (n - 1.0),
                los,
            }
        };
        Self {
            p_t,
            users_per_cell: users,
            v: cfg.beam_gain / (cfg.noise_power * users),
            states: [
                state(cfg.nakagami_los, cfg.pathloss_los, true),
                state(cfg.nakagami_nlos, cfg.pathloss_nlos, false),
            ],
            beta: cfg.blockage_beta,
            radius: d,
            min_distance: cfg.min_distance,
            beam_gain: cfg.beam_gain,
            radiated: p_t / cfg.power_amp_coeff,
        }
    }

    /// `U_i + V P`, with `P` the radiated sum power.
    fn denominator(&self, s: &StateConstants) -> f64 {
        s.u + self.v * self.radiated
    }

    /// `P[rate > t]` for state `s` at clamped distance `r`:
    /// `Σ_m (-1)^{m+1} C(N,m) e^{-m a}` summed in closed form as `1 - (1 - e^{-a})^N`.
    pub fn exceedance(&self, s: &StateConstants, r: f64, t: f64) -> f64 {
        let a = s.eta * r.powf(s.alpha) * (t.exp2() + self.beam_gain - 1.0) / self.denominator(s);
        let n = f64::from(s.order);
        // 1 - (1 - e^{-a})^N, accurate at both ends
        -(n * (-(-a).exp()).ln_1p()).exp_m1()
    }

    /// Threshold at which `a = 1` for state `s` at distance `r`, if positive.
    fn knee(&self, s: &StateConstants, r: f64) -> Option<f64> {
        let x = self.denominator(s) / (s.eta * r.powf(s.alpha)) - self.beam_gain + 1.0;
        (x > 1.0).then(|| x.log2())
    }

    /// Upper end of the threshold integral: `ψ = 40` at the distance floor.
    pub fn t_max(&self) -> f64 {
        self.states
            .iter()
            .map(|s| {
                let x = PSI_CUTOFF * self.denominator(s) / (s.eta * self.min_distance.powf(s.alpha))
                    - self.beam_gain
                    + 1.0;
                x.max(2.0).log2()
            })
            .fold(1.0, f64::max)
    }
}

/// Ergodic link rate τ in bit/s/Hz.
pub fn average_rate(model: &RateModel, tol: QuadTolerance) -> Result<f64, AnalysisError> {
    let t_max = model.t_max();
    let r_floor = model.min_distance;
    let d = model.radius;
    let mut inner_err = None;
    let mut integrand = |r: f64| {
        let re = r.max(r_floor);
        let p_los = (-model.beta * re).exp();
        let mut acc = 0.0;
        for s in &model.states {
            let weight = if s.los { p_los } else { 1.0 - p_los };
            if weight <= 0.0 {
                continue;
            }
            let knee: Vec<f64> = model.knee(s, re).into_iter().collect();
            match integrate(|t| model.exceedance(s, re, t), 0.0, t_max, &knee, 1e-12, tol.inner_rel) {
                Ok(v) => acc += weight * v,
                Err(e) => {
                    inner_err.get_or_insert(e);
                }
            }
        }
        acc * 2.0 * r / (d * d)
    };
    let breaks = [r_floor];
    let tau = integrate(&mut integrand, 0.0, d, &breaks, 1e-12, tol.outer_rel)?;
    if let Some(e) = inner_err {
        return Err(e.into());
    }
    Ok(tau)
}

/// Direct sampling of the typical-link rate under the same surrogate the
/// integral uses: every UE sits at the mean water level
/// `L_i = P_T/(ρ λπD²) + (D/2)^{α_i} σ² N_i/(N_i-1)` and receives
/// `L_i - σ² r^{α_i}/h`, with true Gamma fading. Negative rates count as 0.
pub fn monte_carlo_rate(cfg: &ValidatedConfig, p_t: f64, samples: usize, rng: &mut RandomStream) -> f64 {
    let d = cfg.cell_radius;
    let users = cfg.ue_density * PI * d * d;
    let radiated = p_t / cfg.power_amp_coeff;
    let level = |order: u32, alpha: f64| {
        radiated / users + (d / 2.0).powf(alpha) * cfg.noise_power * mean_inverse_fading(order)
    };
    let levels = [
        level(cfg.nakagami_los, cfg.pathloss_los),
        level(cfg.nakagami_nlos, cfg.pathloss_nlos),
    ];
    let mut acc = 0.0;
    for _ in 0..samples {
        let r = (d * rng.random::<f64>().sqrt()).max(cfg.min_distance);
        let los = rng.random::<f64>() < (-cfg.blockage_beta * r).exp();
        let (order, alpha, l) = if los {
            (cfg.nakagami_los, cfg.pathloss_los, levels[0])
        } else {
            (cfg.nakagami_nlos, cfg.pathloss_nlos, levels[1])
        };
        let h = sample_fading(order, rng);
        let gain = h * r.powf(-alpha);
        let snr = l * gain * cfg.beam_gain / cfg.noise_power - cfg.beam_gain;
        if snr > 0.0 {
            acc += snr.ln_1p() / std::f64::consts::LN_2;
        }
    }
    acc / samples as f64
}

/// `λπD² (D/2)^{α_i} σ² N_i/(N_i - 1)` for `[LOS, NLOS]`: the expected sum of
/// noise-normalized inverse gains of one cell.
pub fn expected_inverse_gain(cfg: &ValidatedConfig, density: f64, radius: f64) -> [f64; 2] {
    let users = density * PI * radius * radius;
    let term = |order: u32, alpha: f64| {
        let n = f64::from(order);
        users * (radius / 2.0).powf(alpha) * cfg.noise_power * n / (n - 1.0)
    };
    [
        term(cfg.nakagami_los, cfg.pathloss_los),
        term(cfg.nakagami_nlos, cfg.pathloss_nlos),
    ]
}

/// `E[1/h] = N/(N - 1)` for unit-mean Gamma fading of order `N`.
pub fn mean_inverse_fading(order: u32) -> f64 {
    let n = f64::from(order);
    n / (n - 1.0)
}

/// Files an AP can cache when it spends `p_t` on transmission.
pub fn cached_files_at(p_t: f64, cfg: &ValidatedConfig) -> usize {
    let caching = (cfg.power_budget() - p_t).max(0.0);
    let files = floor_tol(caching / (cfg.caching_power_coeff * cfg.file_size));
    files.min(cfg.cache_capacity_files())
}

pub fn analytic_hit_ratio(p_t: f64, cfg: &ValidatedConfig, pop: &PopularityModel) -> f64 {
    pop.prefix_mass(cached_files_at(p_t, cfg))
}

/// All bound quantities at one transmit power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub p_t: f64,
    /// bit/s/Hz
    pub tau: f64,
    pub p_hit: f64,
    /// Per-AP sum rate `λπD² B τ`, bit/s.
    pub r_n: f64,
    /// Per-AP backhaul load, bit/s.
    pub c_n: f64,
    pub r_plus: f64,
}

/// Bound evaluator bound to one config and popularity model.
#[derive(Debug, Clone)]
pub struct Analyzer<'a> {
    cfg: &'a ValidatedConfig,
    pop: &'a PopularityModel,
    tol: QuadTolerance,
}

impl<'a> Analyzer<'a> {
    pub fn new(cfg: &'a ValidatedConfig, pop: &'a PopularityModel) -> Self {
        Self {
            cfg,
            pop,
            tol: QuadTolerance::default(),
        }
    }

    pub fn with_tolerance(mut self, tol: QuadTolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn tau(&self, p_t: f64) -> Result<f64, AnalysisError> {
        average_rate(&RateModel::new(self.cfg, p_t), self.tol)
    }

    pub fn evaluate(&self, p_t: f64) -> Result<BoundPoint, AnalysisError> {
        let budget = self.cfg.power_budget();
        if !(0.0..=budget * (1.0 + 1e-12)).contains(&p_t) {
            return Err(AnalysisError::PowerOutOfRange(p_t));
        }
        let users = self.cfg.ue_density * PI * self.cfg.cell_radius.powi(2);
        let p_hit = analytic_hit_ratio(p_t, self.cfg, self.pop);
        if users == 0.0 {
            return Ok(BoundPoint {
                p_t,
                tau: 0.0,
                p_hit,
                r_n: 0.0,
                c_n: 0.0,
                r_plus: 0.0,
            });
        }
        let tau = self.tau(p_t)?;
        let r_n = users * self.cfg.subchannel_bw * tau;
        let wireless = r_n * self.cfg.num_aps as f64;
        Ok(BoundPoint {
            p_t,
            tau,
            p_hit,
            r_n,
            c_n: (1.0 - p_hit) * r_n,
            r_plus: wireless.min(self.cfg.backhaul_capacity + p_hit * wireless),
        })
    }

    pub fn backhaul_load(&self, p_t: f64) -> Result<f64, AnalysisError> {
        Ok(self.evaluate(p_t)?.c_n)
    }

    pub fn upper_bound(&self, p_t: f64) -> Result<f64, AnalysisError> {
        Ok(self.evaluate(p_t)?.r_plus)
    }

    /// `grid` equally spaced powers over `[0, P_M - P_cc]`.
    pub fn curve(&self, grid: usize) -> Result<Vec<BoundPoint>, AnalysisError> {
        let budget = self.cfg.power_budget();
        (0..grid)
            .map(|i| {
                let p = if grid == 1 {
                    budget
                } else {
                    budget * i as f64 / (grid - 1) as f64
                };
                self.evaluate(p.min(budget))
            })
            .collect()
    }

    /// Golden-section search for the best transmit power, then a snap to the
    /// nearby cached-count breakpoints: `p_hit` is piecewise constant and
    /// `R⁺` increases within a piece, so each piece peaks at its right end.
    pub fn maximize(&self) -> Result<UpperBoundResult, AnalysisError> {
        const TOL: f64 = 1e-4;
        let budget = self.cfg.power_budget();
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0, budget);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = self.evaluate(x1)?.r_plus;
        let mut f2 = self.evaluate(x2)?.r_plus;
        while hi - lo > TOL {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = self.evaluate(x2)?.r_plus;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = self.evaluate(x1)?.r_plus;
            }
        }
        let mut best = self.evaluate(0.5 * (lo + hi))?;

        let per_file = self.cfg.caching_power_coeff * self.cfg.file_size;
        let j_cap = self.cfg.cache_capacity_files();
        let j_mid = cached_files_at(best.p_t, self.cfg);
        let mut snaps: Vec<usize> = (j_mid.saturating_sub(2)..=(j_mid + 2).min(j_cap)).collect();
        snaps.push(j_cap);
        snaps.push(0);
        for j in snaps {
            let p = budget - per_file * j as f64;
            if p < 0.0 {
                continue;
            }
            let pt = self.evaluate(p)?;
            if pt.r_plus > best.r_plus {
                best = pt;
            }
        }

        let q_power = self.cfg.caching_power_coeff * self.cfg.cache_size;
        let utilization = if q_power > 0.0 {
            ((budget - best.p_t) / q_power).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok(UpperBoundResult {
            p_t_star: best.p_t,
            r_plus: best.r_plus,
            tau_at_star: best.tau,
            hit_ratio_at_star: best.p_hit,
            cached_files_at_star: cached_files_at(best.p_t, self.cfg),
            cache_utilization: utilization,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct UpperBoundResult {
    pub p_t_star: f64,
    /// bit/s
    pub r_plus: f64,
    /// bit/s/Hz
    pub tau_at_star: f64,
    pub hit_ratio_at_star: f64,
    pub cached_files_at_star: usize,
    pub cache_utilization: f64,
}

pub fn maximize_upper_bound(cfg: &ValidatedConfig, pop: &PopularityModel) -> Result<UpperBoundResult, AnalysisError> {
    Analyzer::new(cfg, pop).maximize()
}

/// `P_T_watts,tau_bps_hz,p_hit,C_n_bps,R_plus_bps`
pub fn write_curve_csv<W: Write>(out: W, points: &[BoundPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["P_T_watts", "tau_bps_hz", "p_hit", "C_n_bps", "R_plus_bps"])?;
    for p in points {
        w.write_record(&[
            p.p_t.to_string(),
            p.tau.to_string(),
            p.p_hit.to_string(),
            p.c_n.to_string(),
            p.r_plus.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
