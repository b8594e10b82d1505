//! Monte Carlo harness: deployments, the four allocation schemes, backhaul
//! enforcement and aggregate statistics.
//!
//! Every trial draws its own stream from `(seed, point, trial)`. The
//! deployment and channel are drawn first, so all algorithms evaluated with
//! the same triple see the same network and comparisons are paired.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::caching::{zipf_popularity, PopularityModel};
use crate::channel::{rate_unchecked, realize_channel, ChannelRealization};
use crate::config::ValidatedConfig;
use crate::geometry::{associate, deploy_aps, sample_ues, ApLayout, Deployment, GeometryError};
use crate::mckp::{build_candidates, solve, MckpError};
use crate::rng::RandomStream;
use crate::waterfill::{vabwf, WaterfillError};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mckp(#[from] MckpError),
    #[error(transparent)]
    Waterfill(#[from] WaterfillError),
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Algorithm {
    /// Joint water-filling and knapsack placement.
    VabwfDp,
    /// Water-filling with the cache always full.
    WfFc,
    /// Equal power, per-AP popularity-first cache sizing.
    EpPf,
    /// Random full cache, equal power by default.
    WfRc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::VabwfDp, Self::WfFc, Self::EpPf, Self::WfRc];

    pub fn name(self) -> &'static str {
        match self {
            Self::VabwfDp => "vabwf-dp",
            Self::WfFc => "wf-fc",
            Self::EpPf => "ep-pf",
            Self::WfRc => "wf-rc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown algorithm `{0}` (expected one of: vabwf-dp, wf-fc, ep-pf, wf-rc)")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownAlgorithm(s.to_owned()))
    }
}

/// Outcome of one deployment under one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub ue_count: usize,
    /// Counted downlink throughput, bit/s.
    pub throughput: f64,
    /// Backhaul traffic actually carried, bit/s.
    pub backhaul_load: f64,
    /// Radiated sum power per AP, W.
    pub tx_power: Vec<f64>,
    pub cached: Vec<usize>,
    pub hit_ratio: Vec<f64>,
    pub ues_per_ap: Vec<usize>,
}

impl TrialResult {
    fn served(&self) -> impl Iterator<Item = usize> + '_ {
        self.ues_per_ap.iter().enumerate().filter(|(_, &k)| k > 0).map(|(n, _)| n)
    }

    fn mean_over_served(&self, f: impl Fn(usize) -> f64) -> f64 {
        let (sum, count) = self.served().fold((0.0, 0usize), |(s, c), n| (s + f(n), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Mean radiated power over APs that serve at least one UE.
    pub fn mean_tx_power(&self) -> f64 {
        self.mean_over_served(|n| self.tx_power[n])
    }

    pub fn mean_cached_files(&self) -> f64 {
        self.mean_over_served(|n| self.cached[n] as f64)
    }

    /// Mean fraction of cache storage in use, over serving APs.
    pub fn cache_utilization(&self, cfg: &ValidatedConfig) -> f64 {
        if cfg.cache_size <= 0.0 {
            return 0.0;
        }
        self.mean_over_served(|n| (self.cached[n] as f64 * cfg.file_size / cfg.cache_size).min(1.0))
    }
}

/// Reusable per-config state: popularity and AP layout.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ValidatedConfig,
    pop: PopularityModel,
    layout: ApLayout,
}

impl Simulator {
    pub fn new(cfg: ValidatedConfig) -> Result<Self, SimError> {
        let layout = deploy_aps(&cfg)?;
        Ok(Self::with_layout(cfg, layout))
    }

    pub fn with_layout(cfg: ValidatedConfig, layout: ApLayout) -> Self {
        let pop = zipf_popularity(cfg.num_files, cfg.zipf_delta);
        Self { cfg, pop, layout }
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }

    pub fn popularity(&self) -> &PopularityModel {
        &self.pop
    }

    /// Draws the UEs and channel for one trial.
    pub fn draw(&self, rng: &mut RandomStream) -> (Deployment, ChannelRealization) {
        let ues = sample_ues(&self.cfg, rng);
        let dep = associate(&self.layout, &ues, &self.cfg);
        let ch = realize_channel(&dep, &self.cfg, rng);
        (dep, ch)
    }

    pub fn run_trial(&self, alg: Algorithm, rng: &mut RandomStream) -> Result<TrialResult, SimError> {
        let (dep, ch) = self.draw(rng);
        self.allocate(alg, &dep, &ch, rng)
    }

    /// Applies `alg` to a drawn network.
    pub fn allocate(
        &self,
        alg: Algorithm,
        dep: &Deployment,
        ch: &ChannelRealization,
        rng: &mut RandomStream,
    ) -> Result<TrialResult, SimError> {
        let ues_per_ap: Vec<usize> = dep.assoc.iter().map(Vec::len).collect();
        let mut res = match alg {
            Algorithm::VabwfDp => self.vabwf_dp(dep, ch)?,
            Algorithm::WfFc => self.wf_fc(ch)?,
            Algorithm::EpPf => self.ep_pf(ch),
            Algorithm::WfRc => self.wf_rc(ch, rng),
        };
        res.ue_count = dep.ue_count();
        res.ues_per_ap = ues_per_ap;
        Ok(res)
    }

    fn vabwf_dp(&self, dep: &Deployment, ch: &ChannelRealization) -> Result<TrialResult, SimError> {
        let candidates = build_candidates(dep, ch, &self.pop, &self.cfg);
        let sol = solve(&candidates, &self.cfg)?;
        Ok(TrialResult {
            algorithm: Algorithm::VabwfDp,
            ue_count: 0,
            throughput: sol.throughput,
            backhaul_load: sol.backhaul_load,
            tx_power: sol.powers.iter().map(|p| p.iter().sum()).collect(),
            cached: sol.cached,
            hit_ratio: sol.hit_ratio,
            ues_per_ap: Vec::new(),
        })
    }

    fn wf_fc(&self, ch: &ChannelRealization) -> Result<TrialResult, SimError> {
        let j = self.cfg.max_cached_files();
        let hit = self.pop.prefix_mass(j);
        let mut per_ap = Vec::with_capacity(ch.links.len());
        for ap in 0..ch.links.len() {
            let gains = ch.gains(ap);
            if gains.is_empty() {
                per_ap.push((0.0, 0.0, j, hit));
                continue;
            }
            let wf = vabwf(&gains, j, &self.cfg)?;
            per_ap.push((wf.total_power(), wf.sum_rate, j, hit));
        }
        Ok(self.throttled(Algorithm::WfFc, per_ap))
    }

    /// Sum rate of `gains` when `tx_budget` is split evenly.
    fn equal_power_rate(&self, gains: &[f64], tx_budget: f64) -> f64 {
        let each = tx_budget / gains.len() as f64;
        gains.iter().map(|&g| rate_unchecked(each, g, &self.cfg).rate).sum()
    }

    fn tx_budget(&self, cached: usize) -> f64 {
        ((self.cfg.power_budget() - self.cfg.caching_power(cached)) / self.cfg.power_amp_coeff).max(0.0)
    }

    fn ep_pf(&self, ch: &ChannelRealization) -> TrialResult {
        let share = self.cfg.backhaul_capacity / self.cfg.num_aps as f64;
        let j_max = self.cfg.max_cached_files();
        let per_ap = (0..ch.links.len())
            .map(|ap| {
                let gains = ch.gains(ap);
                if gains.is_empty() {
                    return (0.0, 0.0, 0, 0.0);
                }
                let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0);
                for j in 0..=j_max {
                    let budget = self.tx_budget(j);
                    let nu = self.equal_power_rate(&gains, budget);
                    let hit = self.pop.prefix_mass(j);
                    let score = hit * nu + ((1.0 - hit) * nu).min(share);
                    if score >= best.0 {
                        best = (score, budget, nu, j);
                    }
                }
                (best.1, best.2, best.3, self.pop.prefix_mass(best.3))
            })
            .collect();
        self.throttled(Algorithm::EpPf, per_ap)
    }

    fn wf_rc(&self, ch: &ChannelRealization, rng: &mut RandomStream) -> TrialResult {
        let j = self.cfg.max_cached_files();
        let mut per_ap = Vec::with_capacity(ch.links.len());
        for ap in 0..ch.links.len() {
            let files = sample(rng, self.cfg.num_files, j).into_vec();
            let hit = self.pop.set_mass(&files);
            let gains = ch.gains(ap);
            if gains.is_empty() {
                per_ap.push((0.0, 0.0, j, hit));
                continue;
            }
            let budget = self.tx_budget(j);
            let (power, rate) = if self.cfg.wf_rc_water_filling {
                let wf = vabwf(&gains, j, &self.cfg).expect("full cache leaves transmit budget");
                (wf.total_power(), wf.sum_rate)
            } else {
                (budget, self.equal_power_rate(&gains, budget))
            };
            per_ap.push((power, rate, j, hit));
        }
        self.throttled(Algorithm::WfRc, per_ap)
    }

    /// Scores a fixed allocation: hit traffic always counts, miss traffic is
    /// scaled down uniformly when it exceeds the backhaul. Each entry is
    /// `(radiated power, sum rate, cached files, hit ratio)`.
    fn throttled(&self, alg: Algorithm, per_ap: Vec<(f64, f64, usize, f64)>) -> TrialResult {
        let mut hit_traffic = 0.0;
        let mut miss_traffic = 0.0;
        let mut tx_power = Vec::with_capacity(per_ap.len());
        let mut cached = Vec::with_capacity(per_ap.len());
        let mut hit_ratio = Vec::with_capacity(per_ap.len());
        for (power, rate, j, hit) in per_ap {
            hit_traffic += hit * rate;
            miss_traffic += (1.0 - hit).max(0.0) * rate;
            tx_power.push(power);
            cached.push(j);
            hit_ratio.push(hit);
        }
        let carried = miss_traffic.min(self.cfg.backhaul_capacity);
        TrialResult {
            algorithm: alg,
            ue_count: 0,
            throughput: hit_traffic + carried,
            backhaul_load: carried,
            tx_power,
            cached,
            hit_ratio,
            ues_per_ap: Vec::new(),
        }
    }

    /// Runs `trials` deployments for sweep point `point`, in trial order.
    pub fn run_trials(
        &self,
        alg: Algorithm,
        trials: usize,
        seed: u64,
        point: u64,
    ) -> Result<Vec<TrialResult>, SimError> {
        if trials == 0 {
            return Err(SimError::NoTrials);
        }
        (0..trials)
            .into_par_iter()
            .map(|t| self.run_trial(alg, &mut RandomStream::for_trial(seed, point, t as u64)))
            .collect()
    }
}

/// One trial with a fresh simulator; convenient for one-offs.
pub fn run_trial(cfg: &ValidatedConfig, alg: Algorithm, rng: &mut RandomStream) -> Result<TrialResult, SimError> {
    Simulator::new(cfg.clone())?.run_trial(alg, rng)
}

pub fn run_trial_with_layout(
    cfg: &ValidatedConfig,
    layout: ApLayout,
    alg: Algorithm,
    rng: &mut RandomStream,
) -> Result<TrialResult, SimError> {
    Simulator::with_layout(cfg.clone(), layout).run_trial(alg, rng)
}

/// Summary of a set of trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateStats {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub mean_throughput_bps: f64,
    pub std_throughput_bps: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95_throughput_bps: f64,
    pub mean_backhaul_bps: f64,
    pub std_backhaul_bps: f64,
    pub mean_tx_power_w: f64,
    pub mean_cached_files: f64,
    pub mean_cache_utilization: f64,
    /// Set when a single trial leaves the spread undefined (reported as 0).
    pub std_undefined: bool,
    pub baseline_backhaul_policy: &'static str,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

impl AggregateStats {
    pub fn from_trials(results: &[TrialResult], cfg: &ValidatedConfig) -> Self {
        assert!(!results.is_empty(), "aggregate over zero trials");
        let col = |f: &dyn Fn(&TrialResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
        let (mean_tp, std_tp) = mean_std(&col(&|r| r.throughput));
        let (mean_bh, std_bh) = mean_std(&col(&|r| r.backhaul_load));
        let n = results.len();
        Self {
            algorithm: results[0].algorithm,
            trials: n,
            mean_throughput_bps: mean_tp,
            std_throughput_bps: std_tp.unwrap_or(0.0),
            ci95_throughput_bps: std_tp.map_or(0.0, |s| 1.96 * s / (n as f64).sqrt()),
            mean_backhaul_bps: mean_bh,
            std_backhaul_bps: std_bh.unwrap_or(0.0),
            mean_tx_power_w: mean_std(&col(&|r| r.mean_tx_power())).0,
            mean_cached_files: mean_std(&col(&|r| r.mean_cached_files())).0,
            mean_cache_utilization: mean_std(&col(&|r| r.cache_utilization(cfg))).0,
            std_undefined: std_tp.is_none(),
            baseline_backhaul_policy: "miss traffic of non-DP schemes scaled by min(1, C / total miss)",
        }
    }
}

/// Runs `trials` deployments and aggregates them.
pub fn run_benchmark(
    cfg: &ValidatedConfig,
    alg: Algorithm,
    trials: usize,
    seed: u64,
) -> Result<(AggregateStats, Vec<TrialResult>), SimError> {
    let sim = Simulator::new(cfg.clone())?;
    let results = sim.run_trials(alg, trials, seed, 0)?;
    Ok((AggregateStats::from_trials(&results, cfg), results))
}

/// `trial_id,algorithm,throughput_bps,backhaul_bps,mean_tx_power_w,mean_cached_files`
pub fn write_trials_csv<W: Write>(out: W, results: &[TrialResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial_id",
        "algorithm",
        "throughput_bps",
        "backhaul_bps",
        "mean_tx_power_w",
        "mean_cached_files",
    ])?;
    for (i, r) in results.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            r.algorithm.name().to_owned(),
            r.throughput.to_string(),
            r.backhaul_load.to_string(),
            r.mean_tx_power().to_string(),
            r.mean_cached_files().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
