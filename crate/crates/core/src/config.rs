//! Network parameters, validation and the flat key-value config file.
//!
//! Every quantity is stored in SI units: watts, bits, bits per second, metres.
//! A [`NetworkConfig`] becomes usable by the rest of the crate only after
//! [`NetworkConfig::validate`] turns it into a [`ValidatedConfig`].

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest number of capacity states the backhaul DP is allowed to use.
pub const MIN_DP_STATES: f64 = 100.0;

/// All scalar parameters of the cache-enabled FiWi network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of ONU-APs (classes of the knapsack).
    pub num_aps: usize,
    /// Catalogue size.
    pub num_files: usize,
    /// Per-UE subchannel bandwidth, Hz.
    pub subchannel_bw: f64,
    /// Shared fiber backhaul capacity, bit/s. `inf` disables the constraint.
    pub backhaul_capacity: f64,
    /// Coverage radius used by the analytic model, m.
    pub cell_radius: f64,
    /// Cache size per AP, bit.
    pub cache_size: f64,
    /// Maximum total power per AP, W.
    pub max_power: f64,
    /// Constant circuit power per AP, W.
    pub circuit_power: f64,
    /// Size of every file, bit.
    pub file_size: f64,
    /// Zipf skew.
    pub zipf_delta: f64,
    /// UE density of the Poisson point process, 1/m².
    pub ue_density: f64,
    /// Power amplifier / supply / cooling coefficient.
    pub power_amp_coeff: f64,
    /// Caching power per cached bit, W/bit.
    pub caching_power_coeff: f64,
    /// Blockage decay rate, 1/m.
    pub blockage_beta: f64,
    pub pathloss_los: f64,
    pub pathloss_nlos: f64,
    pub nakagami_los: u32,
    pub nakagami_nlos: u32,
    /// Main-lobe beamforming gain, linear.
    pub beam_gain: f64,
    /// Receiver noise power over one subchannel, W.
    pub noise_power: f64,
    /// Side of the square simulation area, m.
    pub area_side: f64,
    pub rng_seed: u64,
    /// Distance floor applied to every link, m.
    pub min_distance: f64,
    /// Backhaul quantization step of the DP, bit/s.
    pub dp_bandwidth_unit: f64,
    /// Use water-filling instead of equal power in the random-caching baseline.
    pub wf_rc_water_filling: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_aps: 16,
            num_files: 1000,
            subchannel_bw: 10e6,
            backhaul_capacity: 15e9,
            cell_radius: 100.0,
            cache_size: 40e9 * 8.0,
            max_power: 8.0,
            circuit_power: 2.0,
            file_size: 100e6 * 8.0,
            zipf_delta: 0.8,
            ue_density: 4e-4,
            power_amp_coeff: 1.2,
            caching_power_coeff: 6.25e-12,
            blockage_beta: 0.002,
            pathloss_los: 2.0,
            pathloss_nlos: 4.0,
            nakagami_los: 3,
            nakagami_nlos: 2,
            // 18 dB
            beam_gain: 10f64.powf(1.8),
            // -174 dBm/Hz + 70 dB (10 MHz) + 9 dB noise figure = -95 dBm
            noise_power: 10f64.powf(-9.5) * 1e-3,
            area_side: 700.0,
            rng_seed: 2019,
            min_distance: 1.0,
            dp_bandwidth_unit: 1e6,
            wf_rc_water_filling: false,
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {}", join_errors(.0))]
    Invalid(Vec<FieldError>),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

fn join_errors(errs: &[FieldError]) -> String {
    errs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ConfigError {
    /// Field-level violations, empty for non-validation errors.
    pub fn violations(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

impl NetworkConfig {
    /// Checks every invariant and reports all violations at once.
    pub fn validate(self) -> Result<ValidatedConfig, ConfigError> {
        let mut errs = Vec::new();
        let mut fail = |field: &'static str, reason: &str| {
            errs.push(FieldError {
                field,
                reason: reason.to_string(),
            })
        };

        let positive_finite = [
            ("subchannel_bw", self.subchannel_bw),
            ("cell_radius", self.cell_radius),
            ("max_power", self.max_power),
            ("circuit_power", self.circuit_power),
            ("file_size", self.file_size),
            ("caching_power_coeff", self.caching_power_coeff),
            ("blockage_beta", self.blockage_beta),
            ("pathloss_los", self.pathloss_los),
            ("pathloss_nlos", self.pathloss_nlos),
            ("beam_gain", self.beam_gain),
            ("noise_power", self.noise_power),
            ("area_side", self.area_side),
            ("min_distance", self.min_distance),
            ("dp_bandwidth_unit", self.dp_bandwidth_unit),
        ];
        for (field, v) in positive_finite {
            if !(v.is_finite() && v > 0.0) {
                fail(field, "must be finite and strictly positive");
            }
        }
        if self.num_aps == 0 {
            fail("num_aps", "must be at least 1");
        }
        if self.num_files == 0 {
            fail("num_files", "must be at least 1");
        }
        // `inf` is the "unconstrained backhaul" sentinel.
        if self.backhaul_capacity.is_nan() || self.backhaul_capacity <= 0.0 {
            fail("backhaul_capacity", "must be strictly positive (inf allowed)");
        }
        if !(self.cache_size.is_finite() && self.cache_size >= 0.0) {
            fail("cache_size", "must be finite and non-negative");
        }
        if !(self.zipf_delta.is_finite() && self.zipf_delta >= 0.0) {
            fail("zipf_delta", "must be finite and non-negative");
        }
        if !(self.ue_density.is_finite() && self.ue_density >= 0.0) {
            fail("ue_density", "must be finite and non-negative");
        }
        if !(self.power_amp_coeff.is_finite() && self.power_amp_coeff >= 1.0) {
            fail("power_amp_coeff", "must be at least 1");
        }
        if self.nakagami_los < 2 {
            fail("nakagami_los", "requires N_i>1");
        }
        if self.nakagami_nlos < 2 {
            fail("nakagami_nlos", "requires N_i>1");
        }
        if self.max_power.is_finite() && self.max_power <= self.circuit_power {
            fail("max_power", "P_M must exceed P_cc");
        }
        if self.min_distance >= self.cell_radius {
            fail("min_distance", "must be smaller than cell_radius");
        }
        if self.dp_bandwidth_unit > 0.0
            && self.backhaul_capacity > 0.0
            && self.backhaul_capacity / self.dp_bandwidth_unit < MIN_DP_STATES
        {
            fail(
                "dp_bandwidth_unit",
                "backhaul_capacity must span at least 100 DP states",
            );
        }

        if errs.is_empty() {
            Ok(ValidatedConfig(self))
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Overrides a single key from its textual value (CLI `--set key=value`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let Some(current) = table.get(key) else {
            return Err(ConfigError::UnknownKey(key.to_string()));
        };
        let parsed = match current {
            toml::Value::Integer(_) => value.parse::<i64>().ok().map(toml::Value::Integer),
            toml::Value::Float(_) => parse_float(value).map(toml::Value::Float),
            toml::Value::Boolean(_) => value.parse::<bool>().ok().map(toml::Value::Boolean),
            _ => None,
        };
        let Some(parsed) = parsed else {
            return Err(ConfigError::Parse(format!("bad value `{value}` for `{key}`")));
        };
        table.insert(key.to_string(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(())
    }
}

fn parse_float(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        t => t.parse::<f64>().ok(),
    }
}

/// A config whose invariants have been checked. Immutable.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedConfig(NetworkConfig);

impl ValidatedConfig {
    pub fn into_inner(self) -> NetworkConfig {
        self.0
    }

    /// Re-validates a modified copy.
    pub fn with(&self, edit: impl FnOnce(&mut NetworkConfig)) -> Result<Self, ConfigError> {
        let mut cfg = self.0.clone();
        edit(&mut cfg);
        cfg.validate()
    }

    /// Power left for transmission and caching once circuit power is paid, W.
    pub fn power_budget(&self) -> f64 {
        self.max_power - self.circuit_power
    }

    /// Power spent caching `files` files, W.
    pub fn caching_power(&self, files: usize) -> f64 {
        self.caching_power_coeff * files as f64 * self.file_size
    }

    /// Files that fit in the cache and the catalogue, `min(J, floor(Q/s))`.
    pub fn cache_capacity_files(&self) -> usize {
        let by_size = floor_tol(self.cache_size / self.file_size);
        by_size.min(self.num_files)
    }

    /// Largest cached count that still leaves a strictly positive transmit budget.
    pub fn max_files_by_power(&self) -> usize {
        let budget = self.power_budget();
        let per_file = self.caching_power_coeff * self.file_size;
        let mut j = floor_tol(budget / per_file);
        while j > 0 && !has_transmit_budget(budget, per_file * j as f64) {
            j -= 1;
        }
        j
    }

    /// Largest feasible cached count: storage, catalogue and power all respected.
    pub fn max_cached_files(&self) -> usize {
        self.cache_capacity_files().min(self.max_files_by_power())
    }

    /// Number of quantized capacity states of the backhaul, `floor(C/unit)`.
    pub fn capacity_units(&self) -> Option<usize> {
        if self.backhaul_capacity.is_finite() {
            Some(floor_tol(self.backhaul_capacity / self.dp_bandwidth_unit))
        } else {
            None
        }
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.0.to_toml_string().as_bytes()))
    }
}

impl Deref for ValidatedConfig {
    type Target = NetworkConfig;
    fn deref(&self) -> &NetworkConfig {
        &self.0
    }
}

impl From<ValidatedConfig> for NetworkConfig {
    fn from(v: ValidatedConfig) -> Self {
        v.0
    }
}

/// `floor` that forgives round-off just below an integer.
pub(crate) fn floor_tol(x: f64) -> usize {
    if x.is_nan() || x <= 0.0 {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// True when caching power leaves a transmit budget above round-off.
pub(crate) fn has_transmit_budget(budget: f64, caching_power: f64) -> bool {
    budget - caching_power > 1e-12 * budget
}
