//! Command-line driver: `analyze`, `simulate` and `sweep`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{maximize_upper_bound, write_curve_csv, Analyzer, UpperBoundResult};
use crate::caching::zipf_popularity;
use crate::config::{ConfigError, NetworkConfig, ValidatedConfig};
use crate::geometry::ApLayout;
use crate::mckp::{build_candidates, dp_solve, effective_capacity, quantize_weights, write_candidates_csv, write_frontier_csv};
use crate::rng::RandomStream;
use crate::sim::{write_trials_csv, Algorithm, AggregateStats, Simulator};

#[derive(Debug, Parser)]
#[command(name = "fiwi", version, about = "Joint power and cache allocation for cache-enabled FiWi networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the analytic throughput bound over a transmit-power grid.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of transmit-power grid points.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Output directory for analysis.csv and summary.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run Monte Carlo trials of one algorithm.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of vabwf-dp, wf-fc, ep-pf, wf-rc.
        #[arg(long, default_value = "vabwf-dp")]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Defaults to the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for trials.csv and aggregate.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// AP positions, one `x y` pair per line.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Also write the candidate table and DP frontier of trial 0 here.
        #[arg(long)]
        dump_dp: Option<PathBuf>,
    },
    /// Run a parameter sweep described by a TOML file.
    Sweep {
        /// Sweep description.
        spec: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides the output path named in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set backhaul_capacity=2e10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ValidatedConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => NetworkConfig::from_file(path)?,
            None => NetworkConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg.validate()?)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime<E: std::fmt::Display>(what: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime(format!("{what}: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime(parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(runtime(path.display()))?))
}

/// Opens a CSV file and writes the config-hash header line.
fn csv_file(path: &Path, cfg: &ValidatedConfig) -> Result<BufWriter<File>, CliError> {
    let mut f = create(path)?;
    writeln!(f, "# config_sha256={}", cfg.hash_hex()).map_err(runtime(path.display()))?;
    Ok(f)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(runtime(path.display()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(runtime(path.display()))
}

#[derive(Debug, Serialize)]
struct AnalysisSummary<'a> {
    config_sha256: String,
    #[serde(flatten)]
    optimum: UpperBoundResult,
    config: &'a ValidatedConfig,
}

pub fn cmd_analyze(cfg: &ValidatedConfig, grid: usize, out: &Path) -> Result<UpperBoundResult, CliError> {
    if grid == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    let pop = zipf_popularity(cfg.num_files, cfg.zipf_delta);
    let analyzer = Analyzer::new(cfg, &pop);
    let points = analyzer.curve(grid).map_err(runtime("analysis"))?;
    let best = analyzer.maximize().map_err(runtime("analysis"))?;

    let csv_path = out.join("analysis.csv");
    let mut f = csv_file(&csv_path, cfg)?;
    write_curve_csv(&mut f, &points).map_err(runtime(csv_path.display()))?;
    write_json(
        &out.join("summary.json"),
        &AnalysisSummary {
            config_sha256: cfg.hash_hex(),
            optimum: best,
            config: cfg,
        },
    )?;
    Ok(best)
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    config_sha256: String,
    seed: u64,
    #[serde(flatten)]
    stats: AggregateStats,
    config: &'a ValidatedConfig,
}

pub struct SimulateArgs<'a> {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub seed: u64,
    pub out: &'a Path,
    pub layout: Option<&'a Path>,
    pub dump_dp: Option<&'a Path>,
}

pub fn cmd_simulate(cfg: &ValidatedConfig, args: &SimulateArgs<'_>) -> Result<AggregateStats, CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let sim = match args.layout {
        Some(path) => {
            let layout = ApLayout::from_file(path, cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            Simulator::with_layout(cfg.clone(), layout)
        }
        None => Simulator::new(cfg.clone()).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let results = sim
        .run_trials(args.algorithm, args.trials, args.seed, 0)
        .map_err(runtime("simulation"))?;
    let stats = AggregateStats::from_trials(&results, cfg);

    let csv_path = args.out.join("trials.csv");
    let mut f = csv_file(&csv_path, cfg)?;
    write_trials_csv(&mut f, &results).map_err(runtime(csv_path.display()))?;
    write_json(
        &args.out.join("aggregate.json"),
        &SimulationSummary {
            config_sha256: cfg.hash_hex(),
            seed: args.seed,
            stats: stats.clone(),
            config: cfg,
        },
    )?;

    if let Some(dir) = args.dump_dp {
        let (dep, ch) = sim.draw(&mut RandomStream::for_trial(args.seed, 0, 0));
        let cands = build_candidates(&dep, &ch, sim.popularity(), cfg);
        let quantized = quantize_weights(&cands, cfg.dp_bandwidth_unit);
        let table = dp_solve(&quantized, effective_capacity(&quantized, cfg));
        let path = dir.join("candidates.csv");
        let mut f = csv_file(&path, cfg)?;
        write_candidates_csv(&mut f, &cands, cfg.dp_bandwidth_unit).map_err(runtime(path.display()))?;
        let path = dir.join("frontier.csv");
        let mut f = csv_file(&path, cfg)?;
        write_frontier_csv(&mut f, &table).map_err(runtime(path.display()))?;
    }
    Ok(stats)
}

/// A sweep over one parameter.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// `C`, `D`, `beta`, `P_M`, `delta`, `lambda`, or any config key.
    pub parameter: String,
    pub values: Vec<f64>,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub seed: Option<u64>,
}

fn all_algorithms() -> Vec<String> {
    Algorithm::ALL.iter().map(|a| a.name().to_owned()).collect()
}

fn default_trials() -> usize {
    200
}

fn default_output() -> PathBuf {
    PathBuf::from("sweep.csv")
}

/// Config key behind a sweep parameter name.
fn sweep_key(parameter: &str) -> &str {
    match parameter {
        "C" => "backhaul_capacity",
        "D" => "cell_radius",
        "beta" | "β" => "blockage_beta",
        "P_M" => "max_power",
        "delta" | "δ" => "zipf_delta",
        "lambda" | "λ" => "ue_density",
        other => other,
    }
}

/// The config at one sweep value. Changing `D` keeps the mean number of UEs
/// per cell fixed by scaling the area with `D` and the density with `1/D²`.
pub fn sweep_point(base: &ValidatedConfig, parameter: &str, value: f64) -> Result<ValidatedConfig, ConfigError> {
    let key = sweep_key(parameter);
    let mut cfg: NetworkConfig = base.clone().into_inner();
    if parameter == "D" {
        let scale = value / base.cell_radius;
        cfg.area_side *= scale;
        cfg.ue_density /= scale * scale;
    }
    cfg.set(key, &value.to_string())?;
    cfg.validate()
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read sweep spec {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid sweep spec {}: {e}", path.display())))
    }

    /// Checks every field; returns the algorithms and per-point configs.
    pub fn resolve(&self, base: &ValidatedConfig) -> Result<(Vec<Algorithm>, Vec<ValidatedConfig>), CliError> {
        let mut errs = Vec::new();
        if self.values.is_empty() {
            errs.push("values: must not be empty".to_owned());
        }
        if self.trials == 0 {
            errs.push("trials: must be at least 1".to_owned());
        }
        if self.algorithms.is_empty() {
            errs.push("algorithms: must not be empty".to_owned());
        }
        let mut algs = Vec::new();
        for a in &self.algorithms {
            match a.parse::<Algorithm>() {
                Ok(alg) => algs.push(alg),
                Err(e) => errs.push(format!("algorithms: {e}")),
            }
        }
        let mut points = Vec::new();
        for &v in &self.values {
            match sweep_point(base, &self.parameter, v) {
                Ok(cfg) => points.push(cfg),
                Err(ConfigError::UnknownKey(k)) => {
                    errs.push(format!("parameter: unknown parameter `{k}`"));
                    break;
                }
                Err(e) => errs.push(format!("values: {v}: {e}")),
            }
        }
        if errs.is_empty() {
            Ok((algs, points))
        } else {
            Err(CliError::Usage(errs.join("\n")))
        }
    }
}

/// One row of the long-format sweep output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub algorithm: String,
    pub mean_throughput_bps: f64,
    pub ci95: f64,
    pub mean_utilization: f64,
    pub r_plus_bps: f64,
}

/// Runs the sweep; point `i`, trial `t` draws from `mix(seed, i, t)`.
pub fn run_sweep(spec: &SweepSpec, base: &ValidatedConfig) -> Result<Vec<SweepRow>, CliError> {
    let (algs, points) = spec.resolve(base)?;
    let seed = spec.seed.unwrap_or(base.rng_seed);
    let mut rows = Vec::new();
    for (i, (cfg, &value)) in points.iter().zip(&spec.values).enumerate() {
        let pop = zipf_popularity(cfg.num_files, cfg.zipf_delta);
        let bound = maximize_upper_bound(cfg, &pop).map_err(runtime("analysis"))?;
        let sim = Simulator::new(cfg.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
        for &alg in &algs {
            let results = sim
                .run_trials(alg, spec.trials, seed, i as u64)
                .map_err(runtime("simulation"))?;
            let stats = AggregateStats::from_trials(&results, cfg);
            rows.push(SweepRow {
                param_name: spec.parameter.clone(),
                param_value: value,
                algorithm: alg.name().to_owned(),
                mean_throughput_bps: stats.mean_throughput_bps,
                ci95: stats.ci95_throughput_bps,
                mean_utilization: stats.mean_cache_utilization,
                r_plus_bps: bound.r_plus,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], cfg: &ValidatedConfig) -> Result<(), CliError> {
    let f = csv_file(path, cfg)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(runtime(path.display()))?;
    }
    w.flush().map_err(runtime(path.display()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { config, grid, out } => {
            let cfg = config.load()?;
            let best = cmd_analyze(&cfg, grid, &out)?;
            println!(
                "P_T* = {:.4} W, R+ = {:.4e} bit/s, cache utilization = {:.4}",
                best.p_t_star, best.r_plus, best.cache_utilization
            );
        }
        Command::Simulate {
            config,
            algorithm,
            trials,
            seed,
            out,
            layout,
            dump_dp,
        } => {
            let cfg = config.load()?;
            let args = SimulateArgs {
                algorithm,
                trials,
                seed: seed.unwrap_or(cfg.rng_seed),
                out: &out,
                layout: layout.as_deref(),
                dump_dp: dump_dp.as_deref(),
            };
            let stats = cmd_simulate(&cfg, &args)?;
            println!(
                "{}: mean throughput {:.4e} bit/s (±{:.2e}) over {} trials",
                algorithm, stats.mean_throughput_bps, stats.ci95_throughput_bps, stats.trials
            );
        }
        Command::Sweep { spec, config, out } => {
            let cfg = config.load()?;
            let spec_data = SweepSpec::from_file(&spec)?;
            let rows = run_sweep(&spec_data, &cfg)?;
            let path = out.unwrap_or_else(|| spec_data.output.clone());
            write_sweep_csv(&path, &rows, &cfg)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ValidatedConfig {
        NetworkConfig::default().validate().unwrap()
    }

    #[test]
    fn radius_sweep_keeps_mean_population() {
        let b = base();
        let c = sweep_point(&b, "D", 60.0).unwrap();
        let users = |c: &ValidatedConfig| c.ue_density * c.area_side * c.area_side;
        assert!((users(&c) - users(&b)).abs() < 1e-9 * users(&b));
        assert_eq!(c.cell_radius, 60.0);
        // raw field name changes only the radius
        let raw = sweep_point(&b, "cell_radius", 60.0).unwrap();
        assert_eq!(raw.ue_density, b.ue_density);
    }

    #[test]
    fn aliases_map_to_fields() {
        let b = base();
        assert_eq!(sweep_point(&b, "C", 5e9).unwrap().backhaul_capacity, 5e9);
        assert_eq!(sweep_point(&b, "beta", 0.01).unwrap().blockage_beta, 0.01);
        assert_eq!(sweep_point(&b, "P_M", 9.0).unwrap().max_power, 9.0);
        assert_eq!(sweep_point(&b, "delta", 1.2).unwrap().zipf_delta, 1.2);
        assert_eq!(sweep_point(&b, "lambda", 2e-4).unwrap().ue_density, 2e-4);
        assert_eq!(sweep_point(&b, "num_aps", 9.0).unwrap().num_aps, 9);
    }

    #[test]
    fn spec_errors_are_collected() {
        let spec: SweepSpec = toml::from_str(
            r#"
            parameter = "P_M"
            values = [1.0, 8.0]
            algorithms = ["vabwf-dp", "bogus"]
            trials = 0
            "#,
        )
        .unwrap();
        let err = spec.resolve(&base()).unwrap_err().to_string();
        assert!(err.contains("trials"));
        assert!(err.contains("bogus"));
        assert!(err.contains("max_power"));
        let unknown: SweepSpec = toml::from_str("parameter = \"nope\"\nvalues = [1.0]").unwrap();
        assert!(unknown.resolve(&base()).unwrap_err().to_string().contains("nope"));
    }
}
