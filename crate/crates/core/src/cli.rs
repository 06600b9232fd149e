//! Scenario runner, sweeps and report emitters behind the `pimflow` binary.
//!
//! Data goes to files under `--out` or to standard output; progress and
//! errors go to standard error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    energy_report, gpu_baseline, oi_grid, oi_table, power_report, roofline_attainable, write_roofline_csv, yield_cost,
    AnalyticsError, BaselineReport, CostReport, EnergyReport, OiRow, PlatformRoofline, PowerReport,
};
use crate::config::{derive_peaks, resolve_table, scenario_from_table, ConfigError, PeakSpec, ScenarioConfig};
use crate::engine::{simulate, SimError, SimOptions, SimReport};
use crate::memsys::{build_memory_system, MemsysError};
use crate::model_alloc::{allocate, AllocError};
use crate::taskgraph::TaskGraphError;

/// Version of every CSV header and JSON report layout emitted here.
pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SWEEP_CAP: usize = 10_000;
pub const BASELINE_NOTE: &str = "baseline: analytical roofline model of the GPU, not a measured latency";

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology: {0}")]
    Topology(#[from] MemsysError),
    #[error("allocation: {0}")]
    Alloc(#[from] AllocError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Topology(_) | Error::Usage(_) | Error::Analytics(_) => "config",
            Error::Sim(SimError::Graph(TaskGraphError::ContextOverflow { .. } | TaskGraphError::PastBeforePrompt { .. })) => "config",
            Error::Alloc(_) | Error::Sim(SimError::Map(_)) => "mapping",
            Error::Sim(_) => "simulation",
            Error::Io { .. } | Error::Csv(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "mapping" => 3,
            "simulation" => 4,
            _ => 1,
        }
    }

    fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "category": self.category(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
pub enum Baseline {
    /// Smallest H100 configuration that holds the workload.
    #[default]
    H100Roofline,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// One scenario point: a base document plus command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct ScenarioSpec {
    pub config: Option<PathBuf>,
    pub arch: Option<String>,
    pub model: Option<String>,
    pub batch: Option<usize>,
    pub input: Option<usize>,
    pub output: Option<usize>,
}

impl ScenarioSpec {
    pub fn preset(arch: &str, model: &str, batch: usize, input: usize, output: usize) -> Self {
        Self {
            config: None,
            arch: Some(arch.into()),
            model: Some(model.into()),
            batch: Some(batch),
            input: Some(input),
            output: Some(output),
        }
    }

    pub fn resolve(&self) -> Result<ScenarioConfig, Error> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        if let Some(a) = &self.arch {
            doc.insert("arch".into(), toml::Value::String(a.clone()));
        }
        if let Some(m) = &self.model {
            doc.insert("model".into(), toml::Value::String(m.clone()));
        }
        let w = doc
            .entry("workload")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(w) = w else {
            return Err(ConfigError::Parse("`workload` must be a table".into()).into());
        };
        let defaults = [("batch", self.batch, 1), ("input_len", self.input, 128), ("output_len", self.output, 128)];
        let overridden = self.input.is_some() || self.output.is_some();
        for (key, value, default) in defaults {
            match value {
                Some(v) => {
                    w.insert(key.into(), toml::Value::Integer(v as i64));
                }
                None => {
                    w.entry(key).or_insert(toml::Value::Integer(default));
                }
            }
        }
        // A context bound from the file would be stale once lengths change.
        if overridden {
            w.remove("max_context");
        }
        Ok(scenario_from_table(resolve_table(doc)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedups {
    pub e2e: f64,
    pub ttft: f64,
    pub decode_throughput: f64,
}

/// Everything one scenario point produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub model: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub sim: SimReport,
    pub energy: EnergyReport,
    pub power: PowerReport,
    pub baseline: Option<BaselineReport>,
    pub speedup: Option<Speedups>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

pub fn run_scenario(cfg: &ScenarioConfig, baseline: Baseline, trace: bool) -> Result<RunReport, Error> {
    let sys = build_memory_system(cfg)?;
    let alloc = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys)?;
    let sim = simulate(cfg, &sys, &alloc, SimOptions { trace })?;
    let energy = energy_report(&sim.stats, cfg)?;
    let base = match baseline {
        Baseline::H100Roofline => Some(gpu_baseline(cfg, None)?),
        Baseline::None => None,
    };
    let speedup = base.as_ref().map(|b| Speedups {
        e2e: b.e2e_latency / sim.e2e_latency,
        ttft: b.ttft / sim.ttft,
        decode_throughput: if b.decode_throughput > 0.0 {
            sim.decode_throughput / b.decode_throughput
        } else {
            0.0
        },
    });
    let mut notes = Vec::new();
    if base.is_some() {
        notes.push(BASELINE_NOTE.to_string());
    }
    if sim.decode.simulated_steps < sim.decode.steps {
        notes.push(format!(
            "decode: {} of {} steps simulated, the rest interpolated",
            sim.decode.simulated_steps, sim.decode.steps
        ));
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.key(),
        arch: cfg.arch.clone(),
        model: cfg.model.name.clone(),
        batch: cfg.workload.batch,
        input_len: cfg.workload.input_len,
        output_len: cfg.workload.output_len,
        sim,
        energy,
        power: power_report(cfg),
        baseline: base,
        speedup,
        notes,
    })
}

/// Cartesian sweep axes; empty axes fall back to the base spec's value.
#[derive(Debug, Clone, Default)]
pub struct SweepAxes {
    pub archs: Vec<String>,
    pub models: Vec<String>,
    pub batches: Vec<usize>,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl SweepAxes {
    /// Points in scenario-key order.
    pub fn points(&self, base: &ScenarioSpec, cap: usize) -> Result<Vec<ScenarioSpec>, Error> {
        fn axis<T: Clone>(v: &[T], fallback: &Option<T>) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![fallback.clone()]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let archs = axis(&self.archs, &base.arch);
        let models = axis(&self.models, &base.model);
        let batches = axis(&self.batches, &base.batch);
        let inputs = axis(&self.inputs, &base.input);
        let outputs = axis(&self.outputs, &base.output);
        let n = archs.len() * models.len() * batches.len() * inputs.len() * outputs.len();
        if n > cap {
            return Err(Error::Usage(format!("sweep has {n} points, above the cap of {cap}")));
        }
        let mut out = Vec::with_capacity(n);
        for a in &archs {
            for m in &models {
                for b in &batches {
                    for i in &inputs {
                        for o in &outputs {
                            out.push(ScenarioSpec {
                                config: base.config.clone(),
                                arch: a.clone(),
                                model: m.clone(),
                                batch: *b,
                                input: *i,
                                output: *o,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs every point on up to `jobs` threads (0 = all cores). Results come
/// back in point order whatever order they finish in.
pub fn run_sweep(points: &[ScenarioSpec], baseline: Baseline, jobs: usize) -> Result<Vec<Result<RunReport, Error>>, Error> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let total = points.len();
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let t = Instant::now();
                let r = p.resolve().and_then(|cfg| run_scenario(&cfg, baseline, false));
                match &r {
                    Ok(rep) => eprintln!("[{total} pts] {} done in {:.1}s", rep.scenario, t.elapsed().as_secs_f64()),
                    Err(e) => eprintln!("[{total} pts] point failed: {e}"),
                }
                r
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub model: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub pim_e2e_s: f64,
    pub pim_ttft_s: f64,
    pub pim_throughput_tok_s: f64,
    pub pim_energy_j: f64,
    pub baseline_platform: Option<String>,
    pub baseline_e2e_s: Option<f64>,
    pub baseline_ttft_s: Option<f64>,
    pub baseline_throughput_tok_s: Option<f64>,
    pub e2e_speedup: Option<f64>,
    pub ttft_speedup: Option<f64>,
    pub throughput_speedup: Option<f64>,
}

impl From<&RunReport> for ComparisonRow {
    fn from(r: &RunReport) -> Self {
        let b = r.baseline.as_ref();
        ComparisonRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            model: r.model.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            pim_e2e_s: r.sim.e2e_latency,
            pim_ttft_s: r.sim.ttft,
            pim_throughput_tok_s: r.sim.decode_throughput,
            pim_energy_j: r.energy.total,
            baseline_platform: b.map(|b| b.platform.clone()),
            baseline_e2e_s: b.map(|b| b.e2e_latency),
            baseline_ttft_s: b.map(|b| b.ttft),
            baseline_throughput_tok_s: b.map(|b| b.decode_throughput),
            e2e_speedup: r.speedup.map(|s| s.e2e),
            ttft_speedup: r.speedup.map(|s| s.ttft),
            throughput_speedup: r.speedup.map(|s| s.decode_throughput),
        }
    }
}

/// TTFT targets whose minimum required speedup is reported per row.
pub const TTFT_SLOS: [f64; 3] = [0.5, 1.5, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub baseline_platform: Option<String>,
    pub e2e_speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub pim_tok_s: f64,
    pub baseline_tok_s: Option<f64>,
    pub normalized_throughput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtftRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub pim_ttft_s: f64,
    pub baseline_ttft_s: Option<f64>,
    pub ttft_speedup: Option<f64>,
    /// Speedup over the baseline the TTFT target needs.
    #[serde(rename = "slo_0.5s")]
    pub slo_0_5s: Option<f64>,
    #[serde(rename = "slo_1.5s")]
    pub slo_1_5s: Option<f64>,
    #[serde(rename = "slo_3.0s")]
    pub slo_3_0s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub compute_s: f64,
    pub communication_s: f64,
    pub queueing_s: f64,
    pub compute: f64,
    pub communication: f64,
    pub queueing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub schema_version: u32,
    pub scenario: String,
    pub arch: String,
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub total_j: f64,
    pub data_access: f64,
    pub computation: f64,
    pub communication: f64,
}

/// All figure-shaped tables for a set of results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Figures {
    pub comparison: Vec<ComparisonRow>,
    pub e2e_speedup: Vec<E2eRow>,
    pub decode_throughput: Vec<ThroughputRow>,
    pub ttft: Vec<TtftRow>,
    pub breakdown: Vec<BreakdownRow>,
    pub energy: Vec<EnergyRow>,
}

pub fn figures(results: &[RunReport]) -> Figures {
    let mut f = Figures::default();
    for r in results {
        let c = ComparisonRow::from(r);
        let slo = |t: f64| c.baseline_ttft_s.map(|b| b / t);
        f.e2e_speedup.push(E2eRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            baseline_platform: c.baseline_platform.clone(),
            e2e_speedup: c.e2e_speedup,
        });
        f.decode_throughput.push(ThroughputRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            pim_tok_s: r.sim.decode_throughput,
            baseline_tok_s: c.baseline_throughput_tok_s,
            normalized_throughput: c.throughput_speedup,
        });
        f.ttft.push(TtftRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            pim_ttft_s: r.sim.ttft,
            baseline_ttft_s: c.baseline_ttft_s,
            ttft_speedup: c.ttft_speedup,
            slo_0_5s: slo(TTFT_SLOS[0]),
            slo_1_5s: slo(TTFT_SLOS[1]),
            slo_3_0s: slo(TTFT_SLOS[2]),
        });
        let b = &r.sim.breakdown;
        f.breakdown.push(BreakdownRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            compute_s: b.compute,
            communication_s: b.communication,
            queueing_s: b.queueing,
            compute: b.compute_fraction,
            communication: b.communication_fraction,
            queueing: b.queueing_fraction,
        });
        f.energy.push(EnergyRow {
            schema_version: SCHEMA_VERSION,
            scenario: r.scenario.clone(),
            arch: r.arch.clone(),
            batch: r.batch,
            input_len: r.input_len,
            output_len: r.output_len,
            total_j: r.energy.total,
            data_access: r.energy.data_access_fraction,
            computation: r.energy.computation_fraction,
            communication: r.energy.communication_fraction,
        });
        f.comparison.push(c);
    }
    f
}

pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(fs::File) -> Result<(), Error>) -> Result<PathBuf, Error> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    write(f)?;
    Ok(path)
}

/// Writes one CSV per figure family into `dir`.
pub fn report_figures(results: &[RunReport], dir: &Path) -> Result<Vec<PathBuf>, Error> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let f = figures(results);
    Ok(vec![
        write_file(dir, "comparison.csv", |w| write_csv(w, &f.comparison))?,
        write_file(dir, "e2e_speedup.csv", |w| write_csv(w, &f.e2e_speedup))?,
        write_file(dir, "decode_throughput.csv", |w| write_csv(w, &f.decode_throughput))?,
        write_file(dir, "ttft.csv", |w| write_csv(w, &f.ttft))?,
        write_file(dir, "breakdown.csv", |w| write_csv(w, &f.breakdown))?,
        write_file(dir, "energy.csv", |w| write_csv(w, &f.energy))?,
    ])
}

#[derive(Debug, Serialize)]
pub struct CostSummary {
    pub arch: String,
    pub peaks: PeakSpec,
    pub cost: CostReport,
    pub power: PowerReport,
}

pub fn cost_summary(cfg: &ScenarioConfig) -> CostSummary {
    CostSummary {
        arch: cfg.arch.clone(),
        peaks: derive_peaks(cfg),
        cost: yield_cost(&cfg.cost, &cfg.dram),
        power: power_report(cfg),
    }
}

/// The architecture's own roof followed by every configured platform.
pub fn rooflines(cfg: &ScenarioConfig) -> Vec<PlatformRoofline> {
    let p = derive_peaks(cfg);
    let mut roofs = vec![PlatformRoofline::new(cfg.arch.clone(), p.peak_gemm, p.peak_bandwidth)];
    roofs.extend(cfg.platforms.iter().map(PlatformRoofline::from_platform));
    roofs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelPoint {
    pub phase: &'static str,
    pub kernel: &'static str,
    pub m: usize,
    pub oi: f64,
    pub platform: String,
    pub attainable_flops: f64,
}

/// Table kernels placed on every roof, with each platform's GEMM
/// efficiency at the kernel's M.
pub fn kernel_points(cfg: &ScenarioConfig, rows: &[OiRow]) -> Vec<KernelPoint> {
    let roofs = rooflines(cfg);
    let mut out = Vec::new();
    for r in rows {
        for roof in &roofs {
            out.push(KernelPoint {
                phase: r.phase,
                kernel: r.kernel,
                m: r.m,
                oi: r.oi,
                platform: roof.name.clone(),
                attainable_flops: roofline_attainable(roof, r.oi, Some(r.m)),
            });
        }
    }
    out
}

#[derive(Debug, Parser)]
#[command(name = "pimflow", version, about = "Simulate transformer inference on chiplet DRAM processing-in-memory systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Scenario TOML; presets named by --arch/--model fill anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Directory for output files; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the randomized property harness; simulations never use it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Clone)]
pub struct PointArgs {
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub input: Option<usize>,
    #[arg(long)]
    pub output: Option<usize>,
    #[arg(long, value_enum, default_value_t = Baseline::H100Roofline)]
    pub baseline: Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        point: PointArgs,
        /// Also write per-task trace and weight placement CSVs (needs --out).
        #[arg(long)]
        trace: bool,
    },
    /// Simulate the cartesian product of comma-separated axis values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        arch: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        model: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        batch: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        input: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        output: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Baseline::H100Roofline)]
        baseline: Baseline,
        /// Concurrent points; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Largest number of points accepted.
        #[arg(long, default_value_t = DEFAULT_SWEEP_CAP)]
        max_points: usize,
    },
    /// GEMM shapes and operational intensity per kernel.
    Oi {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "llama2-7b")]
        model: String,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 128)]
        input: usize,
    },
    /// Attainable throughput vs operational intensity for the arch and baselines.
    Roofline {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "D1")]
        arch: String,
        #[arg(long, default_value = "llama2-7b")]
        model: String,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 128)]
        input: usize,
    },
    /// Yield, cost, power and peak rates of an architecture.
    Cost {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Logic-unit tree, links and address map of an architecture.
    Topo {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        arch: Option<String>,
    },
}

/// Sends `text` to `out/name` or standard output.
fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Error> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut so = io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
        }
    }
    Ok(())
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, Error> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialize");
    s.push('\n');
    s
}

fn emit_results(common: &CommonArgs, results: &[RunReport], json_name: &str) -> Result<(), Error> {
    match (common.format, &common.out) {
        (Format::Json, _) if results.len() == 1 && json_name == "report.json" => emit(&common.out, json_name, &json(&results[0])),
        (Format::Json, _) => emit(&common.out, json_name, &json(&results)),
        (Format::Csv, Some(dir)) => {
            for p in report_figures(results, dir)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        (Format::Csv, None) => emit(&None, "", &csv_string(&figures(results).comparison)?),
    }
}

fn spec_for(common: &CommonArgs, arch: Option<String>) -> ScenarioSpec {
    ScenarioSpec {
        config: common.config.clone(),
        arch,
        ..Default::default()
    }
}

pub fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { common, point, trace } => {
            let spec = ScenarioSpec {
                config: common.config.clone(),
                arch: point.arch,
                model: point.model,
                batch: point.batch,
                input: point.input,
                output: point.output,
            };
            let cfg = spec.resolve()?;
            let t = Instant::now();
            let mut report = run_scenario(&cfg, point.baseline, trace && common.out.is_some())?;
            eprintln!("{} simulated in {:.1}s", report.scenario, t.elapsed().as_secs_f64());
            if let (Some(dir), true) = (&common.out, trace) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                write_file(dir, "trace.csv", |f| Ok(report.sim.write_trace_csv(f)?))?;
                let sys = build_memory_system(&cfg)?;
                let alloc = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys)?;
                write_file(dir, "placement.csv", |f| Ok(alloc.write_placement_csv(f, cfg.workload.batch)?))?;
                report.sim.trace = None;
            }
            emit_results(&common, std::slice::from_ref(&report), "report.json")
        }
        Command::Sweep {
            common,
            arch,
            model,
            batch,
            input,
            output,
            baseline,
            jobs,
            max_points,
        } => {
            let axes = SweepAxes {
                archs: arch,
                models: model,
                batches: batch,
                inputs: input,
                outputs: output,
            };
            let points = axes.points(&spec_for(&common, None), max_points)?;
            let results = run_sweep(&points, baseline, jobs)?;
            let mut ok = Vec::new();
            let mut first_err = None;
            for r in results {
                match r {
                    Ok(r) => ok.push(r),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            emit_results(&common, &ok, "sweep.json")?;
            match first_err {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Oi {
            common,
            model,
            batch,
            input,
        } => {
            let spec = ScenarioSpec {
                model: Some(model),
                batch: Some(batch),
                input: Some(input),
                ..spec_for(&common, None)
            };
            let cfg = spec.resolve()?;
            let rows = oi_table(&cfg.model, batch, input);
            match common.format {
                Format::Json => emit(&common.out, "oi.json", &json(&rows)),
                Format::Csv => emit(&common.out, "oi.csv", &csv_string(&rows)?),
            }
        }
        Command::Roofline {
            common,
            arch,
            model,
            batch,
            input,
        } => {
            let spec = ScenarioSpec {
                arch: Some(arch),
                model: Some(model),
                batch: Some(batch),
                input: Some(input),
                ..spec_for(&common, None)
            };
            let cfg = spec.resolve()?;
            let roofs = rooflines(&cfg);
            let grid = oi_grid(0.1, 10_000.0, 10);
            let points = kernel_points(&cfg, &oi_table(&cfg.model, batch, input));
            match common.format {
                Format::Json => emit(
                    &common.out,
                    "roofline.json",
                    &json(&serde_json::json!({ "roofs": roofs, "kernels": points })),
                ),
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_roofline_csv(&mut buf, &roofs, &grid)?;
                    emit(&common.out, "roofline.csv", &String::from_utf8(buf).expect("utf-8"))?;
                    if common.out.is_some() {
                        emit(&common.out, "kernels.csv", &csv_string(&points)?)?;
                    }
                    Ok(())
                }
            }
        }
        Command::Cost { common, arch } => {
            let cfg = spec_for(&common, arch).resolve()?;
            let s = cost_summary(&cfg);
            match common.format {
                Format::Json => emit(&common.out, "cost.json", &json(&s)),
                Format::Csv => {
                    let v = serde_json::to_value(&s).expect("serializes");
                    let mut rows = Vec::new();
                    flatten("", &v, &mut rows);
                    let mut text = String::from("key,value\n");
                    for (k, v) in rows {
                        text.push_str(&format!("{k},{v}\n"));
                    }
                    emit(&common.out, "cost.csv", &text)
                }
            }
        }
        Command::Topo { common, arch } => {
            let cfg = spec_for(&common, arch).resolve()?;
            let sys = build_memory_system(&cfg)?;
            let topo = sys.topology();
            match common.format {
                Format::Json => emit(&common.out, "topology.json", &json(&topo)),
                Format::Csv => {
                    #[derive(Serialize)]
                    struct Row<'a> {
                        id: usize,
                        label: &'a str,
                        level: &'static str,
                        parent: Option<usize>,
                        kernels: String,
                    }
                    let rows: Vec<Row> = topo
                        .units
                        .iter()
                        .map(|u| Row {
                            id: u.id,
                            label: &u.label,
                            level: u.level.name(),
                            parent: u.parent,
                            kernels: u.kernels.join(" "),
                        })
                        .collect();
                    emit(&common.out, "topology.csv", &csv_string(&rows)?)
                }
            }
        }
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
