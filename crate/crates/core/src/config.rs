//! Scenario configuration: architecture, model, workload and platform constants.
//!
//! A scenario is one TOML document with the sections `dram`, `logic`, `network`,
//! `model`, `workload` and `platforms`, plus optional `energy`, `cost`, `alloc`
//! and `sim` blocks. Two top-level keys select compiled-in presets that the
//! document then overrides:
//!
//! ```toml
//! arch = "D1"          # D1..D5
//! model = "llama2-7b"  # llama2-7b | mistral-7b | llama3-70b
//!
//! [workload]
//! batch = 1
//! input_len = 128
//! output_len = 256
//! ```
//!
//! All internal quantities are SI base units: bytes, seconds, hertz, bytes/s, FLOP/s.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskgraph::KernelKind;

pub const ARCH_PRESETS: &[(&str, &str)] = &[
    ("D1", include_str!("../presets/D1.toml")),
    ("D2", include_str!("../presets/D2.toml")),
    ("D3", include_str!("../presets/D3.toml")),
    ("D4", include_str!("../presets/D4.toml")),
    ("D5", include_str!("../presets/D5.toml")),
];

pub const MODEL_PRESETS: &[(&str, &str)] = &[
    ("llama2-7b", include_str!("../presets/models/llama2-7b.toml")),
    ("mistral-7b", include_str!("../presets/models/mistral-7b.toml")),
    ("llama3-70b", include_str!("../presets/models/llama3-70b.toml")),
];

const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown {kind} preset `{name}` (known: {known})")]
    UnknownPreset {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("invalid config:\n{0}")]
    Invalid(ValidationReport),
}

/// Hierarchy level of a logic unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Chip,
    Rank,
    Channel,
    Root,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Chip, Level::Rank, Level::Channel, Level::Root];

    /// Depth from the root (root = 0, chip = 3).
    pub fn depth(self) -> usize {
        match self {
            Level::Root => 0,
            Level::Channel => 1,
            Level::Rank => 2,
            Level::Chip => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Chip => "chip",
            Level::Rank => "rank",
            Level::Channel => "channel",
            Level::Root => "root",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramTiming {
    pub t_ccd: f64,
    pub t_rcd: f64,
    pub t_rc: f64,
    pub t_rfc: f64,
    pub t_refi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramCurrents {
    pub idd0: f64,
    pub idd3n: f64,
    pub idd4r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramConfig {
    pub modules: usize,
    pub ranks_per_module: usize,
    pub chips_per_rank: usize,
    pub banks_per_chip: usize,
    #[serde(default = "default_bank_groups")]
    pub bank_groups: usize,
    pub bank_interface_bits: usize,
    pub row_bytes: u64,
    pub capacity_total: u64,
    pub clock_hz: f64,
    pub vdd: f64,
    pub timing: DramTiming,
    pub currents: DramCurrents,
}

fn default_bank_groups() -> usize {
    8
}

impl DramConfig {
    pub fn total_ranks(&self) -> usize {
        self.modules * self.ranks_per_module
    }

    pub fn total_chips(&self) -> usize {
        self.total_ranks() * self.chips_per_rank
    }

    pub fn total_banks(&self) -> usize {
        self.total_chips() * self.banks_per_chip
    }

    pub fn bank_interface_bytes(&self) -> u64 {
        (self.bank_interface_bits / 8) as u64
    }

    /// FP16 elements delivered per bank per cycle.
    pub fn stream_rate(&self) -> usize {
        self.bank_interface_bits / 16
    }

    pub fn bank_bytes(&self) -> u64 {
        self.capacity_total / self.total_banks() as u64
    }

    pub fn rows_per_bank(&self) -> u64 {
        self.bank_bytes() / self.row_bytes
    }

    pub fn rank_bytes(&self) -> u64 {
        self.bank_bytes() * (self.chips_per_rank * self.banks_per_chip) as u64
    }

    /// Bytes per second a single bank streams into its logic.
    pub fn bank_bandwidth(&self) -> f64 {
        self.bank_interface_bytes() as f64 * self.clock_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicConfig {
    pub systolic_rows: usize,
    pub systolic_cols: usize,
    pub simd_mul_lanes: usize,
    pub adder_trees_per_chip: usize,
    pub adder_tree_fanin: usize,
    pub max_tree_fanin: usize,
    pub exp_lanes: usize,
    pub sram_bytes: u64,
    pub mul_pipe_stages: usize,
    pub add_pipe_stages: usize,
    /// Throughput of concatenation/reduction at rank, channel and root units.
    pub aggregate_bandwidth: f64,
    /// Fixed per-task overhead of an aggregation step.
    pub aggregate_latency: f64,
    pub level_kernel_support: BTreeMap<Level, BTreeSet<KernelKind>>,
}

impl LogicConfig {
    pub fn supports(&self, level: Level, kind: KernelKind) -> bool {
        self.level_kernel_support
            .get(&level)
            .is_some_and(|s| s.contains(&kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub bandwidth: f64,
    pub link_latency: f64,
    pub src_port_latency: f64,
    pub dst_port_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Largest message an edge is cut into; 0 keeps each edge whole.
    #[serde(default)]
    pub max_message_bytes: u64,
    /// Switch to controller link; `bandwidth` is the switch total, split
    /// evenly across modules.
    pub switch_ctrl: LinkParams,
    pub ctrl_ctrl: LinkParams,
    pub rank_ctrl: LinkParams,
    pub rank_rank: LinkParams,
    pub chip_rank: LinkParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub elem_bytes: u64,
}

impl ModelConfig {
    /// Query heads sharing one KV head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Output columns of the fused QKV projection.
    pub fn qkv_cols(&self) -> usize {
        self.n_heads * self.head_dim + 2 * self.kv_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub batch: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub max_context: usize,
}

/// Peak rates of a machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    pub peak_bandwidth: f64,
    pub peak_gemm: f64,
    pub peak_simd: f64,
    pub capacity: u64,
}

/// A roofline baseline platform; GEMM efficiency knots are `(M, fraction of peak)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub name: String,
    pub peak_flops: f64,
    pub peak_bw: f64,
    pub capacity: u64,
    pub avg_power_w: f64,
    #[serde(default)]
    pub util_knots: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    /// Share of burst-read energy spent on the column path the logic taps.
    pub column_path_fraction: f64,
    /// PIM logic power per chip at full utilization (W).
    pub logic_power_w: f64,
    pub logic_area_mm2: f64,
    /// Power of streaming every bank of one chip (W).
    pub all_bank_read_power_w: f64,
    pub pcie_pj_per_bit: f64,
    pub chip_link_pj_per_bit: f64,
    pub aggregate_pj_per_byte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldConfig {
    pub interposer_yield: f64,
    pub chiplet_yield: f64,
    pub bond_yield: f64,
    pub chiplets_per_mcooi: usize,
    pub bonds_per_mcooi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub yields: YieldConfig,
    pub dram_chiplet_cost: f64,
    pub dram_chiplets_per_mcooi: usize,
    pub logic_chiplet_cost: f64,
    pub logic_chiplets_per_mcooi: usize,
    pub interposer_cost: f64,
    pub bond_cost: f64,
    pub packaging_per_mcooi: f64,
    pub chips_per_mcooi: usize,
    pub dimm_assembly_cost: f64,
    pub gpu: GpuCostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuCostConfig {
    pub die_cost: f64,
    pub interposer_cost: f64,
    pub hbm_cost_per_gb: f64,
    pub hbm_stacks: usize,
    pub hbm_gb_per_stack: f64,
    pub assembly_cost: f64,
    pub assembly_yield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocConfig {
    /// wt_ranks per weight rank set; 0 spreads every weight over all wt_ranks.
    #[serde(default)]
    pub wt_set_ranks: usize,
    #[serde(default = "yes")]
    pub pad_indivisible: bool,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            wt_set_ranks: 0,
            pad_indivisible: true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Pipeline row activations behind streaming so only the first tRCD shows.
    #[serde(default = "yes")]
    pub activation_overlap: bool,
    /// Fixed host-side ingress delay before prefill starts.
    #[serde(default)]
    pub ingress_latency: f64,
    /// Simulate every n-th decode step and interpolate the rest; 0 picks
    /// automatically, 1 simulates every step.
    #[serde(default)]
    pub decode_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            activation_overlap: true,
            ingress_latency: 0.0,
            decode_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub arch: String,
    pub dram: DramConfig,
    pub logic: LogicConfig,
    pub network: NetworkConfig,
    pub model: ModelConfig,
    pub workload: WorkloadConfig,
    pub platforms: Vec<PlatformConfig>,
    pub energy: EnergyConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub alloc: AllocConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

impl ScenarioConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn platform(&self, name: &str) -> Option<&PlatformConfig> {
        self.platforms.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    /// Stable key identifying this scenario point in reports.
    pub fn key(&self) -> String {
        format!(
            "{}/{}/b{}/i{}/o{}",
            self.arch,
            self.model.name,
            self.workload.batch,
            self.workload.input_len,
            self.workload.output_len
        )
    }
}

fn preset_text(kind: &'static str, table: &[(&str, &'static str)], name: &str) -> Result<&'static str, ConfigError> {
    table
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::UnknownPreset {
            kind,
            name: name.to_string(),
            known: table.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "),
        })
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
pub fn merge_tables(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Preset layers (`arch`, `model`) followed by the document itself.
pub fn resolve_table(doc: toml::Table) -> Result<toml::Table, ConfigError> {
    let arch = match doc.get("arch") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => return Err(ConfigError::Parse("`arch` must be a string".into())),
        None => "D1".to_string(),
    };
    let model = match doc.get("model") {
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(toml::Value::Table(_)) | None => None,
        Some(_) => return Err(ConfigError::Parse("`model` must be a preset name or a table".into())),
    };
    let mut base = parse_table(preset_text("arch", ARCH_PRESETS, &arch)?)?;
    base.insert("arch".into(), toml::Value::String(arch.to_uppercase()));
    let model_name = model.unwrap_or_else(|| "llama2-7b".to_string());
    let model_table = parse_table(preset_text("model", MODEL_PRESETS, &model_name)?)?;
    merge_tables(&mut base, model_table);
    let mut doc = doc;
    if matches!(doc.get("model"), Some(toml::Value::String(_))) {
        doc.remove("model");
    }
    if let Some(toml::Value::String(a)) = doc.get("arch") {
        let a = a.to_uppercase();
        doc.insert("arch".into(), toml::Value::String(a));
    }
    merge_tables(&mut base, doc);
    Ok(base)
}

/// Builds and validates a scenario from a fully merged table.
pub fn scenario_from_table(mut table: toml::Table) -> Result<ScenarioConfig, ConfigError> {
    let workload = match table.get_mut("workload") {
        Some(toml::Value::Table(w)) => w,
        _ => return Err(ConfigError::MissingField("workload.batch".into())),
    };
    for field in ["batch", "input_len", "output_len"] {
        if !workload.contains_key(field) {
            return Err(ConfigError::MissingField(format!("workload.{field}")));
        }
    }
    if !workload.contains_key("max_context") {
        let sum = ["input_len", "output_len"]
            .iter()
            .map(|k| workload[*k].as_integer().unwrap_or(0))
            .sum::<i64>();
        workload.insert("max_context".into(), toml::Value::Integer(sum));
    }
    let cfg: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let report = validate(&cfg);
    if report.is_ok() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(report))
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    scenario_from_table(resolve_table(parse_table(text)?)?)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Preset architecture + model with an explicit workload.
pub fn preset_scenario(arch: &str, model: &str, workload: WorkloadConfig) -> Result<ScenarioConfig, ConfigError> {
    let mut doc = toml::Table::new();
    doc.insert("arch".into(), toml::Value::String(arch.into()));
    doc.insert("model".into(), toml::Value::String(model.into()));
    doc.insert(
        "workload".into(),
        toml::Value::try_from(&workload).map_err(|e| ConfigError::Parse(e.to_string()))?,
    );
    scenario_from_table(resolve_table(doc)?)
}

pub fn model_preset(name: &str) -> Result<ModelConfig, ConfigError> {
    #[derive(Deserialize)]
    struct Doc {
        model: ModelConfig,
    }
    let doc: Doc = toml::from_str(preset_text("model", MODEL_PRESETS, name)?)
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(doc.model)
}

pub fn workload(batch: usize, input_len: usize, output_len: usize) -> WorkloadConfig {
    WorkloadConfig {
        batch,
        input_len,
        output_len,
        max_context: input_len + output_len,
    }
}

pub fn derive_peaks(cfg: &ScenarioConfig) -> PeakSpec {
    let banks = cfg.dram.total_banks() as f64;
    let clock = cfg.dram.clock_hz;
    PeakSpec {
        peak_bandwidth: banks * cfg.dram.bank_interface_bytes() as f64 * clock,
        peak_gemm: banks * (cfg.logic.systolic_rows * cfg.logic.systolic_cols) as f64 * 2.0 * clock,
        peak_simd: banks * cfg.dram.stream_rate() as f64 * clock,
        capacity: cfg.dram.capacity_total,
    }
}

/// Display convention for rates and capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitPrefix {
    /// Powers of 1000 throughout.
    Decimal,
    /// Giga-level value stepped to tera by 1024; capacity in 2^30-byte GB.
    Binary,
}

/// Rate expressed in tera-units (TB/s or TFLOP/s).
pub fn tera(rate: f64, prefix: UnitPrefix) -> f64 {
    match prefix {
        UnitPrefix::Decimal => rate / 1e12,
        UnitPrefix::Binary => rate / 1e9 / 1024.0,
    }
}

/// Memory capacity in GB. Memory-capacity prefixes are binary under both
/// conventions (JEDEC usage); only rates change with the prefix.
pub fn capacity_gb(bytes: u64) -> f64 {
    bytes as f64 / GIB
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, path: &str, message: impl Into<String>) {
        self.violations.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, path: &str, message: impl Into<String>) {
        self.warnings.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.violations {
            writeln!(f, "  error: {}: {}", i.path, i.message)?;
        }
        for i in &self.warnings {
            writeln!(f, "  warning: {}: {}", i.path, i.message)?;
        }
        Ok(())
    }
}

pub fn validate(cfg: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let d = &cfg.dram;
    let counts = [
        ("dram.modules", d.modules),
        ("dram.ranks_per_module", d.ranks_per_module),
        ("dram.chips_per_rank", d.chips_per_rank),
        ("dram.banks_per_chip", d.banks_per_chip),
        ("dram.bank_groups", d.bank_groups),
    ];
    for (path, n) in counts {
        if n == 0 {
            r.violation(path, "must be at least 1");
        } else if !n.is_power_of_two() {
            r.violation(path, format!("{n} is not a power of two"));
        }
    }
    if d.bank_interface_bits == 0 || d.bank_interface_bits % 16 != 0 {
        r.violation("dram.bank_interface_bits", "must be a positive multiple of 16");
    }
    if d.bank_groups > 0 && d.banks_per_chip % d.bank_groups != 0 {
        r.violation("dram.bank_groups", "must divide banks_per_chip");
    }
    if !d.row_bytes.is_power_of_two() || d.row_bytes < d.bank_interface_bytes().max(1) {
        r.violation("dram.row_bytes", "must be a power of two no smaller than the bank interface");
    }
    let banks = d.total_banks() as u64;
    if banks > 0 && d.capacity_total % banks != 0 {
        r.violation("dram.capacity_total", "not divisible by the total bank count");
    } else if banks > 0 && d.row_bytes > 0 {
        let per_bank = d.capacity_total / banks;
        if per_bank % d.row_bytes != 0 || !(per_bank / d.row_bytes).is_power_of_two() {
            r.violation("dram.capacity_total", "rows per bank must be a power of two");
        }
    }
    let timings = [
        ("dram.timing.t_ccd", d.timing.t_ccd),
        ("dram.timing.t_rcd", d.timing.t_rcd),
        ("dram.timing.t_rc", d.timing.t_rc),
        ("dram.timing.t_rfc", d.timing.t_rfc),
        ("dram.timing.t_refi", d.timing.t_refi),
        ("dram.clock_hz", d.clock_hz),
        ("dram.vdd", d.vdd),
    ];
    for (path, v) in timings {
        if !(v > 0.0) {
            r.violation(path, "must be > 0");
        }
    }
    if d.timing.t_rfc >= d.timing.t_refi {
        r.violation("dram.timing.t_rfc", "must be shorter than t_refi");
    }

    let l = &cfg.logic;
    for (path, n) in [
        ("logic.systolic_rows", l.systolic_rows),
        ("logic.systolic_cols", l.systolic_cols),
        ("logic.simd_mul_lanes", l.simd_mul_lanes),
        ("logic.adder_tree_fanin", l.adder_tree_fanin),
        ("logic.max_tree_fanin", l.max_tree_fanin),
        ("logic.exp_lanes", l.exp_lanes),
    ] {
        if n == 0 {
            r.violation(path, "must be at least 1");
        }
    }
    if l.systolic_cols * 16 != d.bank_interface_bits {
        r.violation(
            "logic.systolic_cols",
            format!(
                "array width mismatch: {} columns x 16 bits != {}-bit bank interface",
                l.systolic_cols, d.bank_interface_bits
            ),
        );
    }
    if !(l.aggregate_bandwidth > 0.0) {
        r.violation("logic.aggregate_bandwidth", "must be > 0");
    }
    for kind in KernelKind::ALL {
        if !Level::ALL.iter().any(|lv| l.supports(*lv, kind)) {
            r.violation(
                "logic.level_kernel_support",
                format!("kernel `{}` is not supported at any level", kind.name()),
            );
        }
    }

    let n = &cfg.network;
    for (path, p) in [
        ("network.switch_ctrl", &n.switch_ctrl),
        ("network.ctrl_ctrl", &n.ctrl_ctrl),
        ("network.rank_ctrl", &n.rank_ctrl),
        ("network.rank_rank", &n.rank_rank),
        ("network.chip_rank", &n.chip_rank),
    ] {
        if !(p.bandwidth > 0.0) {
            r.violation(path, "bandwidth must be > 0");
        }
        if p.link_latency < 0.0 || p.src_port_latency < 0.0 || p.dst_port_latency < 0.0 {
            r.violation(path, "latencies must be >= 0");
        }
    }

    let m = &cfg.model;
    for (path, v) in [
        ("model.hidden_dim", m.hidden_dim),
        ("model.n_layers", m.n_layers),
        ("model.n_heads", m.n_heads),
        ("model.n_kv_heads", m.n_kv_heads),
        ("model.head_dim", m.head_dim),
        ("model.ffn_dim", m.ffn_dim),
        ("model.vocab_size", m.vocab_size),
    ] {
        if v == 0 {
            r.violation(path, "must be at least 1");
        }
    }
    if m.elem_bytes == 0 {
        r.violation("model.elem_bytes", "must be at least 1");
    }
    if m.hidden_dim != m.n_heads * m.head_dim {
        r.violation("model.hidden_dim", "must equal n_heads x head_dim");
    }
    if m.n_kv_heads > 0 && m.n_heads % m.n_kv_heads != 0 {
        r.violation("model.n_kv_heads", "must divide n_heads");
    }
    if m.n_kv_heads > 0 && m.n_kv_heads < d.chips_per_rank {
        r.warn(
            "model.n_kv_heads",
            format!(
                "heads < chips: idle chips in kv_ranks ({} of {} chips unused)",
                d.chips_per_rank - m.n_kv_heads,
                d.chips_per_rank
            ),
        );
    }

    let w = &cfg.workload;
    if w.batch == 0 {
        r.violation("workload.batch", "must be at least 1");
    }
    if w.input_len == 0 {
        r.violation("workload.input_len", "must be at least 1");
    }
    if w.input_len + w.output_len > w.max_context {
        r.violation("workload.max_context", "input_len + output_len exceeds max_context");
    }

    for (i, p) in cfg.platforms.iter().enumerate() {
        let path = format!("platforms[{i}]");
        if !(p.peak_flops > 0.0 && p.peak_bw > 0.0) || p.capacity == 0 {
            r.violation(&path, "peaks and capacity must be > 0");
        }
        if p.util_knots.iter().any(|(_, u)| !(*u > 0.0 && *u <= 1.0)) {
            r.violation(&path, "util fractions must lie in (0, 1]");
        }
    }
    if !(0.0..=1.0).contains(&cfg.energy.column_path_fraction) {
        r.violation("energy.column_path_fraction", "must lie in [0, 1]");
    }
    let y = &cfg.cost.yields;
    for (path, v) in [
        ("cost.yields.interposer_yield", y.interposer_yield),
        ("cost.yields.chiplet_yield", y.chiplet_yield),
        ("cost.yields.bond_yield", y.bond_yield),
    ] {
        if !(v > 0.0 && v <= 1.0) {
            r.violation(path, "yield must lie in (0, 1]");
        }
    }
    r
}
