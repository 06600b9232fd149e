//! Roofline math, the analytical GPU baseline, energy/power accounting and
//! yield/cost estimation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::config::{CostConfig, DramConfig, ModelConfig, PlatformConfig, ScenarioConfig, WorkloadConfig};
use crate::engine::AccessStats;
use crate::model_alloc::GemmShape;
use crate::taskgraph::{build_decode_step_graph, build_prefill_graph, kernel_bytes, KernelKind, TaskGraph, TaskGraphError};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("energy constant `{0}` must be positive because the run uses it")]
    MissingConstant(&'static str),
    #[error("no baseline platform named `{0}`")]
    UnknownPlatform(String),
    #[error(transparent)]
    Graph(#[from] TaskGraphError),
}

/// FLOP per byte moved, counting both operands and the result once.
pub fn operational_intensity(shape: GemmShape, elem_bytes: u64) -> f64 {
    let (m, k, n) = (shape.m as f64, shape.k as f64, shape.n as f64);
    2.0 * m * k * n / (elem_bytes as f64 * (m * k + k * n + m * n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformRoofline {
    pub name: String,
    pub peak_flops: f64,
    pub peak_bw: f64,
    /// (M, fraction of peak) knots, interpolated in log2(M).
    pub util_knots: Vec<(u64, f64)>,
}

impl PlatformRoofline {
    pub fn new(name: impl Into<String>, peak_flops: f64, peak_bw: f64) -> Self {
        assert!(peak_flops > 0.0 && peak_bw > 0.0, "roofline peaks must be positive");
        Self {
            name: name.into(),
            peak_flops,
            peak_bw,
            util_knots: Vec::new(),
        }
    }

    pub fn from_platform(p: &PlatformConfig) -> Self {
        let mut r = Self::new(p.name.clone(), p.peak_flops, p.peak_bw);
        r.util_knots = p.util_knots.clone();
        r.util_knots.sort_by_key(|k| k.0);
        r
    }

    pub fn ridge(&self) -> f64 {
        self.peak_flops / self.peak_bw
    }

    /// GEMM efficiency at row count `m`; 1 when no curve is configured.
    pub fn util(&self, m: Option<usize>) -> f64 {
        let (Some(m), Some(first), Some(last)) = (m, self.util_knots.first(), self.util_knots.last()) else {
            return 1.0;
        };
        let m = m as u64;
        if m <= first.0 {
            return first.1;
        }
        if m >= last.0 {
            return last.1;
        }
        let x = (m as f64).log2();
        for w in self.util_knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if m <= b.0 {
                let (xa, xb) = ((a.0 as f64).log2(), (b.0 as f64).log2());
                return a.1 + (b.1 - a.1) * (x - xa) / (xb - xa);
            }
        }
        last.1
    }
}

pub fn roofline_attainable(p: &PlatformRoofline, oi: f64, m: Option<usize>) -> f64 {
    (p.peak_flops * p.util(m)).min(p.peak_bw * oi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OiRow {
    pub phase: &'static str,
    pub kernel: &'static str,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub oi: f64,
}

/// Per-kernel GEMM shapes for one transformer layer plus the LM head.
/// Decode attention is evaluated with `past = input_len` cached tokens.
pub fn oi_table(model: &ModelConfig, batch: usize, input_len: usize) -> Vec<OiRow> {
    let (h, hd, f, v) = (model.hidden_dim, model.head_dim, model.ffn_dim, model.vocab_size);
    let g = model.group_size();
    let mut rows = Vec::new();
    for (phase, m, sm, t) in [("prefill", batch * input_len, input_len, input_len), ("decode", batch, g, input_len + 1)] {
        let shapes = [
            ("qkv_proj", GemmShape::new(m, h, model.qkv_cols())),
            ("score", GemmShape::new(sm, hd, t)),
            ("context", GemmShape::new(sm, t, hd)),
            ("out_proj", GemmShape::new(m, h, h)),
            ("gate_up_proj", GemmShape::new(m, h, f)),
            ("down_proj", GemmShape::new(m, f, h)),
            ("lm_head", GemmShape::new(m, h, v)),
        ];
        for (kernel, s) in shapes {
            rows.push(OiRow {
                phase,
                kernel,
                m: s.m,
                k: s.k,
                n: s.n,
                oi: operational_intensity(s, model.elem_bytes),
            });
        }
    }
    rows
}

/// Roofline time of one node: the slower of its compute and memory terms.
fn node_time(p: &PlatformRoofline, flops: u64, bytes: u64, m: Option<usize>) -> f64 {
    (flops as f64 / (p.peak_flops * p.util(m))).max(bytes as f64 / p.peak_bw)
}

/// Sum of per-node roofline times; an analytical model, not a measurement.
pub fn gpu_baseline_time(graph: &TaskGraph, p: &PlatformRoofline, elem_bytes: u64) -> f64 {
    graph
        .nodes
        .iter()
        .map(|n| node_time(p, n.flops, kernel_bytes(n, elem_bytes), n.gemm.map(|g| g.m)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub label: &'static str,
    pub platform: String,
    pub ttft: f64,
    pub e2e_latency: f64,
    pub decode_throughput: f64,
}

/// Bytes of weights plus the full KV cache of a workload.
pub fn footprint_bytes(model: &ModelConfig, w: &WorkloadConfig) -> u64 {
    let (h, f) = (model.hidden_dim as u64, model.ffn_dim as u64);
    let per_layer = h * model.qkv_cols() as u64 + h * h + 3 * h * f;
    let weights = model.n_layers as u64 * per_layer + h * model.vocab_size as u64;
    let kv = 2 * model.n_layers as u64 * model.kv_dim() as u64 * (w.batch * (w.input_len + w.output_len)) as u64;
    (weights + kv) * model.elem_bytes
}

/// Smallest platform whose capacity holds the workload, or the largest one.
pub fn pick_platform<'a>(platforms: &'a [PlatformConfig], model: &ModelConfig, w: &WorkloadConfig) -> Option<&'a PlatformConfig> {
    let need = footprint_bytes(model, w);
    let mut sorted: Vec<&PlatformConfig> = platforms.iter().collect();
    sorted.sort_by_key(|p| p.capacity);
    sorted.iter().find(|p| p.capacity >= need).or(sorted.last()).copied()
}

/// Prefill plus every decode step on the roofline model. Attention is the
/// only part of a decode step that depends on the context length, so the rest
/// is timed once and attention shapes are re-evaluated per step.
pub fn gpu_baseline(cfg: &ScenarioConfig, platform: Option<&str>) -> Result<BaselineReport, AnalyticsError> {
    let (model, w) = (&cfg.model, &cfg.workload);
    let pc = match platform {
        Some(name) => cfg.platform(name).ok_or_else(|| AnalyticsError::UnknownPlatform(name.to_string()))?,
        None => pick_platform(&cfg.platforms, model, w).ok_or_else(|| AnalyticsError::UnknownPlatform(String::new()))?,
    };
    let p = PlatformRoofline::from_platform(pc);
    let e = model.elem_bytes;
    let ttft = gpu_baseline_time(&build_prefill_graph(model, w), &p, e);

    let mut decode = 0.0;
    if w.output_len > 0 {
        let g = build_decode_step_graph(model, w, w.input_len)?;
        let t0 = w.input_len + 1;
        let mut fixed = 0.0;
        // (kernel, m, context-independent dim) -> count
        let mut attn: BTreeMap<(KernelKind, usize, usize), usize> = BTreeMap::new();
        for n in &g.nodes {
            match (n.kernel, n.gemm) {
                (KernelKind::ScoreSoftmax, Some(s)) => *attn.entry((n.kernel, s.m, s.k)).or_default() += 1,
                (KernelKind::Context, Some(s)) => *attn.entry((n.kernel, s.m, s.n)).or_default() += 1,
                _ => fixed += node_time(&p, n.flops, kernel_bytes(n, e), n.gemm.map(|s| s.m)),
            }
        }
        for step in 0..w.output_len {
            let t = t0 + step;
            decode += fixed;
            for (&(kind, m, d), &count) in &attn {
                let s = match kind {
                    KernelKind::ScoreSoftmax => GemmShape::new(m, d, t),
                    _ => GemmShape::new(m, t, d),
                };
                decode += count as f64 * node_time(&p, s.flops(), s.bytes(e), Some(m));
            }
        }
    }
    Ok(BaselineReport {
        label: "analytical baseline",
        platform: pc.name.clone(),
        ttft,
        e2e_latency: ttft + decode,
        decode_throughput: if decode > 0.0 { w.output_len as f64 / decode } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyReport {
    pub activation_energy: f64,
    pub read_energy: f64,
    pub compute_energy: f64,
    pub comm_energy: f64,
    pub total: f64,
    pub data_access_fraction: f64,
    pub computation_fraction: f64,
    pub communication_fraction: f64,
}

/// Joules per operation of each PIM unit, from logic power at full rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpEnergy {
    pub mac: f64,
    pub simd: f64,
    pub exp: f64,
    pub max: f64,
}

pub fn op_energy(cfg: &ScenarioConfig) -> OpEnergy {
    let p = cfg.energy.logic_power_w;
    let clk = cfg.dram.clock_hz;
    let banks = cfg.dram.banks_per_chip as f64;
    let l = &cfg.logic;
    OpEnergy {
        mac: p / (banks * (l.systolic_rows * l.systolic_cols) as f64 * clk),
        simd: p / (banks * cfg.dram.stream_rate() as f64 * clk),
        exp: p / (l.exp_lanes as f64 * clk),
        max: p / (l.max_tree_fanin as f64 * clk),
    }
}

/// Energy of one row activation.
pub fn activation_joules(dram: &DramConfig) -> f64 {
    (dram.currents.idd0 - dram.currents.idd3n) * dram.vdd * dram.timing.t_rc
}

/// Column-path energy of reading `bytes` through bank interfaces.
pub fn read_joules(dram: &DramConfig, column_path_fraction: f64, bytes: f64) -> f64 {
    let t = bytes / (dram.bank_interface_bytes() as f64 * dram.clock_hz);
    column_path_fraction * (dram.currents.idd4r - dram.currents.idd3n) * dram.vdd * t
}

pub fn energy_report(stats: &AccessStats, cfg: &ScenarioConfig) -> Result<EnergyReport, AnalyticsError> {
    let en = &cfg.energy;
    let dram = &cfg.dram;
    let need = |used: bool, v: f64, name: &'static str| {
        if used && !(v > 0.0) {
            Err(AnalyticsError::MissingConstant(name))
        } else {
            Ok(())
        }
    };
    need(stats.activations > 0.0, dram.currents.idd0 - dram.currents.idd3n, "dram.currents.idd0")?;
    need(stats.read_bytes > 0.0, dram.currents.idd4r - dram.currents.idd3n, "dram.currents.idd4r")?;
    need(stats.read_bytes > 0.0, en.column_path_fraction, "energy.column_path_fraction")?;
    let compute_ops = stats.mac_ops + stats.simd_ops + stats.exp_ops + stats.max_ops;
    need(compute_ops > 0.0, en.logic_power_w, "energy.logic_power_w")?;
    need(stats.pcie_bytes > 0.0, en.pcie_pj_per_bit, "energy.pcie_pj_per_bit")?;
    need(stats.chip_link_bytes > 0.0, en.chip_link_pj_per_bit, "energy.chip_link_pj_per_bit")?;
    need(stats.aggregate_bytes > 0.0, en.aggregate_pj_per_byte, "energy.aggregate_pj_per_byte")?;

    let activation = stats.activations * activation_joules(dram);
    let read = read_joules(dram, en.column_path_fraction, stats.read_bytes);
    let op = op_energy(cfg);
    let compute = stats.mac_ops * op.mac + stats.simd_ops * op.simd + stats.exp_ops * op.exp + stats.max_ops * op.max;
    let comm = (stats.pcie_bytes * 8.0 * en.pcie_pj_per_bit
        + stats.chip_link_bytes * 8.0 * en.chip_link_pj_per_bit
        + stats.aggregate_bytes * en.aggregate_pj_per_byte)
        * 1e-12;
    let total = activation + read + compute + comm;
    let frac = |x: f64| if total > 0.0 { x / total } else { 0.0 };
    Ok(EnergyReport {
        activation_energy: activation,
        read_energy: read,
        compute_energy: compute,
        comm_energy: comm,
        total,
        data_access_fraction: frac(activation + read),
        computation_fraction: frac(compute),
        communication_fraction: frac(comm),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerReport {
    pub chip_power_w: f64,
    pub module_power_w: f64,
    pub power_density_w_per_mm2: f64,
}

/// Module power counts one rank's worth of chips, which matches the
/// module label's chip count.
pub fn power_report(cfg: &ScenarioConfig) -> PowerReport {
    let en = &cfg.energy;
    let chip = en.logic_power_w + en.all_bank_read_power_w;
    PowerReport {
        chip_power_w: chip,
        module_power_w: chip * cfg.dram.chips_per_rank as f64,
        power_density_w_per_mm2: en.logic_power_w / en.logic_area_mm2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub interposer_yield: f64,
    pub die_yield: f64,
    pub bonding_yield: f64,
    pub overall_yield: f64,
    pub raw_cost_per_mcooi: f64,
    pub cost_per_mcooi: f64,
    pub mcooi_per_module: f64,
    pub cost_per_module: f64,
    pub gpu_module_cost: f64,
}

pub fn yield_cost(c: &CostConfig, dram: &DramConfig) -> CostReport {
    let y = &c.yields;
    let die = y.chiplet_yield.powi(y.chiplets_per_mcooi as i32);
    let bond = y.bond_yield.powi(y.bonds_per_mcooi as i32);
    let overall = y.interposer_yield * die * bond;
    let raw = c.dram_chiplet_cost * c.dram_chiplets_per_mcooi as f64
        + c.logic_chiplet_cost * c.logic_chiplets_per_mcooi as f64
        + c.interposer_cost
        + c.bond_cost * y.bonds_per_mcooi as f64;
    let per_mcooi = raw / overall + c.packaging_per_mcooi;
    let mcoois = (dram.ranks_per_module * dram.chips_per_rank) as f64 / c.chips_per_mcooi as f64;
    let g = &c.gpu;
    let gpu = (g.die_cost + g.interposer_cost + g.hbm_cost_per_gb * g.hbm_stacks as f64 * g.hbm_gb_per_stack + g.assembly_cost)
        / g.assembly_yield;
    CostReport {
        interposer_yield: y.interposer_yield,
        die_yield: die,
        bonding_yield: bond,
        overall_yield: overall,
        raw_cost_per_mcooi: raw,
        cost_per_mcooi: per_mcooi,
        mcooi_per_module: mcoois,
        cost_per_module: mcoois * per_mcooi + c.dimm_assembly_cost,
        gpu_module_cost: gpu,
    }
}

/// Log-spaced OI grid, `per_decade` points per power of ten.
pub fn oi_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    let n = ((b - a) * per_decade as f64).round() as usize;
    (0..=n).map(|i| 10f64.powf(a + (b - a) * i as f64 / n.max(1) as f64)).collect()
}

/// Writes `oi` plus one attainable-FLOP/s column per roofline (util = 1).
pub fn write_roofline_csv<W: Write>(out: W, roofs: &[PlatformRoofline], ois: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["oi".to_string()];
    header.extend(roofs.iter().map(|r| r.name.clone()));
    w.write_record(&header)?;
    for &oi in ois {
        let mut rec = vec![format!("{oi}")];
        rec.extend(roofs.iter().map(|r| format!("{}", roofline_attainable(r, oi, None))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
