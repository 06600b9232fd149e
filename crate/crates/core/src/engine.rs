//! Discrete-event timing of mapped graphs.
//!
//! Every logic unit is a single FIFO server: when it frees up it starts the
//! queued task with the smallest `(ready_time, task_id)`. Links are not
//! contended; a message costs the store-and-forward sum over its hops.
//! Prefill and each decode step run as separate phases separated by a
//! barrier at token selection.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Level, ScenarioConfig};
use crate::mapper::{map_tasks, EdgeKind, MapError, MappedGraph, TaskKind, VectorOp, Work};
use crate::memsys::{LinkKind, MemorySystem, MemsysError, UnitId};
use crate::model_alloc::{Allocation, GemmShape};
use crate::taskgraph::{build_decode_step_graph, build_prefill_graph, TaskGraphError};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("deadlock: {count} task(s) never became ready, first: {first:?}")]
    Deadlock { count: usize, first: Vec<usize> },
    #[error(transparent)]
    Route(#[from] MemsysError),
    #[error(transparent)]
    Graph(#[from] TaskGraphError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Hardware constants the timing model needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputeModel {
    pub clock_hz: f64,
    pub systolic_rows: usize,
    pub systolic_cols: usize,
    pub mul_pipe_stages: usize,
    pub add_pipe_stages: usize,
    pub simd_lanes: usize,
    pub adder_tree_fanin: usize,
    pub max_tree_fanin: usize,
    pub exp_lanes: usize,
    /// FP16 elements per bank per cycle.
    pub stream_rate: usize,
    pub banks: usize,
    pub row_bytes: u64,
    pub t_rcd: f64,
    pub activation_overlap: bool,
    pub aggregate_bandwidth: f64,
    pub aggregate_latency: f64,
    pub ingress_latency: f64,
    pub sram_bytes: u64,
}

impl ComputeModel {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let (d, l) = (&cfg.dram, &cfg.logic);
        Self {
            clock_hz: d.clock_hz,
            systolic_rows: l.systolic_rows,
            systolic_cols: l.systolic_cols,
            mul_pipe_stages: l.mul_pipe_stages,
            add_pipe_stages: l.add_pipe_stages,
            simd_lanes: l.simd_mul_lanes,
            adder_tree_fanin: l.adder_tree_fanin,
            max_tree_fanin: l.max_tree_fanin,
            exp_lanes: l.exp_lanes,
            stream_rate: d.stream_rate(),
            banks: d.banks_per_chip,
            row_bytes: d.row_bytes,
            t_rcd: d.timing.t_rcd,
            activation_overlap: cfg.sim.activation_overlap,
            aggregate_bandwidth: l.aggregate_bandwidth,
            aggregate_latency: l.aggregate_latency,
            ingress_latency: cfg.sim.ingress_latency,
            sram_bytes: l.sram_bytes,
        }
    }

    /// Cycles between the last weight entering the array and its result
    /// leaving it.
    pub fn pipe_fill(&self) -> u64 {
        (self.systolic_rows + self.mul_pipe_stages + self.add_pipe_stages) as u64
    }
}

/// Input-stationary array: each `(M tile, K tile)` pass loads the input
/// tile, streams `N` weight columns, then drains the pipeline.
pub fn systolic_gemm_cycles(sub: GemmShape, cm: &ComputeModel) -> u64 {
    if sub.m == 0 || sub.k == 0 || sub.n == 0 {
        return 0;
    }
    let m_tiles = sub.m.div_ceil(cm.systolic_cols) as u64;
    let k_tiles = sub.k.div_ceil(cm.systolic_rows) as u64;
    m_tiles * k_tiles * (cm.systolic_rows as u64 + sub.n as u64 + cm.pipe_fill())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimdKind {
    Gemv,
    Elementwise,
    Exp,
    MaxReduce,
}

pub fn simd_cycles(kind: SimdKind, elems: u64, cm: &ComputeModel) -> u64 {
    if elems == 0 {
        return 0;
    }
    match kind {
        SimdKind::Gemv | SimdKind::Elementwise => elems.div_ceil(cm.stream_rate as u64),
        SimdKind::Exp => elems.div_ceil(cm.exp_lanes as u64),
        SimdKind::MaxReduce => {
            let fanin = cm.max_tree_fanin as u64;
            elems.div_ceil(fanin) + u64::from(fanin.max(1).ilog2())
        }
    }
}

/// Row activations plus streaming at the bank interface rate.
pub fn dram_stream_time(bytes_per_bank: u64, rows_touched: u64, cm: &ComputeModel) -> f64 {
    if bytes_per_bank == 0 {
        return 0.0;
    }
    let activations = if cm.activation_overlap {
        rows_touched.min(1)
    } else {
        rows_touched
    };
    activations as f64 * cm.t_rcd + bytes_per_bank as f64 / (cm.stream_rate as f64 * 2.0 * cm.clock_hz)
}

/// Store-and-forward time of `bytes` along `route`.
pub fn comm_time(bytes: u64, route: &[UnitId], sys: &MemorySystem) -> Result<f64, MemsysError> {
    let mut t = 0.0;
    for link in sys.route_links(route)? {
        t += link.fixed_latency() + bytes as f64 / link.bandwidth;
    }
    Ok(t)
}

/// Time of `bytes` cut into messages of at most `max_message` bytes. Each
/// message is stored and forwarded per hop and the rest of the train follows
/// behind the slowest hop; one message gives exactly [`comm_time`].
pub fn message_train_time(bytes: u64, max_message: u64, route: &[UnitId], sys: &MemorySystem) -> Result<f64, MemsysError> {
    let head = if max_message == 0 { bytes } else { bytes.min(max_message) };
    let links = sys.route_links(route)?;
    let mut t = 0.0;
    let mut slowest = f64::INFINITY;
    for link in &links {
        t += link.fixed_latency() + head as f64 / link.bandwidth;
        slowest = slowest.min(link.bandwidth);
    }
    if bytes > head && !links.is_empty() {
        t += (bytes - head) as f64 / slowest;
    }
    Ok(t)
}

/// Duration of a mapped task on its unit.
pub fn task_duration(work: &Work, kind: TaskKind, cm: &ComputeModel) -> f64 {
    match (kind, work) {
        (TaskKind::Ingress, _) => cm.ingress_latency,
        (_, Work::Gemm { sub, stream_bytes_per_bank, exp_elems }) => {
            let compute = if sub.m == 1 {
                simd_cycles(SimdKind::Gemv, (sub.k * sub.n) as u64, cm)
            } else {
                systolic_gemm_cycles(*sub, cm)
            };
            let rows = stream_bytes_per_bank.div_ceil(cm.row_bytes);
            let stream = dram_stream_time(*stream_bytes_per_bank, rows, cm);
            let exp = simd_cycles(SimdKind::Exp, *exp_elems, cm) as f64 / cm.clock_hz;
            stream.max(compute as f64 / cm.clock_hz) + exp
        }
        (_, Work::Vector { op, elems }) => {
            let k = match op {
                VectorOp::Elementwise => SimdKind::Elementwise,
                VectorOp::MaxReduce => SimdKind::MaxReduce,
            };
            simd_cycles(k, *elems, cm) as f64 / cm.clock_hz
        }
        (_, Work::Aggregate { bytes }) => cm.aggregate_latency + *bytes as f64 / cm.aggregate_bandwidth,
    }
}

/// A task for the generic scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTask {
    pub unit: usize,
    pub duration: f64,
}

/// A dependency from `src` to every task in `dsts`, arriving `delay` after
/// `src` ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEdge {
    pub src: usize,
    pub dsts: Vec<usize>,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub ready: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Edge whose arrival made each task ready.
    pub critical_edge: Vec<Option<usize>>,
    pub makespan: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Breakdown {
    pub compute: f64,
    pub communication: f64,
    pub queueing: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.communication + self.queueing
    }

    /// Shares of the total; all compute when the total is zero.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let t = self.total();
        if t <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        let c = self.communication / t;
        let q = self.queueing / t;
        (1.0 - c - q, c, q)
    }

    fn add_scaled(&mut self, o: &Breakdown, w: f64) {
        self.compute += o.compute * w;
        self.communication += o.communication * w;
        self.queueing += o.queueing * w;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    /// 0 completion, 1 arrival.
    kind: u8,
    id: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Queued {
    ready: f64,
    id: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.ready.total_cmp(&self.ready).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Event-driven FIFO list schedule. Within one timestamp completions are
/// handled first, then arrivals, then idle units dispatch.
pub fn schedule(tasks: &[SimTask], edges: &[SimEdge], start_time: f64) -> Result<Schedule, SimError> {
    let n = tasks.len();
    let n_units = tasks.iter().map(|t| t.unit + 1).max().unwrap_or(0);
    let mut out_edges = vec![Vec::new(); n];
    let mut pending = vec![0usize; n];
    for (i, e) in edges.iter().enumerate() {
        out_edges[e.src].push(i);
        for &d in &e.dsts {
            pending[d] += 1;
        }
    }
    let mut ready = vec![start_time; n];
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut critical_edge: Vec<Option<usize>> = vec![None; n];
    let mut queues: Vec<BinaryHeap<Queued>> = vec![BinaryHeap::new(); n_units];
    let mut busy = vec![false; n_units];
    let mut events = BinaryHeap::new();
    // Arrival events carry the edge index; for edge-less readiness use a
    // sentinel arrival keyed by task.
    let mut arrivals: Vec<(usize, usize)> = Vec::new();
    for (i, &p) in pending.iter().enumerate() {
        if p == 0 {
            queues[tasks[i].unit].push(Queued { ready: start_time, id: i });
        }
    }
    let mut done = 0usize;
    let mut now = start_time;
    loop {
        // Dispatch on every idle unit.
        for u in 0..n_units {
            if !busy[u] {
                if let Some(q) = queues[u].pop() {
                    start[q.id] = now;
                    end[q.id] = now + tasks[q.id].duration;
                    busy[u] = true;
                    events.push(Event {
                        time: end[q.id],
                        kind: 0,
                        id: q.id,
                    });
                }
            }
        }
        let Some(next) = events.peek().copied() else { break };
        now = next.time;
        while let Some(ev) = events.peek().copied() {
            if ev.time != now {
                break;
            }
            events.pop();
            if ev.kind == 0 {
                done += 1;
                busy[tasks[ev.id].unit] = false;
                for &ei in &out_edges[ev.id] {
                    let e = &edges[ei];
                    for &d in &e.dsts {
                        let idx = arrivals.len();
                        arrivals.push((ei, d));
                        events.push(Event {
                            time: end[ev.id] + e.delay,
                            kind: 1,
                            id: idx,
                        });
                    }
                }
            } else {
                let (ei, d) = arrivals[ev.id];
                let t = ev.time;
                if critical_edge[d].is_none() || t > ready[d] {
                    ready[d] = t;
                    critical_edge[d] = Some(ei);
                }
                pending[d] -= 1;
                if pending[d] == 0 {
                    queues[tasks[d].unit].push(Queued { ready: ready[d], id: d });
                }
            }
        }
    }
    if done < n {
        let stuck: Vec<usize> = (0..n).filter(|&i| start[i].is_nan()).collect();
        return Err(SimError::Deadlock {
            count: stuck.len(),
            first: stuck.into_iter().take(8).collect(),
        });
    }
    let makespan = end.iter().copied().fold(start_time, f64::max);
    Ok(Schedule {
        ready,
        start,
        end,
        critical_edge,
        makespan,
    })
}

/// Walks back from the last task to split the makespan into compute,
/// communication and queueing. `is_comm_task` marks tasks whose duration
/// counts as communication.
pub fn critical_breakdown(s: &Schedule, tasks: &[SimTask], edges: &[SimEdge], is_comm_task: impl Fn(usize) -> bool) -> Breakdown {
    let mut b = Breakdown::default();
    let Some(mut cur) = (0..tasks.len()).max_by(|&a, &c| s.end[a].total_cmp(&s.end[c]).then(c.cmp(&a))) else {
        return b;
    };
    loop {
        if is_comm_task(cur) {
            b.communication += tasks[cur].duration;
        } else {
            b.compute += tasks[cur].duration;
        }
        b.queueing += s.start[cur] - s.ready[cur];
        match s.critical_edge[cur] {
            Some(ei) => {
                b.communication += edges[ei].delay;
                cur = edges[ei].src;
            }
            None => break,
        }
    }
    b
}

/// Merged busy intervals per rank, phase-relative.
fn merge(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (s, e) in iv {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Refresh cost of one rank over `[0, span)`: in each tREFI window the rank
/// owes `tRFC * window / tREFI` of refresh, hidden in idle time when possible.
pub fn refresh_overhead(busy: &[(f64, f64)], span: f64, t_rfc: f64, t_refi: f64) -> f64 {
    if span <= 0.0 || busy.is_empty() {
        return 0.0;
    }
    let merged = merge(busy.to_vec());
    let mut overhead = 0.0;
    let mut w0 = 0.0;
    let mut i = 0;
    while w0 < span {
        let w1 = (w0 + t_refi).min(span);
        let len = w1 - w0;
        while i < merged.len() && merged[i].1 <= w0 {
            i += 1;
        }
        let mut busy_t = 0.0;
        let mut j = i;
        while j < merged.len() && merged[j].0 < w1 {
            busy_t += merged[j].1.min(w1) - merged[j].0.max(w0);
            j += 1;
        }
        let need = t_rfc * len / t_refi;
        overhead += (need - (len - busy_t)).max(0.0);
        w0 = w1;
    }
    overhead
}

/// Operation and traffic counts for energy accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AccessStats {
    pub activations: f64,
    pub read_bytes: f64,
    pub mac_ops: f64,
    pub simd_ops: f64,
    pub exp_ops: f64,
    pub max_ops: f64,
    pub aggregate_bytes: f64,
    /// Byte-hops over PCIe/CXL links.
    pub pcie_bytes: f64,
    /// Byte-hops over rank-to-chip links.
    pub chip_link_bytes: f64,
    /// Largest SRAM passes any projection task needs.
    pub max_sram_passes: f64,
}

impl AccessStats {
    fn add_scaled(&mut self, o: &AccessStats, w: f64) {
        self.activations += o.activations * w;
        self.read_bytes += o.read_bytes * w;
        self.mac_ops += o.mac_ops * w;
        self.simd_ops += o.simd_ops * w;
        self.exp_ops += o.exp_ops * w;
        self.max_ops += o.max_ops * w;
        self.aggregate_bytes += o.aggregate_bytes * w;
        self.pcie_bytes += o.pcie_bytes * w;
        self.chip_link_bytes += o.chip_link_bytes * w;
        self.max_sram_passes = self.max_sram_passes.max(o.max_sram_passes);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub phase: String,
    pub task: usize,
    pub kernel: &'static str,
    pub unit: String,
    pub ready: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    /// Makespan plus refresh overhead.
    pub latency: f64,
    pub breakdown: Breakdown,
    pub refresh_overhead: f64,
    pub stats: AccessStats,
    pub tasks: usize,
    /// Summed busy time over all units.
    pub busy_time: f64,
}

impl PhaseResult {
    fn lerp(a: &PhaseResult, b: &PhaseResult, w: f64) -> PhaseResult {
        let mut out = a.clone();
        out.latency = a.latency + (b.latency - a.latency) * w;
        out.refresh_overhead = a.refresh_overhead + (b.refresh_overhead - a.refresh_overhead) * w;
        out.busy_time = a.busy_time + (b.busy_time - a.busy_time) * w;
        out.breakdown = Breakdown::default();
        out.breakdown.add_scaled(&a.breakdown, 1.0 - w);
        out.breakdown.add_scaled(&b.breakdown, w);
        out.stats = AccessStats::default();
        out.stats.add_scaled(&a.stats, 1.0 - w);
        out.stats.add_scaled(&b.stats, w);
        out
    }
}

/// Times one mapped phase starting at zero.
pub fn simulate_phase(
    mapped: &MappedGraph,
    sys: &MemorySystem,
    cm: &ComputeModel,
    cfg: &ScenarioConfig,
    trace: Option<(&str, &mut Vec<TaskRecord>)>,
) -> Result<PhaseResult, SimError> {
    let tasks: Vec<SimTask> = mapped
        .tasks
        .iter()
        .map(|t| SimTask {
            unit: t.unit.0,
            duration: task_duration(&t.work, t.kind, cm),
        })
        .collect();
    let mut stats = AccessStats::default();
    let mut edges = Vec::with_capacity(mapped.edges.len());
    // A broadcast crosses each link of its delivery tree once.
    let mut multicast_hops: HashSet<(usize, usize, usize)> = HashSet::new();
    for e in &mapped.edges {
        let delay = message_train_time(e.bytes, cfg.network.max_message_bytes, &e.route, sys)?;
        for (hop, link) in e.route.windows(2).zip(sys.route_links(&e.route)?) {
            if e.kind == EdgeKind::Broadcast && !multicast_hops.insert((e.src, hop[0].0, hop[1].0)) {
                continue;
            }
            if link.kind == LinkKind::ChipRank {
                stats.chip_link_bytes += e.bytes as f64;
            } else {
                stats.pcie_bytes += e.bytes as f64;
            }
        }
        edges.push(SimEdge {
            src: e.src,
            dsts: e.dsts.clone(),
            delay,
        });
    }
    let s = schedule(&tasks, &edges, 0.0)?;
    let comm_task = |i: usize| mapped.tasks[i].kind != TaskKind::Compute;
    let mut breakdown = critical_breakdown(&s, &tasks, &edges, comm_task);

    let banks = cm.banks as f64;
    let n_ranks = sys.dram.total_ranks();
    let mut rank_busy: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_ranks];
    for (t, st) in mapped.tasks.iter().zip(&tasks) {
        match t.work {
            Work::Gemm {
                sub,
                stream_bytes_per_bank,
                exp_elems,
            } => {
                let rows = stream_bytes_per_bank.div_ceil(cm.row_bytes);
                stats.activations += rows as f64 * banks;
                stats.read_bytes += stream_bytes_per_bank as f64 * banks;
                let ops = (sub.m * sub.k * sub.n) as f64 * banks;
                if sub.m == 1 {
                    stats.simd_ops += ops;
                } else {
                    stats.mac_ops += ops;
                }
                stats.exp_ops += exp_elems as f64;
                let out_bytes = (sub.m * sub.n * 2) as u64;
                stats.max_sram_passes = stats.max_sram_passes.max(out_bytes.div_ceil(cm.sram_bytes) as f64);
                let u = sys.unit(t.unit);
                if u.level == Level::Chip && st.duration > 0.0 {
                    let rank = u.module.expect("chip module") * sys.dram.ranks_per_module + u.rank.expect("chip rank");
                    rank_busy[rank].push((s.start[t.id], s.end[t.id]));
                }
            }
            Work::Vector { op, elems } => match op {
                VectorOp::Elementwise => stats.simd_ops += elems as f64,
                VectorOp::MaxReduce => stats.max_ops += elems as f64,
            },
            Work::Aggregate { bytes } => stats.aggregate_bytes += bytes as f64,
        }
    }
    let refresh = rank_busy
        .iter()
        .map(|b| refresh_overhead(b, s.makespan, cfg.dram.timing.t_rfc, cfg.dram.timing.t_refi))
        .fold(0.0, f64::max);
    breakdown.compute += refresh;
    if let Some((phase, records)) = trace {
        for t in &mapped.tasks {
            records.push(TaskRecord {
                phase: phase.to_string(),
                task: t.id,
                kernel: t.kernel.name(),
                unit: sys.unit(t.unit).label(),
                ready: s.ready[t.id],
                start: s.start[t.id],
                end: s.end[t.id],
            });
        }
    }
    Ok(PhaseResult {
        latency: s.makespan + refresh,
        breakdown,
        refresh_overhead: refresh,
        stats,
        tasks: tasks.len(),
        busy_time: tasks.iter().map(|t| t.duration).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownReport {
    pub compute: f64,
    pub communication: f64,
    pub queueing: f64,
    pub compute_fraction: f64,
    pub communication_fraction: f64,
    pub queueing_fraction: f64,
}

impl From<Breakdown> for BreakdownReport {
    fn from(b: Breakdown) -> Self {
        let (c, m, q) = b.fractions();
        Self {
            compute: b.compute,
            communication: b.communication,
            queueing: b.queueing,
            compute_fraction: c,
            communication_fraction: m,
            queueing_fraction: q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeSummary {
    pub steps: usize,
    pub simulated_steps: usize,
    pub stride: usize,
    pub first_step_latency: f64,
    pub last_step_latency: f64,
    pub mean_step_latency: f64,
    /// Steps that were simulated rather than interpolated.
    pub samples: Vec<StepSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSample {
    pub step: usize,
    pub latency: f64,
    pub read_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub scenario: String,
    pub ttft: f64,
    pub e2e_latency: f64,
    pub decode_throughput: f64,
    pub breakdown: BreakdownReport,
    pub refresh_overhead: f64,
    pub prefill: PhaseResult,
    pub decode: DecodeSummary,
    pub stats: AccessStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TaskRecord>>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.trace.iter().flatten() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decode steps to simulate for `steps` total at `stride` (0 = about 32
/// samples). The last step is always included.
pub fn decode_samples(steps: usize, stride: usize) -> (usize, Vec<usize>) {
    if steps == 0 {
        return (1, Vec::new());
    }
    let stride = if stride == 0 { steps.div_ceil(32).max(1) } else { stride };
    let mut v: Vec<usize> = (0..steps).step_by(stride).collect();
    if *v.last().expect("non-empty") != steps - 1 {
        v.push(steps - 1);
    }
    (stride, v)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Keep per-task records for prefill and the first decode step.
    pub trace: bool,
}

/// Simulates prefill and every decode step of the scenario's workload.
pub fn simulate(cfg: &ScenarioConfig, sys: &MemorySystem, alloc: &Allocation, opts: SimOptions) -> Result<SimReport, SimError> {
    let cm = ComputeModel::from_config(cfg);
    let w = &cfg.workload;
    let mut trace = opts.trace.then(Vec::new);

    let g = build_prefill_graph(&cfg.model, w);
    let mapped = map_tasks(&g, alloc, sys, &cfg.logic, &cfg.model)?;
    drop(g);
    let prefill = simulate_phase(&mapped, sys, &cm, cfg, trace.as_mut().map(|t| ("prefill", t)))?;
    drop(mapped);

    let (stride, samples) = decode_samples(w.output_len, cfg.sim.decode_stride);
    let mut sampled: Vec<(usize, PhaseResult)> = Vec::with_capacity(samples.len());
    for (i, &step) in samples.iter().enumerate() {
        let g = build_decode_step_graph(&cfg.model, w, w.input_len + step)?;
        let mapped = map_tasks(&g, alloc, sys, &cfg.logic, &cfg.model)?;
        let tr = if i == 0 { trace.as_mut().map(|t| ("decode0", t)) } else { None };
        sampled.push((step, simulate_phase(&mapped, sys, &cm, cfg, tr)?));
    }
    let mut decode_total = 0.0;
    let mut breakdown = prefill.breakdown;
    let mut stats = prefill.stats;
    let mut refresh = prefill.refresh_overhead;
    let mut queue: VecDeque<&(usize, PhaseResult)> = sampled.iter().collect();
    let mut prev: Option<&(usize, PhaseResult)> = None;
    let mut first = 0.0;
    let mut last = 0.0;
    for step in 0..w.output_len {
        while queue.front().is_some_and(|s| s.0 < step) {
            prev = queue.pop_front();
        }
        let r = match (prev, queue.front()) {
            (_, Some(s)) if s.0 == step => s.1.clone(),
            (Some(a), Some(b)) => PhaseResult::lerp(&a.1, &b.1, (step - a.0) as f64 / (b.0 - a.0) as f64),
            _ => unreachable!("samples cover the first and last step"),
        };
        if step == 0 {
            first = r.latency;
        }
        last = r.latency;
        decode_total += r.latency;
        breakdown.add_scaled(&r.breakdown, 1.0);
        stats.add_scaled(&r.stats, 1.0);
        refresh += r.refresh_overhead;
    }
    let ttft = prefill.latency;
    let e2e = ttft + decode_total;
    Ok(SimReport {
        scenario: cfg.key(),
        ttft,
        e2e_latency: e2e,
        decode_throughput: if decode_total > 0.0 { w.output_len as f64 / decode_total } else { 0.0 },
        breakdown: breakdown.into(),
        refresh_overhead: refresh,
        prefill,
        decode: DecodeSummary {
            steps: w.output_len,
            simulated_steps: samples.len(),
            stride,
            first_step_latency: first,
            last_step_latency: last,
            mean_step_latency: if w.output_len > 0 { decode_total / w.output_len as f64 } else { 0.0 },
            samples: sampled
                .iter()
                .map(|(step, r)| StepSample {
                    step: *step,
                    latency: r.latency,
                    read_bytes: r.stats.read_bytes,
                })
                .collect(),
        },
        stats,
        trace,
    })
}
