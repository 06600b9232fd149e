//! Maps task-graph nodes onto logic units.
//!
//! Projections split into one sub-task per chip of the weight's rank set.
//! Their input arrives through a gather (chip -> rank concat, then rank ->
//! lowest common parent) followed by one broadcast per target rank.
//! Attention runs on the chip holding the KV head and receives its Q/K/V
//! head slices point to point from the projection chips. Vector kernels run
//! on the chips that produced their primary operand.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Level, LogicConfig, ModelConfig};
use crate::memsys::{MemorySystem, UnitId};
use crate::model_alloc::{partition_for, AllocError, Allocation, GemmShape, Placement};
use crate::taskgraph::{KernelKind, Phase, TaskGraph, TaskNode};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("kernel `{kernel}` has no supporting unit at or above {unit}")]
    Unmappable { kernel: &'static str, unit: String },
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Compute,
    Aggregate,
    /// Entry point of host data into the memory system.
    Ingress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorOp {
    Elementwise,
    MaxReduce,
}

/// Work description the engine turns into a duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Work {
    /// Runs on every bank of a chip in lockstep; shapes are per bank.
    Gemm {
        sub: GemmShape,
        stream_bytes_per_bank: u64,
        exp_elems: u64,
    },
    Vector { op: VectorOp, elems: u64 },
    Aggregate { bytes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappedTask {
    pub id: usize,
    /// Task-graph node this task implements, if any.
    pub source: Option<usize>,
    pub kernel: KernelKind,
    pub unit: UnitId,
    pub kind: TaskKind,
    pub work: Work,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Broadcast,
    Gather,
    PointToPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommEdge {
    pub src: usize,
    /// Tasks that depend on this message. Broadcasts reach several chips.
    pub dsts: Vec<usize>,
    pub bytes: u64,
    pub route: Vec<UnitId>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct MappedGraph {
    pub phase: Phase,
    pub tasks: Vec<MappedTask>,
    pub edges: Vec<CommEdge>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MovementVolume {
    pub broadcast: u64,
    pub gather: u64,
    /// Bytes on edges whose endpoints sit in different ranks of one module.
    pub inter_rank: u64,
    /// Bytes on edges whose endpoints sit in different modules.
    pub inter_module: u64,
    /// Weight and KV bytes moved; zero by construction.
    pub stationary: u64,
}

impl MappedGraph {
    pub fn movement_volume(&self, sys: &MemorySystem) -> MovementVolume {
        let mut v = MovementVolume::default();
        for e in &self.edges {
            match e.kind {
                EdgeKind::Broadcast => v.broadcast += e.bytes,
                EdgeKind::Gather => v.gather += e.bytes,
                EdgeKind::PointToPoint => {}
            }
            let (a, b) = (sys.unit(e.route[0]), sys.unit(*e.route.last().expect("routes are non-empty")));
            if a.module != b.module || a.module.is_none() {
                if e.route.len() > 1 {
                    v.inter_module += e.bytes;
                }
            } else if a.rank.is_some() && b.rank.is_some() && a.rank != b.rank {
                v.inter_rank += e.bytes;
            }
        }
        v
    }

    pub fn count(&self, kind: TaskKind) -> usize {
        self.tasks.iter().filter(|t| t.kind == kind).count()
    }

    pub fn write_csv<W: Write>(&self, out: W, sys: &MemorySystem) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "source", "kernel", "unit", "sub_shape", "category"])?;
        for t in &self.tasks {
            let shape = match t.work {
                Work::Gemm { sub, .. } => format!("{}x{}x{}", sub.m, sub.k, sub.n),
                _ => String::new(),
            };
            let category = match t.kind {
                TaskKind::Compute => "compute",
                TaskKind::Aggregate => "aggregate",
                TaskKind::Ingress => "ingress",
            };
            w.write_record([
                t.id.to_string(),
                t.source.map_or(String::new(), |s| s.to_string()),
                t.kernel.name().to_string(),
                sys.unit(t.unit).label(),
                shape,
                category.to_string(),
            ])?;
        }
        for e in &self.edges {
            if e.kind == EdgeKind::Broadcast {
                w.write_record([
                    String::new(),
                    e.src.to_string(),
                    "broadcast".to_string(),
                    sys.unit(*e.route.last().expect("non-empty")).label(),
                    String::new(),
                    "broadcast".to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Where a node's output lives after mapping.
#[derive(Debug, Clone)]
enum Dist {
    /// Column slices, one task per chip, in rank-set chip order.
    Split(Vec<(usize, UnitId)>),
    Single(usize, UnitId),
}

/// A fully assembled value at one unit, possibly still held as several
/// co-located pieces.
#[derive(Debug, Clone)]
struct Gathered {
    unit: UnitId,
    srcs: Vec<(usize, u64)>,
}

struct Mapper<'a> {
    graph: &'a TaskGraph,
    alloc: &'a Allocation,
    sys: &'a MemorySystem,
    logic: &'a LogicConfig,
    elem_bytes: u64,
    tasks: Vec<MappedTask>,
    edges: Vec<CommEdge>,
    dist: Vec<Option<Dist>>,
    gathered: HashMap<usize, Gathered>,
    ingress: Option<(usize, UnitId)>,
    model: &'a ModelConfig,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
}

fn is_dram_resident(name: &str) -> bool {
    name == "lm_head" || name.contains(".W") || name.ends_with("cache")
}

fn weight_name(node: &TaskNode) -> Option<&str> {
    node.input_tensors
        .iter()
        .map(|t| t.name.as_str())
        .find(|n| *n == "lm_head" || n.contains(".W"))
}

impl<'a> Mapper<'a> {
    fn task(&mut self, source: Option<usize>, kernel: KernelKind, unit: UnitId, kind: TaskKind, work: Work) -> Result<usize, MapError> {
        let level = self.sys.unit(unit).level;
        if kind != TaskKind::Ingress && !self.logic.supports(level, kernel) {
            return Err(MapError::Unmappable {
                kernel: kernel.name(),
                unit: self.sys.unit(unit).label(),
            });
        }
        let id = self.tasks.len();
        self.tasks.push(MappedTask {
            id,
            source,
            kernel,
            unit,
            kind,
            work,
        });
        Ok(id)
    }

    fn edge(&mut self, src: usize, dsts: Vec<usize>, bytes: u64, from: UnitId, to: UnitId, kind: EdgeKind) {
        let route = self.sys.route(from, to);
        self.edges.push(CommEdge {
            src,
            dsts,
            bytes,
            route,
            kind,
        });
    }

    /// Deepest ancestor of `unit` (inclusive) supporting `kernel`.
    fn hosting(&self, unit: UnitId, kernel: KernelKind) -> Result<UnitId, MapError> {
        let mut cur = Some(unit);
        while let Some(u) = cur {
            if self.logic.supports(self.sys.unit(u).level, kernel) {
                return Ok(u);
            }
            cur = self.sys.parent(u);
        }
        Err(MapError::Unmappable {
            kernel: kernel.name(),
            unit: self.sys.unit(unit).label(),
        })
    }

    fn ingress(&mut self, bytes: u64) -> Result<Gathered, MapError> {
        let root = self.sys.root();
        let id = match self.ingress {
            Some((id, _)) => id,
            None => {
                let id = self.task(None, KernelKind::Aggregate, root, TaskKind::Ingress, Work::Aggregate { bytes: 0 })?;
                self.ingress = Some((id, root));
                id
            }
        };
        Ok(Gathered {
            unit: root,
            srcs: vec![(id, bytes)],
        })
    }

    fn set_chips(&self, p: &Placement) -> Vec<UnitId> {
        p.rank_set.iter().flat_map(|&rc| self.sys.chips_of(rc)).collect()
    }

    /// Concatenates `pieces` at the rank units and then at their lowest
    /// common parent. Pieces already sharing a unit need no aggregate.
    fn gather(&mut self, pieces: &[(usize, UnitId, u64)], kernel: KernelKind) -> Result<Gathered, MapError> {
        let mut groups: Vec<(UnitId, Vec<(usize, UnitId, u64)>)> = Vec::new();
        for &(t, u, b) in pieces {
            let key = if self.sys.unit(u).level == Level::Chip && pieces.iter().any(|p| p.1 != u) {
                self.sys.parent(u).expect("chips have a rank")
            } else {
                u
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push((t, u, b)),
                None => groups.push((key, vec![(t, u, b)])),
            }
        }
        let mut level1: Vec<Gathered> = Vec::new();
        for (_, group) in groups {
            let units: Vec<UnitId> = group.iter().map(|g| g.1).collect();
            if units.iter().all(|u| *u == units[0]) {
                level1.push(Gathered {
                    unit: units[0],
                    srcs: group.iter().map(|g| (g.0, g.2)).collect(),
                });
                continue;
            }
            level1.push(self.aggregate(&group, kernel)?);
        }
        if level1.len() == 1 {
            return Ok(level1.pop().expect("one group"));
        }
        let flat: Vec<(usize, UnitId, u64)> = level1
            .iter()
            .map(|g| {
                let bytes = g.srcs.iter().map(|s| s.1).sum();
                (g.srcs[0].0, g.unit, bytes)
            })
            .collect();
        let host = self.hosting(self.sys.lowest_common_parent(&flat.iter().map(|f| f.1).collect::<Vec<_>>()), kernel)?;
        let bytes: u64 = flat.iter().map(|f| f.2).sum();
        let agg = self.task(None, kernel, host, TaskKind::Aggregate, Work::Aggregate { bytes })?;
        for g in level1 {
            for (t, b) in g.srcs {
                self.edge(t, vec![agg], b, g.unit, host, EdgeKind::Gather);
            }
        }
        Ok(Gathered {
            unit: host,
            srcs: vec![(agg, bytes)],
        })
    }

    fn aggregate(&mut self, group: &[(usize, UnitId, u64)], kernel: KernelKind) -> Result<Gathered, MapError> {
        let units: Vec<UnitId> = group.iter().map(|g| g.1).collect();
        let host = self.hosting(self.sys.lowest_common_parent(&units), kernel)?;
        let bytes: u64 = group.iter().map(|g| g.2).sum();
        let agg = self.task(None, kernel, host, TaskKind::Aggregate, Work::Aggregate { bytes })?;
        for &(t, u, b) in group {
            self.edge(t, vec![agg], b, u, host, EdgeKind::Gather);
        }
        Ok(Gathered {
            unit: host,
            srcs: vec![(agg, bytes)],
        })
    }

    /// Pieces of a producer's output carrying `bytes` in total.
    fn pieces_of(&self, producer: usize, bytes: u64) -> Vec<(usize, UnitId, u64)> {
        match self.dist[producer].as_ref().expect("producers map before consumers") {
            Dist::Single(t, u) => vec![(*t, *u, bytes)],
            Dist::Split(parts) => {
                let share = bytes.div_ceil(parts.len() as u64);
                parts.iter().map(|&(t, u)| (t, u, share)).collect()
            }
        }
    }

    fn gathered_output(&mut self, producer: usize, bytes: u64) -> Result<Gathered, MapError> {
        if let Some(g) = self.gathered.get(&producer) {
            return Ok(g.clone());
        }
        let pieces = self.pieces_of(producer, bytes);
        let g = self.gather(&pieces, KernelKind::Aggregate)?;
        self.gathered.insert(producer, g.clone());
        Ok(g)
    }

    /// One broadcast per rank covered by `targets`, each delivered to all of
    /// that rank's target chips at once.
    fn broadcast(&mut self, from: &Gathered, targets: &[(usize, UnitId)]) {
        let mut by_rank: Vec<(UnitId, Vec<(usize, UnitId)>)> = Vec::new();
        for &(t, u) in targets {
            let rank = self.sys.parent(u).expect("targets are chips");
            match by_rank.iter_mut().find(|(r, _)| *r == rank) {
                Some((_, v)) => v.push((t, u)),
                None => by_rank.push((rank, vec![(t, u)])),
            }
        }
        for (rank, chips) in by_rank {
            let dsts: Vec<usize> = chips.iter().map(|c| c.0).collect();
            let mut route = self.sys.route(from.unit, rank);
            if let Some(&(_, other)) = chips.iter().find(|c| c.1 != from.unit) {
                route.push(other);
            } else {
                route = vec![from.unit];
            }
            for &(src, bytes) in &from.srcs {
                self.edges.push(CommEdge {
                    src,
                    dsts: dsts.clone(),
                    bytes,
                    route: route.clone(),
                    kind: EdgeKind::Broadcast,
                });
            }
        }
    }

    fn projection(&mut self, node: &TaskNode) -> Result<Dist, MapError> {
        let wname = weight_name(node).expect("projections read a weight");
        let placement = self.alloc.placement(wname)?.clone();
        let gemm = node.gemm.expect("projection has a GEMM shape");
        let bank = partition_for(gemm, &placement);
        let m_passes = if gemm.m == 1 { 1 } else { gemm.m.div_ceil(8) as u64 };
        let stream = m_passes * (bank.sub.k * bank.sub.n) as u64 * self.elem_bytes;
        let mut parts = Vec::new();
        for chip in self.set_chips(&placement) {
            let t = self.task(
                Some(node.id),
                node.kernel,
                chip,
                TaskKind::Compute,
                Work::Gemm {
                    sub: bank.sub,
                    stream_bytes_per_bank: stream,
                    exp_elems: 0,
                },
            )?;
            parts.push((t, chip));
        }
        let in_edges: Vec<_> = self.in_edges[node.id].iter().map(|&i| &self.graph.edges[i]).collect();
        let source = match in_edges.as_slice() {
            [] => self.ingress(node.bytes_read - (gemm.k * gemm.n) as u64 * self.elem_bytes)?,
            [e] => self.gathered_output(e.producer, e.bytes)?,
            many => {
                let pieces: Vec<_> = many.iter().flat_map(|e| self.pieces_of(e.producer, e.bytes)).collect();
                self.gather(&pieces, KernelKind::Aggregate)?
            }
        };
        self.broadcast(&source, &parts);
        Ok(Dist::Split(parts))
    }

    fn attention(&mut self, node: &TaskNode) -> Result<Dist, MapError> {
        let model_g = node.gemm.expect("attention has a GEMM shape");
        let b = node.batch_item.expect("attention has a batch item");
        let head = node.head.expect("attention has a head");
        let kv = self.alloc.kv.clone();
        let (kv_head, group, hd) = match node.phase {
            Phase::Prefill => {
                let g = self.group_size();
                (head / g, 1, model_g_head_dim(node))
            }
            Phase::Decode => (head, model_g.m, model_g_head_dim(node)),
        };
        let rc = kv.rank_of(b);
        let chip = self.sys.chip(rc, kv.chip_of(kv_head));
        let banks = self.sys.dram.banks_per_chip;
        let e = self.elem_bytes;
        let (m, tokens) = match node.kernel {
            KernelKind::ScoreSoftmax => (model_g.m, model_g.n),
            _ => (model_g.m, model_g.k),
        };
        let per_bank = tokens.div_ceil(banks);
        let sub = match node.kernel {
            KernelKind::ScoreSoftmax => GemmShape::new(m, hd, per_bank),
            _ => GemmShape::new(m, per_bank, hd),
        };
        let m_passes = if m == 1 { 1 } else { m.div_ceil(8) as u64 };
        let exp_elems = if node.kernel == KernelKind::ScoreSoftmax { (m * tokens) as u64 } else { 0 };
        let t = self.task(
            Some(node.id),
            node.kernel,
            chip,
            TaskKind::Compute,
            Work::Gemm {
                sub,
                stream_bytes_per_bank: m_passes * (per_bank * hd) as u64 * e,
                exp_elems,
            },
        )?;
        // Head slices of the fused QKV output come straight from the
        // projection chips that computed them.
        let in_edges: Vec<_> = self.in_edges[node.id].iter().map(|&i| &self.graph.edges[i]).cloned().collect();
        for edge in in_edges {
            let producer = &self.graph.nodes[edge.producer];
            if producer.kernel != KernelKind::QkvProj {
                let pieces = self.pieces_of(edge.producer, edge.bytes);
                for (pt, pu, pb) in pieces {
                    self.edge(pt, vec![t], pb, pu, chip, EdgeKind::PointToPoint);
                }
                continue;
            }
            let rows = match node.phase {
                Phase::Prefill => model_g.m,
                Phase::Decode => 1,
            };
            let (hidden, kvd) = (self.q_width(), self.kv_width());
            let ranges: Vec<(usize, usize)> = if edge.tensor.name.ends_with(".qk") {
                let q0 = match node.phase {
                    Phase::Prefill => head * hd,
                    Phase::Decode => kv_head * group * hd,
                };
                vec![(q0, q0 + group * hd), (hidden + kv_head * hd, hidden + (kv_head + 1) * hd)]
            } else {
                let v0 = hidden + kvd + kv_head * hd;
                vec![(v0, v0 + hd)]
            };
            let parts = match self.dist[edge.producer].clone().expect("qkv mapped") {
                Dist::Split(p) => p,
                Dist::Single(t, u) => vec![(t, u)],
            };
            let qkv_place = self.alloc.placement(&format!("layer{}.Wqkv", node.layer.expect("layered")))?;
            let nc = qkv_place.cols_per_chip;
            for (i, (pt, pu)) in parts.iter().enumerate() {
                let (c0, c1) = (i * nc, (i + 1) * nc);
                let cols: usize = ranges.iter().map(|&(a, b)| b.min(c1).saturating_sub(a.max(c0))).sum();
                if cols > 0 {
                    self.edge(*pt, vec![t], (cols * rows) as u64 * e, *pu, chip, EdgeKind::PointToPoint);
                }
            }
        }
        Ok(Dist::Single(t, chip))
    }

    fn group_size(&self) -> usize {
        self.model.group_size()
    }

    fn q_width(&self) -> usize {
        self.model.n_heads * self.model.head_dim
    }

    fn kv_width(&self) -> usize {
        self.model.kv_dim()
    }

    /// First projection reachable from `node`, used to place source vector nodes.
    fn downstream_chips(&self, node: usize) -> Result<Vec<UnitId>, MapError> {
        let mut frontier = vec![node];
        while let Some(n) = frontier.pop() {
            for e in self.out_edges[n].iter().map(|&i| &self.graph.edges[i]) {
                let c = &self.graph.nodes[e.consumer];
                if c.kernel.is_projection() {
                    let p = self.alloc.placement(weight_name(c).expect("projection weight"))?;
                    return Ok(self.set_chips(p));
                }
                frontier.push(c.id);
            }
        }
        Ok(vec![self.sys.chip(self.alloc.wt_ranks[0], 0)])
    }

    fn vector(&mut self, node: &TaskNode) -> Result<Dist, MapError> {
        let in_edges: Vec<_> = self.in_edges[node.id].iter().map(|&i| &self.graph.edges[i]).cloned().collect();
        let host_inputs = node
            .input_tensors
            .iter()
            .filter(|t| !is_dram_resident(&t.name))
            .filter(|t| !in_edges.iter().any(|e| e.tensor == **t))
            .count();
        let op = if node.kernel == KernelKind::Argmax {
            VectorOp::MaxReduce
        } else {
            VectorOp::Elementwise
        };
        let primary_split = in_edges.first().and_then(|e| match self.dist[e.producer].as_ref() {
            Some(Dist::Split(p)) => Some(p.iter().map(|x| x.1).collect::<Vec<_>>()),
            _ => None,
        });
        let chips_support = self.logic.supports(Level::Chip, node.kernel);
        let chips = match (primary_split, chips_support) {
            (Some(c), true) => c,
            (None, true) => match in_edges.first().map(|e| self.dist[e.producer].clone()) {
                Some(Some(Dist::Single(_, u))) if self.sys.unit(u).level == Level::Chip => vec![u],
                _ => self.downstream_chips(node.id)?,
            },
            (_, false) => {
                // No chip-level support: gather everything and run it higher up.
                let mut pieces = Vec::new();
                for e in &in_edges {
                    pieces.extend(self.pieces_of(e.producer, e.bytes));
                }
                let g = if pieces.is_empty() {
                    self.ingress(node.bytes_read)?
                } else {
                    self.gather(&pieces, KernelKind::Aggregate)?
                };
                let host = self.hosting(g.unit, node.kernel)?;
                let t = self.task(Some(node.id), node.kernel, host, TaskKind::Compute, Work::Vector { op, elems: node.vector_elems })?;
                for (src, bytes) in g.srcs {
                    self.edge(src, vec![t], bytes, g.unit, host, EdgeKind::PointToPoint);
                }
                return Ok(Dist::Single(t, host));
            }
        };
        let n = chips.len();
        let mut parts = Vec::with_capacity(n);
        for &chip in &chips {
            let t = self.task(
                Some(node.id),
                node.kernel,
                chip,
                TaskKind::Compute,
                Work::Vector {
                    op,
                    elems: node.vector_elems.div_ceil(n as u64),
                },
            )?;
            parts.push((t, chip));
        }
        for e in &in_edges {
            let same = match self.dist[e.producer].as_ref() {
                Some(Dist::Split(p)) => p.len() == n && p.iter().zip(&chips).all(|(a, b)| a.1 == *b),
                Some(Dist::Single(_, u)) => n == 1 && *u == chips[0],
                None => false,
            };
            if same {
                let src: Vec<usize> = match self.dist[e.producer].as_ref().expect("mapped") {
                    Dist::Split(p) => p.iter().map(|x| x.0).collect(),
                    Dist::Single(t, _) => vec![*t],
                };
                let share = e.bytes.div_ceil(n as u64);
                for (s, (d, u)) in src.into_iter().zip(parts.clone()) {
                    self.edge(s, vec![d], share, u, u, EdgeKind::PointToPoint);
                }
            } else {
                let g = self.gathered_output(e.producer, e.bytes)?;
                self.broadcast(&g, &parts);
            }
        }
        if host_inputs > 0 {
            let ing = self.ingress(node.bytes_read / (in_edges.len() + host_inputs) as u64)?;
            self.broadcast(&ing, &parts);
        }
        Ok(Dist::Split(parts))
    }

    /// Argmax runs on the logits' chips; their per-row winners are reduced
    /// up the tree.
    fn argmax(&mut self, node: &TaskNode) -> Result<Dist, MapError> {
        let Dist::Split(parts) = self.vector(node)? else {
            unreachable!("vector placement of argmax is split or returned early")
        };
        let rows = self
            .in_edges[node.id]
            .first()
            .map(|&i| &self.graph.edges[i])
            .and_then(|e| self.graph.nodes[e.producer].gemm)
            .map_or(1, |g| g.m) as u64;
        let per_row = self.elem_bytes + 4;
        let pieces: Vec<_> = parts.iter().map(|&(t, u)| (t, u, rows * per_row)).collect();
        let g = self.gather(&pieces, KernelKind::Argmax)?;
        Ok(Dist::Single(g.srcs[0].0, g.unit))
    }
}

fn model_g_head_dim(node: &TaskNode) -> usize {
    let g = node.gemm.expect("attention has a GEMM shape");
    match node.kernel {
        KernelKind::ScoreSoftmax => g.k,
        _ => g.n,
    }
}

/// Maps every node of `graph`. Nodes are visited in id order, which is a
/// topological order for graphs from `taskgraph`.
pub fn map_tasks(
    graph: &TaskGraph,
    alloc: &Allocation,
    sys: &MemorySystem,
    logic: &LogicConfig,
    model: &ModelConfig,
) -> Result<MappedGraph, MapError> {
    let mut in_edges = vec![Vec::new(); graph.nodes.len()];
    let mut out_edges = vec![Vec::new(); graph.nodes.len()];
    for (i, e) in graph.edges.iter().enumerate() {
        in_edges[e.consumer].push(i);
        out_edges[e.producer].push(i);
    }
    let mut m = Mapper {
        in_edges,
        out_edges,
        graph,
        alloc,
        sys,
        logic,
        model,
        elem_bytes: model.elem_bytes,
        tasks: Vec::new(),
        edges: Vec::new(),
        dist: vec![None; graph.nodes.len()],
        gathered: HashMap::new(),
        ingress: None,
    };
    let order = graph.topo_order().expect("task graphs are acyclic");
    for id in order {
        let node = &graph.nodes[id];
        let d = if node.kernel.is_projection() {
            m.projection(node)?
        } else if node.kernel.is_attention() {
            m.attention(node)?
        } else if node.kernel == KernelKind::Argmax {
            m.argmax(node)?
        } else {
            m.vector(node)?
        };
        m.dist[id] = Some(d);
    }
    Ok(MappedGraph {
        phase: graph.phase,
        tasks: m.tasks,
        edges: m.edges,
    })
}
