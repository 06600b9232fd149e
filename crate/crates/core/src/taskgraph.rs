//! Transformer task graphs for prefill and single decode steps.
//!
//! Node ids are assigned in a fixed walk (layer, then template position,
//! then batch item, then head) so dumps are stable across runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ModelConfig, WorkloadConfig};
use crate::model_alloc::GemmShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    QkvProj,
    ScoreSoftmax,
    Context,
    OutProj,
    GateProj,
    UpProj,
    DownProj,
    ElementwiseMul,
    Rmsnorm,
    ResidualAdd,
    LmHead,
    Argmax,
    /// Concatenation or reduction of partial results at a parent unit.
    Aggregate,
}

impl KernelKind {
    pub const ALL: [KernelKind; 13] = [
        KernelKind::QkvProj,
        KernelKind::ScoreSoftmax,
        KernelKind::Context,
        KernelKind::OutProj,
        KernelKind::GateProj,
        KernelKind::UpProj,
        KernelKind::DownProj,
        KernelKind::ElementwiseMul,
        KernelKind::Rmsnorm,
        KernelKind::ResidualAdd,
        KernelKind::LmHead,
        KernelKind::Argmax,
        KernelKind::Aggregate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::QkvProj => "qkv_proj",
            KernelKind::ScoreSoftmax => "score_softmax",
            KernelKind::Context => "context",
            KernelKind::OutProj => "out_proj",
            KernelKind::GateProj => "gate_proj",
            KernelKind::UpProj => "up_proj",
            KernelKind::DownProj => "down_proj",
            KernelKind::ElementwiseMul => "elementwise_mul",
            KernelKind::Rmsnorm => "rmsnorm",
            KernelKind::ResidualAdd => "residual_add",
            KernelKind::LmHead => "lm_head",
            KernelKind::Argmax => "argmax",
            KernelKind::Aggregate => "aggregate",
        }
    }

    pub fn is_gemm(self) -> bool {
        matches!(
            self,
            KernelKind::QkvProj
                | KernelKind::ScoreSoftmax
                | KernelKind::Context
                | KernelKind::OutProj
                | KernelKind::GateProj
                | KernelKind::UpProj
                | KernelKind::DownProj
                | KernelKind::LmHead
        )
    }

    /// GEMMs whose right operand is a weight matrix.
    pub fn is_projection(self) -> bool {
        self.is_gemm() && !self.is_attention()
    }

    pub fn is_attention(self) -> bool {
        matches!(self, KernelKind::ScoreSoftmax | KernelKind::Context)
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

/// A reference to a tensor, optionally narrowed to one batch item and head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TensorRef {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

impl TensorRef {
    pub fn whole(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            batch: None,
            head: None,
        }
    }

    pub fn slice(name: impl Into<String>, batch: usize, head: usize) -> Self {
        Self {
            name: name.into(),
            batch: Some(batch),
            head: Some(head),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskNode {
    pub id: usize,
    pub kernel: KernelKind,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gemm: Option<GemmShape>,
    /// Query head (prefill) or KV head (decode) for attention nodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_item: Option<usize>,
    pub input_tensors: Vec<TensorRef>,
    pub output_tensors: Vec<TensorRef>,
    pub flops: u64,
    pub bytes_read: u64,
    /// Elements processed by SIMD-side units: softmax inputs for score nodes,
    /// operand length for elementwise, rmsnorm and argmax nodes.
    pub vector_elems: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub producer: usize,
    pub consumer: usize,
    pub tensor: TensorRef,
    pub bytes: u64,
}

/// A KV-cache write performed by a projection node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KvWrite {
    pub node: usize,
    pub tensor: TensorRef,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskGraph {
    pub phase: Phase,
    /// Tokens already cached before a decode step; zero for prefill.
    pub past: usize,
    pub nodes: Vec<TaskNode>,
    pub edges: Vec<Edge>,
    pub kv_writes: Vec<KvWrite>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TaskGraphError {
    #[error("context overflow: step needs {needed} tokens but max_context is {max_context}")]
    ContextOverflow { needed: usize, max_context: usize },
    #[error("decode step past={past} precedes the prompt length {input_len}")]
    PastBeforePrompt { past: usize, input_len: usize },
}

impl TaskGraph {
    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn gemm_flops(&self) -> u64 {
        self.nodes.iter().filter_map(|n| n.gemm.map(|g| g.flops())).sum()
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.consumer].push(e.producer);
        }
        preds
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            succ[e.producer].push(e.consumer);
        }
        succ
    }

    /// Kahn ordering; `None` if the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indeg[e.consumer] += 1;
        }
        let succ = self.successors();
        let mut ready: std::collections::VecDeque<usize> =
            (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_front() {
            order.push(n);
            for &s in &succ[n] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task graph serializes")
    }
}

/// Memory traffic of a node: all GEMM operands plus the result, or the
/// operand and result streams of a vector kernel.
pub fn kernel_bytes(node: &TaskNode, elem_bytes: u64) -> u64 {
    match node.gemm {
        Some(g) => g.bytes(elem_bytes),
        None => node.bytes_read + output_elems(node) * elem_bytes,
    }
}

fn output_elems(node: &TaskNode) -> u64 {
    match node.kernel {
        // Token indices are negligible next to the logits.
        KernelKind::Argmax => 0,
        _ => node.vector_elems,
    }
}

struct Builder<'a> {
    model: &'a ModelConfig,
    phase: Phase,
    graph: TaskGraph,
}

impl<'a> Builder<'a> {
    fn node(&mut self, kernel: KernelKind, layer: Option<usize>) -> usize {
        let id = self.graph.nodes.len();
        self.graph.nodes.push(TaskNode {
            id,
            kernel,
            phase: self.phase,
            layer,
            gemm: None,
            head: None,
            batch_item: None,
            input_tensors: Vec::new(),
            output_tensors: Vec::new(),
            flops: 0,
            bytes_read: 0,
            vector_elems: 0,
        });
        id
    }

    fn gemm(&mut self, kernel: KernelKind, layer: Option<usize>, shape: GemmShape) -> usize {
        let e = self.model.elem_bytes;
        let id = self.node(kernel, layer);
        let n = &mut self.graph.nodes[id];
        n.gemm = Some(shape);
        n.flops = shape.flops();
        n.bytes_read = e * (shape.m * shape.k + shape.k * shape.n) as u64;
        if kernel == KernelKind::ScoreSoftmax {
            n.vector_elems = (shape.m * shape.n) as u64;
        }
        id
    }

    /// Vector kernel over `elems` output elements reading `inputs` operands each.
    fn vector(&mut self, kernel: KernelKind, layer: Option<usize>, elems: u64, inputs: u64, flops_per_elem: u64) -> usize {
        let e = self.model.elem_bytes;
        let id = self.node(kernel, layer);
        let n = &mut self.graph.nodes[id];
        n.vector_elems = elems;
        n.bytes_read = elems * inputs * e;
        n.flops = elems * flops_per_elem;
        id
    }

    fn edge(&mut self, producer: usize, consumer: usize, tensor: TensorRef, elems: u64) {
        let bytes = elems * self.model.elem_bytes;
        self.graph.nodes[producer].output_tensors.push(tensor.clone());
        self.graph.nodes[consumer].input_tensors.push(tensor.clone());
        self.graph.edges.push(Edge {
            producer,
            consumer,
            tensor,
            bytes,
        });
    }

    fn input(&mut self, node: usize, tensor: TensorRef) {
        self.graph.nodes[node].input_tensors.push(tensor);
    }
}

fn weight(layer: usize, w: &str) -> TensorRef {
    TensorRef::whole(format!("layer{layer}.{w}"))
}

pub fn kcache(layer: usize, batch: usize, kv_head: usize) -> TensorRef {
    TensorRef::slice(format!("layer{layer}.kcache"), batch, kv_head)
}

pub fn vcache(layer: usize, batch: usize, kv_head: usize) -> TensorRef {
    TensorRef::slice(format!("layer{layer}.vcache"), batch, kv_head)
}

/// Builds one graph. `rows` is tokens per batch item in this phase and
/// `past` the cached context length (0 in prefill).
fn build(model: &ModelConfig, workload: &WorkloadConfig, phase: Phase, past: usize) -> TaskGraph {
    let b = workload.batch;
    let rows = match phase {
        Phase::Prefill => workload.input_len,
        Phase::Decode => 1,
    };
    let m = b * rows;
    let (h, hd, kvh, g) = (model.hidden_dim, model.head_dim, model.n_kv_heads, model.group_size());
    let mut bld = Builder {
        model,
        phase,
        graph: TaskGraph {
            phase,
            past,
            nodes: Vec::new(),
            edges: Vec::new(),
            kv_writes: Vec::new(),
        },
    };
    let act = (m * h) as u64;
    let mut prev_out: Option<usize> = None;
    for l in 0..model.n_layers {
        let ly = Some(l);
        let x = TensorRef::whole(format!("layer{l}.x"));
        let norm1 = bld.vector(KernelKind::Rmsnorm, ly, act, 1, 3);
        match prev_out {
            Some(p) => bld.edge(p, norm1, x.clone(), act),
            None => bld.input(norm1, x.clone()),
        }
        let qkv = bld.gemm(KernelKind::QkvProj, ly, GemmShape::new(m, h, model.qkv_cols()));
        bld.input(qkv, weight(l, "Wqkv"));
        bld.edge(norm1, qkv, TensorRef::whole(format!("layer{l}.xn1")), act);
        for bi in 0..b {
            for kv in 0..kvh {
                let kv_bytes = (rows * hd) as u64 * model.elem_bytes;
                for t in [kcache(l, bi, kv), vcache(l, bi, kv)] {
                    bld.graph.nodes[qkv].output_tensors.push(t.clone());
                    bld.graph.kv_writes.push(KvWrite {
                        node: qkv,
                        tensor: t,
                        bytes: kv_bytes,
                    });
                }
            }
        }
        let wo = match phase {
            Phase::Prefill => {
                let mut ctxs = Vec::new();
                for bi in 0..b {
                    for head in 0..model.n_heads {
                        let kv = head / g;
                        let s = bld.gemm(KernelKind::ScoreSoftmax, ly, GemmShape::new(rows, hd, rows));
                        bld.graph.nodes[s].head = Some(head);
                        bld.graph.nodes[s].batch_item = Some(bi);
                        bld.edge(qkv, s, TensorRef::slice(format!("layer{l}.qk"), bi, head), (2 * rows * hd) as u64);
                        let c = bld.gemm(KernelKind::Context, ly, GemmShape::new(rows, rows, hd));
                        bld.graph.nodes[c].head = Some(head);
                        bld.graph.nodes[c].batch_item = Some(bi);
                        bld.edge(s, c, TensorRef::slice(format!("layer{l}.p"), bi, head), (rows * rows) as u64);
                        bld.edge(qkv, c, TensorRef::slice(format!("layer{l}.v"), bi, kv), (rows * hd) as u64);
                        ctxs.push((c, bi, head, (rows * hd) as u64));
                    }
                }
                let wo = bld.gemm(KernelKind::OutProj, ly, GemmShape::new(m, h, h));
                for (c, bi, head, elems) in ctxs {
                    bld.edge(c, wo, TensorRef::slice(format!("layer{l}.ctx"), bi, head), elems);
                }
                wo
            }
            Phase::Decode => {
                let t = past + 1;
                let mut ctxs = Vec::new();
                for bi in 0..b {
                    for kv in 0..kvh {
                        let s = bld.gemm(KernelKind::ScoreSoftmax, ly, GemmShape::new(g, hd, t));
                        bld.graph.nodes[s].head = Some(kv);
                        bld.graph.nodes[s].batch_item = Some(bi);
                        bld.input(s, kcache(l, bi, kv));
                        bld.edge(qkv, s, TensorRef::slice(format!("layer{l}.qk"), bi, kv), ((g + 1) * hd) as u64);
                        let c = bld.gemm(KernelKind::Context, ly, GemmShape::new(g, t, hd));
                        bld.graph.nodes[c].head = Some(kv);
                        bld.graph.nodes[c].batch_item = Some(bi);
                        bld.input(c, vcache(l, bi, kv));
                        bld.edge(s, c, TensorRef::slice(format!("layer{l}.p"), bi, kv), (g * t) as u64);
                        bld.edge(qkv, c, TensorRef::slice(format!("layer{l}.v"), bi, kv), hd as u64);
                        ctxs.push((c, bi, kv, (g * hd) as u64));
                    }
                }
                let wo = bld.gemm(KernelKind::OutProj, ly, GemmShape::new(m, h, h));
                for (c, bi, kv, elems) in ctxs {
                    bld.edge(c, wo, TensorRef::slice(format!("layer{l}.ctx"), bi, kv), elems);
                }
                wo
            }
        };
        bld.input(wo, weight(l, "Wo"));
        let res1 = bld.vector(KernelKind::ResidualAdd, ly, act, 2, 1);
        bld.edge(wo, res1, TensorRef::whole(format!("layer{l}.attn")), act);
        match prev_out {
            Some(p) => bld.edge(p, res1, x, act),
            None => bld.input(res1, x),
        }
        let norm2 = bld.vector(KernelKind::Rmsnorm, ly, act, 1, 3);
        bld.edge(res1, norm2, TensorRef::whole(format!("layer{l}.h")), act);
        let ffn_act = (m * model.ffn_dim) as u64;
        let gate = bld.gemm(KernelKind::GateProj, ly, GemmShape::new(m, h, model.ffn_dim));
        bld.input(gate, weight(l, "Wgate"));
        bld.edge(norm2, gate, TensorRef::whole(format!("layer{l}.xn2")), act);
        let up = bld.gemm(KernelKind::UpProj, ly, GemmShape::new(m, h, model.ffn_dim));
        bld.input(up, weight(l, "Wup"));
        bld.edge(norm2, up, TensorRef::whole(format!("layer{l}.xn2")), act);
        let mul = bld.vector(KernelKind::ElementwiseMul, ly, ffn_act, 2, 1);
        bld.edge(gate, mul, TensorRef::whole(format!("layer{l}.gate")), ffn_act);
        bld.edge(up, mul, TensorRef::whole(format!("layer{l}.up")), ffn_act);
        let down = bld.gemm(KernelKind::DownProj, ly, GemmShape::new(m, model.ffn_dim, h));
        bld.input(down, weight(l, "Wdown"));
        bld.edge(mul, down, TensorRef::whole(format!("layer{l}.ffh")), ffn_act);
        let res2 = bld.vector(KernelKind::ResidualAdd, ly, act, 2, 1);
        bld.edge(down, res2, TensorRef::whole(format!("layer{l}.ffn")), act);
        bld.edge(res1, res2, TensorRef::whole(format!("layer{l}.h")), act);
        prev_out = Some(res2);
    }
    let lm = bld.gemm(KernelKind::LmHead, None, GemmShape::new(m, h, model.vocab_size));
    bld.input(lm, TensorRef::whole("lm_head"));
    let out = TensorRef::whole("final.x");
    match prev_out {
        Some(p) => bld.edge(p, lm, out, act),
        None => bld.input(lm, out),
    }
    let logits = (m * model.vocab_size) as u64;
    let am = bld.vector(KernelKind::Argmax, None, logits, 1, 1);
    bld.edge(lm, am, TensorRef::whole("logits"), logits);
    bld.graph.nodes[am].output_tensors.push(TensorRef::whole("tokens"));
    bld.graph
}

pub fn build_prefill_graph(model: &ModelConfig, workload: &WorkloadConfig) -> TaskGraph {
    build(model, workload, Phase::Prefill, 0)
}

/// Graph for the decode step that attends over `past` cached tokens plus the new one.
pub fn build_decode_step_graph(
    model: &ModelConfig,
    workload: &WorkloadConfig,
    past: usize,
) -> Result<TaskGraph, TaskGraphError> {
    if past < workload.input_len {
        return Err(TaskGraphError::PastBeforePrompt {
            past,
            input_len: workload.input_len,
        });
    }
    if past + 1 > workload.max_context {
        return Err(TaskGraphError::ContextOverflow {
            needed: past + 1,
            max_context: workload.max_context,
        });
    }
    Ok(build(model, workload, Phase::Decode, past))
}

/// Fixed nodes per layer excluding attention pairs.
pub const LAYER_TEMPLATE_NODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeMismatch {
    pub index: usize,
    pub layer: Option<usize>,
    pub expected: String,
    pub found: String,
}

/// One expected kernel invocation from the reference walker.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TraceStep {
    layer: Option<usize>,
    kernel: KernelKind,
    shape: Option<(usize, usize, usize)>,
}

impl std::fmt::Display for TraceStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.kernel)?;
        if let Some((m, k, n)) = self.shape {
            write!(f, "({m},{k},{n})")?;
        }
        Ok(())
    }
}

/// Straight-line walk of a dense decoder stack, written out kernel by kernel.
fn reference_trace(model: &ModelConfig, batch: usize, phase: Phase, past: usize, rows: usize) -> Vec<TraceStep> {
    let tokens = batch * rows;
    let q_width = model.n_heads * model.head_dim;
    let kv_width = model.n_kv_heads * model.head_dim;
    let mut out = Vec::new();
    let mut push = |layer, kernel, shape| out.push(TraceStep { layer, kernel, shape });
    for layer in 0..model.n_layers {
        let l = Some(layer);
        push(l, KernelKind::Rmsnorm, None);
        push(l, KernelKind::QkvProj, Some((tokens, model.hidden_dim, q_width + kv_width + kv_width)));
        let (heads, q_rows, ctx) = match phase {
            Phase::Prefill => (model.n_heads, rows, rows),
            Phase::Decode => (model.n_kv_heads, model.n_heads / model.n_kv_heads, past + 1),
        };
        for _ in 0..batch {
            for _ in 0..heads {
                push(l, KernelKind::ScoreSoftmax, Some((q_rows, model.head_dim, ctx)));
                push(l, KernelKind::Context, Some((q_rows, ctx, model.head_dim)));
            }
        }
        push(l, KernelKind::OutProj, Some((tokens, model.hidden_dim, q_width)));
        push(l, KernelKind::ResidualAdd, None);
        push(l, KernelKind::Rmsnorm, None);
        push(l, KernelKind::GateProj, Some((tokens, model.hidden_dim, model.ffn_dim)));
        push(l, KernelKind::UpProj, Some((tokens, model.hidden_dim, model.ffn_dim)));
        push(l, KernelKind::ElementwiseMul, None);
        push(l, KernelKind::DownProj, Some((tokens, model.ffn_dim, model.hidden_dim)));
        push(l, KernelKind::ResidualAdd, None);
    }
    push(None, KernelKind::LmHead, Some((tokens, model.hidden_dim, model.vocab_size)));
    push(None, KernelKind::Argmax, None);
    out
}

/// Compares a graph's kernel sequence and GEMM shapes with the reference
/// walker. Returns every mismatch found.
pub fn validate_shapes(graph: &TaskGraph, model: &ModelConfig, batch: usize, input_len: usize) -> Result<(), Vec<ShapeMismatch>> {
    let rows = match graph.phase {
        Phase::Prefill => input_len,
        Phase::Decode => 1,
    };
    let reference = reference_trace(model, batch, graph.phase, graph.past, rows);
    let mut mismatches = Vec::new();
    let len = reference.len().max(graph.nodes.len());
    for i in 0..len {
        let found = graph.nodes.get(i).map(|n| TraceStep {
            layer: n.layer,
            kernel: n.kernel,
            shape: n.gemm.map(|g| (g.m, g.k, g.n)),
        });
        let expected = reference.get(i);
        if found.as_ref() != expected {
            mismatches.push(ShapeMismatch {
                index: i,
                layer: expected.and_then(|e| e.layer).or(found.as_ref().and_then(|f| f.layer)),
                expected: expected.map_or("<end>".to_string(), |e| e.to_string()),
                found: found.map_or("<end>".to_string(), |f| f.to_string()),
            });
            // After a dropped or extra node every later index shifts; report
            // the first point of divergence only.
            break;
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(mismatches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{model_preset, workload};

    pub(crate) fn toy() -> ModelConfig {
        ModelConfig {
            name: "toy".into(),
            hidden_dim: 8,
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 1,
            head_dim: 4,
            ffn_dim: 16,
            vocab_size: 32,
            elem_bytes: 2,
        }
    }

    #[test]
    fn prefill_qkv_shape_llama2() {
        let m = model_preset("llama2-7b").unwrap();
        let g = build_prefill_graph(&m, &workload(8, 128, 1));
        let qkv = g.nodes.iter().find(|n| n.kernel == KernelKind::QkvProj).unwrap();
        assert_eq!(qkv.gemm, Some(GemmShape::new(1024, 4096, 12288)));
        assert_eq!(kernel_bytes(qkv, 2), 134_217_728);
    }

    #[test]
    fn prefill_score_nodes_per_batch_item() {
        let m = model_preset("llama2-7b").unwrap();
        let g = build_prefill_graph(&m, &workload(2, 128, 1));
        let scores: Vec<_> = g.nodes.iter().filter(|n| n.kernel == KernelKind::ScoreSoftmax).collect();
        assert_eq!(scores.len(), 32 * 32 * 2);
        assert!(scores.iter().all(|n| n.gemm == Some(GemmShape::new(128, 128, 128))));
    }

    #[test]
    fn one_layer_node_count() {
        let mut m = toy();
        m.n_layers = 1;
        let w = workload(1, 4, 2);
        let g = build_prefill_graph(&m, &w);
        assert_eq!(g.nodes.len(), LAYER_TEMPLATE_NODES + 2 * m.n_heads + 2);
        let d = build_decode_step_graph(&m, &w, 4).unwrap();
        assert_eq!(d.nodes.len(), LAYER_TEMPLATE_NODES + 2 * m.n_kv_heads + 2);
    }

    #[test]
    fn decode_shapes() {
        let m = model_preset("llama2-7b").unwrap();
        let w = workload(8, 128, 64);
        let g = build_decode_step_graph(&m, &w, 128).unwrap();
        let down = g.nodes.iter().find(|n| n.kernel == KernelKind::DownProj).unwrap();
        assert_eq!(down.gemm, Some(GemmShape::new(8, 11008, 4096)));
        let s = g.nodes.iter().find(|n| n.kernel == KernelKind::ScoreSoftmax).unwrap();
        assert_eq!(s.gemm, Some(GemmShape::new(1, 128, 129)));
        assert_eq!(s.gemm.unwrap().oi(2).round(), 1.0);

        let mistral = model_preset("mistral-7b").unwrap();
        let g = build_decode_step_graph(&mistral, &w, 130).unwrap();
        let s = g.nodes.iter().find(|n| n.kernel == KernelKind::ScoreSoftmax).unwrap();
        assert_eq!(s.gemm, Some(GemmShape::new(4, 128, 131)));
    }

    #[test]
    fn decode_context_overflow() {
        let m = toy();
        let w = workload(1, 4, 2);
        assert!(build_decode_step_graph(&m, &w, 5).is_ok());
        assert_eq!(
            build_decode_step_graph(&m, &w, 6),
            Err(TaskGraphError::ContextOverflow { needed: 7, max_context: 6 })
        );
        assert!(matches!(build_decode_step_graph(&m, &w, 3), Err(TaskGraphError::PastBeforePrompt { .. })));
    }

    #[test]
    fn unit_gemm_bytes() {
        assert_eq!(GemmShape::new(1, 1, 1).bytes(2), 6);
    }

    #[test]
    fn graphs_validate_and_are_acyclic() {
        let m = toy();
        let w = workload(1, 4, 3);
        let g = build_prefill_graph(&m, &w);
        assert!(g.topo_order().is_some());
        assert_eq!(validate_shapes(&g, &m, 1, 4), Ok(()));
        let d = build_decode_step_graph(&m, &w, 5).unwrap();
        assert_eq!(validate_shapes(&d, &m, 1, 4), Ok(()));
        let llama = model_preset("llama2-7b").unwrap();
        let g = build_prefill_graph(&llama, &workload(1, 16, 1));
        assert_eq!(validate_shapes(&g, &llama, 1, 16), Ok(()));
    }

    #[test]
    fn dropped_residual_is_reported() {
        let m = toy();
        let mut g = build_prefill_graph(&m, &workload(1, 4, 1));
        let idx = g.nodes.iter().position(|n| n.kernel == KernelKind::ResidualAdd).unwrap();
        g.nodes.remove(idx);
        let err = validate_shapes(&g, &m, 1, 4).unwrap_err();
        assert_eq!(err[0].layer, Some(0));
        assert_eq!(err[0].expected, "residual_add");
    }

    #[test]
    fn ids_are_dense_and_json_is_stable() {
        let m = toy();
        let w = workload(2, 3, 1);
        let a = build_prefill_graph(&m, &w);
        assert!(a.nodes.iter().enumerate().all(|(i, n)| n.id == i));
        assert_eq!(a.to_json(), build_prefill_graph(&m, &w).to_json());
    }

    #[test]
    fn gemm_flops_invariant() {
        let g = build_prefill_graph(&toy(), &workload(2, 3, 1));
        for n in &g.nodes {
            assert_eq!(n.gemm.is_some(), n.kernel.is_gemm());
            if let Some(s) = n.gemm {
                assert_eq!(n.flops, 2 * (s.m * s.k * s.n) as u64);
            }
        }
    }
}
