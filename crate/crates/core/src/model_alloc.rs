//! Tensor catalog and placement of weights and KV cache onto ranks, chips,
//! banks and rows.
//!
//! Per module, even rank indices hold weights (`wt_ranks`) and odd indices
//! hold KV cache (`kv_ranks`). A single-rank module uses its rank for both.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AllocConfig, ModelConfig, WorkloadConfig};
use crate::memsys::{Location, MemorySystem, RankCoord};

/// Rows of a weight matrix a bank takes before the next bank's turn.
pub const ROWS_PER_BLOCK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("tensor `{tensor}` does not fit: needs {needed_rows} rows per bank, {available_rows} left")]
    CapacityExceeded {
        tensor: String,
        needed_rows: u64,
        available_rows: u64,
    },
    #[error("KV cache for batch {batch} exceeds kv_ranks capacity; maximum supportable batch is {max_batch}")]
    KvCapacityExceeded { batch: usize, max_batch: usize },
    #[error("tensor `{tensor}`: {dim}={value} is not divisible by {divisor} and padding is disabled")]
    Indivisible {
        tensor: String,
        dim: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl GemmShape {
    pub fn new(m: usize, k: usize, n: usize) -> Self {
        assert!(m >= 1 && k >= 1 && n >= 1, "GEMM dimensions must be positive: ({m},{k},{n})");
        Self { m, k, n }
    }

    pub fn flops(&self) -> u64 {
        2 * self.m as u64 * self.k as u64 * self.n as u64
    }

    /// Bytes of both operands and the result.
    pub fn bytes(&self, elem_bytes: u64) -> u64 {
        let (m, k, n) = (self.m as u64, self.k as u64, self.n as u64);
        elem_bytes * (m * k + k * n + m * n)
    }

    /// Operational intensity in FLOP/byte.
    pub fn oi(&self, elem_bytes: u64) -> f64 {
        self.flops() as f64 / self.bytes(elem_bytes) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Kv,
    /// Lives in SRAM or on links; never placed in DRAM.
    Activation,
}

/// Column-wise split of a weight across chips and 8-row round-robin split
/// across banks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub rank_set: Vec<RankCoord>,
    pub chips: usize,
    pub banks: usize,
    pub cols_per_chip: usize,
    /// K after padding to a multiple of banks x block rows.
    pub k_padded: usize,
    pub n_padded: usize,
    pub rows_per_block: usize,
    /// First DRAM row used in every bank of the set.
    pub row_offset: u64,
    /// DRAM rows used in every bank of the set.
    pub dram_rows: u64,
}

impl Placement {
    pub fn k_per_bank(&self) -> usize {
        self.k_padded / self.banks
    }

    /// Rank and chip-in-rank of a global chip index within the set.
    pub fn chip_at(&self, index: usize, chips_per_rank: usize) -> (RankCoord, usize) {
        (self.rank_set[index / chips_per_rank], index % chips_per_rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub elem_bytes: u64,
    pub layer: Option<usize>,
    pub placement: Option<Placement>,
    pub address_offset: Option<u64>,
}

impl Tensor {
    pub fn size(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product::<u64>() * self.elem_bytes
    }

    /// `(K, N)` for a weight matrix.
    pub fn matrix_dims(&self) -> (usize, usize) {
        (self.shape[0], self.shape[1])
    }
}

fn weight_tensor(name: String, layer: Option<usize>, k: usize, n: usize, e: u64) -> Tensor {
    Tensor {
        name,
        role: Role::Weight,
        shape: vec![k, n],
        elem_bytes: e,
        layer,
        placement: None,
        address_offset: None,
    }
}

/// Weights per layer, the LM head, and per-layer K and V caches.
pub fn build_tensor_catalog(model: &ModelConfig, workload: &WorkloadConfig) -> Vec<Tensor> {
    let (h, e) = (model.hidden_dim, model.elem_bytes);
    let mut out = Vec::new();
    for l in 0..model.n_layers {
        let ly = Some(l);
        out.push(weight_tensor(format!("layer{l}.Wqkv"), ly, h, model.qkv_cols(), e));
        out.push(weight_tensor(format!("layer{l}.Wo"), ly, model.n_heads * model.head_dim, h, e));
        out.push(weight_tensor(format!("layer{l}.Wgate"), ly, h, model.ffn_dim, e));
        out.push(weight_tensor(format!("layer{l}.Wup"), ly, h, model.ffn_dim, e));
        out.push(weight_tensor(format!("layer{l}.Wdown"), ly, model.ffn_dim, h, e));
    }
    out.push(weight_tensor("lm_head".into(), None, h, model.vocab_size, e));
    for l in 0..model.n_layers {
        for kind in ["kcache", "vcache"] {
            out.push(Tensor {
                name: format!("layer{l}.{kind}"),
                role: Role::Kv,
                shape: vec![workload.batch, workload.max_context, model.n_kv_heads, model.head_dim],
                elem_bytes: e,
                layer: Some(l),
                placement: None,
                address_offset: None,
            });
        }
    }
    out
}

pub fn wt_ranks(sys: &MemorySystem) -> Vec<RankCoord> {
    let single = sys.dram.ranks_per_module == 1;
    sys.rank_coords().filter(|rc| single || rc.rank % 2 == 0).collect()
}

pub fn kv_ranks(sys: &MemorySystem) -> Vec<RankCoord> {
    let single = sys.dram.ranks_per_module == 1;
    sys.rank_coords().filter(|rc| single || rc.rank % 2 == 1).collect()
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Per-bank slice of a weight GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BankGemm {
    pub sub: GemmShape,
    /// 8x8 input tiles each bank feeds its array.
    pub input_tiles: u64,
    /// 8-row weight blocks each bank streams.
    pub weight_blocks: u64,
}

/// Splits `shape` over `banks` (rows of K) and `chips` (columns of N),
/// padding K to a multiple of `banks * 8` and N to a multiple of `chips`.
pub fn partition_gemm(shape: GemmShape, banks: usize, chips: usize, pad: bool) -> Result<BankGemm, AllocError> {
    let k_div = banks * ROWS_PER_BLOCK;
    if !pad {
        if shape.k % k_div != 0 {
            return Err(AllocError::Indivisible {
                tensor: String::new(),
                dim: "K",
                value: shape.k,
                divisor: k_div,
            });
        }
        if shape.n % chips != 0 {
            return Err(AllocError::Indivisible {
                tensor: String::new(),
                dim: "N",
                value: shape.n,
                divisor: chips,
            });
        }
    }
    let kb = round_up(shape.k, k_div) / banks;
    let nc = round_up(shape.n, chips) / chips;
    let blocks = (kb / ROWS_PER_BLOCK) as u64;
    Ok(BankGemm {
        sub: GemmShape::new(shape.m, kb, nc),
        input_tiles: shape.m.div_ceil(ROWS_PER_BLOCK) as u64 * blocks,
        weight_blocks: blocks,
    })
}

pub fn partition_for(shape: GemmShape, placement: &Placement) -> BankGemm {
    partition_gemm(shape, placement.banks, placement.chips, true).expect("padding never fails")
}

/// One contiguous piece of a weight matrix held by one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightBlock {
    /// Chip index within the rank set.
    pub chip: usize,
    pub bank: usize,
    /// First row of K and number of real (unpadded) rows.
    pub row_start: usize,
    pub rows: usize,
    pub col_start: usize,
    pub cols: usize,
    /// Block slot within the bank, counting from the placement's first row.
    pub slot: usize,
}

/// Enumerates the unpadded blocks of a `K x N` weight under `placement`.
pub fn weight_blocks(k: usize, n: usize, placement: &Placement) -> impl Iterator<Item = WeightBlock> + '_ {
    let nc = placement.cols_per_chip;
    let blocks = k.div_ceil(ROWS_PER_BLOCK);
    (0..placement.chips).flat_map(move |chip| {
        let col_start = chip * nc;
        let cols = n.saturating_sub(col_start).min(nc);
        (0..blocks).filter(move |_| cols > 0).map(move |b| WeightBlock {
            chip,
            bank: b % placement.banks,
            row_start: b * ROWS_PER_BLOCK,
            rows: (k - b * ROWS_PER_BLOCK).min(ROWS_PER_BLOCK),
            col_start,
            cols,
            slot: b / placement.banks,
        })
    })
}

/// Where each request's KV cache lives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KvLayout {
    pub kv_ranks: Vec<RankCoord>,
    pub chips_per_rank: usize,
    pub n_layers: usize,
    pub n_kv_heads: usize,
    /// Rows per bank one (layer, request, head) slot occupies.
    pub rows_per_slot: u64,
    /// First row available to KV in each bank.
    pub row_base: u64,
    pub bytes_per_slot: u64,
}

impl KvLayout {
    pub fn rank_of(&self, batch_item: usize) -> RankCoord {
        self.kv_ranks[batch_item % self.kv_ranks.len()]
    }

    pub fn chip_of(&self, kv_head: usize) -> usize {
        kv_head % self.chips_per_rank
    }

    fn heads_per_chip(&self) -> usize {
        self.n_kv_heads.div_ceil(self.chips_per_rank)
    }

    /// First row of the slot for `(layer, batch_item, kv_head)`.
    pub fn row_of(&self, layer: usize, batch_item: usize, kv_head: usize) -> u64 {
        let local_req = batch_item / self.kv_ranks.len();
        let slot = (local_req * self.n_layers + layer) * self.heads_per_chip() + kv_head / self.chips_per_rank;
        self.row_base + slot as u64 * self.rows_per_slot
    }

    /// Requests whose KV fits given `rows_per_bank`.
    pub fn max_batch(&self, rows_per_bank: u64) -> usize {
        let per_req = (self.n_layers * self.heads_per_chip()) as u64 * self.rows_per_slot;
        let fit = rows_per_bank.saturating_sub(self.row_base) / per_req.max(1);
        fit as usize * self.kv_ranks.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub wt_ranks: Vec<RankCoord>,
    pub kv_ranks: Vec<RankCoord>,
    pub rank_sets: Vec<Vec<RankCoord>>,
    pub tensors: Vec<Tensor>,
    pub kv: KvLayout,
    pub banks_per_chip: usize,
    pub chips_per_rank: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Allocation {
    pub fn tensor(&self, name: &str) -> Result<&Tensor, AllocError> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| AllocError::UnknownTensor(name.to_string()))
    }

    pub fn placement(&self, name: &str) -> Result<&Placement, AllocError> {
        self.tensor(name)?
            .placement
            .as_ref()
            .ok_or_else(|| AllocError::UnknownTensor(name.to_string()))
    }

    pub fn weight_bytes(&self) -> u64 {
        self.tensors.iter().filter(|t| t.role == Role::Weight).map(|t| t.size()).sum()
    }

    /// Weight bytes placed on each rank set, padding included.
    pub fn set_loads(&self, elem_bytes: u64) -> Vec<u64> {
        let mut loads = vec![0u64; self.rank_sets.len()];
        for t in &self.tensors {
            if let Some(p) = &t.placement {
                let set = self.rank_sets.iter().position(|s| *s == p.rank_set).expect("known set");
                loads[set] += (p.k_padded * p.n_padded) as u64 * elem_bytes;
            }
        }
        loads
    }

    /// Writes one line per (tensor, rank, chip, bank): the rows it occupies.
    pub fn write_placement_csv<W: Write>(&self, out: W, batch: usize) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tensor", "rank", "chip", "bank", "start_row", "rows"])?;
        for t in &self.tensors {
            let Some(p) = &t.placement else { continue };
            for (ci, _) in (0..p.chips).enumerate() {
                let (rc, chip) = p.chip_at(ci, self.chips_per_rank);
                for bank in 0..self.banks_per_chip {
                    w.write_record([
                        t.name.clone(),
                        format!("m{}r{}", rc.module, rc.rank),
                        chip.to_string(),
                        bank.to_string(),
                        p.row_offset.to_string(),
                        p.dram_rows.to_string(),
                    ])?;
                }
            }
        }
        for l in 0..self.kv.n_layers {
            for b in 0..batch {
                for h in 0..self.kv.n_kv_heads {
                    let rc = self.kv.rank_of(b);
                    for bank in 0..self.banks_per_chip {
                        w.write_record([
                            format!("layer{l}.kv[b={b},h={h}]"),
                            format!("m{}r{}", rc.module, rc.rank),
                            self.kv.chip_of(h).to_string(),
                            bank.to_string(),
                            self.kv.row_of(l, b, h).to_string(),
                            self.kv.rows_per_slot.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits wt_ranks into sets of `set_ranks` (0 means one set of all).
pub fn rank_sets(wt: &[RankCoord], set_ranks: usize) -> Vec<Vec<RankCoord>> {
    if set_ranks == 0 || set_ranks >= wt.len() {
        return vec![wt.to_vec()];
    }
    wt.chunks(set_ranks).map(|c| c.to_vec()).collect()
}

/// Places every weight and sizes the KV layout.
pub fn allocate(
    model: &ModelConfig,
    workload: &WorkloadConfig,
    alloc_cfg: &AllocConfig,
    sys: &MemorySystem,
) -> Result<Allocation, AllocError> {
    let mut catalog = build_tensor_catalog(model, workload);
    let wt = wt_ranks(sys);
    let kv = kv_ranks(sys);
    let sets = rank_sets(&wt, alloc_cfg.wt_set_ranks);
    let weight_end = allocate_weights(&mut catalog, &sets, alloc_cfg, sys)?;
    let shared = sys.dram.ranks_per_module == 1;
    let layout = allocate_kv(workload, model, sys, &kv, if shared { weight_end } else { 0 })?;
    let index = catalog.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
    Ok(Allocation {
        wt_ranks: wt,
        kv_ranks: kv,
        rank_sets: sets,
        tensors: catalog,
        kv: layout,
        banks_per_chip: sys.dram.banks_per_chip,
        chips_per_rank: sys.dram.chips_per_rank,
        index,
    })
}

/// Places weight tensors. Each layer's weights go, as a group, to the rank
/// set with the fewest bytes so far; the LM head is placed last. Returns the
/// highest row used in any bank.
pub fn allocate_weights(
    catalog: &mut [Tensor],
    sets: &[Vec<RankCoord>],
    cfg: &AllocConfig,
    sys: &MemorySystem,
) -> Result<u64, AllocError> {
    let d = &sys.dram;
    let banks = d.banks_per_chip;
    let rows_per_bank = d.rows_per_bank();
    let mut cursor = vec![0u64; sets.len()];
    let mut load = vec![0u64; sets.len()];
    let mut current: Option<(Option<usize>, usize)> = None;
    for t in catalog.iter_mut().filter(|t| t.role == Role::Weight) {
        let set = match current {
            Some((layer, s)) if layer == t.layer && t.layer.is_some() => s,
            _ => {
                let s = (0..sets.len()).min_by_key(|&i| (load[i], i)).expect("at least one rank set");
                current = Some((t.layer, s));
                s
            }
        };
        let chips = sets[set].len() * d.chips_per_rank;
        let (k, n) = t.matrix_dims();
        let part = partition_gemm(GemmShape::new(1, k, n), banks, chips, cfg.pad_indivisible).map_err(|e| match e {
            AllocError::Indivisible { dim, value, divisor, .. } => AllocError::Indivisible {
                tensor: t.name.clone(),
                dim,
                value,
                divisor,
            },
            other => other,
        })?;
        let bank_bytes = (part.sub.k * part.sub.n) as u64 * t.elem_bytes;
        let dram_rows = bank_bytes.div_ceil(d.row_bytes);
        let available = rows_per_bank - cursor[set];
        if dram_rows > available {
            return Err(AllocError::CapacityExceeded {
                tensor: t.name.clone(),
                needed_rows: dram_rows,
                available_rows: available,
            });
        }
        let first = sets[set][0];
        let loc = Location {
            row: cursor[set],
            channel: first.module as u64,
            rank: first.rank as u64,
            ..Location::default()
        };
        t.address_offset = Some(sys.address_map.encode(&loc).expect("row within range"));
        t.placement = Some(Placement {
            rank_set: sets[set].clone(),
            chips,
            banks,
            cols_per_chip: part.sub.n,
            k_padded: part.sub.k * banks,
            n_padded: part.sub.n * chips,
            rows_per_block: ROWS_PER_BLOCK,
            row_offset: cursor[set],
            dram_rows,
        });
        cursor[set] += dram_rows;
        load[set] += bank_bytes * (chips * banks) as u64;
    }
    Ok(cursor.into_iter().max().unwrap_or(0))
}

/// Sizes the KV layout: request `b` on kv_rank `b mod R`, KV head `h` on chip
/// `h mod chips`, tokens striped across banks, K and V interleaved per token.
pub fn allocate_kv(
    workload: &WorkloadConfig,
    model: &ModelConfig,
    sys: &MemorySystem,
    kv: &[RankCoord],
    row_base: u64,
) -> Result<KvLayout, AllocError> {
    let d = &sys.dram;
    let per_bank_tokens = workload.max_context.div_ceil(d.banks_per_chip) as u64;
    let bank_bytes = per_bank_tokens * 2 * (model.head_dim as u64) * model.elem_bytes;
    let layout = KvLayout {
        kv_ranks: kv.to_vec(),
        chips_per_rank: d.chips_per_rank,
        n_layers: model.n_layers,
        n_kv_heads: model.n_kv_heads,
        rows_per_slot: bank_bytes.div_ceil(d.row_bytes),
        row_base,
        bytes_per_slot: 2 * (workload.max_context * model.head_dim) as u64 * model.elem_bytes,
    };
    let max_batch = layout.max_batch(d.rows_per_bank());
    if workload.batch > max_batch {
        return Err(AllocError::KvCapacityExceeded {
            batch: workload.batch,
            max_batch,
        });
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{model_preset, preset_scenario, workload};
    use crate::memsys::build_memory_system;

    fn toy() -> ModelConfig {
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
    fn catalog_shapes() {
        let m = model_preset("llama2-7b").unwrap();
        let cat = build_tensor_catalog(&m, &workload(1, 8, 8));
        let get = |n: &str| cat.iter().find(|t| t.name == n).unwrap();
        assert_eq!(get("layer0.Wqkv").shape, vec![4096, 12288]);
        assert_eq!(get("lm_head").shape, vec![4096, 32000]);
        let toy_cat = build_tensor_catalog(&toy(), &workload(1, 4, 4));
        assert_eq!(toy_cat[0].shape, vec![8, 16]);
        for t in &cat {
            assert_eq!(t.size(), t.shape.iter().product::<usize>() as u64 * 2);
        }
    }

    #[test]
    fn partition_examples() {
        let p = partition_gemm(GemmShape::new(8, 4096, 4096), 32, 16, false).unwrap();
        assert_eq!(p.sub, GemmShape::new(8, 128, 256));
        assert_eq!(p.weight_blocks, 16);
        let p = partition_gemm(GemmShape::new(8, 32, 16), 1, 1, false).unwrap();
        assert_eq!(p.sub, GemmShape::new(8, 32, 16));
        let p = partition_gemm(GemmShape::new(3, 40, 24), 4, 2, true).unwrap();
        assert_eq!(p.sub, GemmShape::new(3, 16, 12));
        assert!(matches!(
            partition_gemm(GemmShape::new(3, 40, 24), 4, 2, false),
            Err(AllocError::Indivisible { dim: "K", .. })
        ));
    }

    #[test]
    fn single_set_wo_columns() {
        let mut cfg = preset_scenario("D1", "llama2-7b", workload(1, 16, 16)).unwrap();
        cfg.alloc.wt_set_ranks = 1;
        let sys = build_memory_system(&cfg).unwrap();
        let a = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys).unwrap();
        let p = a.placement("layer0.Wo").unwrap();
        assert_eq!(p.cols_per_chip, 256);
        assert_eq!(p.k_per_bank(), 128);
        assert_eq!(p.k_per_bank() / ROWS_PER_BLOCK, 16);
        assert_eq!(a.rank_sets.len(), 8);
    }

    #[test]
    fn even_odd_rank_roles() {
        let cfg = preset_scenario("D1", "llama2-7b", workload(1, 16, 16)).unwrap();
        let sys = build_memory_system(&cfg).unwrap();
        let wt = wt_ranks(&sys);
        assert_eq!(wt.len(), 8);
        assert!(wt.iter().all(|r| r.rank % 2 == 0));
        assert!(kv_ranks(&sys).iter().all(|r| r.rank % 2 == 1));
    }

    #[test]
    fn kv_round_robin() {
        let cfg = preset_scenario("D1", "llama2-7b", workload(8, 16, 16)).unwrap();
        let sys = build_memory_system(&cfg).unwrap();
        let kv = &kv_ranks(&sys)[..2];
        let layout = allocate_kv(&cfg.workload, &cfg.model, &sys, kv, 0).unwrap();
        let on0: Vec<usize> = (0..8).filter(|&b| layout.rank_of(b) == kv[0]).collect();
        assert_eq!(on0, vec![0, 2, 4, 6]);
        assert_eq!(layout.chip_of(17), 1);
    }

    #[test]
    fn kv_capacity_error_names_max_batch() {
        let mut cfg = preset_scenario("D1", "llama2-7b", workload(1, 4000, 96)).unwrap();
        let sys = build_memory_system(&cfg).unwrap();
        let kv = kv_ranks(&sys);
        let max = allocate_kv(&cfg.workload, &cfg.model, &sys, &kv, 0).unwrap().max_batch(sys.dram.rows_per_bank());
        cfg.workload.batch = max + 1;
        let err = allocate_kv(&cfg.workload, &cfg.model, &sys, &kv, 0).unwrap_err();
        assert_eq!(err, AllocError::KvCapacityExceeded { batch: max + 1, max_batch: max });
        assert!(err.to_string().contains(&max.to_string()));
    }

    #[test]
    fn weight_capacity_error_names_tensor() {
        let mut cfg = preset_scenario("D1", "llama3-70b", workload(1, 16, 16)).unwrap();
        cfg.dram.modules = 1;
        cfg.dram.capacity_total /= 4;
        let sys = build_memory_system(&cfg).unwrap();
        let err = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys).unwrap_err();
        assert!(matches!(err, AllocError::CapacityExceeded { ref tensor, .. } if tensor.starts_with("layer")));
    }

    #[test]
    fn offsets_decode_into_rank_set() {
        let mut cfg = preset_scenario("D2", "llama2-7b", workload(1, 16, 16)).unwrap();
        cfg.alloc.wt_set_ranks = 2;
        let sys = build_memory_system(&cfg).unwrap();
        let a = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys).unwrap();
        for t in a.tensors.iter().filter(|t| t.role == Role::Weight) {
            let loc = sys.address_map.decode(t.address_offset.unwrap()).unwrap();
            let p = t.placement.as_ref().unwrap();
            assert!(p.rank_set.iter().any(|r| r.module as u64 == loc.channel && r.rank as u64 == loc.rank));
            assert_eq!(loc.row, p.row_offset);
        }
    }

    #[test]
    fn one_chip_one_bank_is_monotone() {
        let mut cfg = preset_scenario("D1", "llama2-7b", workload(1, 4, 4)).unwrap();
        cfg.model = toy();
        cfg.dram.modules = 1;
        cfg.dram.ranks_per_module = 1;
        cfg.dram.chips_per_rank = 1;
        cfg.dram.banks_per_chip = 1;
        cfg.dram.bank_groups = 1;
        cfg.dram.capacity_total = 1 << 20;
        let sys = build_memory_system(&cfg).unwrap();
        let a = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys).unwrap();
        let offsets: Vec<u64> = a.tensors.iter().filter_map(|t| t.address_offset).collect();
        assert!(offsets.windows(2).all(|w| w[0] < w[1]));
        let p = a.placement("layer0.Wqkv").unwrap();
        assert_eq!((p.chips, p.banks, p.cols_per_chip), (1, 1, 16));
        assert!(a.kv.row_base >= p.row_offset + p.dram_rows);
    }

    #[test]
    fn placement_csv_has_header_and_rows() {
        let mut cfg = preset_scenario("D1", "llama2-7b", workload(1, 4, 4)).unwrap();
        cfg.model = toy();
        let sys = build_memory_system(&cfg).unwrap();
        let a = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys).unwrap();
        let mut buf = Vec::new();
        a.write_placement_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tensor,rank,chip,bank,start_row,rows\n"));
        assert!(text.contains("layer1.Wdown,m0r0,"));
    }
}
