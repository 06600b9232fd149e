//! Memory-system construction: the logic-unit tree, its links and the
//! physical address map.
//!
//! Units are stored in one arena in breadth-first order: the root (CXL switch),
//! then one channel unit per module (CXL controller), then ranks, then chips.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::config::{DramConfig, Level, LinkParams, ScenarioConfig};
use crate::taskgraph::KernelKind;

#[derive(Debug, Error, PartialEq)]
pub enum MemsysError {
    #[error("address {addr:#x} is outside the {capacity}-byte address space")]
    AddressOutOfRange { addr: u64, capacity: u64 },
    #[error("coordinate {field}={value} exceeds its field range")]
    CoordinateOutOfRange { field: &'static str, value: u64 },
    #[error("kernel `{0}` has no hosting level")]
    UnsupportedKernel(&'static str),
    #[error("no link between units {0} and {1}")]
    MissingLink(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct UnitId(pub usize);

#[derive(Debug, Clone, Serialize)]
pub struct LogicUnit {
    pub id: UnitId,
    pub level: Level,
    pub module: Option<usize>,
    /// Rank index within the module.
    pub rank: Option<usize>,
    /// Chip index within the rank.
    pub chip: Option<usize>,
    pub parent: Option<UnitId>,
    pub children: Vec<UnitId>,
    pub kernel_support: BTreeSet<KernelKind>,
}

impl LogicUnit {
    pub fn label(&self) -> String {
        match self.level {
            Level::Root => "root".to_string(),
            Level::Channel => format!("ch{}", self.module.unwrap_or(0)),
            Level::Rank => format!("m{}r{}", self.module.unwrap_or(0), self.rank.unwrap_or(0)),
            Level::Chip => format!(
                "m{}r{}c{}",
                self.module.unwrap_or(0),
                self.rank.unwrap_or(0),
                self.chip.unwrap_or(0)
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    SwitchCtrl,
    CtrlCtrl,
    RankCtrl,
    RankRank,
    ChipRank,
}

impl LinkKind {
    /// Off-module PCIe/CXL links versus the on-module chip bus.
    pub fn is_pcie(self) -> bool {
        !matches!(self, LinkKind::ChipRank)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkSpec {
    pub endpoint_a: UnitId,
    pub endpoint_b: UnitId,
    pub kind: LinkKind,
    pub bandwidth: f64,
    pub link_latency: f64,
    pub src_port_latency: f64,
    pub dst_port_latency: f64,
}

impl LinkSpec {
    fn new(a: UnitId, b: UnitId, kind: LinkKind, p: &LinkParams, bandwidth: f64) -> Self {
        Self {
            endpoint_a: a,
            endpoint_b: b,
            kind,
            bandwidth,
            link_latency: p.link_latency,
            src_port_latency: p.src_port_latency,
            dst_port_latency: p.dst_port_latency,
        }
    }

    /// Fixed per-hop latency (ports plus wire).
    pub fn fixed_latency(&self) -> f64 {
        self.src_port_latency + self.link_latency + self.dst_port_latency
    }
}

/// Decoded physical coordinates of a byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Location {
    pub row: u64,
    pub channel: u64,
    pub rank: u64,
    pub column: u64,
    pub bank_group: u64,
    pub bank: u64,
    pub chip: u64,
    /// Byte within one bank-interface beat.
    pub byte: u64,
}

impl Location {
    /// Bank index within the chip.
    pub fn bank_in_chip(&self, banks_per_group: u64) -> u64 {
        self.bank_group * banks_per_group + self.bank
    }
}

/// Row/channel/rank/column/bank-group/bank interleaving, most significant
/// field first. Chip and byte-in-beat fields sit below the bank, so one
/// all-bank, all-chip access covers a contiguous block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddressMap {
    pub row_bits: u32,
    pub channel_bits: u32,
    pub rank_bits: u32,
    pub column_bits: u32,
    pub bank_group_bits: u32,
    pub bank_bits: u32,
    pub chip_bits: u32,
    pub byte_bits: u32,
}

fn log2(n: u64) -> u32 {
    debug_assert!(n.is_power_of_two());
    n.trailing_zeros()
}

impl AddressMap {
    pub fn from_dram(d: &DramConfig) -> Self {
        let beat = d.bank_interface_bytes();
        Self {
            row_bits: log2(d.rows_per_bank()),
            channel_bits: log2(d.modules as u64),
            rank_bits: log2(d.ranks_per_module as u64),
            column_bits: log2(d.row_bytes / beat),
            bank_group_bits: log2(d.bank_groups as u64),
            bank_bits: log2((d.banks_per_chip / d.bank_groups) as u64),
            chip_bits: log2(d.chips_per_rank as u64),
            byte_bits: log2(beat),
        }
    }

    /// Field widths from least to most significant.
    fn fields_lsb_first(&self) -> [(&'static str, u32); 8] {
        [
            ("byte", self.byte_bits),
            ("chip", self.chip_bits),
            ("bank", self.bank_bits),
            ("bank_group", self.bank_group_bits),
            ("column", self.column_bits),
            ("rank", self.rank_bits),
            ("channel", self.channel_bits),
            ("row", self.row_bits),
        ]
    }

    pub fn total_bits(&self) -> u32 {
        self.fields_lsb_first().iter().map(|(_, b)| b).sum()
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.total_bits()
    }

    pub fn decode(&self, addr: u64) -> Result<Location, MemsysError> {
        if addr >= self.capacity() {
            return Err(MemsysError::AddressOutOfRange {
                addr,
                capacity: self.capacity(),
            });
        }
        let mut rest = addr;
        let mut take = |bits: u32| {
            let v = rest & ((1u64 << bits) - 1);
            rest >>= bits;
            v
        };
        let byte = take(self.byte_bits);
        let chip = take(self.chip_bits);
        let bank = take(self.bank_bits);
        let bank_group = take(self.bank_group_bits);
        let column = take(self.column_bits);
        let rank = take(self.rank_bits);
        let channel = take(self.channel_bits);
        let row = take(self.row_bits);
        Ok(Location {
            row,
            channel,
            rank,
            column,
            bank_group,
            bank,
            chip,
            byte,
        })
    }

    pub fn encode(&self, loc: &Location) -> Result<u64, MemsysError> {
        let values = [
            loc.byte,
            loc.chip,
            loc.bank,
            loc.bank_group,
            loc.column,
            loc.rank,
            loc.channel,
            loc.row,
        ];
        let mut addr = 0u64;
        let mut shift = 0u32;
        for ((field, bits), value) in self.fields_lsb_first().into_iter().zip(values) {
            if value >> bits != 0 {
                return Err(MemsysError::CoordinateOutOfRange { field, value });
            }
            addr |= value << shift;
            shift += bits;
        }
        Ok(addr)
    }
}

pub fn decode_address(addr: u64, map: &AddressMap) -> Result<Location, MemsysError> {
    map.decode(addr)
}

/// Bytes moved by one all-bank, all-chip access in a rank.
pub fn access_granularity(cfg: &ScenarioConfig) -> u64 {
    let d = &cfg.dram;
    (d.chips_per_rank * d.banks_per_chip) as u64 * d.bank_interface_bytes()
}

/// Identifies a rank globally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RankCoord {
    pub module: usize,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub dram: DramConfig,
    pub units: Vec<LogicUnit>,
    pub links: Vec<LinkSpec>,
    pub address_map: AddressMap,
    link_index: HashMap<(UnitId, UnitId), usize>,
}

impl MemorySystem {
    pub fn root(&self) -> UnitId {
        UnitId(0)
    }

    pub fn channel(&self, module: usize) -> UnitId {
        UnitId(1 + module)
    }

    pub fn rank(&self, rc: RankCoord) -> UnitId {
        let d = &self.dram;
        UnitId(1 + d.modules + rc.module * d.ranks_per_module + rc.rank)
    }

    pub fn chip(&self, rc: RankCoord, chip: usize) -> UnitId {
        let d = &self.dram;
        let rank_index = rc.module * d.ranks_per_module + rc.rank;
        UnitId(1 + d.modules + d.total_ranks() + rank_index * d.chips_per_rank + chip)
    }

    pub fn unit(&self, id: UnitId) -> &LogicUnit {
        &self.units[id.0]
    }

    pub fn parent(&self, id: UnitId) -> Option<UnitId> {
        self.units[id.0].parent
    }

    pub fn rank_coords(&self) -> impl Iterator<Item = RankCoord> + '_ {
        let d = &self.dram;
        (0..d.modules).flat_map(move |module| (0..d.ranks_per_module).map(move |rank| RankCoord { module, rank }))
    }

    /// Chip units of a rank in chip order.
    pub fn chips_of(&self, rc: RankCoord) -> impl Iterator<Item = UnitId> + '_ {
        (0..self.dram.chips_per_rank).map(move |c| self.chip(rc, c))
    }

    pub fn rank_of_chip(&self, chip: UnitId) -> RankCoord {
        let u = self.unit(chip);
        RankCoord {
            module: u.module.expect("chip has a module"),
            rank: u.rank.expect("chip has a rank"),
        }
    }

    pub fn chip_units(&self) -> impl Iterator<Item = &LogicUnit> {
        self.units.iter().filter(|u| u.level == Level::Chip)
    }

    pub fn count(&self, level: Level) -> usize {
        self.units.iter().filter(|u| u.level == level).count()
    }

    pub fn link(&self, a: UnitId, b: UnitId) -> Option<&LinkSpec> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.link_index.get(&key).map(|&i| &self.links[i])
    }

    fn ancestors(&self, id: UnitId) -> Vec<UnitId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn lowest_common_parent(&self, units: &[UnitId]) -> UnitId {
        assert!(!units.is_empty(), "lowest_common_parent needs at least one unit");
        let mut common = self.ancestors(units[0]);
        for &u in &units[1..] {
            let anc: BTreeSet<UnitId> = self.ancestors(u).into_iter().collect();
            common.retain(|a| anc.contains(a));
        }
        // `common` keeps the first unit's ancestor order: deepest first.
        common[0]
    }

    /// Unit path the engine uses between two units: the tree path, except
    /// that a rank -> controller -> rank detour inside one module takes the
    /// direct peer link.
    pub fn route(&self, from: UnitId, to: UnitId) -> Vec<UnitId> {
        let lcp = self.lowest_common_parent(&[from, to]);
        let mut up: Vec<UnitId> = Vec::new();
        let mut cur = from;
        while cur != lcp {
            up.push(cur);
            cur = self.parent(cur).expect("walk stops at the common parent");
        }
        up.push(lcp);
        let mut down = Vec::new();
        cur = to;
        while cur != lcp {
            down.push(cur);
            cur = self.parent(cur).expect("walk stops at the common parent");
        }
        up.extend(down.into_iter().rev());
        let path = up;
        if path.len() >= 3 {
            let mut out = Vec::with_capacity(path.len());
            let mut i = 0;
            while i < path.len() {
                if i + 2 < path.len()
                    && self.unit(path[i + 1]).level == Level::Channel
                    && self.unit(path[i]).level == Level::Rank
                    && self.unit(path[i + 2]).level == Level::Rank
                {
                    out.push(path[i]);
                    i += 2;
                    continue;
                }
                out.push(path[i]);
                i += 1;
            }
            return out;
        }
        path
    }

    /// Links traversed along `route`.
    pub fn route_links(&self, route: &[UnitId]) -> Result<Vec<&LinkSpec>, MemsysError> {
        route
            .windows(2)
            .map(|w| self.link(w[0], w[1]).ok_or(MemsysError::MissingLink(w[0].0, w[1].0)))
            .collect()
    }

    pub fn topology(&self) -> Topology<'_> {
        Topology {
            units: self
                .units
                .iter()
                .map(|u| TopoUnit {
                    id: u.id.0,
                    label: u.label(),
                    level: u.level,
                    parent: u.parent.map(|p| p.0),
                    kernels: u.kernel_support.iter().map(|k| k.name()).collect(),
                })
                .collect(),
            links: &self.links,
            address_map: &self.address_map,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TopoUnit {
    pub id: usize,
    pub label: String,
    pub level: Level,
    pub parent: Option<usize>,
    pub kernels: Vec<&'static str>,
}

/// JSON-serializable topology dump.
#[derive(Debug, Serialize)]
pub struct Topology<'a> {
    pub units: Vec<TopoUnit>,
    pub links: &'a [LinkSpec],
    pub address_map: &'a AddressMap,
}

pub fn build_memory_system(cfg: &ScenarioConfig) -> Result<MemorySystem, MemsysError> {
    for kind in KernelKind::ALL {
        if !Level::ALL.iter().any(|l| cfg.logic.supports(*l, kind)) {
            return Err(MemsysError::UnsupportedKernel(kind.name()));
        }
    }
    let d = &cfg.dram;
    let net = &cfg.network;
    let support = |level: Level| cfg.logic.level_kernel_support.get(&level).cloned().unwrap_or_default();
    let mut units = Vec::with_capacity(1 + d.modules + d.total_ranks() + d.total_chips());
    let mut links = Vec::new();

    units.push(LogicUnit {
        id: UnitId(0),
        level: Level::Root,
        module: None,
        rank: None,
        chip: None,
        parent: None,
        children: Vec::new(),
        kernel_support: support(Level::Root),
    });
    let switch_bw = net.switch_ctrl.bandwidth / d.modules as f64;
    for m in 0..d.modules {
        let id = UnitId(units.len());
        units.push(LogicUnit {
            id,
            level: Level::Channel,
            module: Some(m),
            rank: None,
            chip: None,
            parent: Some(UnitId(0)),
            children: Vec::new(),
            kernel_support: support(Level::Channel),
        });
        units[0].children.push(id);
        links.push(LinkSpec::new(UnitId(0), id, LinkKind::SwitchCtrl, &net.switch_ctrl, switch_bw));
    }
    for a in 0..d.modules {
        for b in a + 1..d.modules {
            links.push(LinkSpec::new(
                UnitId(1 + a),
                UnitId(1 + b),
                LinkKind::CtrlCtrl,
                &net.ctrl_ctrl,
                net.ctrl_ctrl.bandwidth,
            ));
        }
    }
    for m in 0..d.modules {
        let ch = UnitId(1 + m);
        let first = units.len();
        for r in 0..d.ranks_per_module {
            let id = UnitId(units.len());
            units.push(LogicUnit {
                id,
                level: Level::Rank,
                module: Some(m),
                rank: Some(r),
                chip: None,
                parent: Some(ch),
                children: Vec::new(),
                kernel_support: support(Level::Rank),
            });
            units[ch.0].children.push(id);
            links.push(LinkSpec::new(ch, id, LinkKind::RankCtrl, &net.rank_ctrl, net.rank_ctrl.bandwidth));
        }
        for a in 0..d.ranks_per_module {
            for b in a + 1..d.ranks_per_module {
                links.push(LinkSpec::new(
                    UnitId(first + a),
                    UnitId(first + b),
                    LinkKind::RankRank,
                    &net.rank_rank,
                    net.rank_rank.bandwidth,
                ));
            }
        }
    }
    let rank_base = 1 + d.modules;
    for ri in 0..d.total_ranks() {
        let rank = UnitId(rank_base + ri);
        let (m, r) = (ri / d.ranks_per_module, ri % d.ranks_per_module);
        for c in 0..d.chips_per_rank {
            let id = UnitId(units.len());
            units.push(LogicUnit {
                id,
                level: Level::Chip,
                module: Some(m),
                rank: Some(r),
                chip: Some(c),
                parent: Some(rank),
                children: Vec::new(),
                kernel_support: support(Level::Chip),
            });
            units[rank.0].children.push(id);
            links.push(LinkSpec::new(rank, id, LinkKind::ChipRank, &net.chip_rank, net.chip_rank.bandwidth));
        }
    }
    let link_index = links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let key = if l.endpoint_a <= l.endpoint_b {
                (l.endpoint_a, l.endpoint_b)
            } else {
                (l.endpoint_b, l.endpoint_a)
            };
            (key, i)
        })
        .collect();
    Ok(MemorySystem {
        dram: d.clone(),
        units,
        links,
        address_map: AddressMap::from_dram(d),
        link_index,
    })
}
