//! Weight and KV placement for one scenario, plus the per-bank CSV.

use pimflow::config::{preset_scenario, workload};
use pimflow::memsys::build_memory_system;
use pimflow::model_alloc::allocate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = preset_scenario("D1", "llama2-7b", workload(4, 512, 128))?;
    let sys = build_memory_system(&cfg)?;
    let alloc = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys)?;
    println!("{} wt ranks, {} kv ranks, {} rank sets", alloc.wt_ranks.len(), alloc.kv_ranks.len(), alloc.rank_sets.len());
    println!("weights {:.2} GiB", alloc.weight_bytes() as f64 / (1u64 << 30) as f64);

    for name in ["layer0.Wqkv", "layer0.Wo", "layer0.Wgate", "layer0.Wdown", "lm_head"] {
        let Ok(p) = alloc.placement(name) else { continue };
        println!(
            "{name:<12} {} ranks x {} chips x {} banks, K {} N {} ({} cols/chip), rows {}..{}",
            p.rank_set.len(),
            p.chips,
            p.banks,
            p.k_padded,
            p.n_padded,
            p.cols_per_chip,
            p.row_offset,
            p.row_offset + p.dram_rows
        );
    }

    let kv = &alloc.kv;
    println!("KV: {} bytes per (layer, request, head) slot, {} rows each, from row {}", kv.bytes_per_slot, kv.rows_per_slot, kv.row_base);
    for b in 0..cfg.workload.batch {
        let r = kv.rank_of(b);
        println!("  request {b} -> m{}r{}, head 0 on chip {}", r.module, r.rank, kv.chip_of(0));
    }

    let mut csv = Vec::new();
    alloc.write_placement_csv(&mut csv, cfg.workload.batch)?;
    let text = String::from_utf8(csv)?;
    println!("placement CSV: {} rows; first lines:", text.lines().count() - 1);
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
