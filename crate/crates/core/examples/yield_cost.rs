//! Yield and cost per MCoOI and per module, and how yield falls as more
//! DRAM chiplets share one interposer.

use pimflow::analytics::yield_cost;
use pimflow::config::{preset_scenario, workload};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = preset_scenario("D1", "llama2-7b", workload(1, 128, 128))?;
    let c = yield_cost(&cfg.cost, &cfg.dram);
    println!(
        "yields: interposer {:.3}, dies {:.3}, bonding {:.3}, overall {:.3}",
        c.interposer_yield, c.die_yield, c.bonding_yield, c.overall_yield
    );
    println!(
        "${:.2} per MCoOI (${:.3} raw), {} per module -> ${:.2} per module; GPU module ${:.0}",
        c.cost_per_mcooi, c.raw_cost_per_mcooi, c.mcooi_per_module, c.cost_per_module, c.gpu_module_cost
    );

    println!("dram chiplets/MCoOI  overall yield  $/MCoOI");
    for n in [16, 32, 64, 128, 256] {
        let mut k = cfg.cost.clone();
        let base = k.dram_chiplets_per_mcooi;
        k.dram_chiplets_per_mcooi = n;
        k.yields.chiplets_per_mcooi = k.yields.chiplets_per_mcooi - base + n;
        k.yields.bonds_per_mcooi = k.yields.bonds_per_mcooi - base + n;
        let r = yield_cost(&k, &cfg.dram);
        println!("{n:>20}  {:>13.3}  {:>7.2}", r.overall_yield, r.cost_per_mcooi);
    }
    Ok(())
}
