//! Energy split of a simulated run and the static power figures.

use pimflow::analytics::{energy_report, op_energy, power_report};
use pimflow::config::{preset_scenario, workload};
use pimflow::engine::{simulate, SimOptions};
use pimflow::memsys::build_memory_system;
use pimflow::model_alloc::allocate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = power_report(&preset_scenario("D1", "llama2-7b", workload(1, 128, 128))?);
    println!(
        "power: {:.2} W/chip, {:.2} W/module, {:.3} W/mm2",
        p.chip_power_w, p.module_power_w, p.power_density_w_per_mm2
    );

    for (b, i, o) in [(1, 128, 32), (8, 128, 32)] {
        let cfg = preset_scenario("D1", "llama2-7b", workload(b, i, o))?;
        let sys = build_memory_system(&cfg)?;
        let alloc = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys)?;
        let r = simulate(&cfg, &sys, &alloc, SimOptions::default())?;
        let e = energy_report(&r.stats, &cfg)?;
        println!(
            "{}: {:.3} J ({:.2} mJ/token); data access {:.1}%, compute {:.1}%, communication {:.1}%",
            r.scenario,
            e.total,
            e.total / (b * o) as f64 * 1e3,
            e.data_access_fraction * 100.0,
            e.computation_fraction * 100.0,
            e.communication_fraction * 100.0
        );
    }
    let op = op_energy(&preset_scenario("D1", "llama2-7b", workload(1, 1, 1))?);
    println!("per-op energy: MAC {:.2e} J, SIMD {:.2e} J, exp {:.2e} J, max {:.2e} J", op.mac, op.simd, op.exp, op.max);
    Ok(())
}
