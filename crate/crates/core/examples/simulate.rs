//! End-to-end simulation of one scenario with the latency breakdown and the
//! analytical GPU comparison.
//!
//! `cargo run --release --example simulate -- D2 4 512 128`

use pimflow::analytics::gpu_baseline;
use pimflow::config::{preset_scenario, workload};
use pimflow::engine::{simulate, SimOptions};
use pimflow::memsys::build_memory_system;
use pimflow::model_alloc::allocate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch = args.first().map_or("D1", String::as_str);
    let num = |i: usize, d: usize| args.get(i).map_or(Ok(d), |s| s.parse());
    let cfg = preset_scenario(arch, "llama2-7b", workload(num(1, 1)?, num(2, 128)?, num(3, 64)?))?;

    let sys = build_memory_system(&cfg)?;
    let alloc = allocate(&cfg.model, &cfg.workload, &cfg.alloc, &sys)?;
    let r = simulate(&cfg, &sys, &alloc, SimOptions::default())?;
    println!("{}", r.scenario);
    println!("  TTFT {:.3} ms, e2e {:.3} ms, {:.0} tok/s", r.ttft * 1e3, r.e2e_latency * 1e3, r.decode_throughput);
    println!(
        "  decode step {:.3} -> {:.3} ms ({} of {} steps simulated)",
        r.decode.first_step_latency * 1e3,
        r.decode.last_step_latency * 1e3,
        r.decode.simulated_steps,
        r.decode.steps
    );
    let b = &r.breakdown;
    println!(
        "  compute {:.1}%, communication {:.1}%, queueing {:.1}%",
        b.compute_fraction * 100.0,
        b.communication_fraction * 100.0,
        b.queueing_fraction * 100.0
    );

    let g = gpu_baseline(&cfg, None)?;
    println!(
        "  {} ({}): e2e {:.3} ms, speedup {:.2}x, TTFT speedup {:.2}x",
        g.label,
        g.platform,
        g.e2e_latency * 1e3,
        g.e2e_latency / r.e2e_latency,
        g.ttft / r.ttft
    );
    Ok(())
}
