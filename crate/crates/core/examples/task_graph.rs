//! Prefill and decode task graphs: node counts per kernel, FLOPs, and the
//! mapped task counts on one architecture.

use std::collections::BTreeMap;

use pimflow::config::{preset_scenario, workload};
use pimflow::mapper::{map_tasks, TaskKind};
use pimflow::memsys::build_memory_system;
use pimflow::model_alloc::allocate;
use pimflow::taskgraph::{build_decode_step_graph, build_prefill_graph, validate_shapes, TaskGraph};

fn summarize(name: &str, g: &TaskGraph) {
    let mut per_kernel: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &g.nodes {
        *per_kernel.entry(n.kernel.name()).or_default() += 1;
    }
    println!("{name}: {} nodes, {} edges, {:.2} TFLOP", g.nodes.len(), g.edges.len(), g.total_flops() as f64 / 1e12);
    for (k, c) in per_kernel {
        println!("  {k:<14} {c}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = preset_scenario("D1", "llama2-7b", workload(2, 256, 64))?;
    let w = &cfg.workload;
    let prefill = build_prefill_graph(&cfg.model, w);
    if let Err(bad) = validate_shapes(&prefill, &cfg.model, w.batch, w.input_len) {
        println!("{} shape mismatches", bad.len());
    }
    summarize("prefill", &prefill);
    let decode = build_decode_step_graph(&cfg.model, w, w.input_len + 10)?;
    summarize("decode step 10", &decode);

    let sys = build_memory_system(&cfg)?;
    let alloc = allocate(&cfg.model, w, &cfg.alloc, &sys)?;
    let mapped = map_tasks(&decode, &alloc, &sys, &cfg.logic, &cfg.model)?;
    let mv = mapped.movement_volume(&sys);
    println!(
        "decode step mapped: {} compute, {} aggregate tasks, {} messages; broadcast {} B, gather {} B, inter-module {} B",
        mapped.count(TaskKind::Compute),
        mapped.count(TaskKind::Aggregate),
        mapped.edges.len(),
        mv.broadcast,
        mv.gather,
        mv.inter_module
    );
    Ok(())
}
