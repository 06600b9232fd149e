//! Rooflines of a PIM architecture and the GPU baselines, with the model's
//! kernels placed on them. Writes roofline CSV to standard output.

use pimflow::analytics::{oi_grid, oi_table, write_roofline_csv};
use pimflow::cli::{kernel_points, rooflines};
use pimflow::config::{preset_scenario, workload};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = preset_scenario("D1", "llama2-7b", workload(8, 128, 128))?;
    let roofs = rooflines(&cfg);
    for r in &roofs {
        eprintln!("{:<8} peak {:.0} TFLOP/s, {:.1} TB/s, ridge OI {:.1}", r.name, r.peak_flops / 1e12, r.peak_bw / 1e12, r.ridge());
    }
    let rows = oi_table(&cfg.model, 8, 128);
    for p in kernel_points(&cfg, &rows) {
        eprintln!("{:<8} {:<13} {:<8} OI {:>7.1} -> {:>8.1} TFLOP/s", p.phase, p.kernel, p.platform, p.oi, p.attainable_flops / 1e12);
    }
    write_roofline_csv(std::io::stdout().lock(), &roofs, &oi_grid(0.1, 1e4, 4))?;
    Ok(())
}
