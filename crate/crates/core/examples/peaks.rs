//! Peak bandwidth, GEMM and SIMD rates of every preset, in both prefix
//! conventions.

use pimflow::config::{capacity_gb, derive_peaks, preset_scenario, tera, workload, UnitPrefix, ARCH_PRESETS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<4} {:>10} {:>10} {:>10} {:>8}   (1000-based: bw, gemm)", "arch", "BW TB/s", "GEMM TF", "SIMD TF", "GB");
    for (arch, _) in ARCH_PRESETS {
        let cfg = preset_scenario(arch, "llama2-7b", workload(1, 128, 128))?;
        let p = derive_peaks(&cfg);
        let b = |x| tera(x, UnitPrefix::Binary);
        let d = |x| tera(x, UnitPrefix::Decimal);
        println!(
            "{arch:<4} {:>10.1} {:>10.1} {:>10.1} {:>8.0}   ({:.2}, {:.2})",
            b(p.peak_bandwidth),
            b(p.peak_gemm),
            b(p.peak_simd),
            capacity_gb(p.capacity),
            d(p.peak_bandwidth),
            d(p.peak_gemm)
        );
    }
    Ok(())
}
