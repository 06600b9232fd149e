//! Per-kernel GEMM shapes and operational intensity for a model and batch.
//!
//! `cargo run --example oi_table -- llama3-70b 16 512`

use pimflow::analytics::oi_table;
use pimflow::config::model_preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map_or("llama2-7b", String::as_str);
    let batch = args.get(1).map_or(Ok(8), |s| s.parse())?;
    let input = args.get(2).map_or(Ok(128), |s| s.parse())?;
    let m = model_preset(model)?;
    println!("{model}, batch {batch}, input {input}");
    for r in oi_table(&m, batch, input) {
        println!("{:<8} {:<13} M={:<6} K={:<6} N={:<6} OI {:>7.1}", r.phase, r.kernel, r.m, r.k, r.n, r.oi);
    }
    Ok(())
}
