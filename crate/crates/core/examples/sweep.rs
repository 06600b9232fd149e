//! Parallel sweep across architectures and batch sizes, printed as the
//! e2e-speedup and breakdown tables.

use pimflow::cli::{figures, run_sweep, Baseline, ScenarioSpec, SweepAxes};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let axes = SweepAxes {
        archs: vec!["D1".into(), "D2".into(), "D3".into()],
        models: vec!["llama2-7b".into()],
        batches: vec![1, 4],
        inputs: vec![128],
        outputs: vec![32],
    };
    let base = ScenarioSpec::preset("D1", "llama2-7b", 1, 128, 32);
    let points = axes.points(&base, 100)?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results: Vec<_> = run_sweep(&points, Baseline::H100Roofline, jobs)?.into_iter().collect::<Result<_, _>>()?;
    let f = figures(&results);
    println!("{:<28} {:>8} {:>8} {:>8} {:>8}", "scenario", "speedup", "comp", "comm", "queue");
    for (e, b) in f.e2e_speedup.iter().zip(&f.breakdown) {
        println!(
            "{:<28} {:>8.2} {:>8.3} {:>8.3} {:>8.3}",
            e.scenario,
            e.e2e_speedup.unwrap_or(f64::NAN),
            b.compute,
            b.communication,
            b.queueing
        );
    }
    Ok(())
}
