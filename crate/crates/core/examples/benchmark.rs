//! Runs the no-outlier benchmark grid and prints the summary table.
//!
//! `cargo run --release --example benchmark -- [reps] [outlier]`

use std::time::Instant;

use repmtl::simbench::{benchmark_h_grid, run_grid, HarnessSettings, Method, SimSpec, Subset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let reps = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let spec = if args.iter().any(|a| a == "outlier") {
        SimSpec::benchmark_with_outlier(2024)
    } else {
        SimSpec::benchmark(2024)
    };
    let start = Instant::now();
    let table = run_grid(&spec, &benchmark_h_grid(), &Method::ALL, reps, &HarnessSettings::default())?;
    println!("{:<16} {:>4} {:>10} {:>10}", "method", "h", "mean", "sd");
    for c in table.summary.iter().filter(|c| c.subset == Subset::Inliers) {
        println!("{:<16} {:>4.1} {:>10.4} {:>10.4}", c.method.as_str(), c.h, c.mean, c.sd);
    }
    for h in [0.0, 0.1] {
        let hits = table
            .diagnostics
            .iter()
            .filter(|d| d.h == h && d.adaptive_r == Some(spec.r))
            .count();
        println!("h = {h}: adaptive r = {} in {hits}/{reps}", spec.r);
    }
    println!("failures: {}", table.failures.len());
    println!("elapsed: {:.1?}", start.elapsed());
    Ok(())
}
