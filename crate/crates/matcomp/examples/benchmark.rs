//! Times the full fitting path on synthetic data of increasing size.
//!
//! Run the default three-case suite (roughly a thousand, a million, and
//! ten million draws) or pass explicit sizes:
//!
//! ```text
//! cargo run --release --example benchmark
//! cargo run --release --example benchmark -- 1000 600 500000
//! ```

use matcomp::{pipeline_config, run_benchmark_case, BenchCase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cases: Vec<BenchCase> = if args.is_empty() {
        vec![
            BenchCase::new(1000, 1000, 100_000),
            BenchCase::new(3000, 3000, 1_000_000),
        ]
    } else if args.len() == 3 {
        let m1: usize = args[0].parse()?;
        let m2: usize = args[1].parse()?;
        let n: usize = args[2].parse()?;
        vec![BenchCase::new(m1, m2, n)]
    } else {
        eprintln!("usage: benchmark [m1 m2 n]");
        std::process::exit(2);
    };

    println!(
        "{:>6} {:>6} {:>9} | {:>10} {:>8} {:>8} {:>8} {:>8} | {:>5} {:>5}",
        "m1", "m2", "n", "lambda", "sample", "group", "solve", "total", "iters", "atoms"
    );
    let base = pipeline_config(42);
    for case in &cases {
        let r = run_benchmark_case(case, &base)?;
        println!(
            "{:>6} {:>6} {:>9} | {:>10.3e} {:>7.2}s {:>7.2}s {:>7.2}s {:>7.2}s | {:>5} {:>5}",
            r.case.m1,
            r.case.m2,
            r.case.n,
            r.lambda,
            r.sample_secs,
            r.group_secs,
            r.solve_secs,
            r.total_secs,
            r.iterations,
            r.atoms
        );
        if !r.converged {
            eprintln!("  note: solver hit its iteration cap on this case");
        }
    }
    Ok(())
}
