//! Drives the experiment suite programmatically at a small scale.
//!
//! The same machinery behind `matcomp --command reproduce` is called
//! through a `RunConfig` built in code: the binary-alphabet table is
//! rerun with reduced sample counts and two seeds so the whole thing
//! finishes in well under a minute, writing its long-format and
//! summary CSVs into `target/example-out/reproduction/`.
//!
//! The full-scale tables are one flag away:
//!
//! ```text
//! cargo run --release --bin matcomp -- --command reproduce --out reproduction
//! ```

use std::path::PathBuf;

use matcomp::{cli, Command, Result, RunConfig};

fn main() -> Result<()> {
    let out = PathBuf::from("target/example-out/reproduction");
    let config = RunConfig {
        command: Some(Command::Reproduce),
        tables: Some("binary".to_string()),
        n_list: Some("20000,60000".to_string()),
        seeds: Some(2),
        seed: Some(1),
        out: Some(out.clone()),
        ..RunConfig::default()
    };
    cli::run(&config)?;

    let summary = out.join("binary_summary.csv");
    println!("\nseed-averaged prediction error ({}):", summary.display());
    print!("{}", std::fs::read_to_string(&summary).expect("summary CSV was just written"));
    Ok(())
}
