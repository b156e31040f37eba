//! Generates a synthetic dataset and round-trips it through the disk
//! containers.
//!
//! A low-rank parameter tensor is drawn from the rank-5 factor model,
//! observations are sampled under both supported designs (uniform and
//! row-times-column product weights), and the dataset plus its truth
//! are written to `target/example-out/` and read back.
//!
//! ```text
//! cargo run --release --example simulate
//! ```

use std::path::PathBuf;

use matcomp::{
    generate_truth, read_observations, read_truth, sample_observations, write_observations,
    write_truth, DatasetHeader, Result, SamplingDistribution, SyntheticSpec,
};

fn main() -> Result<()> {
    let spec = SyntheticSpec::new(200, 150, 3, 42);
    let truth = generate_truth(&spec)?;
    println!(
        "truth: {}x{} with {} parameter slices, sup-norm {:.4}",
        truth.rows(),
        truth.cols(),
        truth.slice_count(),
        truth.sup_norm()
    );

    let n = 20_000;
    let uniform = SamplingDistribution::uniform(spec.m1, spec.m2)?;
    let product = SamplingDistribution::row_column_product(spec.m1, spec.m2, 7)?;
    for (name, dist) in [("uniform", &uniform), ("product", &product)] {
        let set = sample_observations(&truth, dist, n, 1)?;
        let mut shares = vec![0usize; set.classes()];
        for o in set.records() {
            shares[o.label as usize - 1] += 1;
        }
        let shares: Vec<String> =
            shares.iter().map(|c| format!("{:.3}", *c as f64 / n as f64)).collect();
        println!("{name} sampling: {n} draws, class shares [{}]", shares.join(", "));
    }

    let out_dir = PathBuf::from("target/example-out");
    std::fs::create_dir_all(&out_dir).expect("create output directory");
    let data_path = out_dir.join("simulated.mcds");
    let truth_path = out_dir.join("simulated.mctr");

    let set = sample_observations(&truth, &uniform, n, 1)?;
    let meta = DatasetHeader {
        seed: Some(spec.seed),
        generator: Some("synthetic-low-rank".to_string()),
        gamma_scale: Some(spec.gamma_scale),
        distribution: Some("uniform".to_string()),
        ..DatasetHeader::default()
    };
    write_observations(&data_path, &set, &meta)?;
    write_truth(&truth_path, &truth)?;

    let (back, header) = read_observations(&data_path)?;
    let truth_back = read_truth(&truth_path)?;
    assert_eq!(back, set, "observation container must round-trip exactly");
    assert_eq!(truth_back, truth, "truth container must round-trip exactly");
    println!(
        "round-trip ok: {} records -> {} ({} bytes), truth -> {} ({} bytes)",
        header.n,
        data_path.display(),
        std::fs::metadata(&data_path).map(|m| m.len()).unwrap_or(0),
        truth_path.display(),
        std::fs::metadata(&truth_path).map(|m| m.len()).unwrap_or(0),
    );
    Ok(())
}
