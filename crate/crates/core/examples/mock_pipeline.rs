//! The whole job against the mock provider: generate, parse, dedup,
//! analyze, rebalance and stats. Writes under the system temp directory
//! unless a path is given, and resumes if that directory holds a job.
//!
//!     cargo run --release --example mock_pipeline -- /tmp/genqa-demo

use std::path::{Path, PathBuf};

use genqa::pipeline::{cmd_run, Pipeline, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("genqa-mock-pipeline"));
    let p = Pipeline::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/configs/mock_pipeline.json"))?;
    let summary = cmd_run(&p, &out, 11, &RunOptions::default())?;

    println!(
        "{:<16} {:>8} {:>8} {:>8} {:>8}",
        "split", "records", "parsed", "kept", "selected"
    );
    for (s, x) in &summary.splits {
        println!(
            "{s:<16} {:>8} {:>8} {:>8} {:>8}",
            x.records, x.parsed, x.kept, x.selected
        );
    }
    println!(
        "{} conversations in {}",
        summary.conversations,
        out.join("dataset.jsonl").display()
    );
    println!("dataset digest {}", summary.dataset_digest);
    Ok(())
}
