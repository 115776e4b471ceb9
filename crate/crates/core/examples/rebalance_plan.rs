//! Samples synthetic splits to the published mixture. Splits too small for
//! their share are taken whole and the rest is spread over the others.
//!
//!     cargo run --example rebalance_plan -- 6300

use std::collections::BTreeMap;
use std::path::Path;

use genqa::assemble::{rebalance, RebalancePlan};
use genqa::conversation::{Conversation, Meta, Turn};

// Published split sizes, in thousands.
const SIZES: &[(&str, u64)] = &[
    ("academic", 4210),
    ("mmlu", 2410),
    ("multiple_choice", 373),
    ("writing", 932),
    ("task", 1004),
    ("code", 513),
    ("math", 516),
    ("dialog", 819),
    ("general", 305),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let total: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6471);
    let mut plan = RebalancePlan::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/plans/published_mix.json"))?;
    plan.total_target = Some(total);

    let splits: BTreeMap<String, Vec<Conversation>> = SIZES
        .iter()
        .map(|&(s, n)| {
            let convs = (0..n)
                .map(|i| {
                    Conversation::new(
                        s,
                        vec![Turn::user(format!("{s} {i}?")), Turn::assistant("a")],
                        Meta::default(),
                    )
                })
                .collect();
            (s.to_string(), convs)
        })
        .collect();

    let (data, report) = rebalance(&splits, &plan, 1)?;
    println!(
        "{:<16} {:>6} {:>6} {:>8} {:>8}",
        "split", "have", "took", "target", "share"
    );
    for (s, &n) in &report.allocation.counts {
        println!(
            "{s:<16} {:>6} {n:>6} {:>7.1}% {:>7.2}%",
            report.available[s],
            plan.fractions[s] * 100.0,
            report.proportions[s] * 100.0
        );
    }
    println!("selected {} of {total}", data.len());
    for e in &report.allocation.exhausted {
        println!("exhausted: {}", e.split);
    }
    Ok(())
}
