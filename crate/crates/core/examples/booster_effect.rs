//! Generates the academic split twice with the mock model, once with
//! generator boosters ("be creative", ...) and once without, then compares
//! nearest-neighbour similarity of the questions.
//!
//! The effect is small next to seed-to-seed noise, so several seeds are run.
//!
//!     cargo run --release --example booster_effect -- 5

use std::path::Path;

use genqa::diversity::{Side, TrigramEmbedder};
use genqa::parse::parse;
use genqa::pipeline::{booster_contrast, Pipeline};
use genqa::provider::{Client, RawRecord};
use genqa::seed::{child_seed, labeled_seed};
use genqa::template::{instantiate, BoosterSet};

const PER_ARM: usize = 200;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let p = Pipeline::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/configs/mock_pipeline.json"))?;
    println!(
        "{:>4} {:>8} {:>10} {:>10} {:>6}",
        "seed", "per arm", "booster", "none", "KS"
    );
    let mut lower = 0;
    for seed in 0..seeds {
        lower += run(&p, seed)? as u64;
    }
    println!("booster arm lower in {lower}/{seeds} seeds");
    Ok(())
}

fn run(p: &Pipeline, seed: u64) -> Result<bool, Box<dyn std::error::Error>> {
    let templates = &p.templates["academic"];
    let rule = &p.rules["academic"];
    let boosted = BoosterSet::uniform(p.boosters.options().iter().filter(|o| !o.is_empty()).cloned().collect())?;
    let mut provider = p.provider.clone();
    if let Some(m) = provider.mock.as_mut() {
        m.seed = labeled_seed(seed, "mock");
    }
    let client = Client::from_config(&provider);

    let mut convs = Vec::new();
    let mut per_arm = [0usize; 2];
    for (i, (arm, boosters)) in [("b", &boosted), ("n", &BoosterSet::none())].into_iter().enumerate() {
        for k in 0..PER_ARM as u64 {
            let tpl = &templates[k as usize % templates.len()];
            let prompt = instantiate(tpl, child_seed(labeled_seed(seed, arm), k), Some(&p.topics), boosters)?;
            let req = provider.request(format!("{arm}-{k}"), prompt)?;
            let rec = RawRecord::new(&req, client.provider_name(), &client.generate(&req));
            if let Ok(c) = parse(&rec, rule) {
                convs.push(c);
                per_arm[i] += 1;
            }
        }
    }

    let embedder = TrigramEmbedder::new(384);
    let n = per_arm[0].min(per_arm[1]);
    let (_, summary) = booster_contrast("academic", &convs, Side::Question, n, seed, &embedder, None)?;
    let c = summary.booster.expect("both arms present");
    println!(
        "{seed:>4} {n:>8} {:>10.4} {:>10.4} {:>6.3}",
        c.booster_mean, c.no_booster_mean, c.ks_statistic
    );
    Ok(c.booster_mean < c.no_booster_mean)
}
