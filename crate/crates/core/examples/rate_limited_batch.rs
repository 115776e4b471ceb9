//! Sends a batch through the client with a request-rate cap and bounded
//! concurrency. A virtual clock stands in for wall time, so the run is
//! instant but reports how long it would have taken.

use std::sync::Arc;

use genqa::provider::{Client, Clock, ProviderConfig, VirtualClock};
use genqa::seed::child_seed;
use genqa::template::{instantiate, BoosterSet, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let template = PromptTemplate::load(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/templates/color_generator.json"),
    )?;
    let mut cfg = ProviderConfig::mock(9);
    cfg.requests_per_second = 20.0;
    cfg.max_in_flight = 4;

    let requests = (0..200u64)
        .map(|k| {
            let prompt = instantiate(&template, child_seed(1, k), None, &BoosterSet::none()).unwrap();
            cfg.request(format!("color-{k:04}"), prompt).unwrap()
        })
        .collect::<Vec<_>>();

    let clock = Arc::new(VirtualClock::new());
    let client = Client::with_clock(cfg.build_provider(), &cfg, clock.clone());
    let (mut ok, mut failed) = (0, 0);
    client.generate_batch(requests, |item| match item.result {
        Ok(_) => ok += 1,
        Err(e) => {
            failed += 1;
            println!("{}: {e}", item.request_id);
        }
    });
    println!("{ok} completed, {failed} failed");
    println!("at {} req/s this takes {:.2?}", cfg.requests_per_second, clock.now());
    Ok(())
}
