//! Counts distinct answers to "pick a color" under three prompting styles:
//! asking directly, asking for a list and then one entry, and asking for a
//! list of lists. Uses the mock collapse model, so no network is needed.
//!
//!     cargo run --example color_experiment -- 7

use std::collections::HashSet;

use rand::Rng;

use genqa::provider::mock::chosen_item;
use genqa::provider::{mock_respond, CollapseModel, PromptKind};
use genqa::seed::{child_seed, labeled_seed, rng};

const DRAWS: u64 = 1000;
const LIST_LEN: u32 = 100;

fn distinct(model: &CollapseModel, seed: u64, kind: impl Fn(&mut rand_chacha::ChaCha8Rng) -> PromptKind) -> usize {
    let mut pick = rng(labeled_seed(seed, "indices"));
    let mut seen = HashSet::new();
    for k in 0..DRAWS {
        let text = mock_respond(model, child_seed(seed, k), &kind(&mut pick)).unwrap();
        seen.insert(chosen_item(&text).unwrap_or(&text).to_string());
    }
    seen.len()
}

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let model = CollapseModel::default();

    let direct = distinct(&model, labeled_seed(seed, "static"), |_| PromptKind::StaticItem);
    let list = distinct(&model, labeled_seed(seed, "list"), |r| PromptKind::ListThenSelect {
        list_len: LIST_LEN,
        chosen_index: r.gen_range(1..=LIST_LEN),
    });
    let nested = distinct(&model, labeled_seed(seed, "nested"), |r| {
        PromptKind::NestedListThenSelect {
            outer_len: LIST_LEN,
            outer_index: r.gen_range(1..=LIST_LEN),
            inner_len: LIST_LEN,
            inner_index: r.gen_range(1..=LIST_LEN),
        }
    });

    println!(
        "distinct answers over {DRAWS} calls (vocabulary {}):",
        model.vocabulary_size
    );
    println!("  direct question     {direct:>4}");
    println!("  list, then select   {list:>4}");
    println!("  nested lists        {nested:>4}");
}
