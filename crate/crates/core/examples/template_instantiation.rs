//! Renders a generator prompt for a few seeds. The same seed always gives
//! the same prompt.
//!
//!     cargo run --example template_instantiation -- mmlu_generator_conditional

use std::path::Path;

use genqa::seed::child_seed;
use genqa::template::{instantiate, BoosterSet, PromptTemplate, TopicCatalog, TopicList};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let name = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "academic_generator_conditional".into());
    let template = PromptTemplate::load(assets.join(format!("templates/{name}.json")))?;

    let mut topics = TopicCatalog::new();
    for source in template.topic_sources() {
        topics.insert(TopicList::load(source, assets.join(format!("topics/{source}.txt")))?);
    }
    let boosters = BoosterSet::load(assets.join("boosters.json"))?;

    for k in 0..3 {
        let p = instantiate(&template, child_seed(42, k), Some(&topics), &boosters)?;
        println!("--- {} seed {} {:?}", p.template_id, p.seed, p.bindings);
        println!("{}\n", p.text);
    }
    let again = instantiate(&template, child_seed(42, 0), Some(&topics), &boosters)?;
    let first = instantiate(&template, child_seed(42, 0), Some(&topics), &boosters)?;
    assert_eq!(again, first);
    Ok(())
}
