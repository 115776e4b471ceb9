//! Turns raw model output into conversations with the built-in rules, and
//! shows how a malformed completion is rejected.

use genqa::parse::{builtin_rules, parse};
use genqa::provider::RawRecord;

const ACADEMIC: &str = "\
List of subtopics:
1. Contract law
2. Tort law
3. Criminal procedure

Chosen subtopic: Tort law

Question: What must a plaintiff prove to succeed in a negligence claim?

Answer: Duty of care, breach of that duty, causation, and damage.";

const MATH: &str = "\
Question: Solve 2x + 3 = 11.
Answer: Subtract 3 and divide by 2, so x = 4.

Question2: Now solve 2x + 3 = 12.
Answer2: x = 4.5.";

const BROKEN: &str = "Sure! Here is something that is not a question at all.";

fn record(id: &str, text: &str) -> RawRecord {
    RawRecord {
        request_id: id.into(),
        template_id: "example".into(),
        seed: 0,
        booster: String::new(),
        prompt: String::new(),
        text: Some(text.into()),
        usage: None,
        provider: "example".into(),
        created_at: None,
        error: None,
    }
}

fn main() {
    let rules = builtin_rules();
    let rule = |split: &str| rules.iter().find(|r| r.split == split).expect("built-in rule");

    for (split, text) in [("academic", ACADEMIC), ("math", MATH), ("academic", BROKEN)] {
        match parse(&record(&format!("{split}-0"), text), rule(split)) {
            Ok(conv) => {
                println!("{split}: {} turns", conv.turns.len());
                for t in &conv.turns {
                    println!("  {:>9}: {}", t.role.as_str(), t.content.replace('\n', " "));
                }
                if !conv.meta.flags.is_empty() {
                    println!("  flags: {:?}", conv.meta.flags);
                }
            }
            Err(f) => println!("{split}: rejected ({:?})", f.reason),
        }
    }
}
