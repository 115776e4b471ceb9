//! Exact question deduplication on the first two sentences of the question.
//! Spacing and Unicode composition are normalized away; case is not. The
//! first occurrence wins.

use genqa::conversation::{Conversation, Meta, Turn};
use genqa::dedup::dedup;

fn qa(q: &str, a: &str) -> Conversation {
    Conversation::new("academic", vec![Turn::user(q), Turn::assistant(a)], Meta::default())
}

fn main() {
    let corpus = vec![
        qa("What is entropy?", "A measure of disorder."),
        qa("How do vaccines work?", "They train the immune system."),
        qa("What  is\tentropy?  ", "Same question, different spacing."),
        qa("What is ENTROPY?", "Different case, so kept."),
        qa("Define caf\u{e9}. Then use it in a sentence. Be brief.", "Composed."),
        qa(
            "Define cafe\u{301}. Then use it in a sentence. Be verbose.",
            "Decomposed, third sentence differs.",
        ),
        qa("Why is the sky blue?", "Rayleigh scattering."),
        qa("What is entropy?", "A third answer."),
        qa("How do vaccines work?\n", "Trailing newline only."),
    ];
    let (kept, report) = dedup(corpus);
    for c in &kept {
        println!("kept: {:<24} -> {}", c.turns[0].content.trim(), c.turns[1].content);
    }
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    println!("uniqueness rate {:.2}%", report.uniqueness_rate() * 100.0);
}
