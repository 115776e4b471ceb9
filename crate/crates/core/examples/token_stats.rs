//! Whitespace-token statistics over a JSONL dataset, or over a tiny
//! built-in one when no path is given.
//!
//!     cargo run --example token_stats -- out/dataset.jsonl

use std::path::Path;

use genqa::assemble::{read_jsonl, token_stats, TOKEN_BIN_WIDTH};
use genqa::conversation::{Conversation, Meta, Turn};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let convs = match std::env::args().nth(1) {
        Some(path) => read_jsonl(Path::new(&path))?,
        None => vec![
            Conversation::new(
                "math",
                vec![Turn::user("What is 2 + 2?"), Turn::assistant("4")],
                Meta::default(),
            ),
            Conversation::new(
                "dialog",
                vec![
                    Turn::user("Tell me about tides."),
                    Turn::assistant("Tides come from the Moon's pull on the oceans."),
                    Turn::user("And the Sun?"),
                    Turn::assistant("It adds a smaller pull, which gives spring and neap tides."),
                ],
                Meta::default(),
            ),
        ],
    };
    let s = token_stats(&convs);
    println!(
        "{} conversations, {} turns, {} tokens",
        s.conversations, s.turns, s.words
    );
    println!(
        "question mean {:.1}, answer mean {:.1}",
        s.questions.mean(),
        s.answers.mean()
    );
    println!("answers over the last bin: {}", s.answers.overflow);
    for (i, &n) in s.answers.bins.iter().enumerate().filter(|(_, &n)| n > 0).take(10) {
        let lo = i as u64 * TOKEN_BIN_WIDTH;
        println!("  answers {lo:>5}..{:<5} {n}", lo + TOKEN_BIN_WIDTH);
    }
    Ok(())
}
