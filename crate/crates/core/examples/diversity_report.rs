//! Nearest-neighbour similarity of two small question sets: one drawn from
//! a handful of stock phrasings, one varied. The repetitive set sits closer
//! to 1.

use genqa::diversity::{compare, Side, SimilarityReport, TrigramEmbedder};
use genqa::seed::rng;
use rand::seq::SliceRandom;

const SUBJECTS: &[&str] = &[
    "photosynthesis",
    "inflation",
    "plate tectonics",
    "the French Revolution",
    "recursion",
    "supply chains",
    "the immune system",
    "black holes",
    "game theory",
    "climate feedback",
    "protein folding",
    "jazz harmony",
    "urban planning",
    "cryptography",
    "glaciers",
    "sleep",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut r = rng(3);
    let stock: Vec<String> = (0..200)
        .map(|_| format!("Can you explain {}?", SUBJECTS[..4].choose(&mut r).unwrap()))
        .collect();
    let openers = [
        "Why does",
        "How might",
        "In what way does",
        "What would change if",
        "Who first studied",
    ];
    let endings = [
        "matter today",
        "fail in practice",
        "affect ordinary people",
        "surprise a newcomer",
    ];
    let varied: Vec<String> = (0..200)
        .map(|_| {
            format!(
                "{} {} {}?",
                openers.choose(&mut r).unwrap(),
                SUBJECTS.choose(&mut r).unwrap(),
                endings.choose(&mut r).unwrap()
            )
        })
        .collect();

    let embedder = TrigramEmbedder::new(384);
    let stock: Vec<&str> = stock.iter().map(String::as_str).collect();
    let varied: Vec<&str> = varied.iter().map(String::as_str).collect();
    let a = SimilarityReport::from_snippets("stock", Side::Question, &stock, &embedder, None)?;
    let b = SimilarityReport::from_snippets("varied", Side::Question, &varied, &embedder, None)?;

    for rep in [&a, &b] {
        println!(
            "{:>6}: mean nn {:.3}, median {:.3}, unique {:.1}%",
            rep.label,
            rep.stats.mean,
            rep.stats.median,
            rep.uniqueness_rate * 100.0
        );
    }
    let summary = compare(&[a, b])?;
    println!("{}", serde_json::to_string_pretty(&summary.pairwise)?);
    Ok(())
}
