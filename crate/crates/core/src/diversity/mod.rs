//! Nearest-neighbour similarity of question and answer snippets.

mod embed;
mod nn;

use std::collections::HashSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Role};
use crate::text::{normalize, sentence_prefix};

pub use embed::{
    embed_cached, EmbedError, EmbeddingCache, EmbeddingProvider, EmbeddingVector, RemoteEmbedder, TrigramEmbedder,
    DEFAULT_DIM,
};
pub use nn::nn_similarity;

pub const SNIPPET_SENTENCES: usize = 2;
/// Similarities at or above `1 - AT_ONE_EPSILON` count as exact duplicates.
pub const AT_ONE_EPSILON: f64 = 1e-6;
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("conversation {0} has no {1:?} text")]
    MissingSide(String, Side),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("vector {0} is zero")]
    ZeroVector(usize),
    #[error("vector {0} has a non-finite component")]
    NonFinite(usize),
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("invalid counts: {unique} unique of {total}")]
    InvalidCounts { unique: u64, total: u64 },
    #[error("sample of {want} requested from {have} items")]
    SampleTooLarge { want: usize, have: usize },
    #[error("reports use different embedders: {0} and {1}")]
    MixedEmbedders(String, String),
    #[error("reports cover different sides")]
    MixedSides,
    #[error("need at least 2 reports, got {0}")]
    TooFewReports(usize),
    #[error("booster arms differ in size: {booster} vs {no_booster}")]
    UnequalArms { booster: usize, no_booster: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Question,
    Answer,
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "question" => Ok(Side::Question),
            "answer" => Ok(Side::Answer),
            _ => Err(format!("unknown side `{s}` (expected question or answer)")),
        }
    }
}

/// First two sentences of the first user turn, or of the first assistant
/// turn for the answer side.
pub fn snippet_of(conv: &Conversation, side: Side) -> Result<&str, DiversityError> {
    let role = match side {
        Side::Question => Role::User,
        Side::Answer => Role::Assistant,
    };
    let text = conv.first(role).map(|t| t.content.trim()).unwrap_or("");
    if text.is_empty() {
        return Err(DiversityError::MissingSide(conv.id.clone(), side));
    }
    Ok(sentence_prefix(text, SNIPPET_SENTENCES))
}

pub fn uniqueness_rate(unique: u64, total: u64) -> Result<f64, DiversityError> {
    if total == 0 || unique > total {
        return Err(DiversityError::InvalidCounts { unique, total });
    }
    Ok(unique as f64 / total as f64)
}

/// Sorted positions of a uniform sample without replacement.
pub fn sample_indices(have: usize, want: usize, seed: u64) -> Result<Vec<usize>, DiversityError> {
    if want > have {
        return Err(DiversityError::SampleTooLarge { want, have });
    }
    let mut rng = crate::seed::rng(seed);
    let mut v = index::sample(&mut rng, have, want).into_vec();
    v.sort_unstable();
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub fraction_at_one: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty());
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        Stats {
            mean: s.iter().sum::<f64>() / n,
            median: quantile(&s, 0.5),
            p95: quantile(&s, 0.95),
            fraction_at_one: s.iter().filter(|&&x| x >= 1.0 - AT_ONE_EPSILON).count() as f64 / n,
        }
    }
}

/// Counts over 100 equal bins of [0, 1]; negative similarities are tallied
/// separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub underflow: u64,
    pub bins: Vec<u64>,
}

impl Histogram {
    pub fn of(values: &[f64]) -> Self {
        let mut bins = vec![0u64; HISTOGRAM_BINS];
        let mut underflow = 0;
        for &x in values {
            if x < 0.0 {
                underflow += 1;
            } else {
                let k = ((x * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                bins[k] += 1;
            }
        }
        Histogram { underflow, bins }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("low,high,count\n");
        s.push_str(&format!("-1,0,{}\n", self.underflow));
        let w = 1.0 / HISTOGRAM_BINS as f64;
        for (k, c) in self.bins.iter().enumerate() {
            s.push_str(&format!("{:.2},{:.2},{c}\n", k as f64 * w, (k + 1) as f64 * w));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub label: String,
    /// `booster` or `no_booster` when the report is one arm of a contrast.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
    pub side: Side,
    pub embedder: String,
    pub n: usize,
    pub nn_similarity: Vec<f64>,
    pub stats: Stats,
    pub histogram: Histogram,
    /// Distinct normalized snippets over n.
    pub uniqueness_rate: f64,
}

impl SimilarityReport {
    pub fn from_snippets(
        label: &str,
        side: Side,
        snippets: &[&str],
        embedder: &dyn EmbeddingProvider,
        cache: Option<&mut EmbeddingCache>,
    ) -> Result<Self, DiversityError> {
        let vectors = match cache {
            Some(c) => embed_cached(embedder, c, snippets)?,
            None => embedder.embed(snippets)?,
        };
        let sims = nn_similarity(&vectors)?;
        let unique: HashSet<String> = snippets.iter().map(|s| normalize(s)).collect();
        Ok(SimilarityReport {
            label: label.to_string(),
            arm: None,
            side,
            embedder: embedder.name().to_string(),
            n: sims.len(),
            stats: Stats::of(&sims),
            histogram: Histogram::of(&sims),
            uniqueness_rate: uniqueness_rate(unique.len() as u64, snippets.len() as u64)?,
            nn_similarity: sims,
        })
    }

    pub fn from_conversations(
        label: &str,
        side: Side,
        convs: &[Conversation],
        embedder: &dyn EmbeddingProvider,
        cache: Option<&mut EmbeddingCache>,
    ) -> Result<Self, DiversityError> {
        let snippets = convs
            .iter()
            .map(|c| snippet_of(c, side))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_snippets(label, side, &snippets, embedder, cache)
    }

    pub fn with_arm(mut self, arm: &str) -> Self {
        self.arm = Some(arm.to_string());
        self
    }

    pub fn values_csv(&self) -> String {
        let mut s = String::from("index,similarity\n");
        for (i, x) in self.nn_similarity.iter().enumerate() {
            s.push_str(&format!("{i},{x}\n"));
        }
        s
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<String>,
    pub n: usize,
    pub stats: Stats,
    pub uniqueness_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseShift {
    pub a: String,
    pub b: String,
    /// Mean of `b` minus mean of `a`.
    pub mean_difference: f64,
    pub ks_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoosterContrast {
    pub n_per_arm: usize,
    pub booster_mean: f64,
    pub no_booster_mean: f64,
    pub booster_fraction_at_one: f64,
    pub no_booster_fraction_at_one: f64,
    pub ks_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub side: Side,
    pub embedder: String,
    pub reports: Vec<ReportRow>,
    pub pairwise: Vec<PairwiseShift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booster: Option<BoosterContrast>,
}

fn display_label(r: &SimilarityReport) -> String {
    match &r.arm {
        Some(a) => format!("{}/{a}", r.label),
        None => r.label.clone(),
    }
}

pub fn compare(reports: &[SimilarityReport]) -> Result<ComparisonSummary, DiversityError> {
    if reports.len() < 2 {
        return Err(DiversityError::TooFewReports(reports.len()));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.embedder != first.embedder {
            return Err(DiversityError::MixedEmbedders(
                first.embedder.clone(),
                r.embedder.clone(),
            ));
        }
        if r.side != first.side {
            return Err(DiversityError::MixedSides);
        }
    }
    let mut pairwise = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            pairwise.push(PairwiseShift {
                a: display_label(a),
                b: display_label(b),
                mean_difference: b.stats.mean - a.stats.mean,
                ks_statistic: ks_statistic(&a.nn_similarity, &b.nn_similarity),
            });
        }
    }
    let arm = |name: &str| reports.iter().find(|r| r.arm.as_deref() == Some(name));
    let booster = match (arm("booster"), arm("no_booster")) {
        (Some(b), Some(nb)) => {
            if b.n != nb.n {
                return Err(DiversityError::UnequalArms {
                    booster: b.n,
                    no_booster: nb.n,
                });
            }
            Some(BoosterContrast {
                n_per_arm: b.n,
                booster_mean: b.stats.mean,
                no_booster_mean: nb.stats.mean,
                booster_fraction_at_one: b.stats.fraction_at_one,
                no_booster_fraction_at_one: nb.stats.fraction_at_one,
                ks_statistic: ks_statistic(&b.nn_similarity, &nb.nn_similarity),
            })
        }
        _ => None,
    };
    Ok(ComparisonSummary {
        side: first.side,
        embedder: first.embedder.clone(),
        reports: reports
            .iter()
            .map(|r| ReportRow {
                label: r.label.clone(),
                arm: r.arm.clone(),
                n: r.n,
                stats: r.stats.clone(),
                uniqueness_rate: r.uniqueness_rate,
            })
            .collect(),
        pairwise,
        booster,
    })
}
