//! Exact deduplication keyed on the opening of the first user turn.
//!
//! The key is the normalized first two sentences of the question. Only a
//! 128-bit digest and a 64-bit fingerprint of each key are kept in memory;
//! two keys count as equal when both hashes agree.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::{xxh3_128, xxh3_64_with_seed};

use crate::conversation::{Conversation, Role};
use crate::text::{normalize, sentence_prefix};

pub const KEY_SENTENCES: usize = 2;
const FINGERPRINT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DedupError {
    #[error("conversation {0} has no non-empty user turn")]
    EmptyQuestion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DedupKey {
    pub value: String,
    pub digest: u128,
}

impl DedupKey {
    pub fn new(value: String) -> Self {
        let digest = xxh3_128(value.as_bytes());
        Self { value, digest }
    }

    fn fingerprint(&self) -> u64 {
        xxh3_64_with_seed(self.value.as_bytes(), FINGERPRINT_SEED)
    }
}

pub fn key_of(conv: &Conversation) -> Result<DedupKey, DedupError> {
    let question = conv.first(Role::User).map(|t| t.content.as_str()).unwrap_or("");
    let value = normalize(sentence_prefix(question, KEY_SENTENCES));
    if value.is_empty() {
        return Err(DedupError::EmptyQuestion(conv.id.clone()));
    }
    Ok(DedupKey::new(value))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub total: u64,
    pub kept: u64,
    pub removed: u64,
    /// Of `removed`, items that had no question to key on.
    pub empty_questions: u64,
    /// Cluster size to number of keys with that many occurrences.
    pub cluster_histogram: BTreeMap<u64, u64>,
}

impl DedupReport {
    pub fn uniqueness_rate(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.kept as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    fingerprint: u64,
    count: u64,
}

/// Single-writer index of keys seen so far.
#[derive(Debug, Default)]
pub struct Deduper {
    seen: HashMap<u128, Vec<Slot>>,
    total: u64,
    empty: u64,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one occurrence; returns whether it is the first.
    pub fn insert(&mut self, key: &DedupKey) -> bool {
        self.total += 1;
        let fp = key.fingerprint();
        let slots = self.seen.entry(key.digest).or_default();
        match slots.iter_mut().find(|s| s.fingerprint == fp) {
            Some(s) => {
                s.count += 1;
                false
            }
            None => {
                slots.push(Slot {
                    fingerprint: fp,
                    count: 1,
                });
                true
            }
        }
    }

    /// Records a conversation; returns whether it should be kept.
    pub fn offer(&mut self, conv: &Conversation) -> bool {
        match key_of(conv) {
            Ok(k) => self.insert(&k),
            Err(_) => {
                self.total += 1;
                self.empty += 1;
                false
            }
        }
    }

    pub fn distinct(&self) -> u64 {
        self.seen.values().map(|v| v.len() as u64).sum()
    }

    pub fn report(&self) -> DedupReport {
        let mut hist = BTreeMap::new();
        for s in self.seen.values().flatten() {
            *hist.entry(s.count).or_insert(0) += 1;
        }
        let kept = self.distinct();
        DedupReport {
            total: self.total,
            kept,
            removed: self.total - kept,
            empty_questions: self.empty,
            cluster_histogram: hist,
        }
    }
}

/// Keeps the first occurrence of each key, passing survivors to `sink` in
/// input order.
pub fn dedup_stream<I, F>(convs: I, mut sink: F) -> DedupReport
where
    I: IntoIterator<Item = Conversation>,
    F: FnMut(Conversation),
{
    let mut d = Deduper::new();
    for c in convs {
        if d.offer(&c) {
            sink(c);
        }
    }
    d.report()
}

pub fn dedup(convs: Vec<Conversation>) -> (Vec<Conversation>, DedupReport) {
    let mut kept = Vec::new();
    let report = dedup_stream(convs, |c| kept.push(c));
    (kept, report)
}

const SHARDS: usize = 64;

#[derive(Debug, Clone, Copy)]
struct Claim {
    fingerprint: u64,
    first: usize,
    count: u64,
}

/// Parallel variant: keys are inserted concurrently and the lowest input
/// position wins each key, so the kept set equals the streaming result.
/// Returns kept positions in ascending order.
pub fn dedup_parallel(convs: &[Conversation]) -> (Vec<usize>, DedupReport) {
    let shards: Vec<Mutex<HashMap<u128, Vec<Claim>>>> = (0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect();
    let empty: u64 = convs
        .par_iter()
        .enumerate()
        .map(|(i, c)| match key_of(c) {
            Ok(k) => {
                let fp = k.fingerprint();
                let mut shard = shards[(k.digest as usize) % SHARDS].lock().unwrap();
                let claims = shard.entry(k.digest).or_default();
                match claims.iter_mut().find(|c| c.fingerprint == fp) {
                    Some(c) => {
                        c.first = c.first.min(i);
                        c.count += 1;
                    }
                    None => claims.push(Claim {
                        fingerprint: fp,
                        first: i,
                        count: 1,
                    }),
                }
                0
            }
            Err(_) => 1,
        })
        .sum();

    let mut kept = Vec::new();
    let mut hist = BTreeMap::new();
    for shard in shards {
        for c in shard.into_inner().unwrap().into_values().flatten() {
            kept.push(c.first);
            *hist.entry(c.count).or_insert(0) += 1;
        }
    }
    kept.sort_unstable();
    let total = convs.len() as u64;
    let report = DedupReport {
        total,
        kept: kept.len() as u64,
        removed: total - kept.len() as u64,
        empty_questions: empty,
        cluster_histogram: hist,
    };
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Meta, Turn};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn conv(q: &str) -> Conversation {
        Conversation::new("academic", vec![Turn::user(q), Turn::assistant("a")], Meta::default())
    }

    #[test]
    fn key_rules() {
        let a = key_of(&conv("Why is the sky blue? Explain it. Use physics.")).unwrap();
        let b = key_of(&conv("Why is the sky blue? Explain it. Use poetry.")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value, "Why is the sky blue? Explain it.");
        let c = key_of(&conv("  Why is  the sky\n blue?   Explain it.")).unwrap();
        assert_eq!(a, c);
        let d = key_of(&conv("why is the sky blue? Explain it.")).unwrap();
        assert_ne!(a, d);
        let e = key_of(&conv("Dr. Smith asked a question. Then left. Then returned.")).unwrap();
        assert_eq!(e.value, "Dr. Smith asked a question. Then left.");
    }

    #[test]
    fn empty_question() {
        let c = Conversation::new("x", vec![Turn::assistant("only")], Meta::default());
        assert!(matches!(key_of(&c), Err(DedupError::EmptyQuestion(_))));
        assert!(key_of(&conv("   ")).is_err());
        let (kept, r) = dedup(vec![conv(" "), conv("q.")]);
        assert_eq!(kept.len(), 1);
        assert_eq!((r.total, r.kept, r.removed, r.empty_questions), (2, 1, 1, 1));
    }

    #[test]
    fn aab() {
        let (kept, r) = dedup(vec![conv("A."), conv("A."), conv("B.")]);
        let qs: Vec<&str> = kept.iter().map(|c| c.turns[0].content.as_str()).collect();
        assert_eq!(qs, ["A.", "B."]);
        assert_eq!(r.removed, 1);
        assert_eq!(r.cluster_histogram, BTreeMap::from([(1, 1), (2, 1)]));
    }

    #[test]
    fn all_distinct() {
        let convs: Vec<Conversation> = (0..100_000).map(|i| conv(&format!("Question {i}?"))).collect();
        let (kept, r) = dedup(convs.clone());
        assert_eq!((kept.len(), r.removed), (100_000, 0));
        let (idx, pr) = dedup_parallel(&convs);
        assert_eq!(idx.len(), 100_000);
        assert_eq!(pr, r);
    }

    #[test]
    fn planted_duplicates() {
        let mut rng = crate::seed::rng(11);
        let base: Vec<String> = (0..8_500)
            .map(|i| {
                format!(
                    "What limits the growth of colony {i}? Consider resource {}. Then explain.",
                    i * 7
                )
            })
            .collect();
        let mut corpus: Vec<Conversation> = base.iter().map(|q| conv(q)).collect();
        for k in 0..1_500 {
            // Copies differ after sentence two and in spacing only.
            let q = base.choose(&mut rng).unwrap();
            let noisy = q.replace(' ', if k % 2 == 0 { "  " } else { " " });
            corpus.push(conv(&format!("{noisy} Extra {}.", rng.gen::<u32>())));
        }
        corpus.shuffle(&mut rng);
        assert_eq!(corpus.len(), 10_000);
        let (kept, r) = dedup(corpus.clone());
        assert_eq!(r.removed, 1_500);
        assert_eq!(kept.len(), 8_500);
        let (idx, pr) = dedup_parallel(&corpus);
        assert_eq!(pr, r);
        let par: Vec<&str> = idx.iter().map(|&i| corpus[i].id.as_str()).collect();
        let seq: Vec<&str> = kept.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(par, seq);
    }

    #[test]
    fn digest_collision_is_told_apart() {
        let mut d = Deduper::new();
        let a = DedupKey::new("a".into());
        let mut forged = DedupKey::new("b".into());
        forged.digest = a.digest;
        assert!(d.insert(&a));
        assert!(d.insert(&forged));
        assert!(!d.insert(&a));
        assert_eq!(d.distinct(), 2);
    }

    fn corpus() -> impl Strategy<Value = Vec<Conversation>> {
        prop::collection::vec(
            prop::sample::select(vec!["A. B.", "A.  B. C.", "a. B.", "B!", "C? D. E.", "", "x y z"]),
            0..60,
        )
        .prop_map(|qs| qs.into_iter().map(conv).collect())
    }

    proptest! {
        #[test]
        fn idempotent_and_ordered(items in corpus()) {
            let (once, r1) = dedup(items.clone());
            let (twice, r2) = dedup(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(r2.removed, r2.empty_questions);
            prop_assert_eq!(r1.kept + r1.removed, r1.total);
            // Survivors keep their relative input order.
            let mut pos = 0;
            for c in &once {
                let found = items[pos..].iter().position(|x| x == c);
                prop_assert!(found.is_some());
                pos += found.unwrap() + 1;
            }
            let (idx, pr) = dedup_parallel(&items);
            prop_assert_eq!(pr, r1);
            let par: Vec<Conversation> = idx.into_iter().map(|i| items[i].clone()).collect();
            prop_assert_eq!(par, once);
        }
    }
}
