//! Conversation JSONL files, split manifests, rebalancing and token counts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Role};
use crate::diversity::sample_indices;
use crate::seed::labeled_seed;
use crate::text::whitespace_tokens;

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("{path}:{line}: {message}")]
    SchemaViolation {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("split `{split}` needs {quota} items but has {available}")]
    InfeasibleQuota { split: String, quota: u64, available: u64 },
    #[error("plan names split `{0}`, which has no data")]
    UnknownSplit(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AssembleError + '_ {
    move |source| AssembleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// JSONL

/// One JSON object per line, fields in declaration order.
pub fn to_line(conv: &Conversation) -> String {
    serde_json::to_string(conv).expect("conversation serializes")
}

pub fn write_jsonl<'a>(path: &Path, convs: impl IntoIterator<Item = &'a Conversation>) -> Result<u64, AssembleError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut n = 0;
    for c in convs {
        w.write_all(to_line(c).as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
        n += 1;
    }
    w.flush().map_err(io_err(path))?;
    Ok(n)
}

/// Parses one line, checking the record's structural invariants.
pub fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Conversation, AssembleError> {
    let violation = |message: String| AssembleError::SchemaViolation {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let conv: Conversation = serde_json::from_str(line).map_err(|e| violation(e.to_string()))?;
    conv.validate().map_err(violation)?;
    Ok(conv)
}

/// Streams conversations from a JSONL file. Blank lines are skipped.
pub struct JsonlReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl JsonlReader {
    pub fn open(path: &Path) -> Result<Self, AssembleError> {
        let f = File::open(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(f).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for JsonlReader {
    type Item = Result<Conversation, AssembleError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(io_err(&self.path)(e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&self.path, self.line_no, &line));
        }
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Conversation>, AssembleError> {
    JsonlReader::open(path)?.collect()
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: String,
    pub files: Vec<PathBuf>,
    pub questions: u64,
    pub turns: u64,
    pub words: u64,
}

impl SplitManifest {
    pub fn add(&mut self, conv: &Conversation) {
        self.questions += 1;
        self.turns += conv.turns.len() as u64;
        self.words += conv
            .turns
            .iter()
            .map(|t| whitespace_tokens(&t.content) as u64)
            .sum::<u64>();
    }

    pub fn of(split: &str, convs: &[Conversation]) -> Self {
        let mut m = SplitManifest {
            split: split.to_string(),
            ..Default::default()
        };
        convs.iter().for_each(|c| m.add(c));
        m
    }

    /// Counts the records of the given files.
    pub fn scan(split: &str, files: &[PathBuf]) -> Result<Self, AssembleError> {
        let mut m = SplitManifest {
            split: split.to_string(),
            files: files.to_vec(),
            ..Default::default()
        };
        for f in files {
            for c in JsonlReader::open(f)? {
                m.add(&c?);
            }
        }
        Ok(m)
    }

    pub fn load(&self) -> Result<Vec<Conversation>, AssembleError> {
        let mut out = Vec::new();
        for f in &self.files {
            for c in JsonlReader::open(f)? {
                out.push(c?);
            }
        }
        Ok(out)
    }
}

/// Concatenates every manifest's files into `out`, in manifest order.
pub fn concat_and_write(manifests: &[SplitManifest], out: &Path) -> Result<u64, AssembleError> {
    let mut all = Vec::new();
    for m in manifests {
        all.extend(m.load()?);
    }
    write_jsonl(out, &all)
}

// ---------------------------------------------------------------------------
// Rebalancing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalancePlan {
    pub fractions: BTreeMap<String, f64>,
    #[serde(default)]
    pub total_target: Option<u64>,
    #[serde(default)]
    pub allow_exhaust: bool,
}

impl RebalancePlan {
    pub fn validate(&self) -> Result<(), AssembleError> {
        if self.fractions.is_empty() {
            return Err(AssembleError::InvalidPlan("no splits".into()));
        }
        for (s, &f) in &self.fractions {
            if !(0.0..=1.0).contains(&f) || !f.is_finite() {
                return Err(AssembleError::InvalidPlan(format!("fraction for `{s}` is {f}")));
            }
        }
        let sum: f64 = self.fractions.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AssembleError::InvalidPlan(format!("fractions sum to {sum}")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AssembleError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let plan: Self = serde_json::from_str(&text).map_err(|e| AssembleError::SchemaViolation {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Hamilton apportionment of `total` seats by `weights`; ties in the
/// remainder go to the earlier key.
pub fn largest_remainder(weights: &BTreeMap<String, f64>, total: u64) -> BTreeMap<String, u64> {
    let sum: f64 = weights.values().sum();
    let mut out = BTreeMap::new();
    let mut rems = Vec::new();
    let mut given = 0;
    for (k, &w) in weights {
        let exact = if sum > 0.0 { w / sum * total as f64 } else { 0.0 };
        let floor = exact.floor() as u64;
        given += floor;
        out.insert(k.clone(), floor);
        rems.push((exact - floor as f64, k.clone()));
    }
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (_, k) in rems.into_iter().take(total.saturating_sub(given) as usize) {
        *out.get_mut(&k).unwrap() += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustEvent {
    pub round: u32,
    pub split: String,
    pub quota: u64,
    pub available: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub total: u64,
    pub counts: BTreeMap<String, u64>,
    /// Exact share of each split that was never exhausted, after
    /// redistribution.
    pub targets: BTreeMap<String, f64>,
    pub exhausted: Vec<ExhaustEvent>,
}

/// Splits `total` across splits by the plan, exhausting and redistributing
/// when a quota exceeds the split's size and the plan allows it.
pub fn allocate(sizes: &BTreeMap<String, u64>, plan: &RebalancePlan, total: u64) -> Result<Allocation, AssembleError> {
    plan.validate()?;
    for s in plan.fractions.keys() {
        if !sizes.contains_key(s) {
            return Err(AssembleError::UnknownSplit(s.clone()));
        }
    }
    let mut active: BTreeMap<String, f64> = plan.fractions.clone();
    let mut counts = BTreeMap::new();
    let mut exhausted = Vec::new();
    let mut remaining = total;
    let mut round = 0;
    loop {
        let quotas = largest_remainder(&active, remaining);
        let over: Vec<(String, u64)> = quotas
            .iter()
            .filter(|(s, &q)| q > sizes[*s])
            .map(|(s, &q)| (s.clone(), q))
            .collect();
        if over.is_empty() {
            let sum: f64 = active.values().sum();
            let targets = active
                .iter()
                .map(|(s, &w)| (s.clone(), if sum > 0.0 { w / sum * remaining as f64 } else { 0.0 }))
                .collect();
            counts.extend(quotas);
            return Ok(Allocation {
                total,
                counts,
                targets,
                exhausted,
            });
        }
        for (split, quota) in over {
            let available = sizes[&split];
            if !plan.allow_exhaust {
                return Err(AssembleError::InfeasibleQuota {
                    split,
                    quota,
                    available,
                });
            }
            log::info!("rebalance: split {split} exhausted ({available} of {quota} wanted), redistributing");
            remaining -= available;
            active.remove(&split);
            counts.insert(split.clone(), available);
            exhausted.push(ExhaustEvent {
                round,
                split,
                quota,
                available,
            });
        }
        if active.is_empty() && remaining > 0 {
            let (split, quota) = (exhausted.last().unwrap().split.clone(), remaining);
            return Err(AssembleError::InfeasibleQuota {
                split,
                quota,
                available: 0,
            });
        }
        round += 1;
    }
}

/// Largest total whose plain apportionment fits every split.
pub fn max_feasible_total(sizes: &BTreeMap<String, u64>, plan: &RebalancePlan) -> u64 {
    let bound = plan
        .fractions
        .iter()
        .filter(|(_, &f)| f > 0.0)
        .map(|(s, &f)| (sizes.get(s).copied().unwrap_or(0) as f64 / f).floor() as u64)
        .min()
        .unwrap_or(0);
    let fits = |t: u64| {
        largest_remainder(&plan.fractions, t)
            .iter()
            .all(|(s, &q)| q <= sizes.get(s).copied().unwrap_or(0))
    };
    let mut t = bound;
    while t > 0 && !fits(t) {
        t -= 1;
    }
    let cap: u64 = sizes.values().sum();
    while t < cap && fits(t + 1) {
        t += 1;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceReport {
    pub seed: u64,
    pub allocation: Allocation,
    pub available: BTreeMap<String, u64>,
    /// Realized share of the sampled dataset per split.
    pub proportions: BTreeMap<String, f64>,
}

/// Samples each split uniformly without replacement to its allocated count.
/// Output keeps plan order, and input order within a split.
pub fn rebalance(
    splits: &BTreeMap<String, Vec<Conversation>>,
    plan: &RebalancePlan,
    seed: u64,
) -> Result<(Vec<Conversation>, RebalanceReport), AssembleError> {
    let sizes: BTreeMap<String, u64> = splits.iter().map(|(s, v)| (s.clone(), v.len() as u64)).collect();
    plan.validate()?;
    for s in plan.fractions.keys() {
        if !sizes.contains_key(s) {
            return Err(AssembleError::UnknownSplit(s.clone()));
        }
    }
    let total = plan.total_target.unwrap_or_else(|| max_feasible_total(&sizes, plan));
    let allocation = allocate(&sizes, plan, total)?;
    let mut out = Vec::with_capacity(total as usize);
    for (split, &n) in &allocation.counts {
        let data = &splits[split];
        let picks = sample_indices(data.len(), n as usize, labeled_seed(seed, split))
            .expect("allocation never exceeds split size");
        out.extend(picks.into_iter().map(|i| data[i].clone()));
    }
    let proportions = allocation
        .counts
        .iter()
        .map(|(s, &n)| (s.clone(), if total > 0 { n as f64 / total as f64 } else { 0.0 }))
        .collect();
    let report = RebalanceReport {
        seed,
        allocation,
        available: sizes,
        proportions,
    };
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// Token statistics

pub const TOKEN_BIN_WIDTH: u64 = 50;
pub const TOKEN_OVERFLOW: u64 = 6000;

/// Whitespace-token counts in bins of 50 up to 6000, plus an overflow bucket
/// for anything longer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHistogram {
    pub bins: Vec<u64>,
    pub overflow: u64,
    pub count: u64,
    pub total_tokens: u64,
    pub max: u64,
}

impl Default for TokenHistogram {
    fn default() -> Self {
        Self {
            bins: vec![0; (TOKEN_OVERFLOW / TOKEN_BIN_WIDTH) as usize],
            overflow: 0,
            count: 0,
            total_tokens: 0,
            max: 0,
        }
    }
}

impl TokenHistogram {
    pub fn add(&mut self, tokens: u64) {
        self.count += 1;
        self.total_tokens += tokens;
        self.max = self.max.max(tokens);
        if tokens > TOKEN_OVERFLOW {
            self.overflow += 1;
        } else {
            let k = ((tokens / TOKEN_BIN_WIDTH) as usize).min(self.bins.len() - 1);
            self.bins[k] += 1;
        }
    }

    pub fn mass(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.overflow
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total_tokens as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub conversations: u64,
    pub turns: u64,
    pub words: u64,
    /// Every user turn.
    pub questions: TokenHistogram,
    /// Every assistant turn.
    pub answers: TokenHistogram,
    /// Keyed by turn position, starting at 0.
    pub per_turn: BTreeMap<usize, TokenHistogram>,
    pub per_split: BTreeMap<String, SplitManifest>,
}

impl DatasetStats {
    pub fn add(&mut self, conv: &Conversation) {
        self.conversations += 1;
        for (i, t) in conv.turns.iter().enumerate() {
            let n = whitespace_tokens(&t.content) as u64;
            self.turns += 1;
            self.words += n;
            match t.role {
                Role::User => self.questions.add(n),
                Role::Assistant => self.answers.add(n),
            }
            self.per_turn.entry(i).or_default().add(n);
        }
        self.per_split
            .entry(conv.split.clone())
            .or_insert_with(|| SplitManifest {
                split: conv.split.clone(),
                ..Default::default()
            })
            .add(conv);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,low,high,count\n");
        let mut series: Vec<(String, &TokenHistogram)> =
            vec![("question".into(), &self.questions), ("answer".into(), &self.answers)];
        series.extend(self.per_turn.iter().map(|(k, h)| (format!("turn_{k}"), h)));
        for (name, h) in series {
            for (k, c) in h.bins.iter().enumerate() {
                let lo = k as u64 * TOKEN_BIN_WIDTH;
                s.push_str(&format!("{name},{lo},{},{c}\n", lo + TOKEN_BIN_WIDTH - 1));
            }
            s.push_str(&format!("{name},{},,{}\n", TOKEN_OVERFLOW + 1, h.overflow));
        }
        s
    }
}

pub fn token_stats<'a>(convs: impl IntoIterator<Item = &'a Conversation>) -> DatasetStats {
    let mut s = DatasetStats::default();
    for c in convs {
        s.add(c);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Meta, Turn};
    use proptest::prelude::*;

    fn conv(split: &str, q: &str, a: &str) -> Conversation {
        Conversation::new(split, vec![Turn::user(q), Turn::assistant(a)], Meta::default())
    }

    fn split_of(name: &str, n: usize) -> Vec<Conversation> {
        (0..n).map(|i| conv(name, &format!("{name} q{i}"), "a")).collect()
    }

    fn plan(f: &[(&str, f64)], total: Option<u64>, exhaust: bool) -> RebalancePlan {
        RebalancePlan {
            fractions: f.iter().map(|(s, x)| (s.to_string(), *x)).collect(),
            total_target: total,
            allow_exhaust: exhaust,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        assert_eq!(write_jsonl(&p, &[]).unwrap(), 0);
        assert_eq!(std::fs::read(&p).unwrap(), b"");
        assert!(read_jsonl(&p).unwrap().is_empty());

        let mut m = Meta::default();
        m.extra
            .insert("zeta".into(), serde_json::json!({"b": 1.5, "a": [1, "ü"]}));
        let c = Conversation::new(
            "math",
            vec![
                Turn::user("Let $v \\in \\mathbb{R}^3$ — ∑ᵢ xᵢ² ≤ 1"),
                Turn::assistant("∎ \u{1F600}\n\ttab"),
            ],
            m,
        );
        write_jsonl(&p, [&c]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let back = read_jsonl(&p).unwrap();
        assert_eq!(back, vec![c]);
        write_jsonl(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn schema_violation_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = to_line(&conv("x", "q", "a"));
        let bad = good.replacen("\"role\":\"assistant\",", "", 1);
        std::fs::write(&p, format!("{good}\n{good}\n{bad}\n")).unwrap();
        let mut r = JsonlReader::open(&p).unwrap();
        assert!(r.next().unwrap().is_ok());
        assert!(r.next().unwrap().is_ok());
        match r.next().unwrap() {
            Err(AssembleError::SchemaViolation { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_jsonl(&dir.path().join("none")),
            Err(AssembleError::Io { .. })
        ));
    }

    #[test]
    fn simple_rebalance() {
        let splits = BTreeMap::from([
            ("a".to_string(), split_of("a", 1000)),
            ("b".to_string(), split_of("b", 1000)),
        ]);
        let (out, r) = rebalance(&splits, &plan(&[("a", 0.75), ("b", 0.25)], Some(1200), false), 1).unwrap();
        assert_eq!(out.len(), 1200);
        assert_eq!(
            r.allocation.counts,
            BTreeMap::from([("a".into(), 900), ("b".into(), 300)])
        );

        let one = BTreeMap::from([("a".to_string(), split_of("a", 50))]);
        let (out, _) = rebalance(&one, &plan(&[("a", 1.0)], Some(50), false), 9).unwrap();
        assert_eq!(out, one["a"]);
        let (out, r) = rebalance(&one, &plan(&[("a", 1.0)], None, false), 9).unwrap();
        assert_eq!((out.len(), r.allocation.total), (50, 50));
    }

    #[test]
    fn rebalance_errors() {
        let splits = BTreeMap::from([
            ("a".to_string(), split_of("a", 10)),
            ("b".to_string(), split_of("b", 100)),
        ]);
        let p = plan(&[("a", 0.5), ("b", 0.5)], Some(100), false);
        assert!(matches!(
            rebalance(&splits, &p, 0),
            Err(AssembleError::InfeasibleQuota { ref split, quota: 50, available: 10 }) if split == "a"
        ));
        let p = plan(&[("a", 0.5), ("c", 0.5)], Some(10), false);
        assert!(matches!(rebalance(&splits, &p, 0), Err(AssembleError::UnknownSplit(s)) if s == "c"));
        let p = plan(&[("a", 0.5), ("b", 0.4)], Some(10), false);
        assert!(matches!(rebalance(&splits, &p, 0), Err(AssembleError::InvalidPlan(_))));
        let p = plan(&[("a", 0.5), ("b", 0.5)], Some(111), true);
        assert!(matches!(
            rebalance(&splits, &p, 0),
            Err(AssembleError::InfeasibleQuota { .. })
        ));

        let p = plan(&[("a", 0.5), ("b", 0.5)], Some(100), true);
        let (out, r) = rebalance(&splits, &p, 0).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(r.allocation.counts["a"], 10);
        assert_eq!(r.allocation.counts["b"], 90);
        assert_eq!(r.allocation.exhausted.len(), 1);
    }

    #[test]
    fn max_feasible() {
        let sizes = BTreeMap::from([("a".to_string(), 10u64), ("b".to_string(), 100)]);
        let p = plan(&[("a", 0.5), ("b", 0.5)], None, false);
        // At 21 the tied remainder goes to `a`, which would need 11.
        assert_eq!(max_feasible_total(&sizes, &p), 20);
        assert!(allocate(&sizes, &p, 21).is_err());
        let p = plan(&[("a", 0.4), ("b", 0.6)], None, false);
        // 26 gives a 10.4 -> 10 and b 15.6 -> 16.
        assert_eq!(max_feasible_total(&sizes, &p), 26);
    }

    #[test]
    fn token_histograms() {
        assert_eq!(whitespace_tokens("hello world"), 2);
        assert_eq!(whitespace_tokens("a  b\tc\n"), 3);
        let long = vec!["w"; 6500].join(" ");
        let convs = vec![
            conv("x", "one two", &long),
            Conversation::new(
                "y",
                vec![
                    Turn::user("a"),
                    Turn::assistant("b c"),
                    Turn::user("d"),
                    Turn::assistant("e"),
                ],
                Meta::default(),
            ),
        ];
        let s = token_stats(&convs);
        assert_eq!(s.answers.overflow, 1);
        assert_eq!(s.answers.max, 6500);
        assert_eq!(s.questions.mass(), 3);
        assert_eq!(s.answers.mass(), 3);
        assert_eq!(s.per_turn[&0].count, 2);
        assert_eq!(s.per_turn[&3].count, 1);
        assert_eq!(s.words, 2 + 6500 + 1 + 2 + 1 + 1);
        assert_eq!(s.per_split["y"].turns, 4);
        assert!(s.to_csv().contains("answer,6001,,1"));
        // 6000 exactly is the last regular bin.
        let mut h = TokenHistogram::default();
        h.add(6000);
        h.add(0);
        assert_eq!((h.overflow, h.bins[119], h.bins[0]), (0, 1, 1));
    }

    proptest! {
        #[test]
        fn apportionment_invariants(
            sizes in prop::collection::vec(1u64..500, 2..6),
            weights in prop::collection::vec(1u32..100, 6),
            seed in any::<u64>(),
        ) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("s{i}")).collect();
            let wsum: u32 = weights[..sizes.len()].iter().sum();
            let fractions: BTreeMap<String, f64> = names
                .iter()
                .zip(&weights)
                .map(|(n, &w)| (n.clone(), w as f64 / wsum as f64))
                .collect();
            let mut p = RebalancePlan { fractions, total_target: None, allow_exhaust: true };
            if (p.fractions.values().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Ok(());
            }
            let splits: BTreeMap<String, Vec<Conversation>> = names
                .iter()
                .zip(&sizes)
                .map(|(n, &k)| (n.clone(), split_of(n, k as usize)))
                .collect();
            let total: u64 = sizes.iter().sum::<u64>() * 2 / 3;
            p.total_target = Some(total);
            let (out, r) = rebalance(&splits, &p, seed).unwrap();
            prop_assert_eq!(out.len() as u64, total);
            let (again, _) = rebalance(&splits, &p, seed).unwrap();
            prop_assert_eq!(&again, &out);
            let exhausted: Vec<&str> = r.allocation.exhausted.iter().map(|e| e.split.as_str()).collect();
            for (s, &n) in &r.allocation.counts {
                prop_assert!(n <= splits[s].len() as u64);
                if exhausted.contains(&s.as_str()) {
                    prop_assert_eq!(n, splits[s].len() as u64);
                } else {
                    prop_assert!((n as f64 - r.allocation.targets[s]).abs() < 1.0);
                }
            }
            // No record is drawn twice.
            let ids: std::collections::HashSet<&str> = out.iter().map(|c| c.id.as_str()).collect();
            prop_assert_eq!(ids.len(), out.len());
        }
    }
}
