//! Meta-prompt templates and their seeded instantiation.
//!
//! A template body contains `{name}` placeholder tokens (`{{` and `}}` render
//! literal braces). Each token is bound to exactly one [`PlaceholderSpec`]
//! describing how a value is drawn: a uniform index, a fixed list size, a
//! topic taken from a [`TopicList`], or a randomness booster appended to the
//! end of the prompt.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template body is empty")]
    EmptyBody,
    #[error("placeholder `{{{0}}}` has no matching spec")]
    UnboundPlaceholder(String),
    #[error("spec `{0}` does not occur in the template body")]
    UnusedSpec(String),
    #[error("spec `{0}` is declared more than once")]
    DuplicateSpec(String),
    #[error("invalid range for `{name}`: {reason}")]
    InvalidRange { name: String, reason: String },
    #[error("strategy {strategy} does not allow placeholder `{name}` of kind {kind:?}")]
    StrategyViolation {
        strategy: Strategy,
        name: String,
        kind: PlaceholderKind,
    },
    #[error("booster placeholder `{0}` must be the last token of the body")]
    BoosterNotTerminal(String),
    #[error("template needs topic list `{0}` but none was provided")]
    MissingTopicList(String),
    #[error("topic list `{0}` is empty")]
    EmptyTopicList(String),
    #[error("topic list `{list}` repeats entry `{entry}`")]
    DuplicateTopic { list: String, entry: String },
    #[error("invalid booster weights: {0}")]
    InvalidWeights(String),
    #[error("batch count must be at least 1")]
    InvalidCount,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    StaticConditional,
    GeneratorConditional,
    GeneratorConditionalUniform,
    GeneratorNested,
    GeneratorNestedUniform,
}

impl Strategy {
    pub fn is_uniform(self) -> bool {
        matches!(
            self,
            Strategy::GeneratorConditionalUniform | Strategy::GeneratorNestedUniform
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::StaticConditional => "static_conditional",
            Strategy::GeneratorConditional => "generator_conditional",
            Strategy::GeneratorConditionalUniform => "generator_conditional_uniform",
            Strategy::GeneratorNested => "generator_nested",
            Strategy::GeneratorNestedUniform => "generator_nested_uniform",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderKind {
    Index,
    ListSize,
    Topic,
    Booster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderSpec {
    pub name: String,
    pub kind: PlaceholderKind,
    /// Inclusive `[lo, hi]` for index placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(u32, u32)>,
    /// Topic-list name for topic placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Fixed value for list-size placeholders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u32>,
    /// List-size placeholder this index selects from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<String>,
}

impl PlaceholderSpec {
    pub fn index(name: &str, lo: u32, hi: u32) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceholderKind::Index,
            range: Some((lo, hi)),
            source: None,
            value: None,
            list: None,
        }
    }

    pub fn index_into(name: &str, lo: u32, hi: u32, list: &str) -> Self {
        Self {
            list: Some(list.to_string()),
            ..Self::index(name, lo, hi)
        }
    }

    pub fn list_size(name: &str, value: u32) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceholderKind::ListSize,
            range: None,
            source: None,
            value: Some(value),
            list: None,
        }
    }

    pub fn topic(name: &str, source: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceholderKind::Topic,
            range: None,
            source: Some(source.to_string()),
            value: None,
            list: None,
        }
    }

    pub fn booster(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: PlaceholderKind::Booster,
            range: None,
            source: None,
            value: None,
            list: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

/// Splits a body into literal runs and placeholder slots.
fn tokenize(body: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut rest = body;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("{{") {
            lit.push('{');
            rest = &rest[2..];
            continue;
        }
        if rest.starts_with("}}") {
            lit.push('}');
            rest = &rest[2..];
            continue;
        }
        if c == '{' {
            if let Some(name) = slot_name(&rest[1..]) {
                if !lit.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut lit)));
                }
                rest = &rest[name.len() + 2..];
                out.push(Segment::Slot(name.to_string()));
                continue;
            }
        }
        lit.push(c);
        rest = &rest[c.len_utf8()..];
    }
    if !lit.is_empty() {
        out.push(Segment::Literal(lit));
    }
    out
}

fn slot_name(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let mut chars = name.chars();
    let first = chars.next()?;
    if !(first.is_ascii_alphabetic() || first == '_') {
        return None;
    }
    if chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Some(name)
    } else {
        None
    }
}

/// A validated meta-prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct PromptTemplate {
    pub id: String,
    pub split: String,
    pub strategy: Strategy,
    pub body: String,
    pub placeholders: Vec<PlaceholderSpec>,
    segments: Vec<Segment>,
}

/// On-disk template document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateFile {
    pub id: String,
    pub split: String,
    pub strategy: Strategy,
    pub body: String,
    #[serde(default)]
    pub placeholders: Vec<PlaceholderSpec>,
}

impl TryFrom<TemplateFile> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(f: TemplateFile) -> Result<Self, Self::Error> {
        parse_template(&f.id, &f.body, f.placeholders, f.strategy, &f.split)
    }
}

impl From<PromptTemplate> for TemplateFile {
    fn from(t: PromptTemplate) -> Self {
        TemplateFile {
            id: t.id,
            split: t.split,
            strategy: t.strategy,
            body: t.body,
            placeholders: t.placeholders,
        }
    }
}

/// Validates a template body against its placeholder specs.
pub fn parse_template(
    id: &str,
    source_text: &str,
    specs: Vec<PlaceholderSpec>,
    strategy: Strategy,
    split: &str,
) -> Result<PromptTemplate, TemplateError> {
    if source_text.trim().is_empty() {
        return Err(TemplateError::EmptyBody);
    }
    let segments = tokenize(source_text);

    let mut declared = HashSet::new();
    for spec in &specs {
        if !declared.insert(spec.name.as_str()) {
            return Err(TemplateError::DuplicateSpec(spec.name.clone()));
        }
    }
    let used: BTreeSet<&str> = segments
        .iter()
        .filter_map(|s| match s {
            Segment::Slot(n) => Some(n.as_str()),
            Segment::Literal(_) => None,
        })
        .collect();
    if let Some(missing) = used.iter().find(|n| !declared.contains(*n)) {
        return Err(TemplateError::UnboundPlaceholder(missing.to_string()));
    }
    if let Some(unused) = specs.iter().find(|s| !used.contains(s.name.as_str())) {
        return Err(TemplateError::UnusedSpec(unused.name.clone()));
    }

    for spec in &specs {
        validate_spec(spec, &specs)?;
        let allowed = match strategy {
            Strategy::Static => spec.kind == PlaceholderKind::Booster,
            s if s.is_uniform() => spec.kind != PlaceholderKind::Index,
            _ => true,
        };
        if !allowed {
            return Err(TemplateError::StrategyViolation {
                strategy,
                name: spec.name.clone(),
                kind: spec.kind,
            });
        }
        if spec.kind == PlaceholderKind::Booster {
            check_booster_terminal(&segments, &spec.name)?;
        }
    }

    Ok(PromptTemplate {
        id: id.to_string(),
        split: split.to_string(),
        strategy,
        body: source_text.to_string(),
        placeholders: specs,
        segments,
    })
}

fn validate_spec(spec: &PlaceholderSpec, all: &[PlaceholderSpec]) -> Result<(), TemplateError> {
    let bad = |reason: &str| TemplateError::InvalidRange {
        name: spec.name.clone(),
        reason: reason.to_string(),
    };
    match spec.kind {
        PlaceholderKind::Index => {
            let (lo, hi) = spec.range.ok_or_else(|| bad("index placeholder needs a range"))?;
            if lo < 1 || lo > hi {
                return Err(bad(&format!("expected 1 <= lo <= hi, got [{lo}, {hi}]")));
            }
            if let Some(list) = &spec.list {
                let size = all
                    .iter()
                    .find(|s| &s.name == list && s.kind == PlaceholderKind::ListSize)
                    .and_then(|s| s.value)
                    .ok_or_else(|| bad(&format!("bound list `{list}` is not a list_size spec")))?;
                if hi > size {
                    return Err(bad(&format!("hi = {hi} exceeds list size {size}")));
                }
            }
        }
        PlaceholderKind::ListSize => match spec.value {
            Some(v) if v >= 1 => {}
            _ => return Err(bad("list_size value must be >= 1")),
        },
        PlaceholderKind::Topic => {
            if spec.source.as_deref().is_none_or(str::is_empty) {
                return Err(bad("topic placeholder needs a source list"));
            }
        }
        PlaceholderKind::Booster => {}
    }
    Ok(())
}

fn check_booster_terminal(segments: &[Segment], name: &str) -> Result<(), TemplateError> {
    let tail = segments
        .iter()
        .rposition(|s| !matches!(s, Segment::Literal(l) if l.trim().is_empty()));
    let is_last = matches!(tail.map(|i| &segments[i]), Some(Segment::Slot(n)) if n == name);
    let occurrences = segments
        .iter()
        .filter(|s| matches!(s, Segment::Slot(n) if n == name))
        .count();
    if is_last && occurrences == 1 {
        Ok(())
    } else {
        Err(TemplateError::BoosterNotTerminal(name.to_string()))
    }
}

impl PromptTemplate {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| TemplateError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn spec(&self, name: &str) -> Option<&PlaceholderSpec> {
        self.placeholders.iter().find(|s| s.name == name)
    }

    /// Names of topic lists the template draws from.
    pub fn topic_sources(&self) -> impl Iterator<Item = &str> {
        self.placeholders
            .iter()
            .filter(|s| s.kind == PlaceholderKind::Topic)
            .filter_map(|s| s.source.as_deref())
    }
}

/// A named list of topics, loaded from a one-per-line text file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicList {
    name: String,
    entries: Vec<String>,
}

impl TopicList {
    pub fn new(name: &str, entries: Vec<String>) -> Result<Self, TemplateError> {
        if entries.is_empty() {
            return Err(TemplateError::EmptyTopicList(name.to_string()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if e.trim().is_empty() {
                return Err(TemplateError::EmptyTopicList(name.to_string()));
            }
            if !seen.insert(e.as_str()) {
                return Err(TemplateError::DuplicateTopic {
                    list: name.to_string(),
                    entry: e.clone(),
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            entries,
        })
    }

    /// Parses one topic per line; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Self::new(name, entries)
    }

    pub fn load(name: &str, path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(name, &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Topic lists addressable by name.
#[derive(Debug, Clone, Default)]
pub struct TopicCatalog {
    lists: BTreeMap<String, TopicList>,
}

impl TopicCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, list: TopicList) {
        self.lists.insert(list.name.clone(), list);
    }

    pub fn get(&self, name: &str) -> Option<&TopicList> {
        self.lists.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }
}

impl From<TopicList> for TopicCatalog {
    fn from(list: TopicList) -> Self {
        let mut c = TopicCatalog::new();
        c.insert(list);
        c
    }
}

/// The default randomness boosters, the last one being "no booster".
pub const DEFAULT_BOOSTERS: [&str; 7] = [
    "Be creative.",
    "Be different.",
    "Be smart.",
    "Be weird.",
    "Don't ask the first thing you think of.",
    "Be creative and don't ask the first thing you think of.",
    "",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoosterFile", into = "BoosterFile")]
pub struct BoosterSet {
    options: Vec<String>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoosterFile {
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl TryFrom<BoosterFile> for BoosterSet {
    type Error = TemplateError;

    fn try_from(f: BoosterFile) -> Result<Self, Self::Error> {
        match f.weights {
            Some(w) => BoosterSet::weighted(f.options, w),
            None => BoosterSet::uniform(f.options),
        }
    }
}

impl From<BoosterSet> for BoosterFile {
    fn from(b: BoosterSet) -> Self {
        BoosterFile {
            options: b.options,
            weights: Some(b.weights),
        }
    }
}

impl Default for BoosterSet {
    fn default() -> Self {
        Self::uniform(DEFAULT_BOOSTERS.iter().map(|s| s.to_string()).collect()).expect("default boosters are valid")
    }
}

impl BoosterSet {
    pub fn uniform(options: Vec<String>) -> Result<Self, TemplateError> {
        let n = options.len();
        if n == 0 {
            return Err(TemplateError::InvalidWeights("no options".into()));
        }
        Self::weighted(options, vec![1.0 / n as f64; n])
    }

    pub fn weighted(options: Vec<String>, weights: Vec<f64>) -> Result<Self, TemplateError> {
        if options.is_empty() || options.len() != weights.len() {
            return Err(TemplateError::InvalidWeights(format!(
                "{} options but {} weights",
                options.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TemplateError::InvalidWeights("weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TemplateError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { options, weights })
    }

    /// A set containing only the empty booster.
    pub fn none() -> Self {
        Self {
            options: vec![String::new()],
            weights: vec![1.0],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| TemplateError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> &str {
        let dist = WeightedIndex::new(&self.weights).expect("validated weights");
        &self.options[dist.sample(rng)]
    }
}

/// A concrete prompt ready to send to a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantiatedPrompt {
    pub template_id: String,
    pub text: String,
    pub bindings: BTreeMap<String, String>,
    pub seed: u64,
    pub booster_used: String,
}

/// Draws a value for every placeholder and renders the prompt text.
///
/// Placeholders are drawn in declaration order from a single ChaCha8 stream
/// seeded with `seed`, so the result is a pure function of the arguments.
pub fn instantiate(
    template: &PromptTemplate,
    seed: u64,
    topics: Option<&TopicCatalog>,
    boosters: &BoosterSet,
) -> Result<InstantiatedPrompt, TemplateError> {
    let mut rng = seed::rng(seed);
    let mut bindings = BTreeMap::new();
    let mut booster_used = String::new();

    for spec in &template.placeholders {
        let value = match spec.kind {
            PlaceholderKind::Index => {
                let (lo, hi) = spec.range.expect("validated");
                rng.gen_range(lo..=hi).to_string()
            }
            PlaceholderKind::ListSize => spec.value.expect("validated").to_string(),
            PlaceholderKind::Topic => {
                let source = spec.source.as_deref().expect("validated");
                let list = topics
                    .and_then(|c| c.get(source))
                    .ok_or_else(|| TemplateError::MissingTopicList(source.to_string()))?;
                if list.is_empty() {
                    return Err(TemplateError::EmptyTopicList(source.to_string()));
                }
                list.entries[rng.gen_range(0..list.len())].clone()
            }
            PlaceholderKind::Booster => {
                booster_used = boosters.draw(&mut rng).to_string();
                booster_used.clone()
            }
        };
        bindings.insert(spec.name.clone(), value);
    }

    let mut text = String::with_capacity(template.body.len() + 64);
    for seg in &template.segments {
        match seg {
            Segment::Literal(l) => text.push_str(l),
            Segment::Slot(name) => {
                let spec = template.spec(name).expect("validated");
                if spec.kind == PlaceholderKind::Booster {
                    let trimmed = text.trim_end().len();
                    text.truncate(trimmed);
                    if !booster_used.is_empty() {
                        text.push(' ');
                        text.push_str(&booster_used);
                    }
                } else {
                    text.push_str(&bindings[name]);
                }
            }
        }
    }
    if template.placeholders.iter().any(|s| s.kind == PlaceholderKind::Booster) {
        let trimmed = text.trim_end().len();
        text.truncate(trimmed);
    }

    Ok(InstantiatedPrompt {
        template_id: template.id.clone(),
        text,
        bindings,
        seed,
        booster_used,
    })
}

/// A reproducible stream of prompts where item `k` uses
/// `child_seed(master_seed, k)`.
#[derive(Debug, Clone)]
pub struct BatchPlan<'a> {
    template: &'a PromptTemplate,
    count: u64,
    master_seed: u64,
    topics: Option<&'a TopicCatalog>,
    boosters: &'a BoosterSet,
}

pub fn plan_batch<'a>(
    template: &'a PromptTemplate,
    count: u64,
    master_seed: u64,
    topics: Option<&'a TopicCatalog>,
    boosters: &'a BoosterSet,
) -> Result<BatchPlan<'a>, TemplateError> {
    if count == 0 {
        return Err(TemplateError::InvalidCount);
    }
    Ok(BatchPlan {
        template,
        count,
        master_seed,
        topics,
        boosters,
    })
}

impl<'a> BatchPlan<'a> {
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn item(&self, k: u64) -> Result<InstantiatedPrompt, TemplateError> {
        instantiate(
            self.template,
            seed::child_seed(self.master_seed, k),
            self.topics,
            self.boosters,
        )
    }

    /// Items `start..count`, for resuming an interrupted batch.
    pub fn iter_from(&self, start: u64) -> impl Iterator<Item = Result<InstantiatedPrompt, TemplateError>> + '_ {
        (start..self.count).map(move |k| self.item(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<InstantiatedPrompt, TemplateError>> + '_ {
        self.iter_from(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEN_COND: &str = "List 40 subtopics in the domain of {random_topic}.   State subtopic {N}.  Then write a question that is not about subtopic {N}, but can only be answered with expertise in subtopic {N}, and then write the answer. Both the question and answer should be long. The name of the subtopic should not appear in the question.  Begin your questions with \"Question:\" and your answer with \"Answer:\".{booster}";

    fn gen_cond() -> PromptTemplate {
        parse_template(
            "academic_gc",
            GEN_COND,
            vec![
                PlaceholderSpec::topic("random_topic", "general_topics"),
                PlaceholderSpec::index("N", 1, 40),
                PlaceholderSpec::booster("booster"),
            ],
            Strategy::GeneratorConditional,
            "academic",
        )
        .unwrap()
    }

    #[test]
    fn static_template_without_placeholders() {
        let body = "Write a random complex question and its long answer. Begin your question with \"Question:\" and your answer with \"Answer:\".";
        let t = parse_template("s", body, vec![], Strategy::Static, "academic").unwrap();
        assert!(t.placeholders.is_empty());
        let p = instantiate(&t, 9, None, &BoosterSet::default()).unwrap();
        assert_eq!(p.text, body);
        assert!(p.bindings.is_empty());
    }

    #[test]
    fn unbound_and_unused() {
        let err = parse_template("x", "State {N}.", vec![], Strategy::GeneratorConditional, "a").unwrap_err();
        assert!(matches!(err, TemplateError::UnboundPlaceholder(n) if n == "N"));
        let err = parse_template(
            "x",
            "nothing here",
            vec![PlaceholderSpec::index("N", 1, 3)],
            Strategy::GeneratorConditional,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::UnusedSpec(n) if n == "N"));
    }

    #[test]
    fn invalid_ranges() {
        for spec in [
            PlaceholderSpec::index("N", 0, 3),
            PlaceholderSpec::index("N", 5, 3),
            PlaceholderSpec::list_size("N", 0),
        ] {
            let err = parse_template("x", "{N}", vec![spec], Strategy::GeneratorNested, "a").unwrap_err();
            assert!(matches!(err, TemplateError::InvalidRange { .. }), "{err}");
        }
        let err = parse_template(
            "x",
            "List {n1}. State {N1}.",
            vec![
                PlaceholderSpec::list_size("n1", 30),
                PlaceholderSpec::index_into("N1", 1, 60, "n1"),
            ],
            Strategy::GeneratorNested,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::InvalidRange { .. }));
    }

    #[test]
    fn strategy_constraints() {
        let err = parse_template(
            "x",
            "Pick {N}",
            vec![PlaceholderSpec::index("N", 1, 3)],
            Strategy::Static,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::StrategyViolation { .. }));
        let err = parse_template(
            "x",
            "Pick {N}",
            vec![PlaceholderSpec::index("N", 1, 3)],
            Strategy::GeneratorNestedUniform,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::StrategyViolation { .. }));
        parse_template(
            "x",
            "Write something.{booster}",
            vec![PlaceholderSpec::booster("booster")],
            Strategy::Static,
            "a",
        )
        .unwrap();
    }

    #[test]
    fn booster_must_be_last() {
        let err = parse_template(
            "x",
            "{booster} then more",
            vec![PlaceholderSpec::booster("booster")],
            Strategy::Static,
            "a",
        )
        .unwrap_err();
        assert!(matches!(err, TemplateError::BoosterNotTerminal(_)));
    }

    #[test]
    fn brace_escapes() {
        let t = parse_template(
            "x",
            "Use {{json}} and {{ but {N}}}",
            vec![PlaceholderSpec::index("N", 2, 2)],
            Strategy::GeneratorConditional,
            "a",
        )
        .unwrap();
        let p = instantiate(&t, 0, None, &BoosterSet::none()).unwrap();
        assert_eq!(p.text, "Use {json} and { but 2}");
    }

    #[test]
    fn crime_and_deviance_rendering() {
        let t = gen_cond();
        let topics = TopicCatalog::from(TopicList::new("general_topics", vec!["Crime and deviance".into()]).unwrap());
        // Search for a seed that draws N = 14 and the empty booster.
        let p = (0..10_000u64)
            .map(|s| instantiate(&t, s, Some(&topics), &BoosterSet::default()).unwrap())
            .find(|p| p.bindings["N"] == "14" && p.booster_used.is_empty())
            .unwrap();
        assert!(p
            .text
            .starts_with("List 40 subtopics in the domain of Crime and deviance.   State subtopic 14."));
        assert!(p.text.ends_with("\"Answer:\"."));
    }

    #[test]
    fn booster_is_a_single_space_suffix() {
        let t = gen_cond();
        let topics = TopicCatalog::from(TopicList::new("general_topics", vec!["X".into()]).unwrap());
        for s in 0..200 {
            let p = instantiate(&t, s, Some(&topics), &BoosterSet::default()).unwrap();
            if p.booster_used.is_empty() {
                assert!(p.text.ends_with("\"Answer:\"."));
            } else {
                let suffix = format!("\"Answer:\". {}", p.booster_used);
                assert!(p.text.ends_with(&suffix), "{}", p.text);
            }
        }
    }

    #[test]
    fn missing_topics() {
        let t = gen_cond();
        let err = instantiate(&t, 0, None, &BoosterSet::default()).unwrap_err();
        assert!(matches!(err, TemplateError::MissingTopicList(s) if s == "general_topics"));
        let other = TopicCatalog::from(TopicList::new("other", vec!["a".into()]).unwrap());
        assert!(instantiate(&t, 0, Some(&other), &BoosterSet::default()).is_err());
        assert!(matches!(
            TopicList::parse("empty", "# only a comment\n\n"),
            Err(TemplateError::EmptyTopicList(_))
        ));
        assert!(matches!(
            TopicList::parse("d", "a\nb\na\n"),
            Err(TemplateError::DuplicateTopic { .. })
        ));
    }

    #[test]
    fn default_boosters() {
        let b = BoosterSet::default();
        assert_eq!(b.options().len(), 7);
        assert!(b.options().iter().any(String::is_empty));
        assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(BoosterSet::weighted(vec!["a".into()], vec![0.5]).is_err());
    }

    #[test]
    fn template_file_roundtrip() {
        let t = gen_cond();
        let json = serde_json::to_string(&t).unwrap();
        let back: PromptTemplate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn batch_requires_positive_count() {
        let t = gen_cond();
        let b = BoosterSet::default();
        assert!(matches!(
            plan_batch(&t, 0, 0, None, &b),
            Err(TemplateError::InvalidCount)
        ));
    }
}
