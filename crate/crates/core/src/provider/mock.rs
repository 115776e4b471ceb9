//! Deterministic offline provider that models LLM mode collapse.
//!
//! The model keeps a vocabulary of `M` latent items ranked by preference and
//! draws from a Zipf(`M`, `s`) law. A static prompt samples one item directly,
//! so repeated calls pile up on the head of the distribution. A generator
//! prompt first writes a list of `L` items (distinct with probability
//! `list_faithfulness`) and then emits the entry at the requested index,
//! which flattens the distribution of what is finally emitted. Nesting two
//! lists multiplies the reachable outcomes.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use super::{Completion, GenerationError, GenerationRequest, Provider};
use crate::seed;
use crate::text::whitespace_tokens;

pub const MOCK_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MockError {
    #[error("chosen index {index} outside list of length {len}")]
    InvalidIndex { index: u32, len: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseModel {
    pub vocabulary_size: u32,
    pub zipf_exponent: f64,
    /// Probability that a requested list holds distinct items.
    pub list_faithfulness: f64,
}

impl Default for CollapseModel {
    fn default() -> Self {
        Self {
            vocabulary_size: 500,
            zipf_exponent: 1.1,
            list_faithfulness: 0.95,
        }
    }
}

impl CollapseModel {
    pub fn new(vocabulary_size: u32, zipf_exponent: f64, list_faithfulness: f64) -> Self {
        Self {
            vocabulary_size,
            zipf_exponent,
            list_faithfulness,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocabulary_size < 1 {
            return Err("vocabulary_size must be >= 1".into());
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err("zipf_exponent must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.list_faithfulness) {
            return Err("list_faithfulness must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Rank-frequency law over `0..n`; rank 0 is the most likely.
#[derive(Debug, Clone)]
pub struct Zipf {
    weights: Vec<f64>,
    cdf: Vec<f64>,
}

impl Zipf {
    /// `exponent = f64::INFINITY` puts all mass on rank 0.
    pub fn new(n: u32, exponent: f64) -> Self {
        let n = n.max(1) as usize;
        let weights: Vec<f64> = if exponent.is_infinite() {
            (0..n).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect()
        } else {
            (1..=n).map(|k| (k as f64).powf(-exponent)).collect()
        };
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self { weights, cdf }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as u32
    }

    /// Weighted sampling without replacement (exponential keys), in draw order.
    fn sample_distinct(&self, rng: &mut impl Rng, k: usize) -> Vec<u32> {
        let mut keyed: Vec<(f64, u32)> = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
                (key, i as u32)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        keyed.truncate(k);
        keyed.into_iter().map(|(_, i)| i).collect()
    }
}

/// A list of `len` items as the model would write it.
fn write_list(model: &CollapseModel, zipf: &Zipf, rng: &mut impl Rng, len: u32) -> Vec<u32> {
    let len = len as usize;
    if rng.gen::<f64>() < model.list_faithfulness {
        let mut items = zipf.sample_distinct(rng, len.min(zipf.len()));
        while items.len() < len {
            items.push(zipf.sample(rng));
        }
        items
    } else {
        (0..len).map(|_| zipf.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    StaticItem,
    ListThenSelect {
        list_len: u32,
        chosen_index: u32,
    },
    NestedListThenSelect {
        outer_len: u32,
        outer_index: u32,
        inner_len: u32,
        inner_index: u32,
    },
    QaPair,
}

fn check_index(index: u32, len: u32) -> Result<(), MockError> {
    if index < 1 || index > len {
        Err(MockError::InvalidIndex { index, len })
    } else {
        Ok(())
    }
}

/// Latent outcome of one call: the chosen item at each list level.
pub fn sample_latent(model: &CollapseModel, seed: u64, kind: &PromptKind) -> Result<Vec<u32>, MockError> {
    let zipf = Zipf::new(model.vocabulary_size, model.zipf_exponent);
    let mut rng = seed::rng(seed);
    Ok(match *kind {
        PromptKind::StaticItem | PromptKind::QaPair => vec![zipf.sample(&mut rng)],
        PromptKind::ListThenSelect { list_len, chosen_index } => {
            check_index(chosen_index, list_len)?;
            let list = write_list(model, &zipf, &mut rng, list_len);
            vec![list[chosen_index as usize - 1]]
        }
        PromptKind::NestedListThenSelect {
            outer_len,
            outer_index,
            inner_len,
            inner_index,
        } => {
            check_index(outer_index, outer_len)?;
            check_index(inner_index, inner_len)?;
            let outer = write_list(model, &zipf, &mut rng, outer_len);
            let inner = write_list(model, &zipf, &mut rng, inner_len);
            vec![outer[outer_index as usize - 1], inner[inner_index as usize - 1]]
        }
    })
}

/// Renders the model's answer to one of the canonical experiment prompts.
///
/// The text is a pure function of `(model, seed, kind)`.
pub fn mock_respond(model: &CollapseModel, seed: u64, kind: &PromptKind) -> Result<String, MockError> {
    let zipf = Zipf::new(model.vocabulary_size, model.zipf_exponent);
    let mut rng = seed::rng(seed);
    let out = match *kind {
        PromptKind::StaticItem => item_name(zipf.sample(&mut rng)),
        PromptKind::QaPair => {
            let item = item_name(zipf.sample(&mut rng));
            format!(
                "Question: What is {item} and where is it used?\nAnswer: {item} is a recurring example. {}",
                filler_sentence(&mut rng)
            )
        }
        PromptKind::ListThenSelect { list_len, chosen_index } => {
            check_index(chosen_index, list_len)?;
            let list = write_list(model, &zipf, &mut rng, list_len);
            let mut s = numbered("Items:", list.iter().map(|&i| item_name(i)));
            s.push_str("\nChosen item:\n");
            s.push_str(&item_name(list[chosen_index as usize - 1]));
            s
        }
        PromptKind::NestedListThenSelect {
            outer_len,
            outer_index,
            inner_len,
            inner_index,
        } => {
            check_index(outer_index, outer_len)?;
            check_index(inner_index, inner_len)?;
            let outer = write_list(model, &zipf, &mut rng, outer_len);
            let inner = write_list(model, &zipf, &mut rng, inner_len);
            let base = item_name(outer[outer_index as usize - 1]);
            let mut s = numbered("Items:", outer.iter().map(|&i| item_name(i)));
            s.push_str("\nChosen item:\n");
            s.push_str(&base);
            s.push('\n');
            s.push_str(&numbered("Variants:", inner.iter().map(|&i| variant_name(i, &base))));
            s.push_str("\nChosen variant:\n");
            s.push_str(&variant_name(inner[inner_index as usize - 1], &base));
            s
        }
    };
    Ok(out)
}

/// The final line following the last `Chosen …:` heading, if any.
pub fn chosen_item(text: &str) -> Option<&str> {
    let idx = text.rfind("\nChosen ")?;
    let rest = &text[idx + 1..];
    let colon = rest.find(':')?;
    let tail = rest[colon + 1..].trim();
    let line = tail.lines().next()?.trim();
    let line = line
        .split_once(". ")
        .filter(|(n, _)| n.chars().all(|c| c.is_ascii_digit()))
        .map_or(line, |(_, rest)| rest);
    Some(line)
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "ne", "vi", "da", "pe", "gu", "zo", "fi", "ha", "ju",
];

/// Injective pronounceable name for an item id.
pub fn item_name(id: u32) -> String {
    let mut n = id as u64 + 1;
    let mut parts = Vec::new();
    while n > 0 {
        parts.push(SYLLABLES[(n % 16) as usize]);
        n /= 16;
    }
    parts.reverse();
    let word = parts.concat();
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => word,
    }
}

fn variant_name(id: u32, base: &str) -> String {
    format!("{} {}", item_name(id), base)
}

fn numbered(heading: &str, items: impl Iterator<Item = String>) -> String {
    let mut s = String::from(heading);
    for (i, item) in items.enumerate() {
        s.push_str(&format!("\n{}. {}", i + 1, item));
    }
    s
}

fn filler_sentence(rng: &mut impl Rng) -> String {
    const VERBS: [&str; 8] = [
        "supports",
        "constrains",
        "reshapes",
        "explains",
        "extends",
        "balances",
        "limits",
        "reveals",
    ];
    const NOUNS: [&str; 8] = [
        "the broader system",
        "later observations",
        "practical outcomes",
        "the underlying model",
        "common assumptions",
        "its neighbours",
        "measured effects",
        "long-run behaviour",
    ];
    let a = item_name(rng.gen_range(0..4096));
    format!(
        "In practice {a} {} {}.",
        VERBS[rng.gen_range(0..VERBS.len())],
        NOUNS[rng.gen_range(0..NOUNS.len())]
    )
}

fn filler_range(rng: &mut impl Rng, sentences: std::ops::Range<usize>) -> String {
    let n = rng.gen_range(sentences);
    filler(rng, n)
}

fn filler(rng: &mut impl Rng, sentences: usize) -> String {
    (0..sentences)
        .map(|_| filler_sentence(rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Output format requested by a prompt, inferred from its instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseFormat {
    Qa,
    Math,
    MultipleChoice,
    Writing,
    Instruction,
    Dialog,
    Colors,
    Plain,
}

/// What the mock "understands" from a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptReading {
    pub format: ResponseFormat,
    /// Requested list sizes, outermost first.
    pub list_sizes: Vec<u32>,
    /// Explicit indices the prompt asks to select, in order.
    pub indices: Vec<u32>,
    /// Hash of the prompt with numbers and booster removed.
    pub context: u64,
}

fn list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:numbered list of|list|write)\s+(\d+)\b(-?)").unwrap())
}

fn index_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(?:(?:state|print)\s+(?:the\s+)?(?:sub-?topic|topic|type|color number|variant number)|prompt about topic)\s+(\d+)\b",
        )
        .unwrap()
    })
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

impl PromptReading {
    pub fn of(prompt: &str, booster: &str) -> Self {
        let body = if !booster.is_empty() {
            prompt.strip_suffix(booster).unwrap_or(prompt).trim_end()
        } else {
            prompt
        };
        let format = if body.contains("\"User:\"") {
            ResponseFormat::Dialog
        } else if body.contains("\"Question2:\"") {
            ResponseFormat::Math
        } else if body.to_lowercase().contains("multiple-choice") {
            ResponseFormat::MultipleChoice
        } else if body.contains("\"Writing Prompt:\"") {
            ResponseFormat::Writing
        } else if body.contains("\"Instruction:\"") {
            ResponseFormat::Instruction
        } else if body.contains("\"Question:\"") {
            ResponseFormat::Qa
        } else if body.contains("\"Colors:\"") {
            ResponseFormat::Colors
        } else {
            ResponseFormat::Plain
        };
        let list_sizes = list_re()
            .captures_iter(body)
            // "list 1-20" is a numbering range, not a size.
            .filter(|c| c[2].is_empty())
            .filter_map(|c| c[1].parse().ok())
            .filter(|&n: &u32| n >= 1)
            .collect();
        let indices = index_re()
            .captures_iter(body)
            .filter_map(|c| c[1].parse().ok())
            .collect();
        let context = xxh3_64(digits_re().replace_all(body, "").as_bytes());
        Self {
            format,
            list_sizes,
            indices,
            context,
        }
    }
}

fn default_lift() -> f64 {
    1.5
}
fn default_bias() -> f64 {
    1.0
}

/// Settings of the mock provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub collapse: CollapseModel,
    /// Temperature multiplier applied when a non-empty booster is present.
    #[serde(default = "default_lift")]
    pub booster_lift: f64,
    /// Zipf exponent over list positions when the model picks an entry
    /// itself, at temperature 1.
    #[serde(default = "default_bias")]
    pub choice_bias: f64,
    #[serde(default)]
    pub refusal_rate: f64,
    /// Probability of dropping the final answer heading.
    #[serde(default)]
    pub malformed_rate: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            collapse: CollapseModel::default(),
            booster_lift: default_lift(),
            choice_bias: default_bias(),
            refusal_rate: 0.0,
            malformed_rate: 0.0,
        }
    }
}

pub struct MockProvider {
    name: String,
    config: MockConfig,
}

impl MockProvider {
    pub fn new(name: &str, config: MockConfig) -> Self {
        Self {
            name: name.to_string(),
            config,
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Text for `request`; a pure function of the provider seed, the
    /// request's sampling seed and its prompt text.
    pub fn respond(&self, request: &GenerationRequest) -> Result<String, GenerationError> {
        let prompt = &request.prompt;
        let mut rng = seed::rng(seed::mix64(
            self.config.seed ^ seed::mix64(prompt.seed) ^ xxh3_64(prompt.text.as_bytes()),
        ));
        if rng.gen::<f64>() < self.config.refusal_rate {
            return Err(GenerationError::SafetyRefusal(format!(
                "{}: blocked by mock safety filter",
                request.request_id
            )));
        }
        let reading = PromptReading::of(&prompt.text, &prompt.booster_used);
        let mut temperature = request.temperature;
        if !prompt.booster_used.is_empty() {
            temperature *= self.config.booster_lift;
        }
        // Temperature flattens every draw: list items and self-chosen indices.
        let at_temperature = |exponent: f64| {
            if temperature > 0.0 {
                exponent / temperature
            } else {
                f64::INFINITY
            }
        };
        let zipf = Zipf::new(
            self.config.collapse.vocabulary_size,
            at_temperature(self.config.collapse.zipf_exponent),
        );
        let choice_exponent = at_temperature(self.config.choice_bias);

        let mut levels = Vec::new();
        let mut lists = Vec::new();
        for (j, &len) in reading.list_sizes.iter().enumerate() {
            let list = write_list(&self.config.collapse, &zipf, &mut rng, len);
            let idx = match reading.indices.get(j) {
                Some(&i) if i >= 1 => i.min(len),
                _ => Zipf::new(len, choice_exponent).sample(&mut rng) + 1,
            };
            levels.push(list[idx as usize - 1]);
            lists.push((list, idx));
        }
        if levels.is_empty() {
            levels.push(zipf.sample(&mut rng));
        }

        let latent = Latent {
            context: reading.context,
            levels,
        };
        let mut text = render(reading.format, &latent, &lists, &mut rng);
        if rng.gen::<f64>() < self.config.malformed_rate {
            text = malform(reading.format, text);
        }
        Ok(text)
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Completion, GenerationError> {
        let text = self.respond(request)?;
        Ok(Completion {
            prompt_tokens: whitespace_tokens(&request.prompt.text) as u64,
            output_tokens: whitespace_tokens(&text) as u64,
            text,
            created_at: Some(MOCK_TIMESTAMP.to_string()),
        })
    }
}

struct Latent {
    context: u64,
    levels: Vec<u32>,
}

impl Latent {
    fn hash(&self) -> u64 {
        self.levels
            .iter()
            .fold(seed::mix64(self.context), |h, &l| seed::mix64(h ^ l as u64))
    }

    fn domain(&self) -> String {
        item_name((self.context % (1 << 20)) as u32)
    }

    /// Phrase naming the chosen concept; deeper levels refine the outer one.
    fn concept(&self) -> String {
        let offset = (self.context >> 20) as u32 % (1 << 16);
        let mut names: Vec<String> = self.levels.iter().map(|&l| item_name(l.wrapping_add(offset))).collect();
        names.reverse();
        names.join(" of ")
    }
}

const OPENERS: [&str; 6] = [
    "How does",
    "In what ways does",
    "Why does",
    "To what extent does",
    "Under which conditions does",
    "Through which mechanisms does",
];

fn render(format: ResponseFormat, latent: &Latent, lists: &[(Vec<u32>, u32)], rng: &mut ChaCha8Rng) -> String {
    let h = latent.hash();
    let concept = latent.concept();
    let domain = latent.domain();
    let opener = OPENERS[(h % OPENERS.len() as u64) as usize];
    let question = format!(
        "{opener} {concept} shape the practice of {domain}? Describe the conditions under which {concept} matters most. {}",
        filler_range(rng, 0..3)
    );
    let answer = format!(
        "{concept} shapes {domain} through several linked mechanisms. The first concerns how {concept} interacts with {}. {}",
        item_name((h >> 8) as u32 % 4096),
        filler_range(rng, 1..12)
    );
    let scaffold = scaffold(lists, latent);

    match format {
        ResponseFormat::Plain => item_name(latent.levels[0]),
        ResponseFormat::Colors => {
            let mut s = String::new();
            for (depth, (list, idx)) in lists.iter().enumerate() {
                let (heading, chosen) = if depth == 0 {
                    ("Colors:", "Chosen color:")
                } else {
                    ("Color variants:", "Chosen variant:")
                };
                s.push_str(&numbered(heading, list.iter().map(|&i| item_name(i))));
                s.push_str(&format!("\n{chosen}\n{}\n", item_name(list[*idx as usize - 1])));
            }
            if lists.is_empty() {
                s = item_name(latent.levels[0]);
            }
            s.trim_end().to_string()
        }
        ResponseFormat::Qa => format!("{scaffold}Question: {question}\nAnswer: {answer}"),
        ResponseFormat::Math => {
            const LEVELS: [&str; 4] = ["elementary", "high school", "college", "graduate"];
            let mut s = format!("{scaffold}Question: {question}\nAnswer: {answer}\n");
            for k in 2..=3 {
                s.push_str(&format!(
                    "Question{k}: Extend the previous result for {concept} to case {k}. {}\nAnswer{k}: Applying the same steps to case {k} gives a consistent value. {}\n",
                    filler(rng, 1),
                    filler_range(rng, 1..6)
                ));
            }
            s.push_str(&format!("Difficulty: {}", LEVELS[(h >> 16) as usize % 4]));
            s
        }
        ResponseFormat::MultipleChoice => {
            let letters = ['A', 'B', 'C', 'D'];
            let correct = letters[(h >> 4) as usize % 4];
            let mut s = format!("{scaffold}Question: Which statement about {concept} in {domain} is correct?\n");
            for (k, l) in letters.iter().enumerate() {
                s.push_str(&format!(
                    "{l}. {} relates to {concept}\n",
                    item_name(((h >> 12) as u32 % 4096) + k as u32)
                ));
            }
            s.push_str(&format!(
                "Answer: {correct}\nExplanation: {concept} is tied to option {correct}. {}",
                filler_range(rng, 1..5)
            ));
            s
        }
        ResponseFormat::Writing => {
            let kind = item_name((h >> 24) as u32 % 512);
            format!(
                "{scaffold}Writing Prompt: Write a document about {concept} for readers of {domain}. {}\nPassage: {answer}\nQuestion Types:\n1. Summary\n2. Rewrite\n3. Extension\nInstruction: Produce a {kind} version of the passage about {concept}. {}\nResponse: {}",
                filler(rng, 1),
                filler(rng, 1),
                filler_range(rng, 2..8)
            )
        }
        ResponseFormat::Instruction => {
            let mut s = format!("{scaffold}Instruction: {question}\nResponse: {answer}");
            if rng.gen_bool(0.3) {
                s.push_str(&format!(
                    "\nInstruction: Reformat the response about {concept} as a list. {}\nResponse: {}",
                    filler(rng, 1),
                    filler_range(rng, 1..5)
                ));
            }
            s
        }
        ResponseFormat::Dialog => {
            let mut s = format!("{scaffold}Selected topic: {concept}\n");
            s.push_str(&format!("User: {question}\nAssistant: {answer}\n"));
            let pairs = rng.gen_range(3..7);
            for _ in 0..pairs {
                s.push_str(&format!(
                    "User: Tell me more about {concept}. {}\nAssistant: {}\n",
                    filler(rng, 1),
                    filler_range(rng, 1..6)
                ));
            }
            s.trim_end().to_string()
        }
    }
}

fn scaffold(lists: &[(Vec<u32>, u32)], latent: &Latent) -> String {
    let offset = (latent.context >> 20) as u32 % (1 << 16);
    let mut s = String::new();
    for (depth, (list, idx)) in lists.iter().enumerate() {
        let heading = if depth == 0 { "Topics:" } else { "Subtopics:" };
        s.push_str(&numbered(
            heading,
            list.iter().map(|&i| item_name(i.wrapping_add(offset))),
        ));
        s.push_str(&format!(
            "\nChosen {}: {}. {}\n\n",
            if depth == 0 { "topic" } else { "subtopic" },
            idx,
            item_name(list[*idx as usize - 1].wrapping_add(offset))
        ));
    }
    s
}

fn malform(format: ResponseFormat, text: String) -> String {
    let marker = match format {
        ResponseFormat::Dialog => "\nAssistant:",
        ResponseFormat::Instruction | ResponseFormat::Writing => "\nResponse:",
        ResponseFormat::Qa | ResponseFormat::Math | ResponseFormat::MultipleChoice => "\nAnswer:",
        ResponseFormat::Colors | ResponseFormat::Plain => return text,
    };
    match text.find(marker) {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}
