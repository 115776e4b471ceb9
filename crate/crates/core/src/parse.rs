//! Turns raw completions into conversations.
//!
//! Text is first cut into segments at heading markers (`Question:`,
//! `User:`, ...). Anything before the first turn heading is generator
//! scaffolding and is dropped, as is every segment opened by one of the
//! rule's scaffold markers. The remaining segments are checked against the
//! split's grammar.
//!
//! Headings are recognised at the start of a line in any case, with optional
//! markdown emphasis (`**Answer:**`, `## Answer`) and an optional space before
//! a pair number (`Question 2:`). In the middle of a line only the exact
//! spelling preceded by a space or tab counts.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Difficulty, Meta, Turn};
use crate::provider::RawRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grammar {
    /// One or more `Question:`/`Answer:` pairs.
    Qa,
    /// One or more `Instruction:`/`Response:` pairs.
    InstructionResponse,
    /// A fixed sequence of distinct heading pairs, the first mandatory.
    MultiQaNumbered,
    Dialog,
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadingPair {
    pub user: String,
    pub assistant: String,
}

impl HeadingPair {
    pub fn new(user: &str, assistant: &str) -> Self {
        Self {
            user: user.into(),
            assistant: assistant.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRule {
    pub split: String,
    pub grammar: Grammar,
    pub headings: Vec<HeadingPair>,
    #[serde(default)]
    pub scaffold_markers: Vec<String>,
    /// Trailing label copied into `meta.difficulty`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty_marker: Option<String>,
    /// Heading whose text is appended to a multiple-choice answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_marker: Option<String>,
    /// Heading whose first line is copied into `meta.topic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_marker: Option<String>,
}

const QA_SCAFFOLD: [&str; 5] = ["Topics", "Subtopics", "Chosen topic", "Chosen subtopic", "Sub-topics"];

impl ParseRule {
    fn base(split: &str, grammar: Grammar, headings: &[(&str, &str)], scaffold: &[&str]) -> Self {
        Self {
            split: split.into(),
            grammar,
            headings: headings.iter().map(|(u, a)| HeadingPair::new(u, a)).collect(),
            scaffold_markers: scaffold.iter().map(|s| s.to_string()).collect(),
            difficulty_marker: None,
            explanation_marker: None,
            topic_marker: None,
        }
    }

    /// The rule shipped for one of the nine dataset splits.
    pub fn builtin(split: &str) -> Option<Self> {
        let rule = match split {
            "academic" | "mmlu" | "code" | "general" => {
                Self::base(split, Grammar::Qa, &[("Question", "Answer")], &QA_SCAFFOLD)
            }
            "multiple_choice" => Self {
                explanation_marker: Some("Explanation".into()),
                ..Self::base(split, Grammar::MultipleChoice, &[("Question", "Answer")], &QA_SCAFFOLD)
            },
            "math" => Self {
                difficulty_marker: Some("Difficulty".into()),
                ..Self::base(
                    split,
                    Grammar::MultiQaNumbered,
                    &[
                        ("Question", "Answer"),
                        ("Question2", "Answer2"),
                        ("Question3", "Answer3"),
                    ],
                    &QA_SCAFFOLD,
                )
            },
            "writing" => Self::base(
                split,
                Grammar::MultiQaNumbered,
                &[("Writing Prompt", "Passage"), ("Instruction", "Response")],
                &["Topics", "Question Types", "Chosen topic", "Chosen type"],
            ),
            "task" => Self::base(
                split,
                Grammar::InstructionResponse,
                &[("Instruction", "Response")],
                &["Tasks", "Task types", "Chosen task"],
            ),
            "dialog" => Self {
                topic_marker: Some("Selected topic".into()),
                ..Self::base(split, Grammar::Dialog, &[("User", "Assistant")], &["Topics"])
            },
            _ => return None,
        };
        Some(rule)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.headings.is_empty() {
            return Err(format!("rule for `{}` has no headings", self.split));
        }
        if self.grammar != Grammar::MultiQaNumbered && self.headings.len() != 1 {
            return Err(format!(
                "{:?} grammar takes exactly one heading pair, got {}",
                self.grammar,
                self.headings.len()
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.all_markers() {
            if canonical(&name).is_empty() {
                return Err("empty heading".into());
            }
            if !seen.insert(canonical(&name)) {
                return Err(format!("heading `{name}` listed twice"));
            }
        }
        Ok(())
    }

    fn all_markers(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .headings
            .iter()
            .flat_map(|p| [p.user.clone(), p.assistant.clone()])
            .collect();
        v.extend(self.aux_markers_ref().map(String::from));
        v.extend(self.scaffold_markers.iter().cloned());
        v
    }
}

pub fn builtin_rules() -> Vec<ParseRule> {
    [
        "academic",
        "mmlu",
        "multiple_choice",
        "writing",
        "task",
        "code",
        "math",
        "dialog",
        "general",
    ]
    .iter()
    .filter_map(|s| ParseRule::builtin(s))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    MissingHeading,
    EmptyTurn,
    UnbalancedTurns,
    UnknownDifficulty,
    TruncatedOutput,
    ScaffoldOnly,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub request_id: String,
    pub reason: FailureReason,
    pub snippet: String,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} near {:?}", self.request_id, self.reason, self.snippet)
    }
}

impl std::error::Error for ParseFailure {}

pub const SNIPPET_CHARS: usize = 200;

fn snippet(s: &str) -> String {
    s.chars().take(SNIPPET_CHARS).collect()
}

/// Failure counts by reason.
pub fn summarize<'a>(failures: impl IntoIterator<Item = &'a ParseFailure>) -> BTreeMap<FailureReason, u64> {
    let mut m = BTreeMap::new();
    for f in failures {
        *m.entry(f.reason).or_insert(0) += 1;
    }
    m
}

// ---------------------------------------------------------------------------
// Heading scanner

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    User(usize),
    Assistant(usize),
    Difficulty,
    Explanation,
    Topic,
    Scaffold,
}

#[derive(Debug, Clone)]
struct Segment<'a> {
    slot: Slot,
    /// The remainder of the text from the heading onwards.
    from_heading: &'a str,
    content: &'a str,
}

struct Scanner {
    line_start: Regex,
    lead: Regex,
    mid_line: Regex,
    slots: BTreeMap<String, Slot>,
}

fn canonical(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Regex source for a heading name: inner spaces stretch, and a trailing pair
/// number may be preceded by one space.
fn name_pattern(name: &str) -> String {
    let name = name.trim();
    let digits = name.len() - name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (stem, num) = name.split_at(name.len() - digits);
    let words: Vec<String> = stem.split_whitespace().map(regex::escape).collect();
    let mut p = words.join(r"[ \t]+");
    if !num.is_empty() {
        p.push_str(r"[ \t]?");
        p.push_str(num);
    }
    p
}

impl Scanner {
    fn new(rule: &ParseRule) -> Self {
        let mut slots = BTreeMap::new();
        for (k, p) in rule.headings.iter().enumerate() {
            slots.insert(canonical(&p.user), Slot::User(k));
            slots.insert(canonical(&p.assistant), Slot::Assistant(k));
        }
        for (m, slot) in [
            (&rule.difficulty_marker, Slot::Difficulty),
            (&rule.explanation_marker, Slot::Explanation),
            (&rule.topic_marker, Slot::Topic),
        ] {
            if let Some(m) = m {
                slots.entry(canonical(m)).or_insert(slot);
            }
        }
        for m in &rule.scaffold_markers {
            slots.entry(canonical(m)).or_insert(Slot::Scaffold);
        }

        let mut all: Vec<&str> = rule
            .headings
            .iter()
            .flat_map(|p| [p.user.as_str(), p.assistant.as_str()])
            .chain(rule.aux_markers_ref())
            .chain(rule.scaffold_markers.iter().map(String::as_str))
            .collect();
        // Leftmost-first alternation: longer names must be tried first.
        all.sort_by_key(|n| std::cmp::Reverse(n.len()));
        let names = all.iter().map(|n| name_pattern(n)).collect::<Vec<_>>().join("|");
        let inline: Vec<String> = all
            .iter()
            .filter(|n| !rule.scaffold_markers.iter().any(|s| s == *n))
            .map(|n| name_pattern(n))
            .collect();

        const EM: &str = r"\*\*|__|\*|_";
        let body = format!(
            r"[ \t>]*(?:#{{1,6}}[ \t]*)?(?P<o>{EM})?[ \t]*(?P<n>{names})[ \t]*(?P<c1>{EM})?[ \t]*:[ \t]*(?P<c2>{EM})?"
        );
        let line_start = Regex::new(&format!("(?im)^{body}")).expect("heading regex");
        let lead = Regex::new(&format!(r"(?i)\A{body}")).expect("heading regex");
        let mid_line = Regex::new(&format!(r"[ \t](?P<n>{}):", inline.join("|"))).expect("heading regex");
        Self {
            line_start,
            lead,
            mid_line,
            slots,
        }
    }

    /// Heading matches as (start, end, slot), in text order, non-overlapping.
    fn line_heading(&self, c: &regex::Captures) -> Option<(usize, usize, Slot)> {
        let whole = c.get(0).unwrap();
        let mut end = whole.end();
        // Closing emphasis is only consumed when it closes an opening one;
        // otherwise it belongs to the content (`Answer: *italic*`).
        if let Some(c2) = c.name("c2") {
            if c.name("o").is_none() || c.name("c1").is_some() {
                end = c2.start();
            }
        }
        let slot = *self.slots.get(&canonical(c.name("n").unwrap().as_str()))?;
        Some((whole.start(), end, slot))
    }

    /// Heading matches as (start, end, slot), in text order, non-overlapping.
    fn headings(&self, text: &str) -> Vec<(usize, usize, Slot)> {
        let mut found: Vec<(usize, usize, Slot)> = self
            .line_start
            .captures_iter(text)
            .filter_map(|c| self.line_heading(&c))
            .collect();
        for c in self.mid_line.captures_iter(text) {
            let whole = c.get(0).unwrap();
            let name = c.name("n").unwrap();
            if let Some(&slot) = self.slots.get(&canonical(name.as_str())) {
                found.push((name.start(), whole.end(), slot));
            }
        }
        found.sort_by_key(|&(s, e, _)| (s, std::cmp::Reverse(e)));
        let mut out: Vec<(usize, usize, Slot)> = Vec::with_capacity(found.len());
        for h in found {
            if out.last().is_some_and(|l| h.0 < l.1) {
                continue;
            }
            out.push(h);
            // A heading directly after another one starts its own content,
            // so it is read as if it opened a line.
            loop {
                let end = out.last().unwrap().1;
                let p = end + (text[end..].len() - text[end..].trim_start().len());
                match self.lead.captures(&text[p..]).and_then(|c| self.line_heading(&c)) {
                    Some((s, e, slot)) if e > 0 => out.push((p + s, p + e, slot)),
                    _ => break,
                }
            }
        }
        out
    }

    fn segments<'a>(&self, text: &'a str) -> Vec<Segment<'a>> {
        let hs = self.headings(text);
        hs.iter()
            .enumerate()
            .map(|(i, &(start, end, slot))| {
                let stop = hs.get(i + 1).map_or(text.len(), |h| h.0);
                Segment {
                    slot,
                    from_heading: &text[start..],
                    content: text[end..stop].trim(),
                }
            })
            .collect()
    }
}

impl ParseRule {
    fn aux_markers_ref(&self) -> impl Iterator<Item = &str> {
        [&self.difficulty_marker, &self.explanation_marker, &self.topic_marker]
            .into_iter()
            .flatten()
            .map(String::as_str)
    }
}

// ---------------------------------------------------------------------------
// Grammar checks

struct Draft {
    turns: Vec<Turn>,
    meta: Meta,
}

type Outcome = Result<Draft, (FailureReason, String)>;

fn fail<T>(reason: FailureReason, region: &str) -> Result<T, (FailureReason, String)> {
    Err((reason, snippet(region)))
}

fn looks_like_scaffold(text: &str) -> bool {
    static LIST: OnceLock<Regex> = OnceLock::new();
    let re = LIST.get_or_init(|| Regex::new(r"(?m)^[ \t]*(?:\d+[.)]|[-*•])[ \t]+\S").unwrap());
    re.is_match(text)
}

/// Failure for a text with no usable turn heading.
fn no_turns(text: &str, segs: &[Segment]) -> (FailureReason, String) {
    let reason = if !segs.is_empty() || looks_like_scaffold(text) {
        FailureReason::ScaffoldOnly
    } else {
        FailureReason::MissingHeading
    };
    (reason, snippet(text.trim_start()))
}

/// Checks a turn segment's content, telling truncation apart from an empty turn.
fn turn_content<'a>(segs: &[Segment<'a>], i: usize) -> Result<&'a str, (FailureReason, String)> {
    let s = &segs[i];
    if !s.content.is_empty() {
        return Ok(s.content);
    }
    if i + 1 == segs.len() {
        fail(FailureReason::TruncatedOutput, s.from_heading)
    } else {
        fail(FailureReason::EmptyTurn, s.from_heading)
    }
}

fn is_turn(s: &Segment) -> bool {
    matches!(s.slot, Slot::User(_) | Slot::Assistant(_))
}

fn parse_difficulty(segs: &[Segment], meta: &mut Meta) -> Result<(), (FailureReason, String)> {
    let Some(seg) = segs.iter().rev().find(|s| s.slot == Slot::Difficulty) else {
        meta.flag("missing_difficulty");
        return Ok(());
    };
    let label = seg
        .content
        .lines()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| c.is_whitespace() || "\"'*_`.“”".contains(c));
    match label.parse::<Difficulty>() {
        Ok(d) => {
            meta.difficulty = Some(d);
            Ok(())
        }
        Err(_) => fail(FailureReason::UnknownDifficulty, seg.from_heading),
    }
}

/// Repeating pairs of a single heading pair (qa, instruction_response).
fn pairs(text: &str, segs: &[Segment]) -> Outcome {
    let turns_idx: Vec<usize> = (0..segs.len()).filter(|&i| is_turn(&segs[i])).collect();
    if turns_idx.is_empty() {
        return Err(no_turns(text, segs));
    }
    let mut turns = Vec::new();
    for (n, &i) in turns_idx.iter().enumerate() {
        let want_user = n % 2 == 0;
        match (segs[i].slot, want_user) {
            (Slot::User(_), true) | (Slot::Assistant(_), false) => {}
            _ => return fail(FailureReason::UnbalancedTurns, segs[i].from_heading),
        }
        let c = turn_content(segs, i)?;
        turns.push(if want_user { Turn::user(c) } else { Turn::assistant(c) });
    }
    if turns.len() % 2 == 1 {
        return fail(
            FailureReason::UnbalancedTurns,
            segs[*turns_idx.last().unwrap()].from_heading,
        );
    }
    Ok(Draft {
        turns,
        meta: Meta::default(),
    })
}

fn numbered(text: &str, segs: &[Segment], rule: &ParseRule) -> Outcome {
    let mut meta = Meta::default();
    if rule.difficulty_marker.is_some() {
        parse_difficulty(segs, &mut meta)?;
    }
    let turns_idx: Vec<usize> = (0..segs.len()).filter(|&i| is_turn(&segs[i])).collect();
    if turns_idx.is_empty() {
        return Err(no_turns(text, segs));
    }
    let mut turns = Vec::new();
    for (n, &i) in turns_idx.iter().enumerate() {
        let pair = n / 2;
        let expected = if n % 2 == 0 {
            Slot::User(pair)
        } else {
            Slot::Assistant(pair)
        };
        if segs[i].slot != expected {
            return fail(FailureReason::UnbalancedTurns, segs[i].from_heading);
        }
        let c = turn_content(segs, i)?;
        turns.push(if n % 2 == 0 { Turn::user(c) } else { Turn::assistant(c) });
    }
    if turns.len() % 2 == 1 {
        return fail(
            FailureReason::UnbalancedTurns,
            segs[*turns_idx.last().unwrap()].from_heading,
        );
    }
    Ok(Draft { turns, meta })
}

fn dialog(text: &str, segs: &[Segment]) -> Outcome {
    let mut meta = Meta::default();
    if let Some(seg) = segs.iter().find(|s| s.slot == Slot::Topic) {
        let topic = seg
            .content
            .lines()
            .next()
            .unwrap_or("")
            .trim_matches(|c: char| c.is_whitespace() || "\"'*_`“”".contains(c));
        if !topic.is_empty() {
            meta.topic = Some(topic.to_string());
        }
    }
    let turns_idx: Vec<usize> = (0..segs.len()).filter(|&i| is_turn(&segs[i])).collect();
    if turns_idx.is_empty() {
        return Err(no_turns(text, segs));
    }
    let mut turns: Vec<Turn> = Vec::new();
    for &i in &turns_idx {
        let c = turn_content(segs, i)?;
        let user = matches!(segs[i].slot, Slot::User(_));
        match turns.last_mut() {
            Some(last) if (last.role == crate::conversation::Role::User) == user => {
                last.content.push_str("\n\n");
                last.content.push_str(c);
                meta.flag("merged_turns");
            }
            None if !user => meta.flag("dropped_leading_assistant"),
            _ => turns.push(if user { Turn::user(c) } else { Turn::assistant(c) }),
        }
    }
    if turns.len() % 2 == 1 {
        turns.pop();
        meta.flag("dropped_trailing_user");
    }
    if turns.is_empty() {
        return fail(FailureReason::UnbalancedTurns, segs[turns_idx[0]].from_heading);
    }
    if turns.len() < 8 {
        meta.flag("short_dialog");
    }
    Ok(Draft { turns, meta })
}

fn multiple_choice(text: &str, segs: &[Segment]) -> Outcome {
    let mut meta = Meta::default();
    let q = segs.iter().position(|s| matches!(s.slot, Slot::User(_)));
    let Some(q) = q else {
        return Err(no_turns(text, segs));
    };
    let question = turn_content(segs, q)?;
    let Some(a) = (q + 1..segs.len()).find(|&i| matches!(segs[i].slot, Slot::Assistant(_))) else {
        return fail(FailureReason::UnbalancedTurns, segs[q].from_heading);
    };
    if segs[q + 1..a].iter().any(|s| matches!(s.slot, Slot::User(_))) {
        return fail(FailureReason::UnbalancedTurns, segs[q].from_heading);
    }
    let explanation = segs[a + 1..]
        .iter()
        .position(|s| s.slot == Slot::Explanation)
        .map(|k| a + 1 + k);
    let answer = if segs[a].content.is_empty() && explanation == Some(a + 1) {
        // "Answer:" immediately followed by "Explanation:" leaves no letter.
        return fail(FailureReason::EmptyTurn, segs[a].from_heading);
    } else {
        turn_content(segs, a)?
    };
    let content = match explanation {
        Some(e) if !segs[e].content.is_empty() => format!("{answer}\n\n{}", segs[e].content),
        _ => {
            if answer.lines().count() <= 1 {
                meta.flag("no_explanation");
            }
            answer.to_string()
        }
    };
    Ok(Draft {
        turns: vec![Turn::user(question), Turn::assistant(content)],
        meta,
    })
}

fn run(text: &str, rule: &ParseRule) -> Outcome {
    let scanner = Scanner::new(rule);
    let segs = scanner.segments(text);
    if text.trim().is_empty() {
        return fail(FailureReason::MissingHeading, text);
    }
    match rule.grammar {
        Grammar::Qa | Grammar::InstructionResponse => pairs(text, &segs),
        Grammar::MultiQaNumbered => numbered(text, &segs, rule),
        Grammar::Dialog => dialog(text, &segs),
        Grammar::MultipleChoice => multiple_choice(text, &segs),
    }
}

fn finish(raw: &RawRecord, rule: &ParseRule, outcome: Outcome) -> Result<Conversation, ParseFailure> {
    match outcome {
        Ok(Draft { turns, mut meta }) => {
            meta.request_id = Some(raw.request_id.clone());
            meta.template_id = Some(raw.template_id.clone());
            meta.seed = Some(raw.seed);
            meta.booster = Some(raw.booster.clone());
            meta.provider = Some(raw.provider.clone());
            meta.created_at = raw.created_at.clone();
            Ok(Conversation::new(rule.split.clone(), turns, meta))
        }
        Err((reason, snippet)) => Err(ParseFailure {
            request_id: raw.request_id.clone(),
            reason,
            snippet,
        }),
    }
}

fn text_of(raw: &RawRecord) -> &str {
    raw.text.as_deref().unwrap_or("")
}

/// Parses one completion with the grammar named by `rule`.
pub fn parse(raw: &RawRecord, rule: &ParseRule) -> Result<Conversation, ParseFailure> {
    finish(raw, rule, run(text_of(raw), rule))
}

pub fn parse_multi_qa(raw: &RawRecord, rule: &ParseRule) -> Result<Conversation, ParseFailure> {
    assert_eq!(rule.grammar, Grammar::MultiQaNumbered);
    parse(raw, rule)
}

pub fn parse_dialog(raw: &RawRecord, rule: &ParseRule) -> Result<Conversation, ParseFailure> {
    assert_eq!(rule.grammar, Grammar::Dialog);
    parse(raw, rule)
}

pub fn parse_multiple_choice(raw: &RawRecord, rule: &ParseRule) -> Result<Conversation, ParseFailure> {
    assert_eq!(rule.grammar, Grammar::MultipleChoice);
    parse(raw, rule)
}

/// Re-renders a conversation with the rule's headings, so that parsing the
/// result yields the same turns.
pub fn render(conv: &Conversation, rule: &ParseRule) -> String {
    let mut s = String::new();
    if let (Some(m), Some(t)) = (&rule.topic_marker, &conv.meta.topic) {
        s.push_str(&format!("{m}: {t}\n"));
    }
    for (n, t) in conv.turns.iter().enumerate() {
        let pair = match rule.grammar {
            Grammar::MultiQaNumbered => &rule.headings[(n / 2).min(rule.headings.len() - 1)],
            _ => &rule.headings[0],
        };
        let h = if n % 2 == 0 { &pair.user } else { &pair.assistant };
        s.push_str(&format!("{h}: {}\n", t.content));
    }
    if let (Some(m), Some(d)) = (&rule.difficulty_marker, conv.meta.difficulty) {
        s.push_str(&format!("{m}: {}\n", d.label()));
    }
    s
}

/// Whether `content` has a line opening with one of the rule's scaffold markers.
pub fn has_scaffold(content: &str, rule: &ParseRule) -> bool {
    let scanner = Scanner::new(rule);
    scanner.headings(content).iter().any(|h| h.2 == Slot::Scaffold)
}

/// Whether `content` contains anything the rule would read as a heading.
pub fn has_heading(content: &str, rule: &ParseRule) -> bool {
    !Scanner::new(rule).headings(content).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::Role;
    use proptest::prelude::*;

    fn raw(text: &str) -> RawRecord {
        RawRecord {
            request_id: "r1".into(),
            template_id: "t".into(),
            seed: 7,
            booster: String::new(),
            prompt: String::new(),
            text: Some(text.into()),
            usage: None,
            provider: "mock".into(),
            created_at: None,
            error: None,
        }
    }

    fn rule(split: &str) -> ParseRule {
        ParseRule::builtin(split).unwrap()
    }

    fn ok(split: &str, text: &str) -> Conversation {
        parse(&raw(text), &rule(split)).unwrap_or_else(|e| panic!("{e}"))
    }

    fn err(split: &str, text: &str) -> FailureReason {
        parse(&raw(text), &rule(split)).unwrap_err().reason
    }

    #[test]
    fn rules_are_valid() {
        let rules = builtin_rules();
        assert_eq!(rules.len(), 9);
        for r in &rules {
            r.validate().unwrap();
        }
    }

    #[test]
    fn name_patterns() {
        let r = Regex::new(&format!("^(?:{})$", name_pattern("Question2"))).unwrap();
        assert!(r.is_match("Question2") && r.is_match("Question 2"));
        assert!(!r.is_match("Question  2"));
        let r = Regex::new(&format!("^(?:{})$", name_pattern("Writing Prompt"))).unwrap();
        assert!(r.is_match("Writing  Prompt"));
    }

    #[test]
    fn academic_scaffold_removed() {
        let text = "List of subtopics:\n1. Victimology\n2. Policing\n...\nSubtopic 14: Family violence\n\nQuestion: What are the unique characteristics and challenges associated with investigating and prosecuting domestic violence cases?\n\nAnswer: Domestic violence cases present several complexities and challenges for investigators and prosecutors:\n\n* **Intimate Nature of the Relationship:** The close and personal nature...";
        let c = ok("academic", text);
        assert_eq!(c.turns.len(), 2);
        assert!(c.turns[0].content.starts_with("What are the unique characteristics"));
        assert!(c.turns[1].content.starts_with("Domestic violence cases present"));
        assert!(c.turns[1]
            .content
            .contains("* **Intimate Nature of the Relationship:**"));
        for t in &c.turns {
            assert!(!t.content.contains("Victimology"));
        }
        c.validate().unwrap();
    }

    #[test]
    fn inline_headings() {
        let c = ok("academic", "List of subtopics... Question: Why? Answer: Because.");
        assert_eq!(c.turns[0].content, "Why?");
        assert_eq!(c.turns[1].content, "Because.");
    }

    #[test]
    fn trivial_failures() {
        assert_eq!(err("academic", ""), FailureReason::MissingHeading);
        assert_eq!(err("academic", "   \n"), FailureReason::MissingHeading);
        assert_eq!(err("academic", "Question: q only"), FailureReason::UnbalancedTurns);
        assert_eq!(
            err("academic", "Answer: a\nQuestion: q"),
            FailureReason::UnbalancedTurns
        );
        assert_eq!(err("academic", "Question: q\nAnswer:"), FailureReason::TruncatedOutput);
        assert_eq!(err("academic", "Question:\nAnswer: a"), FailureReason::EmptyTurn);
        assert_eq!(err("academic", "just some prose"), FailureReason::MissingHeading);
    }

    #[test]
    fn heading_tolerance() {
        for text in [
            "**Question:** q\n**Answer:** a",
            "**Question**: q\n**Answer**: a",
            "QUESTION: q\nanswer: a",
            "## Question\u{3a} q\n## Answer: a",
            "  Question : q\n  Answer : a",
        ] {
            let c = ok("academic", text);
            assert_eq!(
                (c.turns[0].content.as_str(), c.turns[1].content.as_str()),
                ("q", "a"),
                "{text}"
            );
        }
        // Emphasis that opens the content is kept.
        let c = ok("academic", "Question: *why* now\nAnswer: _because_");
        assert_eq!(c.turns[0].content, "*why* now");
        assert_eq!(c.turns[1].content, "_because_");
        // Mid-line headings need the exact spelling.
        let c = ok("academic", "Question: is the answer: yes?\nAnswer: a");
        assert_eq!(c.turns[0].content, "is the answer: yes?");
    }

    #[test]
    fn interior_formatting_is_verbatim() {
        let body = "Use this:\n\n```rust\nfn main() {\n    println!(\"hi\");\n}\n```\n\n$x^2$ and \\(y\\)";
        let c = ok("code", &format!("Question: How?\nAnswer:   {body}  \n"));
        assert_eq!(c.turns[1].content, body);
    }

    #[test]
    fn math_pairs_and_difficulty() {
        let c = ok("math", "Question: q\nAnswer: a\nDifficulty: college");
        assert_eq!(c.turns.len(), 2);
        assert_eq!(c.meta.difficulty, Some(Difficulty::College));
        let c = ok(
            "math",
            "Topics:\n1. Algebra\nQuestion: q1\nAnswer: a1\nQuestion 2: q2\nAnswer2: a2\nQuestion3: q3\nAnswer3: a3\n\nDifficulty: **High School**",
        );
        assert_eq!(c.turns.len(), 6);
        assert_eq!(c.turns[4].content, "q3");
        assert_eq!(c.turns[5].content, "a3");
        assert_eq!(c.meta.difficulty, Some(Difficulty::HighSchool));
        assert!(!c.meta.has_flag("missing_difficulty"));

        assert_eq!(err("math", "Difficulty: medium"), FailureReason::UnknownDifficulty);
        assert_eq!(
            err("math", "Question: q\nAnswer: a\nDifficulty: medium"),
            FailureReason::UnknownDifficulty
        );
        assert_eq!(
            err("math", "Question: q\nAnswer: a\nQuestion2: q2\nDifficulty: college"),
            FailureReason::UnbalancedTurns
        );
        assert_eq!(err("math", "Question2: q\nAnswer2: a"), FailureReason::UnbalancedTurns);
    }

    #[test]
    fn math_transcript_example() {
        let text = "Topic: Linear algebra\nSub-topics:\n1. Bases\n2. Null spaces\n\nQuestion: Determine if the following set of vectors forms a basis for $R^3$:\n\n$$v1 = [1, 2, -1]$$\n$$ v2 = [3, 1, 2]$$\n$$ v3 = [2, 3, 1]$$\n\nAnswer: Step 1: Check Linear Independence\n\nTo determine if the vectors form a basis, we must check linear independence.\n\nQuestion2: Find a basis for the null space of the matrix:\n\\[\nA = \\begin{bmatrix}\n1 & 2 & 3 \\\\\n4 & 5 & 6 \\\\\n7 & 8 & 9\n\\end{bmatrix}\n\\]\n\nAnswer2: Step 1: Find the Row Echelon Form of A\n\n$$\\text{Null Space Basis} = \\{(z, -2z, z) | z \\in R\\}$$";
        let c = ok("math", text);
        assert_eq!(c.turns.len(), 4);
        assert!(c.turns[0]
            .content
            .starts_with("Determine if the following set of vectors"));
        assert!(c.turns[2].content.contains("\\begin{bmatrix}"));
        assert!(c.turns[3].content.starts_with("Step 1: Find the Row Echelon Form"));
        assert_eq!(c.meta.difficulty, None);
        assert!(c.meta.has_flag("missing_difficulty"));
        c.validate().unwrap();
    }

    #[test]
    fn dialog_rules() {
        let c = ok(
            "dialog",
            "1. Cooking\n2. Skateboarding\nSelected topic: **Skateboarding**\nUser: a\nAssistant: b\nUser: c\nAssistant: d",
        );
        assert_eq!(c.meta.topic.as_deref(), Some("Skateboarding"));
        assert_eq!(c.turns.len(), 4);
        assert!(c.meta.has_flag("short_dialog"));

        let c = ok("dialog", "User: a\nUser: b\nAssistant: c");
        assert_eq!(c.turns.len(), 2);
        assert_eq!(c.turns[0].content, "a\n\nb");
        assert!(c.meta.has_flag("merged_turns"));

        let c = ok("dialog", "User: a\nAssistant: b\nUser: dangling");
        assert_eq!(c.turns.len(), 2);
        assert!(c.meta.has_flag("dropped_trailing_user"));

        let scaffold: String = (1..=30).map(|i| format!("{i}. Topic number {i}\n")).collect();
        assert_eq!(err("dialog", &scaffold), FailureReason::ScaffoldOnly);
        assert_eq!(err("dialog", "User:\nAssistant: b"), FailureReason::EmptyTurn);
        assert_eq!(err("dialog", "nothing here"), FailureReason::MissingHeading);
    }

    #[test]
    fn multiple_choice_rules() {
        let c = ok(
            "multiple_choice",
            "Question: Pick one\nA. x\nB. y\nC. z\nD. w\nAnswer: C\nExplanation: because z",
        );
        assert!(c.turns[0].content.ends_with("D. w"));
        assert_eq!(c.turns[1].content, "C\n\nbecause z");
        assert!(!c.meta.has_flag("no_explanation"));

        let c = ok("multiple_choice", "Question: Pick one\nA. x\nB. y\nAnswer: C");
        assert_eq!(c.turns[1].content, "C");
        assert!(c.meta.has_flag("no_explanation"));

        assert_eq!(
            err("multiple_choice", "Question: Pick one\nA. x\nB. y\nC. z\nD. w"),
            FailureReason::UnbalancedTurns
        );
        assert_eq!(err("multiple_choice", "A. x\nB. y"), FailureReason::MissingHeading);
    }

    #[test]
    fn writing_question_types_discarded() {
        let c = ok(
            "writing",
            "Topics:\n1. Label for a laptop\n2. Label for a vase\nWriting Prompt: Create a shipping label.\nPassage: **Shipping Label**\n\nFrom: John\nQuestion Types:\n1. Summary\n2. Story\nType 2: Story\nInstruction: Write a short story.\nResponse: Once upon a time.",
        );
        assert_eq!(c.turns.len(), 4);
        assert_eq!(c.turns[1].content, "**Shipping Label**\n\nFrom: John");
        assert_eq!(c.turns[2].content, "Write a short story.");
        for t in &c.turns {
            assert!(!has_scaffold(&t.content, &rule("writing")));
        }
    }

    #[test]
    fn meta_is_copied() {
        let c = ok("academic", "Question: q\nAnswer: a");
        assert_eq!(c.meta.request_id.as_deref(), Some("r1"));
        assert_eq!(c.meta.seed, Some(7));
        assert_eq!(c.meta.provider.as_deref(), Some("mock"));
        assert_eq!(c.turns[0].role, Role::User);
    }

    #[test]
    fn snippet_is_bounded() {
        let long = format!("Question: {}", "é".repeat(500));
        let f = parse(&raw(&long), &rule("academic")).unwrap_err();
        assert_eq!(f.snippet.chars().count(), SNIPPET_CHARS);
        assert!(f.snippet.starts_with("Question:"));
    }

    #[test]
    fn summary_counts() {
        let fs: Vec<ParseFailure> = ["", "x", "Question: q"]
            .iter()
            .map(|t| parse(&raw(t), &rule("academic")).unwrap_err())
            .collect();
        let s = summarize(&fs);
        assert_eq!(s[&FailureReason::MissingHeading], 2);
        assert_eq!(s[&FailureReason::UnbalancedTurns], 1);
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("Question: ".to_string()),
            Just("Answer: ".to_string()),
            Just("Question2: ".to_string()),
            Just("Answer 2:".to_string()),
            Just("**Answer:** ".to_string()),
            Just("User: ".to_string()),
            Just("Assistant:".to_string()),
            Just("Instruction: ".to_string()),
            Just("Response: ".to_string()),
            Just("Writing Prompt: ".to_string()),
            Just("Passage: ".to_string()),
            Just("Question Types:\n".to_string()),
            Just("Explanation: ".to_string()),
            Just("Difficulty: college".to_string()),
            Just("Selected topic: x\n".to_string()),
            Just("Topics:\n1. a\n".to_string()),
            Just("\n".to_string()),
            Just(" ".to_string()),
            Just("*".to_string()),
            "[a-zA-Z .:#*_\\n]{0,12}",
            any::<String>(),
        ]
    }

    fn arbitrary_text() -> impl Strategy<Value = String> {
        prop::collection::vec(fragment(), 0..24).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn totality_and_invariants(text in arbitrary_text(), split in prop::sample::select(vec![
            "academic", "multiple_choice", "writing", "task", "math", "dialog",
        ])) {
            let r = rule(split);
            match parse(&raw(&text), &r) {
                Ok(c) => {
                    prop_assert!(c.validate().is_ok(), "{:?}", c.validate());
                    for t in &c.turns {
                        prop_assert!(!has_scaffold(&t.content, &r));
                        prop_assert!(!has_heading(&t.content, &r), "{:?}", t.content);
                    }
                    prop_assert_eq!(c.meta.difficulty.is_some(), split == "math" && !c.meta.has_flag("missing_difficulty"));
                }
                Err(f) => prop_assert!(f.snippet.chars().count() <= SNIPPET_CHARS),
            }
        }

        #[test]
        fn bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
            let text = String::from_utf8_lossy(&bytes);
            for r in builtin_rules() {
                let _ = parse(&raw(&text), &r);
            }
        }

        #[test]
        fn render_parse_is_stable(text in arbitrary_text(), split in prop::sample::select(vec![
            "academic", "multiple_choice", "writing", "task", "math", "dialog",
        ])) {
            let r = rule(split);
            if let Ok(c) = parse(&raw(&text), &r) {
                let again = parse(&raw(&render(&c, &r)), &r).unwrap();
                prop_assert_eq!(&again.turns, &c.turns);
                prop_assert_eq!(again.meta.difficulty, c.meta.difficulty);
            }
        }
    }
}
