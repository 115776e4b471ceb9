//! Sentence splitting, key normalization and whitespace tokenization.
//!
//! A sentence ends at a run of `.`, `?` or `!` (optionally followed by closing
//! quotes or brackets) that is followed by whitespace or the end of the text.
//! A lone `.` does not end a sentence when it closes one of
//! [`ABBREVIATIONS`] or a numbered-list marker at the start of a line.

use unicode_normalization::UnicodeNormalization;

pub const ABBREVIATIONS: [&str; 12] = [
    "dr.", "mr.", "mrs.", "ms.", "e.g.", "i.e.", "etc.", "vs.", "fig.", "eq.", "no.", "st.",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}' | '*' | '_')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}' | '*' | '_')
}

/// Byte offsets just past each sentence terminator (closers included).
pub fn sentence_ends(text: &str) -> Vec<usize> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut ends = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && is_terminal(chars[i].1) {
            i += 1;
        }
        let run_len = i - run_start;
        while i < chars.len() && is_closer(chars[i].1) {
            i += 1;
        }
        let end = chars.get(i).map_or(text.len(), |&(p, _)| p);
        let at_break = i == chars.len() || chars[i].1.is_whitespace();
        if !at_break {
            continue;
        }
        if run_len == 1 && c == '.' && !is_boundary_period(text, pos) {
            continue;
        }
        ends.push(end);
    }
    ends
}

/// Decides whether the `.` at byte `dot` ends a sentence.
fn is_boundary_period(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(char::is_whitespace)
        .map_or(0, |p| p + before[p..].chars().next().unwrap().len_utf8());
    let word = before[word_start..].trim_start_matches(is_opener);
    let token = format!("{}.", word.to_lowercase());
    if ABBREVIATIONS.contains(&token.as_str()) {
        return false;
    }
    if !word.is_empty() && word.chars().all(|c| c.is_ascii_digit()) {
        let line_prefix = &text[..word_start];
        let line_prefix = line_prefix.rsplit('\n').next().unwrap_or("");
        if line_prefix.trim().is_empty() {
            return false;
        }
    }
    true
}

/// The sentences of `text`, trimmed, including a trailing unterminated one.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for end in sentence_ends(text) {
        let s = text[start..end].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// The first `n` sentences of `text` as a contiguous trimmed slice.
///
/// Returns the whole (trimmed) text when it has fewer than `n` boundaries.
pub fn sentence_prefix(text: &str, n: usize) -> &str {
    assert!(n >= 1, "sentence_prefix needs n >= 1");
    let ends = sentence_ends(text);
    let cut = ends.get(n - 1).copied().unwrap_or(text.len());
    text[..cut].trim()
}

/// NFC, trim, and collapse every whitespace run to a single space.
/// Case is preserved.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of maximal runs of non-whitespace characters.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
