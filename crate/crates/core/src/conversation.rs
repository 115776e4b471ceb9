//! The unified conversation record shared by every stage after parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xxhash_rust::xxh3::xxh3_128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Elementary,
    HighSchool,
    College,
    Graduate,
}

impl Difficulty {
    pub fn label(self) -> &'static str {
        match self {
            Difficulty::Elementary => "elementary",
            Difficulty::HighSchool => "high school",
            Difficulty::College => "college",
            Difficulty::Graduate => "graduate",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Difficulty {
    type Err = ();

    /// Accepts the four labels after lowercasing and collapsing spaces,
    /// hyphens and underscores.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .to_lowercase()
            .replace(['-', '_'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        match norm.as_str() {
            "elementary" => Ok(Difficulty::Elementary),
            "high school" => Ok(Difficulty::HighSchool),
            "college" => Ok(Difficulty::College),
            "graduate" => Ok(Difficulty::Graduate),
            _ => Err(()),
        }
    }
}

/// Provenance and labels carried alongside the turns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booster: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    /// Audit flags raised by the parser (e.g. `short_dialog`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Unknown fields from foreign datasets, kept in sorted order.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Meta {
    pub fn flag(&mut self, flag: &str) {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub split: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub meta: Meta,
}

impl Conversation {
    /// Builds a conversation whose id is the content hash of split and turns.
    pub fn new(split: impl Into<String>, turns: Vec<Turn>, meta: Meta) -> Self {
        let split = split.into();
        let id = content_id(&split, &turns);
        Self { id, split, turns, meta }
    }

    pub fn first(&self, role: Role) -> Option<&Turn> {
        self.turns.iter().find(|t| t.role == role)
    }

    /// Checks the structural invariants of a stored conversation.
    pub fn validate(&self) -> Result<(), String> {
        if self.turns.len() < 2 || !self.turns.len().is_multiple_of(2) {
            return Err(format!(
                "expected an even number (>= 2) of turns, got {}",
                self.turns.len()
            ));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if t.role != want {
                return Err(format!("turn {i} should be {}", want.as_str()));
            }
            if t.content.trim().is_empty() {
                return Err(format!("turn {i} is empty"));
            }
        }
        if self.meta.difficulty.is_some() && self.split != "math" {
            return Err(format!("difficulty set on non-math split `{}`", self.split));
        }
        Ok(())
    }
}

pub fn content_id(split: &str, turns: &[Turn]) -> String {
    let mut buf = String::with_capacity(split.len() + turns.iter().map(|t| t.content.len() + 12).sum::<usize>());
    buf.push_str(split);
    for t in turns {
        buf.push('\u{1e}');
        buf.push_str(t.role.as_str());
        buf.push('\u{1f}');
        buf.push_str(&t.content);
    }
    format!("{:032x}", xxh3_128(buf.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difficulty_labels() {
        assert_eq!("High  School".parse(), Ok(Difficulty::HighSchool));
        assert_eq!("high-school".parse(), Ok(Difficulty::HighSchool));
        assert_eq!(" College ".parse(), Ok(Difficulty::College));
        assert!("medium".parse::<Difficulty>().is_err());
    }

    #[test]
    fn validation() {
        let ok = Conversation::new("qa", vec![Turn::user("q"), Turn::assistant("a")], Meta::default());
        assert!(ok.validate().is_ok());
        let odd = Conversation::new("qa", vec![Turn::user("q")], Meta::default());
        assert!(odd.validate().is_err());
        let swapped = Conversation::new("qa", vec![Turn::assistant("a"), Turn::user("q")], Meta::default());
        assert!(swapped.validate().is_err());
        let m = Meta {
            difficulty: Some(Difficulty::College),
            ..Meta::default()
        };
        let bad = Conversation::new("qa", vec![Turn::user("q"), Turn::assistant("a")], m);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ids_depend_on_content() {
        let a = Conversation::new("s", vec![Turn::user("q"), Turn::assistant("a")], Meta::default());
        let b = Conversation::new("s", vec![Turn::user("q"), Turn::assistant("b")], Meta::default());
        assert_ne!(a.id, b.id);
        assert_eq!(a.id.len(), 32);
    }
}
