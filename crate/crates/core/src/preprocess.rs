//! Tweet-level normalization.
//!
//! `normalize` applies, in order: NFC, `@handle` → `<mention>`, URL → `<url>`,
//! medial-capital splitting, lowercasing, punctuation stripping (a fixed set
//! of ASCII emoticons survives as whole words), whitespace splitting.

use crate::corpus::UserTimeline;
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_categories::UnicodeCategories;
use unicode_normalization::UnicodeNormalization;

pub const MENTION: &str = "<mention>";
pub const URL: &str = "<url>";

/// Emoticons kept through punctuation stripping, in their lowercased form.
pub const EMOTICONS: &[&str] = &[":)", ":(", ":d", ";)", ":p", ":/", "<3", ":'(", "xd"];

static ENTITY: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"(?i)(?P<url>\b(?:[a-z][a-z0-9+.\-]*://|www\.)\S+)|(?P<mention>@[\p{L}\p{N}_]+)|(?P<ph><(?:mention|url)>)",
    )
    .expect("entity regex compiles")
});

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("timeline of user {0} is empty")]
    EmptyTimeline(String),
}

/// Normalized token sequence of one text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

pub fn normalize(text: &str) -> TokenSeq {
    let text: String = text.nfc().collect();
    let mut out = Vec::new();
    let mut last = 0;
    for caps in ENTITY.captures_iter(&text) {
        let m = caps.get(0).expect("whole match");
        push_words(&text[last..m.start()], &mut out);
        let placeholder = if caps.name("url").is_some() {
            URL
        } else if caps.name("mention").is_some() {
            MENTION
        } else if m.as_str().eq_ignore_ascii_case(URL) {
            URL
        } else {
            MENTION
        };
        out.push(placeholder.to_string());
        last = m.end();
    }
    push_words(&text[last..], &mut out);
    TokenSeq(out)
}

fn push_words(segment: &str, out: &mut Vec<String>) {
    for word in segment.split_whitespace() {
        let lower = word.to_lowercase();
        if EMOTICONS.contains(&lower.as_str()) {
            out.push(lower);
            continue;
        }
        let lowered = split_medial_capitals(word).to_lowercase();
        let stripped = strip_punctuation(&lowered);
        out.extend(stripped.split_whitespace().map(|t| t.nfc().collect::<String>()));
    }
}

/// Inserts a space at every lowercase→uppercase transition. Runs of capitals
/// ("USA", "HTMLParser") are left intact.
pub fn split_medial_capitals(word: &str) -> String {
    let mut out = String::with_capacity(word.len() + 4);
    let mut prev_lower = false;
    for c in word.chars() {
        if prev_lower && c.is_uppercase() {
            out.push(' ');
        }
        prev_lower = c.is_lowercase();
        out.push(c);
    }
    out
}

fn strip_punctuation(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '\'' | '\u{2019}'))
        .map(|c| if c.is_ascii_punctuation() || c.is_punctuation() { ' ' } else { c })
        .collect()
}

/// Fraction of the timeline's tweets whose `lang` equals `major_lang`.
pub fn language_share(timeline: &UserTimeline, major_lang: &str) -> Result<f64, PreprocessError> {
    if timeline.tweets.is_empty() {
        return Err(PreprocessError::EmptyTimeline(timeline.user_id.clone()));
    }
    let hits = timeline.tweets.iter().filter(|t| t.lang == major_lang).count();
    Ok(hits as f64 / timeline.tweets.len() as f64)
}
