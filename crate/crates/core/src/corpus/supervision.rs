use super::{CorpusError, DateWindow, Group, Tweet, TweetStore, UserTimeline};
use crate::preprocess::language_share;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use unicode_normalization::UnicodeNormalization;

/// Twitter's timeline endpoint returned at most this many recent tweets.
pub const DEFAULT_HISTORY_CAP: usize = 5000;

/// Diagnosis phrases used when none are configured.
pub const DEFAULT_PATTERNS: &[&str] =
    &["diagnosed with depression", "diagnosed me with depression", "diagnosed with severe depression"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub user_id: String,
    /// First matching tweet in the window; this is what annotators judge.
    pub tweet: Tweet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Genuine,
    NonGenuine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub tweet_id: String,
    pub verdict: Verdict,
}

fn fold(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// Users with an in-window, in-country tweet containing one of `patterns`
/// (case-insensitive substring after NFC). One exemplar per user, sorted by
/// user id.
pub fn select_diagnosed_candidates(
    store: &TweetStore,
    patterns: &[String],
    window: DateWindow,
    country: &str,
) -> Result<Vec<Candidate>, CorpusError> {
    if patterns.iter().all(|p| p.trim().is_empty()) {
        return Err(CorpusError::NoPatterns);
    }
    let folded: Vec<String> =
        patterns.iter().filter(|p| !p.trim().is_empty()).map(|p| fold(p)).collect();
    let mut found: BTreeMap<&str, &Tweet> = BTreeMap::new();
    for t in store.tweets() {
        if found.contains_key(t.user_id.as_str()) || t.country != country || !window.contains(&t.created_at) {
            continue;
        }
        let text = fold(&t.text);
        if folded.iter().any(|p| text.contains(p.as_str())) {
            found.insert(&t.user_id, t);
        }
    }
    Ok(found
        .into_iter()
        .map(|(u, t)| Candidate { user_id: u.to_string(), tweet: t.clone() })
        .collect())
}

/// Keeps candidates whose exemplar was judged genuine. Every exemplar must be
/// annotated; the error lists the ones that are not.
pub fn apply_annotations(
    candidates: &[Candidate],
    annotations: &[AnnotationRecord],
) -> Result<BTreeSet<String>, CorpusError> {
    let mut verdicts: BTreeMap<&str, Verdict> = BTreeMap::new();
    for a in annotations {
        if let Some(prev) = verdicts.insert(&a.tweet_id, a.verdict) {
            if prev != a.verdict {
                return Err(CorpusError::ConflictingAnnotation(a.tweet_id.clone()));
            }
        }
    }
    let missing: Vec<String> = candidates
        .iter()
        .filter(|c| !verdicts.contains_key(c.tweet.id.as_str()))
        .map(|c| c.tweet.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::Unannotated(missing));
    }
    Ok(candidates
        .iter()
        .filter(|c| verdicts[c.tweet.id.as_str()] == Verdict::Genuine)
        .map(|c| c.user_id.clone())
        .collect())
}

/// Parses `tweet_id<TAB>genuine|non-genuine` lines; `#` starts a comment.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, CorpusError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| CorpusError::BadAnnotation { line: idx + 1, reason: reason.into() };
        let mut cols = line.split('\t');
        let id = cols.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(|| bad("missing tweet id"))?;
        let verdict = match cols.next().map(|s| s.trim().to_ascii_lowercase()).as_deref() {
            Some("genuine") => Verdict::Genuine,
            Some("non-genuine") => Verdict::NonGenuine,
            Some(other) => return Err(bad(&format!("unknown verdict `{other}`"))),
            None => return Err(bad("missing verdict column")),
        };
        if cols.next().is_some() {
            return Err(bad("more than two columns"));
        }
        out.push(AnnotationRecord { tweet_id: id.to_string(), verdict });
    }
    Ok(out)
}

pub fn write_annotations(records: &[AnnotationRecord], path: &Path) -> Result<(), CorpusError> {
    let mut s = String::from("# tweet_id\tverdict\n");
    for r in records {
        let v = match r.verdict {
            Verdict::Genuine => "genuine",
            Verdict::NonGenuine => "non-genuine",
        };
        let _ = writeln!(s, "{}\t{}", r.tweet_id, v);
    }
    std::fs::write(path, s).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

/// Control seed users: the first `cap` in-window, in-country tweets in
/// `(timestamp, id)` order, minus tweets by excluded users, reduced to their
/// distinct authors.
pub fn build_control(
    store: &TweetStore,
    window: DateWindow,
    country: &str,
    exclude: &BTreeSet<String>,
    cap: usize,
) -> Result<BTreeSet<String>, CorpusError> {
    if cap == 0 {
        return Err(CorpusError::ZeroCap);
    }
    Ok(store
        .tweets()
        .iter()
        .filter(|t| t.country == country && window.contains(&t.created_at))
        .take(cap)
        .filter(|t| !exclude.contains(&t.user_id))
        .map(|t| t.user_id.clone())
        .collect())
}

/// Per user, the most recent `per_user_cap` tweets inside `window`, ascending.
/// Users without any in-window tweet get an empty timeline.
pub fn collect_history(
    store: &TweetStore,
    users: &BTreeSet<String>,
    group: Group,
    window: DateWindow,
    per_user_cap: usize,
) -> Vec<UserTimeline> {
    let mut per_user: BTreeMap<&str, Vec<&Tweet>> =
        users.iter().map(|u| (u.as_str(), Vec::new())).collect();
    for t in store.tweets() {
        if let Some(v) = per_user.get_mut(t.user_id.as_str()) {
            if window.contains(&t.created_at) {
                v.push(t);
            }
        }
    }
    per_user
        .into_iter()
        .map(|(user, tweets)| {
            let skip = tweets.len().saturating_sub(per_user_cap);
            UserTimeline {
                user_id: user.to_string(),
                group,
                tweets: tweets[skip..].iter().map(|t| (*t).clone()).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_tweets: usize,
    /// Inclusive lower bound on the share of tweets in `major_lang`.
    pub lang_threshold: f64,
    pub major_lang: String,
}

impl FilterConfig {
    pub fn new(major_lang: impl Into<String>) -> Self {
        Self { min_tweets: 20, lang_threshold: 0.70, major_lang: major_lang.into() }
    }
}

pub fn filter_users(timelines: Vec<UserTimeline>, cfg: &FilterConfig) -> Vec<UserTimeline> {
    timelines
        .into_iter()
        .filter(|tl| {
            tl.len() >= cfg.min_tweets
                && language_share(tl, &cfg.major_lang).is_ok_and(|s| s >= cfg.lang_threshold)
        })
        .collect()
}
