//! Tweet archives and the distant-supervision protocol that turns them into
//! labelled user timelines.
//!
//! The flow is `select_diagnosed_candidates` → `apply_annotations` →
//! `build_control` → `collect_history` → `filter_users`. Every step is a pure
//! function over an immutable [`TweetStore`].

mod store;
mod supervision;
mod synth;

pub use store::{export_corpus, load_corpus, FieldMap, LoadReport, Reject, TweetStore};
pub use supervision::{
    apply_annotations, build_control, collect_history, filter_users, parse_annotations,
    select_diagnosed_candidates, write_annotations, AnnotationRecord, Candidate, FilterConfig,
    Verdict, DEFAULT_HISTORY_CAP, DEFAULT_PATTERNS,
};
pub use synth::{synth_corpus, SpikeDay, SynthConfig, SynthCorpus, SynthTruth};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate tweet id {0}")]
    DuplicateId(String),
    #[error("tweet {0} has empty text")]
    EmptyText(String),
    #[error("invalid date window: {start} is after {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("no diagnosis patterns given")]
    NoPatterns,
    #[error("control cap must be positive")]
    ZeroCap,
    #[error("{} candidate tweet(s) lack an annotation: {}", .0.len(), .0.join(", "))]
    Unannotated(Vec<String>),
    #[error("conflicting annotations for tweet {0}")]
    ConflictingAnnotation(String),
    #[error("annotation file line {line}: {reason}")]
    BadAnnotation { line: usize, reason: String },
}

/// A single public post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tweet {
    pub id: String,
    pub user_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    /// ISO-3166 alpha-2 country of the post's geolocation.
    pub country: String,
    /// ISO-639-1 language tag supplied by the archive.
    pub lang: String,
}

impl Tweet {
    pub fn date(&self) -> NaiveDate {
        self.created_at.date_naive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Diagnosed,
    Control,
    Unlabeled,
}

/// All tweets of one user, ascending by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTimeline {
    pub user_id: String,
    pub group: Group,
    pub tweets: Vec<Tweet>,
}

impl UserTimeline {
    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }
}

/// Inclusive range of UTC calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, CorpusError> {
        if start > end {
            return Err(CorpusError::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains_date(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        self.contains_date(ts.date_naive())
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}
