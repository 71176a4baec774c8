use super::{CorpusError, Tweet};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Validated, immutable tweet collection ordered by `(created_at, id)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TweetStore {
    tweets: Vec<Tweet>,
}

impl TweetStore {
    pub fn new(mut tweets: Vec<Tweet>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(tweets.len());
        for t in &tweets {
            if t.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(t.id.clone()));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(CorpusError::DuplicateId(t.id.clone()));
            }
        }
        tweets.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { tweets })
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    /// First and last UTC day covered, `None` for an empty store.
    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        Some((self.tweets.first()?.date(), self.tweets.last()?.date()))
    }

    /// Tweets grouped per user, each group in store order.
    pub fn by_user(&self) -> BTreeMap<&str, Vec<&Tweet>> {
        let mut map: BTreeMap<&str, Vec<&Tweet>> = BTreeMap::new();
        for t in &self.tweets {
            map.entry(t.user_id.as_str()).or_default().push(t);
        }
        map
    }
}

/// Names of the archive's JSON fields for each tweet attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub user_id: String,
    pub created_at: String,
    pub text: String,
    pub country: String,
    pub lang: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            user_id: "user_id".into(),
            created_at: "created_at".into(),
            text: "text".into(),
            country: "country".into(),
            lang: "lang".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line_no: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub store: TweetStore,
    pub rejects: Vec<Reject>,
}

impl LoadReport {
    pub fn write_rejects(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for r in &self.rejects {
            let line = serde_json::to_string(r).expect("reject serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Reads a newline-delimited JSON archive. Lines that fail validation are
/// collected in the report's rejects; only I/O failure is fatal.
pub fn load_corpus(path: &Path, schema: &FieldMap) -> Result<LoadReport, CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut tweets = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, schema) {
            Ok(t) => {
                if seen.insert(t.id.clone()) {
                    tweets.push(t);
                } else {
                    rejects.push(Reject { line_no, reason: format!("duplicate id {}", t.id) });
                }
            }
            Err(reason) => rejects.push(Reject { line_no, reason }),
        }
    }
    let store = TweetStore::new(tweets)?;
    Ok(LoadReport { store, rejects })
}

fn parse_line(line: &str, schema: &FieldMap) -> Result<Tweet, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("line is not a JSON object")?;
    let field = |name: &str| -> Result<String, String> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(format!("field `{name}` has the wrong type")),
            None => Err(format!("missing field `{name}`")),
        }
    };
    let id = field(&schema.id)?;
    let user_id = field(&schema.user_id)?;
    let created_at = match obj.get(&schema.created_at) {
        Some(Value::String(s)) => DateTime::parse_from_rfc3339(s)
            .map(|d| d.with_timezone(&Utc))
            .map_err(|e| format!("bad timestamp `{s}`: {e}"))?,
        Some(Value::Number(n)) => n
            .as_i64()
            .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
            .ok_or_else(|| format!("bad epoch timestamp {n}"))?,
        Some(_) => return Err(format!("field `{}` has the wrong type", schema.created_at)),
        None => return Err(format!("missing field `{}`", schema.created_at)),
    };
    let text = field(&schema.text)?;
    if text.trim().is_empty() {
        return Err(format!("field `{}` is empty", schema.text));
    }
    let country = field(&schema.country)?;
    let lang = field(&schema.lang)?;
    if id.is_empty() || user_id.is_empty() {
        return Err("empty id or user_id".into());
    }
    Ok(Tweet { id, user_id, created_at, text, country, lang })
}

/// Writes the store with the default field names, one tweet per line.
pub fn export_corpus(store: &TweetStore, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for t in store.tweets() {
        let line = serde_json::to_string(t).expect("tweet serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
