//! Classification samples under the four representations, train/validation
//! splitting, class rebalancing and sample weighting.

use crate::corpus::{Group, UserTimeline};
use crate::preprocess::{normalize, TokenSeq};
use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("timeline of user {0} is unlabeled")]
    Unlabeled(String),
    #[error("need at least two {0} to split")]
    TooFew(&'static str),
    #[error("train_fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("class {0:?} is absent")]
    MissingClass(Label),
    #[error("diagnosed weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Control = 0,
    Diagnosed = 1,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Control),
            1 => Ok(Label::Diagnosed),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Control => "Control",
            Label::Diagnosed => "Diagnosed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Individual,
    UserDay,
    UserWeek,
    AllUser,
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "individual" => Ok(Self::Individual),
            "user-day" => Ok(Self::UserDay),
            "user-week" => Ok(Self::UserWeek),
            "all-user" => Ok(Self::AllUser),
            other => Err(format!("unknown representation `{other}`")),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Individual => "individual",
            Self::UserDay => "user-day",
            Self::UserWeek => "user-week",
            Self::AllUser => "all-user",
        })
    }
}

/// The stretch of a user's timeline one sample covers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Span {
    Individual(String),
    UserDay(NaiveDate),
    /// ISO-8601 week-numbering year and week.
    UserWeek { year: i32, week: u32 },
    AllUser,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Span::Individual(id) => write!(f, "individual:{id}"),
            Span::UserDay(d) => write!(f, "user-day:{d}"),
            Span::UserWeek { year, week } => write!(f, "user-week:{year}-W{week:02}"),
            Span::AllUser => f.write_str("all-user"),
        }
    }
}

impl From<Span> for String {
    fn from(s: Span) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Span {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "all-user" {
            return Ok(Span::AllUser);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("bad span `{s}`"))?;
        match kind {
            "individual" => Ok(Span::Individual(rest.to_string())),
            "user-day" => rest.parse().map(Span::UserDay).map_err(|e| format!("bad span `{s}`: {e}")),
            "user-week" => {
                let (y, w) = rest.split_once("-W").ok_or_else(|| format!("bad span `{s}`"))?;
                let year = y.parse().map_err(|_| format!("bad span `{s}`"))?;
                let week = w.parse().map_err(|_| format!("bad span `{s}`"))?;
                Ok(Span::UserWeek { year, week })
            }
            _ => Err(format!("bad span `{s}`")),
        }
    }
}

/// Tokens of one span of one user's timeline, without a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub user_id: String,
    pub span: Span,
    /// UTC date the span starts on (Monday for weeks, first tweet for all-user).
    pub date: NaiveDate,
    pub tokens: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub user_id: String,
    pub span: Span,
    pub date: NaiveDate,
    pub label: Label,
    pub weight: f64,
    pub tokens: TokenSeq,
}

/// Groups each timeline's normalized tweets by `repr`, concatenating tokens in
/// timestamp order. Spans whose tokens all normalize away are skipped.
pub fn segments(timelines: &[UserTimeline], repr: Representation) -> Vec<Segment> {
    let mut out = Vec::new();
    for tl in timelines {
        let normalized: Vec<(NaiveDate, &str, TokenSeq)> =
            tl.tweets.iter().map(|t| (t.date(), t.id.as_str(), normalize(&t.text))).collect();
        let mut push = |span: Span, date: NaiveDate, tokens: Vec<String>| {
            if !tokens.is_empty() {
                out.push(Segment { user_id: tl.user_id.clone(), span, date, tokens: TokenSeq(tokens) });
            }
        };
        match repr {
            Representation::Individual => {
                for (date, id, toks) in normalized {
                    push(Span::Individual(id.to_string()), date, toks.0);
                }
            }
            Representation::UserDay => {
                let mut days: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
                for (date, _, toks) in normalized {
                    days.entry(date).or_default().extend(toks.0);
                }
                for (date, toks) in days {
                    push(Span::UserDay(date), date, toks);
                }
            }
            Representation::UserWeek => {
                let mut weeks: BTreeMap<(i32, u32), Vec<String>> = BTreeMap::new();
                for (date, _, toks) in normalized {
                    let w = date.iso_week();
                    weeks.entry((w.year(), w.week())).or_default().extend(toks.0);
                }
                for ((year, week), toks) in weeks {
                    let monday = NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).expect("valid iso week");
                    push(Span::UserWeek { year, week }, monday, toks);
                }
            }
            Representation::AllUser => {
                let Some(first) = normalized.first().map(|n| n.0) else { continue };
                let toks = normalized.into_iter().flat_map(|n| n.2 .0).collect();
                push(Span::AllUser, first, toks);
            }
        }
    }
    out
}

pub fn build_samples(timelines: &[UserTimeline], repr: Representation) -> Result<Vec<Sample>, SamplingError> {
    let mut labels = BTreeMap::new();
    for tl in timelines {
        let label = match tl.group {
            Group::Diagnosed => Label::Diagnosed,
            Group::Control => Label::Control,
            Group::Unlabeled => return Err(SamplingError::Unlabeled(tl.user_id.clone())),
        };
        labels.insert(tl.user_id.as_str(), label);
    }
    Ok(segments(timelines, repr)
        .into_iter()
        .map(|s| Sample {
            label: labels[s.user_id.as_str()],
            user_id: s.user_id,
            span: s.span,
            date: s.date,
            weight: 1.0,
            tokens: s.tokens,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Sample,
    User,
}

impl FromStr for SplitUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sample" => Ok(Self::Sample),
            "user" => Ok(Self::User),
            other => Err(format!("unknown split unit `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0, unit: SplitUnit::User }
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Seeded partition into (train, validation). With `SplitUnit::User` the
/// fraction applies to users and no user straddles the split. Both sides keep
/// the input order.
pub fn split(samples: &[Sample], cfg: &SplitConfig) -> Result<(Vec<Sample>, Vec<Sample>), SamplingError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(SamplingError::BadFraction(cfg.train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    type Membership<'a> = Box<dyn Fn(usize, &Sample) -> bool + 'a>;
    let in_train: Membership = match cfg.unit {
        SplitUnit::Sample => {
            if samples.len() < 2 {
                return Err(SamplingError::TooFew("samples"));
            }
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut rng);
            let chosen: BTreeSet<usize> = idx[..train_count(samples.len(), cfg.train_fraction)].iter().copied().collect();
            Box::new(move |i, _| chosen.contains(&i))
        }
        SplitUnit::User => {
            let mut users: Vec<&str> =
                samples.iter().map(|s| s.user_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
            if users.len() < 2 {
                return Err(SamplingError::TooFew("users"));
            }
            users.shuffle(&mut rng);
            let n = train_count(users.len(), cfg.train_fraction);
            let chosen: BTreeSet<String> = users[..n].iter().map(|u| u.to_string()).collect();
            Box::new(move |_, s| chosen.contains(&s.user_id))
        }
    };
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if in_train(i, s) {
            train.push(s.clone());
        } else {
            val.push(s.clone());
        }
    }
    Ok((train, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Imbalanced,
    Balanced,
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "imbalanced" => Ok(Self::Imbalanced),
            "balanced" => Ok(Self::Balanced),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// `Balanced` keeps every minority-class sample and draws the same number from
/// the majority class without replacement. Input order is preserved.
pub fn rebalance(train: &[Sample], regime: Regime, seed: u64) -> Result<Vec<Sample>, SamplingError> {
    let (diag, ctrl): (Vec<usize>, Vec<usize>) =
        (0..train.len()).partition(|&i| train[i].label == Label::Diagnosed);
    if diag.is_empty() {
        return Err(SamplingError::MissingClass(Label::Diagnosed));
    }
    if ctrl.is_empty() {
        return Err(SamplingError::MissingClass(Label::Control));
    }
    if regime == Regime::Imbalanced {
        return Ok(train.to_vec());
    }
    let (minority, majority) = if diag.len() <= ctrl.len() { (diag, ctrl) } else { (ctrl, diag) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: BTreeSet<usize> = minority.into_iter().collect();
    let take = keep.len();
    keep.extend(index::sample(&mut rng, majority.len(), take).into_iter().map(|k| majority[k]));
    Ok(keep.into_iter().map(|i| train[i].clone()).collect())
}

/// Diagnosed samples get `diagnosed_weight`, Control samples 1.0.
pub fn apply_class_weights(samples: &mut [Sample], diagnosed_weight: f64) -> Result<(), SamplingError> {
    if !(diagnosed_weight.is_finite() && diagnosed_weight > 0.0) {
        return Err(SamplingError::BadWeight(diagnosed_weight));
    }
    for s in samples {
        s.weight = match s.label {
            Label::Diagnosed => diagnosed_weight,
            Label::Control => 1.0,
        };
    }
    Ok(())
}

pub fn write_samples(samples: &[Sample], path: &Path) -> Result<(), SamplingError> {
    let io = |source| SamplingError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for s in samples {
        writeln!(out, "{}", serde_json::to_string(s).expect("sample serializes")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_samples(path: &Path) -> Result<Vec<Sample>, SamplingError> {
    let io = |source| SamplingError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| SamplingError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tweet;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn tweet(id: &str, user: &str, y: i32, m: u32, d: u32, h: u32, text: &str) -> Tweet {
        Tweet {
            id: id.into(),
            user_id: user.into(),
            created_at: Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap(),
            text: text.into(),
            country: "GB".into(),
            lang: "en".into(),
        }
    }

    fn one_user() -> Vec<UserTimeline> {
        // 2019-05-06 is a Monday: five tweets on three days of one ISO week.
        vec![UserTimeline {
            user_id: "u".into(),
            group: Group::Diagnosed,
            tweets: vec![
                tweet("1", "u", 2019, 5, 6, 8, "good morning"),
                tweet("2", "u", 2019, 5, 6, 9, "so tired"),
                tweet("3", "u", 2019, 5, 8, 9, "rain again"),
                tweet("4", "u", 2019, 5, 12, 9, "sunday tea"),
                tweet("5", "u", 2019, 5, 12, 20, "bed"),
            ],
        }]
    }

    #[test]
    fn representation_counts() {
        let tl = one_user();
        let n = |r| build_samples(&tl, r).unwrap().len();
        assert_eq!(n(Representation::Individual), 5);
        assert_eq!(n(Representation::UserDay), 3);
        assert_eq!(n(Representation::UserWeek), 1);
        assert_eq!(n(Representation::AllUser), 1);
        let week = &build_samples(&tl, Representation::UserWeek).unwrap()[0];
        assert_eq!(week.span, Span::UserWeek { year: 2019, week: 19 });
        assert_eq!(week.date, NaiveDate::from_ymd_opt(2019, 5, 6).unwrap());
        assert_eq!(week.label, Label::Diagnosed);
    }

    #[test]
    fn user_day_is_union_of_individuals() {
        let tl = one_user();
        let ind = build_samples(&tl, Representation::Individual).unwrap();
        for day in build_samples(&tl, Representation::UserDay).unwrap() {
            let mut from_ind: Vec<String> =
                ind.iter().filter(|s| s.date == day.date).flat_map(|s| s.tokens.0.clone()).collect();
            let mut got = day.tokens.0.clone();
            from_ind.sort();
            got.sort();
            assert_eq!(got, from_ind);
        }
    }

    #[test]
    fn unlabeled_timelines_are_refused() {
        let mut tl = one_user();
        tl[0].group = Group::Unlabeled;
        assert!(matches!(build_samples(&tl, Representation::Individual), Err(SamplingError::Unlabeled(_))));
        assert_eq!(segments(&tl, Representation::Individual).len(), 5);
    }

    #[test]
    fn iso_weeks_cross_year_boundary() {
        // 2019-12-30 belongs to ISO week 2020-W01.
        let tl = vec![UserTimeline {
            user_id: "u".into(),
            group: Group::Control,
            tweets: vec![tweet("1", "u", 2019, 12, 29, 8, "a"), tweet("2", "u", 2019, 12, 30, 8, "b")],
        }];
        let s = build_samples(&tl, Representation::UserWeek).unwrap();
        assert_eq!(s[0].span, Span::UserWeek { year: 2019, week: 52 });
        assert_eq!(s[1].span, Span::UserWeek { year: 2020, week: 1 });
    }

    fn sample(user: &str, label: Label, tag: usize) -> Sample {
        Sample {
            user_id: user.into(),
            span: Span::Individual(format!("{user}-{tag}")),
            date: NaiveDate::from_ymd_opt(2019, 5, 1).unwrap(),
            label,
            weight: 1.0,
            tokens: TokenSeq(vec![format!("tok{tag}")]),
        }
    }

    #[test]
    fn four_to_one_split() {
        let s: Vec<_> = (0..100).map(|i| sample(&format!("u{i}"), Label::Control, i)).collect();
        let cfg = SplitConfig { unit: SplitUnit::Sample, seed: 9, ..Default::default() };
        let (tr, va) = split(&s, &cfg).unwrap();
        assert_eq!((tr.len(), va.len()), (80, 20));
        assert_eq!(split(&s, &cfg).unwrap().0, tr);
        assert!(split(&s[..1], &cfg).is_err());
        assert!(split(&s, &SplitConfig { train_fraction: 1.0, ..cfg }).is_err());
    }

    #[test]
    fn user_split_keeps_users_whole() {
        let s: Vec<_> = (0..10).flat_map(|u| (0..(u + 1)).map(move |k| sample(&format!("u{u}"), Label::Control, k))).collect();
        let (tr, va) = split(&s, &SplitConfig { seed: 4, ..Default::default() }).unwrap();
        let tu: BTreeSet<_> = tr.iter().map(|s| &s.user_id).collect();
        let vu: BTreeSet<_> = va.iter().map(|s| &s.user_id).collect();
        assert!(tu.is_disjoint(&vu));
        assert_eq!((tu.len(), vu.len()), (8, 2));
        assert_eq!(tr.len() + va.len(), s.len());
    }

    fn imbalanced(n_ctrl: usize, n_diag: usize) -> Vec<Sample> {
        (0..n_ctrl)
            .map(|i| sample("c", Label::Control, i))
            .chain((0..n_diag).map(|i| sample("d", Label::Diagnosed, n_ctrl + i)))
            .collect()
    }

    #[test]
    fn balanced_downsamples_control() {
        let s = imbalanced(2300, 100);
        let b = rebalance(&s, Regime::Balanced, 1).unwrap();
        let ctrl: Vec<_> = b.iter().filter(|x| x.label == Label::Control).collect();
        assert_eq!(ctrl.len(), 100);
        assert_eq!(b.len(), 200);
        let spans: BTreeSet<_> = ctrl.iter().map(|x| x.span.to_string()).collect();
        assert_eq!(spans.len(), 100, "no duplicates");
        assert!(ctrl.iter().all(|c| s.contains(c)));
        assert_eq!(rebalance(&s, Regime::Imbalanced, 1).unwrap(), s);
    }

    #[test]
    fn rebalance_requires_both_classes() {
        assert!(matches!(
            rebalance(&imbalanced(5, 0), Regime::Balanced, 0),
            Err(SamplingError::MissingClass(Label::Diagnosed))
        ));
        assert!(rebalance(&imbalanced(0, 5), Regime::Imbalanced, 0).is_err());
    }

    #[test]
    fn class_weights() {
        let mut s = imbalanced(30, 7);
        apply_class_weights(&mut s, 5.0).unwrap();
        assert!(s.iter().all(|x| x.weight == if x.label == Label::Diagnosed { 5.0 } else { 1.0 }));
        let mass: f64 = s.iter().map(|x| x.weight).sum();
        assert_eq!(mass, 30.0 + 5.0 * 7.0);
        apply_class_weights(&mut s, 1.0).unwrap();
        assert!(s.iter().all(|x| x.weight == 1.0));
        assert!(apply_class_weights(&mut s, 0.0).is_err());
    }

    #[test]
    fn samples_round_trip_through_ndjson() {
        let mut s = build_samples(&one_user(), Representation::UserWeek).unwrap();
        s.extend(build_samples(&one_user(), Representation::Individual).unwrap());
        s.extend(build_samples(&one_user(), Representation::AllUser).unwrap());
        let f = tempfile::NamedTempFile::new().unwrap();
        write_samples(&s, f.path()).unwrap();
        assert_eq!(read_samples(f.path()).unwrap(), s);
        let line = std::fs::read_to_string(f.path()).unwrap();
        assert!(line.starts_with(r#"{"user_id":"u","span":"user-week:2019-W19","date":"2019-05-06","label":1,"weight":1.0,"tokens":["#));
    }

    proptest! {
        #[test]
        fn token_count_is_preserved(days in proptest::collection::vec((0u32..40, 0u32..24, 1usize..6), 1..40)) {
            let tweets: Vec<_> = days.iter().enumerate().map(|(i, (d, h, n))| {
                let text = (0..*n).map(|k| format!("w{k}")).collect::<Vec<_>>().join(" ");
                let mut t = tweet(&format!("{i:03}"), "u", 2019, 1, 1, 0, &text);
                t.created_at += chrono::Duration::hours((*d * 24 + *h) as i64);
                t
            }).collect();
            let mut tweets = tweets;
            tweets.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
            let tl = vec![UserTimeline { user_id: "u".into(), group: Group::Control, tweets }];
            let total: usize = days.iter().map(|d| d.2).sum();
            for r in [Representation::Individual, Representation::UserDay, Representation::UserWeek, Representation::AllUser] {
                let n: usize = build_samples(&tl, r).unwrap().iter().map(|s| s.tokens.len()).sum();
                prop_assert_eq!(n, total);
            }
        }

        #[test]
        fn split_is_a_partition(n in 2usize..200, seed in any::<u64>(), by_user in any::<bool>()) {
            let s: Vec<_> = (0..n).map(|i| sample(&format!("u{}", i % 13), Label::Control, i)).collect();
            let unit = if by_user { SplitUnit::User } else { SplitUnit::Sample };
            match split(&s, &SplitConfig { train_fraction: 0.8, seed, unit }) {
                Ok((tr, va)) => {
                    prop_assert_eq!(tr.len() + va.len(), n);
                    let a: BTreeSet<_> = tr.iter().map(|x| x.span.to_string()).collect();
                    let b: BTreeSet<_> = va.iter().map(|x| x.span.to_string()).collect();
                    prop_assert!(a.is_disjoint(&b));
                    if !by_user {
                        prop_assert!((tr.len() as f64 - 0.8 * n as f64).abs() <= 1.0);
                    }
                }
                Err(_) => prop_assert!(by_user && n < 2),
            }
        }

        #[test]
        fn balanced_has_equal_classes(c in 1usize..300, d in 1usize..300, seed in any::<u64>()) {
            let b = rebalance(&imbalanced(c, d), Regime::Balanced, seed).unwrap();
            let nd = b.iter().filter(|x| x.label == Label::Diagnosed).count();
            prop_assert_eq!(nd * 2, b.len());
            prop_assert_eq!(nd, c.min(d));
        }
    }
}
