//! Seeded synthetic tweet archives with known group membership.
//!
//! Diagnosed users post one self-diagnosis statement inside the seed window
//! and carry signal-lexicon tokens at `signal_rate`; control users draw from
//! the same background distribution at `control_signal_rate`. Decoy users are
//! controls that post a third-party ("my guinea pig ...") statement, so the
//! annotation step has something to reject.

use super::{AnnotationRecord, CorpusError, DateWindow, Tweet, TweetStore, Verdict};
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeDay {
    pub date: NaiveDate,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_diagnosed_users: usize,
    pub n_control_users: usize,
    /// Controls (taken out of `n_control_users`) that post a non-genuine statement.
    pub decoy_users: usize,
    /// Inclusive `[min, max]` tweets per user.
    pub tweets_per_user: [usize; 2],
    pub date_range: [NaiveDate; 2],
    /// Window holding every diagnosis statement and one tweet of every user.
    pub seed_window: [NaiveDate; 2],
    pub country: String,
    pub major_lang: String,
    pub foreign_lang: String,
    /// Probability that a user writes 35-65% of their tweets in `foreign_lang`
    /// (the rest write at most 15%).
    pub mixed_language_user_rate: f64,
    pub signal_lexicon: Vec<String>,
    pub signal_rate: f64,
    pub control_signal_rate: f64,
    pub spike_days: Vec<SpikeDay>,
    /// Permits `tweets_per_user[0] < 20`, i.e. users the history filter drops.
    pub allow_sparse_users: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        Self {
            n_diagnosed_users: 40,
            n_control_users: 800,
            decoy_users: 5,
            tweets_per_user: [20, 80],
            date_range: [d(2018, 11, 1), d(2019, 10, 31)],
            seed_window: [d(2019, 5, 1), d(2019, 5, 14)],
            country: "GB".into(),
            major_lang: "en".into(),
            foreign_lang: "fr".into(),
            mixed_language_user_rate: 0.0,
            signal_lexicon: DEFAULT_SIGNAL_LEXICON.iter().map(|s| s.to_string()).collect(),
            signal_rate: 0.5,
            control_signal_rate: 0.05,
            spike_days: Vec::new(),
            allow_sparse_users: false,
            seed: 0,
        }
    }
}

pub const DEFAULT_SIGNAL_LEXICON: &[&str] =
    &["depressed", "anxious", "hopeless", "therapy", "numb", "exhausted", "worthless", "meds"];

const GENUINE_STATEMENTS: &[&str] = &[
    "I was diagnosed with depression last year",
    "i was diagnosed with depression and anxiety in march",
    "Finally saw my GP today and I was diagnosed with depression",
    "I have been diagnosed with depression for three years now",
    "I was diagnosed with severe depression and went through the works of treatment for it.",
];

const DECOY_STATEMENTS: &[&str] = &[
    "It's official. My guinea pig has been diagnosed with depression",
    "my cat just got diagnosed with depression lol",
    "the main character was diagnosed with depression in season two",
];

const BACKGROUND: &[&str] = &[
    "the", "a", "to", "and", "of", "in", "is", "it", "for", "on", "you", "this", "that", "with", "my",
    "be", "at", "so", "are", "have", "just", "not", "all", "we", "but", "get", "was", "me", "what",
    "out", "up", "like", "time", "new", "day", "one", "now", "can", "good", "today", "love", "if",
    "your", "about", "know", "see", "great", "go", "people", "back", "happy", "night", "think",
    "more", "really", "going", "last", "year", "from", "they", "some", "how", "here", "week",
    "first", "make", "watch", "game", "team", "home", "work", "best", "need", "still", "want",
    "morning", "thanks", "weekend", "well", "right", "look", "football", "match", "music", "tea",
    "coffee", "friends", "family", "rain", "sun", "weather", "london", "train", "bus", "city",
    "shop", "food", "dinner", "lunch", "breakfast", "pizza", "birthday", "party", "holiday",
    "beach", "walk", "dog", "cat", "garden", "book", "film", "show", "news", "school", "class",
    "office", "meeting", "project", "open", "free", "win", "tickets", "live", "tonight", "tomorrow",
    "soon", "ready", "lovely", "amazing", "nice", "fun", "cool", "funny", "crazy", "big", "little",
    "old", "long", "small", "next", "every", "always", "never", "again", "around", "there", "when",
    "who", "why", "where", "much", "many", "thing", "things", "man", "woman", "kids", "mum", "dad",
    "song", "album", "video", "photo", "post", "follow", "check", "share", "read", "play", "run",
    "eat", "drink", "sleep", "drive", "visit", "meet", "call", "tell", "ask", "try", "start",
    "finish", "wait", "stop", "buy", "sell", "pay", "bring", "won", "lose", "score", "goal", "club",
    "season", "league", "cup", "final", "round", "race", "car", "road", "park", "market", "street",
];

const HANDLES: &[&str] = &["bob", "Sam_99", "newsdesk", "LocalCafe", "jo_w", "mattp"];
const HASHTAGS: &[&str] = &["#GoodMorning", "#FridayFeeling", "#MatchDay", "#TeaTime", "#NewMusic"];

/// A synthetic archive plus the generator's own record of who is who.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub store: TweetStore,
    pub truth: SynthTruth,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthTruth {
    pub diagnosed: BTreeSet<String>,
    /// Includes the decoys.
    pub control: BTreeSet<String>,
    pub decoys: BTreeSet<String>,
    /// user → id of the user's diagnosis (or decoy) statement.
    pub statements: BTreeMap<String, String>,
}

impl SynthTruth {
    /// The verdicts a careful annotator would give every statement tweet.
    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        self.statements
            .iter()
            .map(|(user, tweet_id)| AnnotationRecord {
                tweet_id: tweet_id.clone(),
                verdict: if self.diagnosed.contains(user) { Verdict::Genuine } else { Verdict::NonGenuine },
            })
            .collect()
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(DateWindow, DateWindow), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidConfig(m.into()));
        let range = DateWindow::new(self.date_range[0], self.date_range[1])
            .map_err(|_| CorpusError::InvalidConfig("empty date_range".into()))?;
        let seed = DateWindow::new(self.seed_window[0], self.seed_window[1])
            .map_err(|_| CorpusError::InvalidConfig("empty seed_window".into()))?;
        if !range.contains_date(seed.start) || !range.contains_date(seed.end) {
            return bad("seed_window must lie inside date_range");
        }
        let [lo, hi] = self.tweets_per_user;
        if lo == 0 || lo > hi {
            return bad("tweets_per_user must satisfy 1 <= min <= max");
        }
        if lo < 20 && !self.allow_sparse_users {
            return bad("tweets_per_user min must be >= 20 unless allow_sparse_users is set");
        }
        for (name, p) in [
            ("signal_rate", self.signal_rate),
            ("control_signal_rate", self.control_signal_rate),
            ("mixed_language_user_rate", self.mixed_language_user_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.decoy_users > self.n_control_users {
            return bad("decoy_users cannot exceed n_control_users");
        }
        if self.signal_lexicon.is_empty() && (self.signal_rate > 0.0 || self.control_signal_rate > 0.0) {
            return bad("signal_lexicon is empty but a signal rate is positive");
        }
        if self.spike_days.iter().any(|s| !(s.multiplier.is_finite() && s.multiplier > 0.0)) {
            return bad("spike multipliers must be positive");
        }
        Ok((range, seed))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Diagnosed,
    Control,
    Decoy,
}

/// Generates an archive. Identical configs (including `seed`) give identical
/// stores.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, CorpusError> {
    let (range, seed_window) = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = WeightedIndex::new((0..BACKGROUND.len()).map(|r| 1.0 / (r as f64 + 1.0)))
        .expect("non-empty weights");
    let spikes: BTreeMap<NaiveDate, f64> = cfg.spike_days.iter().map(|s| (s.date, s.multiplier)).collect();

    let mut roles = Vec::with_capacity(cfg.n_diagnosed_users + cfg.n_control_users);
    roles.extend(std::iter::repeat_n(Role::Diagnosed, cfg.n_diagnosed_users));
    roles.extend(std::iter::repeat_n(Role::Decoy, cfg.decoy_users));
    roles.extend(std::iter::repeat_n(Role::Control, cfg.n_control_users - cfg.decoy_users));
    roles.shuffle(&mut rng);

    let mut truth = SynthTruth::default();
    let mut tweets = Vec::new();
    let mut next_id = 0usize;
    let mut fresh_id = || {
        next_id += 1;
        format!("t{next_id:08}")
    };

    for (idx, role) in roles.iter().enumerate() {
        let user = format!("u{idx:05}");
        match role {
            Role::Diagnosed => truth.diagnosed.insert(user.clone()),
            Role::Control => truth.control.insert(user.clone()),
            Role::Decoy => {
                truth.decoys.insert(user.clone());
                truth.control.insert(user.clone())
            }
        };
        let n = rng.gen_range(cfg.tweets_per_user[0]..=cfg.tweets_per_user[1]);
        let foreign_share = if rng.gen_bool(cfg.mixed_language_user_rate) {
            rng.gen_range(0.35..0.65)
        } else {
            rng.gen_range(0.0..0.15)
        };
        let base_rate = if *role == Role::Diagnosed { cfg.signal_rate } else { cfg.control_signal_rate };

        for k in 0..n {
            let id = fresh_id();
            let (created_at, statement) = if k == 0 {
                let statement = match role {
                    Role::Diagnosed => Some(*GENUINE_STATEMENTS.choose(&mut rng).expect("non-empty")),
                    Role::Decoy => Some(*DECOY_STATEMENTS.choose(&mut rng).expect("non-empty")),
                    Role::Control => None,
                };
                (random_instant(&mut rng, seed_window), statement)
            } else {
                (random_instant(&mut rng, range), None)
            };
            let (text, lang) = match statement {
                Some(s) => {
                    truth.statements.insert(user.clone(), id.clone());
                    (s.to_string(), cfg.major_lang.clone())
                }
                None => {
                    let mult = spikes.get(&created_at.date_naive()).copied().unwrap_or(1.0);
                    let p = (base_rate * mult).min(1.0);
                    let signal = if rng.gen_bool(p) { cfg.signal_lexicon.choose(&mut rng) } else { None };
                    let text = background_text(&mut rng, &zipf, signal.map(String::as_str));
                    let lang =
                        if rng.gen_bool(foreign_share) { cfg.foreign_lang.clone() } else { cfg.major_lang.clone() };
                    (text, lang)
                }
            };
            tweets.push(Tweet { id, user_id: user.clone(), created_at, text, country: cfg.country.clone(), lang });
        }
    }
    let store = TweetStore::new(tweets)?;
    Ok(SynthCorpus { store, truth })
}

fn random_instant(rng: &mut ChaCha8Rng, window: DateWindow) -> DateTime<Utc> {
    let start = Utc.from_utc_datetime(&window.start.and_hms_opt(0, 0, 0).expect("midnight"));
    let secs = rng.gen_range(0..window.days() * 86_400);
    start + chrono::Duration::seconds(secs)
}

fn background_text(rng: &mut ChaCha8Rng, zipf: &WeightedIndex<f64>, signal: Option<&str>) -> String {
    let len = rng.gen_range(5..=14);
    let mut words: Vec<&str> = (0..len).map(|_| BACKGROUND[zipf.sample(rng)]).collect();
    if let Some(s) = signal {
        let pos = rng.gen_range(0..=words.len());
        words.insert(pos, s);
    }
    let roll: f64 = rng.gen();
    let mut text = String::new();
    if roll < 0.10 {
        text.push('@');
        text.push_str(HANDLES.choose(rng).expect("non-empty"));
        text.push(' ');
    }
    text.push_str(&words.join(" "));
    if (0.10..0.15).contains(&roll) {
        text.push_str(&format!(" https://example.com/p/{}", rng.gen_range(0..10_000)));
    } else if (0.15..0.20).contains(&roll) {
        text.push(' ');
        text.push_str(HASHTAGS.choose(rng).expect("non-empty"));
    } else if (0.20..0.25).contains(&roll) {
        text.push('!');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::normalize;

    fn small() -> SynthConfig {
        SynthConfig { n_diagnosed_users: 5, n_control_users: 30, decoy_users: 2, seed: 11, ..Default::default() }
    }

    #[test]
    fn deterministic_for_equal_seed() {
        let a = synth_corpus(&small()).unwrap();
        let b = synth_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let other = synth_corpus(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.store, other.store);
    }

    #[test]
    fn empty_date_range_is_an_error() {
        let mut cfg = small();
        cfg.date_range = [cfg.date_range[1], cfg.date_range[0]];
        assert!(matches!(synth_corpus(&cfg), Err(CorpusError::InvalidConfig(_))));
    }

    #[test]
    fn sparse_users_need_an_explicit_override() {
        let cfg = SynthConfig { tweets_per_user: [5, 10], ..small() };
        assert!(synth_corpus(&cfg).is_err());
        assert!(synth_corpus(&SynthConfig { allow_sparse_users: true, ..cfg }).is_ok());
    }

    #[test]
    fn statements_only_for_designated_users() {
        let c = synth_corpus(&small()).unwrap();
        let matches: BTreeSet<_> = c
            .store
            .tweets()
            .iter()
            .filter(|t| t.text.to_lowercase().contains("diagnosed with depression"))
            .map(|t| t.user_id.clone())
            .collect();
        let expected: BTreeSet<_> = c.truth.diagnosed.union(&c.truth.decoys).cloned().collect();
        assert_eq!(matches, expected);
        assert_eq!(c.truth.diagnosed.len(), 5);
        assert_eq!(c.truth.control.len(), 30);
    }

    fn has_signal(text: &str, lex: &[String]) -> bool {
        normalize(text).0.iter().any(|t| lex.contains(t))
    }

    #[test]
    fn zero_signal_rate_means_no_signal_tokens() {
        let cfg = SynthConfig { signal_rate: 0.0, control_signal_rate: 0.0, ..small() };
        let c = synth_corpus(&cfg).unwrap();
        assert!(c.store.tweets().iter().all(|t| !has_signal(&t.text, &cfg.signal_lexicon)));
    }

    #[test]
    fn signal_frequency_is_binomial() {
        // ~10k non-statement tweets from diagnosed users at p = 0.5.
        let cfg = SynthConfig {
            n_diagnosed_users: 100,
            n_control_users: 1,
            decoy_users: 0,
            tweets_per_user: [101, 101],
            signal_rate: 0.5,
            seed: 3,
            ..Default::default()
        };
        let c = synth_corpus(&cfg).unwrap();
        let diag: Vec<_> = c
            .store
            .tweets()
            .iter()
            .filter(|t| c.truth.diagnosed.contains(&t.user_id) && !c.truth.statements.values().any(|s| s == &t.id))
            .collect();
        assert_eq!(diag.len(), 10_000);
        let hits = diag.iter().filter(|t| has_signal(&t.text, &cfg.signal_lexicon)).count() as f64;
        let (mean, sd) = (5000.0, (10_000.0f64 * 0.25).sqrt());
        assert!((hits - mean).abs() <= 3.0 * sd, "hits = {hits}");
    }

    #[test]
    fn spike_day_multiplies_signal() {
        let day = NaiveDate::from_ymd_opt(2019, 7, 1).unwrap();
        let cfg = SynthConfig {
            n_diagnosed_users: 0,
            n_control_users: 200,
            decoy_users: 0,
            tweets_per_user: [200, 200],
            date_range: [NaiveDate::from_ymd_opt(2019, 6, 1).unwrap(), NaiveDate::from_ymd_opt(2019, 7, 31).unwrap()],
            seed_window: [NaiveDate::from_ymd_opt(2019, 6, 1).unwrap(), NaiveDate::from_ymd_opt(2019, 6, 7).unwrap()],
            control_signal_rate: 0.1,
            spike_days: vec![SpikeDay { date: day, multiplier: 3.0 }],
            seed: 5,
            ..Default::default()
        };
        let c = synth_corpus(&cfg).unwrap();
        let rate = |pred: &dyn Fn(NaiveDate) -> bool| {
            let v: Vec<_> = c.store.tweets().iter().filter(|t| pred(t.date())).collect();
            v.iter().filter(|t| has_signal(&t.text, &cfg.signal_lexicon)).count() as f64 / v.len() as f64
        };
        let spike = rate(&|d| d == day);
        let rest = rate(&|d| d != day && d > cfg.seed_window[1]);
        assert!(spike > 2.0 * rest, "spike {spike} vs rest {rest}");
    }
}
