//! Daily rate of Diagnosed-classified samples over an unlabeled corpus, its
//! trailing moving average, relative spike detection and key-date periods.

mod report;

pub use report::{period_summary, report, Period, ReportFiles, Summary};

use crate::features::Vocabulary;
use crate::models::{Model, ModelError, Prediction};
use crate::sampling::{Label, Representation, Segment};
use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("series has {len} points, spike detection needs more than {window}")]
    TooShort { len: usize, window: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// How a day's predictions are turned into a rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Share of samples labelled Diagnosed.
    #[default]
    Hard,
    /// Mean classifier score.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub date: NaiveDate,
    pub n_samples: u64,
    pub n_positive: u64,
    pub rate: f64,
}

/// Days with no samples are absent rather than stored as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub points: Vec<RatePoint>,
    pub country: String,
    pub model_id: String,
    pub representation: Representation,
    pub mode: RateMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub date: NaiveDate,
    pub rate: f64,
    pub baseline: f64,
    /// rate / baseline − 1.
    pub relative_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDate {
    pub date: NaiveDate,
    pub label: String,
}

/// Groups dated predictions by day. Under [`RateMode::Hard`] the rate is
/// positives over samples; under [`RateMode::Soft`] it is the mean score.
pub fn aggregate(predictions: &[(NaiveDate, Prediction)], mode: RateMode) -> Vec<RatePoint> {
    let mut days: BTreeMap<NaiveDate, (u64, u64, f64)> = BTreeMap::new();
    for (date, p) in predictions {
        let e = days.entry(*date).or_default();
        e.0 += 1;
        e.1 += u64::from(p.label == Label::Diagnosed);
        e.2 += p.score;
    }
    days.into_iter()
        .map(|(date, (n, pos, score))| RatePoint {
            date,
            n_samples: n,
            n_positive: pos,
            rate: match mode {
                RateMode::Hard => pos as f64 / n as f64,
                RateMode::Soft => score / n as f64,
            },
        })
        .collect()
}

/// Scores every segment in parallel and aggregates the results per day.
pub fn rate_series(
    model: &Model,
    vocab: &Vocabulary,
    segments: &[Segment],
    country: &str,
    model_id: &str,
    representation: Representation,
    mode: RateMode,
) -> Result<RateSeries, DynamicsError> {
    model.check_vocab(vocab)?;
    let predictions = segments
        .par_iter()
        .map(|s| model.predict_tokens(&s.tokens, vocab).map(|p| (s.date, p)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateSeries {
        points: aggregate(&predictions, mode),
        country: country.to_string(),
        model_id: model_id.to_string(),
        representation,
        mode,
    })
}

/// Mean of the rates whose dates fall in `(date − window, date]`.
pub fn moving_average(points: &[RatePoint], window: usize) -> Result<Vec<SmoothedPoint>, DynamicsError> {
    if window == 0 {
        return Err(DynamicsError::ZeroWindow);
    }
    let mut sorted: Vec<&RatePoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.date);
    let span = Duration::days(window as i64);
    let mut out = Vec::with_capacity(sorted.len());
    let mut lo = 0;
    for (hi, p) in sorted.iter().enumerate() {
        while sorted[lo].date <= p.date - span {
            lo += 1;
        }
        let win = &sorted[lo..=hi];
        let value = win.iter().map(|q| q.rate).sum::<f64>() / win.len() as f64;
        out.push(SmoothedPoint { date: p.date, value });
    }
    Ok(out)
}

/// Flags days whose rate is at least `(1 + rel_threshold)` times the mean rate
/// of the `baseline_window` calendar days before them. Days in the first
/// `baseline_window` days of the series, and days whose baseline is empty or
/// zero, are not evaluated.
pub fn detect_spikes(points: &[RatePoint], rel_threshold: f64, baseline_window: usize) -> Result<Vec<Spike>, DynamicsError> {
    if baseline_window == 0 {
        return Err(DynamicsError::ZeroWindow);
    }
    if points.len() <= baseline_window {
        return Err(DynamicsError::TooShort { len: points.len(), window: baseline_window });
    }
    let by_date: BTreeMap<NaiveDate, f64> = points.iter().map(|p| (p.date, p.rate)).collect();
    let first = *by_date.keys().next().expect("non-empty");
    let span = Duration::days(baseline_window as i64);
    let mut spikes = Vec::new();
    for (&date, &rate) in &by_date {
        if date < first + span {
            continue;
        }
        let prior: Vec<f64> = by_date.range(date - span..date).map(|(_, r)| *r).collect();
        if prior.is_empty() {
            continue;
        }
        let baseline = prior.iter().sum::<f64>() / prior.len() as f64;
        if baseline <= 0.0 {
            continue;
        }
        if rate >= (1.0 + rel_threshold) * baseline {
            spikes.push(Spike { date, rate, baseline, relative_increase: rate / baseline - 1.0 });
        }
    }
    Ok(spikes)
}

/// Reads a `date,label` CSV of key dates.
pub fn load_key_dates(path: &Path) -> Result<Vec<KeyDate>, DynamicsError> {
    let csv_err = |source| DynamicsError::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out: Vec<KeyDate> = reader.deserialize().collect::<Result<_, _>>().map_err(csv_err)?;
    out.sort_by_key(|k| k.date);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Duration::days(n)
    }

    fn series(rates: &[f64]) -> Vec<RatePoint> {
        rates
            .iter()
            .enumerate()
            .map(|(i, r)| RatePoint { date: day(i as i64), n_samples: 100, n_positive: (r * 100.0).round() as u64, rate: *r })
            .collect()
    }

    fn pred(label: Label) -> Prediction {
        Prediction { score: if label == Label::Diagnosed { 0.8 } else { 0.2 }, label }
    }

    #[test]
    fn constant_negative_classifier() {
        let preds: Vec<_> = (0..50).map(|i| (day(i % 5), pred(Label::Control))).collect();
        let pts = aggregate(&preds, RateMode::Hard);
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| p.rate == 0.0 && p.n_samples == 10));
    }

    #[test]
    fn three_of_ten() {
        let preds: Vec<_> = (0..10).map(|i| (day(0), pred(if i < 3 { Label::Diagnosed } else { Label::Control }))).collect();
        let pts = aggregate(&preds, RateMode::Hard);
        assert_eq!(pts[0].rate, 0.3);
        assert_eq!(pts[0].n_positive, 3);
        let soft = aggregate(&preds, RateMode::Soft);
        assert!((soft[0].rate - (3.0 * 0.8 + 7.0 * 0.2) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn gaps_are_not_filled() {
        let preds = vec![(day(0), pred(Label::Control)), (day(3), pred(Label::Diagnosed))];
        let pts = aggregate(&preds, RateMode::Hard);
        assert_eq!(pts.iter().map(|p| p.date).collect::<Vec<_>>(), vec![day(0), day(3)]);
    }

    #[test]
    fn moving_average_examples() {
        let flat = series(&[0.2; 10]);
        assert!(moving_average(&flat, 7).unwrap().iter().all(|p| (p.value - 0.2).abs() < 1e-15));
        let s = series(&[0.1, 0.2, 0.3]);
        let m = moving_average(&s, 3).unwrap();
        assert!((m[2].value - 0.2).abs() < 1e-15);
        assert!((m[0].value - 0.1).abs() < 1e-15);
        let id = moving_average(&s, 1).unwrap();
        assert!(id.iter().zip(&s).all(|(a, b)| a.value == b.rate && a.date == b.date));
        assert!(matches!(moving_average(&s, 0), Err(DynamicsError::ZeroWindow)));
    }

    #[test]
    fn moving_average_skips_missing_days() {
        let mut s = series(&[0.1, 0.9, 0.3]);
        s[1].date = day(5);
        s[2].date = day(6);
        let m = moving_average(&s, 3).unwrap();
        // day 6 window is days 4..=6, which holds 0.9 and 0.3 only
        assert!((m[2].value - 0.6).abs() < 1e-15);
        assert_eq!(m[1].value, 0.9);
    }

    #[test]
    fn spike_examples() {
        assert!(detect_spikes(&series(&[0.1; 20]), 0.5, 7).unwrap().is_empty());
        let mut rates = vec![0.10; 10];
        rates.push(0.16);
        let spikes = detect_spikes(&series(&rates), 0.5, 7).unwrap();
        assert_eq!(spikes.len(), 1);
        assert_eq!(spikes[0].date, day(10));
        assert!((spikes[0].relative_increase - 0.6).abs() < 1e-9);
        assert!(matches!(detect_spikes(&series(&[0.1; 7]), 0.5, 7), Err(DynamicsError::TooShort { .. })));
    }

    #[test]
    fn zero_baseline_days_are_skipped() {
        let mut rates = vec![0.0; 9];
        rates.push(0.4);
        assert!(detect_spikes(&series(&rates), 0.5, 7).unwrap().is_empty());
    }

    #[test]
    fn key_dates_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(&path, "date,label\n2020-04-30,Restrictions eased\n2020-03-23,Restrictions begin\n").unwrap();
        let k = load_key_dates(&path).unwrap();
        assert_eq!(k[0], KeyDate { date: NaiveDate::from_ymd_opt(2020, 3, 23).unwrap(), label: "Restrictions begin".into() });
        assert_eq!(k.len(), 2);
        std::fs::write(&path, "date,label\nnot-a-date,x\n").unwrap();
        assert!(load_key_dates(&path).is_err());
    }

    fn fixture() -> impl Strategy<Value = Vec<(NaiveDate, Prediction)>> {
        proptest::collection::vec((0i64..30, 0.0f64..1.0), 1..300)
            .prop_map(|v| v.into_iter().map(|(d, s)| (day(d), Prediction::from_score(s))).collect())
    }

    proptest! {
        #[test]
        fn rates_are_bounded_and_decompose(a in fixture(), b in fixture()) {
            let whole: Vec<_> = a.iter().chain(&b).cloned().collect();
            let (pa, pb, pw) = (aggregate(&a, RateMode::Hard), aggregate(&b, RateMode::Hard), aggregate(&whole, RateMode::Hard));
            for p in &pw {
                prop_assert!((0.0..=1.0).contains(&p.rate));
                let find = |s: &[RatePoint]| s.iter().find(|q| q.date == p.date).map(|q| (q.n_samples as f64, q.rate)).unwrap_or((0.0, 0.0));
                let ((na, ra), (nb, rb)) = (find(&pa), find(&pb));
                prop_assert!((p.rate - (na * ra + nb * rb) / (na + nb)).abs() < 1e-12);
            }
        }

        #[test]
        fn moving_average_is_order_free_and_bounded(rates in proptest::collection::vec(0.0f64..1.0, 1..60), window in 1usize..10, seed in 0u64..1000) {
            let s = series(&rates);
            let mut shuffled = s.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (m, n) = (moving_average(&s, window).unwrap(), moving_average(&shuffled, window).unwrap());
            prop_assert_eq!(&m, &n);
            for (i, p) in m.iter().enumerate() {
                let win = &rates[i.saturating_sub(window - 1)..=i];
                let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p.value >= lo - 1e-12 && p.value <= hi + 1e-12);
            }
        }

        #[test]
        fn spikes_are_scale_invariant(rates in proptest::collection::vec(0.01f64..1.0, 9..60), c in 0.01f64..100.0) {
            let s = series(&rates);
            let scaled: Vec<RatePoint> = s.iter().map(|p| RatePoint { rate: p.rate * c, ..p.clone() }).collect();
            let a = detect_spikes(&s, 0.5, 7).unwrap();
            let b = detect_spikes(&scaled, 0.5, 7).unwrap();
            let borderline = a.iter().chain(&b).any(|x| (x.relative_increase - 0.5).abs() < 1e-9)
                || detect_spikes(&s, 0.5 - 1e-9, 7).unwrap().len() != detect_spikes(&s, 0.5 + 1e-9, 7).unwrap().len();
            prop_assume!(!borderline);
            prop_assert_eq!(a.iter().map(|x| x.date).collect::<Vec<_>>(), b.iter().map(|x| x.date).collect::<Vec<_>>());
        }
    }
}
