//! CSV, SVG and JSON renderings of a rate series.

use super::{DynamicsError, KeyDate, RateMode, RateSeries, SmoothedPoint, Spike};
use crate::sampling::Representation;
use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Days in the period that have at least one sample.
    pub n_days: usize,
    pub n_samples: u64,
    pub mean_rate: Option<f64>,
    pub mean_smoothed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDateEntry {
    pub date: NaiveDate,
    pub label: String,
    pub in_range: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub country: String,
    pub model_id: String,
    pub representation: Representation,
    pub mode: RateMode,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
    pub n_days: usize,
    pub n_samples: u64,
    pub key_dates: Vec<KeyDateEntry>,
    pub periods: Vec<Period>,
    pub spikes: Vec<Spike>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub json: PathBuf,
}

#[derive(Serialize)]
struct CsvRow {
    date: NaiveDate,
    n_samples: u64,
    n_positive: u64,
    rate: f64,
    smoothed_rate: Option<f64>,
}

/// Splits the series range at each key date. With key dates d1 < … < dk the
/// periods are `[first, d1)`, `[d1, d2)`, …, `[dk, last]`; key dates outside
/// the series range still bound a period, which may then be empty.
pub fn period_summary(series: &RateSeries, smoothed: &[SmoothedPoint], key_dates: &[KeyDate]) -> Vec<Period> {
    let (Some(first), Some(last)) = (series.points.first().map(|p| p.date), series.points.last().map(|p| p.date)) else {
        return Vec::new();
    };
    let mut keys: Vec<&KeyDate> = key_dates.iter().collect();
    keys.sort_by_key(|k| k.date);
    let mut bounds: Vec<(String, NaiveDate, NaiveDate)> = Vec::new();
    if keys.is_empty() {
        bounds.push(("whole series".into(), first, last));
    } else {
        bounds.push((format!("before {}", keys[0].label), first.min(keys[0].date), keys[0].date - Duration::days(1)));
        for w in keys.windows(2) {
            bounds.push((format!("{} to {}", w[0].label, w[1].label), w[0].date, w[1].date - Duration::days(1)));
        }
        let k = keys[keys.len() - 1];
        bounds.push((format!("from {}", k.label), k.date, last.max(k.date)));
    }
    let smooth: BTreeMap<NaiveDate, f64> = smoothed.iter().map(|s| (s.date, s.value)).collect();
    bounds
        .into_iter()
        .map(|(name, start, end)| {
            let inside: Vec<_> = series.points.iter().filter(|p| p.date >= start && p.date <= end).collect();
            let sm: Vec<f64> = smooth.range(start..=end.max(start)).map(|(_, v)| *v).filter(|_| end >= start).collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            Period {
                name,
                start,
                end,
                n_days: inside.len(),
                n_samples: inside.iter().map(|p| p.n_samples).sum(),
                mean_rate: mean(&inside.iter().map(|p| p.rate).collect::<Vec<_>>()),
                mean_smoothed: mean(&sm),
            }
        })
        .collect()
}

fn file_stem(series: &RateSeries) -> String {
    let clean = |s: &str| s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect::<String>();
    format!("{}_{}", clean(&series.country), clean(&series.model_id))
}

/// Writes `rate_<country>_<model>.csv`, `rate_<country>_<model>.svg` and
/// `summary_<country>_<model>.json` into `out_dir`.
pub fn report(
    series: &RateSeries,
    smoothed: &[SmoothedPoint],
    key_dates: &[KeyDate],
    spikes: &[Spike],
    out_dir: &Path,
) -> Result<ReportFiles, DynamicsError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DynamicsError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let stem = file_stem(series);
    let files = ReportFiles {
        csv: out_dir.join(format!("rate_{stem}.csv")),
        svg: out_dir.join(format!("rate_{stem}.svg")),
        json: out_dir.join(format!("summary_{stem}.json")),
    };

    let smooth: BTreeMap<NaiveDate, f64> = smoothed.iter().map(|s| (s.date, s.value)).collect();
    let csv_err = |source| DynamicsError::Csv { path: files.csv.clone(), source };
    let mut w = csv::Writer::from_path(&files.csv).map_err(csv_err)?;
    for p in &series.points {
        w.serialize(CsvRow {
            date: p.date,
            n_samples: p.n_samples,
            n_positive: p.n_positive,
            rate: p.rate,
            smoothed_rate: smooth.get(&p.date).copied(),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(io(&files.csv))?;

    std::fs::write(&files.svg, render_svg(series, smoothed, key_dates, spikes)).map_err(io(&files.svg))?;

    let first = series.points.first().map(|p| p.date);
    let last = series.points.last().map(|p| p.date);
    let summary = Summary {
        country: series.country.clone(),
        model_id: series.model_id.clone(),
        representation: series.representation,
        mode: series.mode,
        first_date: first,
        last_date: last,
        n_days: series.points.len(),
        n_samples: series.points.iter().map(|p| p.n_samples).sum(),
        key_dates: key_dates
            .iter()
            .map(|k| KeyDateEntry {
                date: k.date,
                label: k.label.clone(),
                in_range: first.is_some_and(|f| k.date >= f) && last.is_some_and(|l| k.date <= l),
            })
            .collect(),
        periods: period_summary(series, smoothed, key_dates),
        spikes: spikes.to_vec(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|source| DynamicsError::Json { path: files.json.clone(), source })?;
    std::fs::write(&files.json, json + "\n").map_err(io(&files.json))?;
    Ok(files)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn render_svg(series: &RateSeries, smoothed: &[SmoothedPoint], key_dates: &[KeyDate], spikes: &[Spike]) -> String {
    const W: f64 = 960.0;
    const H: f64 = 400.0;
    const L: f64 = 64.0;
    const R: f64 = 24.0;
    const T: f64 = 40.0;
    const B: f64 = 56.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let title = format!("Daily rate ({}, {}, {})", series.country, series.model_id, series.representation);
    let _ = writeln!(svg, r#"<text x="{L}" y="20" font-size="14">{}</text>"#, escape(&title));

    let (Some(first), Some(last)) = (series.points.first().map(|p| p.date), series.points.last().map(|p| p.date)) else {
        let _ = writeln!(svg, r#"<text x="{L}" y="{}">no data</text>"#, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    };
    let span_days = ((last - first).num_days().max(1)) as f64;
    let y_max = series.points.iter().map(|p| p.rate).chain(smoothed.iter().map(|s| s.value)).fold(0.0, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };
    let x = |d: NaiveDate| L + (d - first).num_days() as f64 / span_days * (W - L - R);
    let y = |v: f64| H - B - v / y_max * (H - T - B);

    let _ = writeln!(svg, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(svg, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let _ = writeln!(svg, r##"<line x1="{L}" y1="{yv:.2}" x2="{:.2}" y2="{yv:.2}" stroke="#e0e0e0"/>"##, W - R, yv = y(v));
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, L - 6.0, y(v) + 4.0);
    }
    let mut tick = NaiveDate::from_ymd_opt(first.year(), first.month(), 1).expect("valid month start");
    let monthly = span_days > 60.0;
    if !monthly {
        tick = first;
    }
    while tick <= last {
        if tick >= first {
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, x(tick), H - B + 18.0, tick.format("%Y-%m-%d"));
        }
        tick = if monthly {
            let (yr, mo) = if tick.month() == 12 { (tick.year() + 1, 1) } else { (tick.year(), tick.month() + 1) };
            NaiveDate::from_ymd_opt(yr, mo, 1).expect("valid month start")
        } else {
            tick + Duration::days(7)
        };
    }

    let runs = |pts: Vec<(NaiveDate, f64)>| {
        let mut out: Vec<Vec<(NaiveDate, f64)>> = Vec::new();
        for p in pts {
            match out.last_mut() {
                Some(run) if p.0 - run.last().expect("non-empty run").0 == Duration::days(1) => run.push(p),
                _ => out.push(vec![p]),
            }
        }
        out
    };
    let mut polyline = |pts: Vec<(NaiveDate, f64)>, style: &str| {
        for run in runs(pts) {
            let coords: Vec<String> = run.iter().map(|(d, v)| format!("{:.2},{:.2}", x(*d), y(*v))).collect();
            let _ = writeln!(svg, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
        }
    };
    polyline(series.points.iter().map(|p| (p.date, p.rate)).collect(), r##"stroke="#9ecae1" stroke-width="1""##);
    polyline(smoothed.iter().map(|s| (s.date, s.value)).collect(), r##"stroke="#08519c" stroke-width="2""##);

    for k in key_dates.iter().filter(|k| k.date >= first && k.date <= last) {
        let kx = x(k.date);
        let _ = writeln!(svg, r##"<line x1="{kx:.2}" y1="{T}" x2="{kx:.2}" y2="{}" stroke="#d62728" stroke-dasharray="4,3"/>"##, H - B);
        let _ = writeln!(svg, r##"<text x="{:.2}" y="{}" fill="#d62728">{}</text>"##, kx + 3.0, T + 12.0, escape(&k.label));
    }
    for s in spikes {
        let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="#ff7f0e" stroke-width="2"/>"##, x(s.date), y(s.rate));
        let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" fill="#ff7f0e" text-anchor="middle">+{:.0}%</text>"##, x(s.date), y(s.rate) - 8.0, s.relative_increase * 100.0);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::super::{moving_average, RatePoint};
    use super::*;

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + Duration::days(n)
    }

    fn fixture() -> RateSeries {
        let points = (0..90)
            .filter(|i| i % 11 != 5)
            .map(|i| {
                let n = 50 + (i * 7 % 13) as u64;
                let pos = (i * 3 % 17) as u64;
                RatePoint { date: day(i), n_samples: n, n_positive: pos, rate: pos as f64 / n as f64 }
            })
            .collect();
        RateSeries { points, country: "GB".into(), model_id: "svm/v1".into(), representation: Representation::Individual, mode: RateMode::Hard }
    }

    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        n_samples: u64,
        n_positive: u64,
        rate: f64,
        smoothed_rate: f64,
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = fixture();
        let sm = moving_average(&s.points, 7).unwrap();
        let files = report(&s, &sm, &[], &[], dir.path()).unwrap();
        assert!(files.csv.ends_with("rate_GB_svm_v1.csv"));
        let text = std::fs::read_to_string(&files.csv).unwrap();
        assert!(text.starts_with("date,n_samples,n_positive,rate,smoothed_rate\n"));
        let rows: Vec<Row> = csv::Reader::from_reader(text.as_bytes()).deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(rows.len(), s.points.len());
        for ((r, p), m) in rows.iter().zip(&s.points).zip(&sm) {
            assert_eq!((r.date, r.n_samples, r.n_positive), (p.date, p.n_samples, p.n_positive));
            assert!((r.rate - p.rate).abs() < 1e-12);
            assert!((r.smoothed_rate - m.value).abs() < 1e-12);
        }
    }

    #[test]
    fn chart_without_key_dates_has_no_markers() {
        let s = fixture();
        let svg = render_svg(&s, &moving_average(&s.points, 7).unwrap(), &[], &[]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("stroke-dasharray"));
        let keys = [KeyDate { date: day(22), label: "Restrictions <begin>".into() }];
        let spikes = [Spike { date: day(40), rate: 0.3, baseline: 0.15, relative_increase: 1.0 }];
        let svg = render_svg(&s, &[], &keys, &spikes);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(svg.contains("Restrictions &lt;begin&gt;"));
        assert!(svg.contains("+100%"));
    }

    #[test]
    fn empty_series_renders() {
        let mut s = fixture();
        s.points.clear();
        assert!(render_svg(&s, &[], &[], &[]).contains("no data"));
        assert!(period_summary(&s, &[], &[]).is_empty());
    }

    #[test]
    fn period_means_match_recount() {
        let s = fixture();
        let sm = moving_average(&s.points, 7).unwrap();
        let keys = vec![
            KeyDate { date: day(40), label: "eased".into() },
            KeyDate { date: day(22), label: "begin".into() },
        ];
        let periods = period_summary(&s, &sm, &keys);
        assert_eq!(periods.len(), 3);
        assert_eq!(periods[0].name, "before begin");
        assert_eq!(periods[1].name, "begin to eased");
        assert_eq!(periods[2].name, "from eased");
        let ranges = [(0, 21), (22, 39), (40, 89)];
        for (p, (a, b)) in periods.iter().zip(ranges) {
            let mut sum = 0.0;
            let mut n = 0;
            let mut smooth_sum = 0.0;
            for i in a..=b {
                if let Some(pt) = s.points.iter().find(|q| q.date == day(i)) {
                    sum += pt.rate;
                    n += 1;
                    smooth_sum += sm.iter().find(|q| q.date == day(i)).unwrap().value;
                }
            }
            assert_eq!(p.n_days, n);
            assert!((p.mean_rate.unwrap() - sum / n as f64).abs() < 1e-12);
            assert!((p.mean_smoothed.unwrap() - smooth_sum / n as f64).abs() < 1e-12);
        }
        assert_eq!(periods.iter().map(|p| p.n_samples).sum::<u64>(), s.points.iter().map(|p| p.n_samples).sum::<u64>());
    }

    #[test]
    fn summary_flags_out_of_range_key_dates() {
        let dir = tempfile::tempdir().unwrap();
        let s = fixture();
        let keys = vec![KeyDate { date: day(200), label: "later".into() }];
        let files = report(&s, &[], &keys, &[], dir.path()).unwrap();
        let summary: Summary = serde_json::from_str(&std::fs::read_to_string(files.json).unwrap()).unwrap();
        assert!(!summary.key_dates[0].in_range);
        assert_eq!(summary.periods.last().unwrap().n_days, 0);
        assert_eq!(summary.periods.last().unwrap().mean_rate, None);
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = report(&fixture(), &[], &[], &[], &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
