//! One function per pipeline stage. Each stage's fully resolved arguments are
//! a serde value, so the manifest can replay it.

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use mhdyn::corpus::{
    apply_annotations, build_control, collect_history, export_corpus, filter_users, load_corpus, parse_annotations,
    select_diagnosed_candidates, synth_corpus, write_annotations, DateWindow, FieldMap, FilterConfig, Group, SynthConfig,
    UserTimeline,
};
use mhdyn::dynamics::{detect_spikes, load_key_dates, moving_average, rate_series, report, RateMode, RateSeries};
use mhdyn::eval::{
    chi_square, confusion, metrics, metrics_table, significance_table, Baseline, ClassCounts, MetricsReport,
    SignificanceResult,
};
use mhdyn::features::{build_vocab, Vocabulary};
use mhdyn::models::{load_model_for, save_model, Family, Model, TrainConfig};
use mhdyn::sampling::{
    apply_class_weights, build_samples, read_samples, rebalance, segments, split, write_samples, Label, Regime,
    Representation, Sample, SplitConfig, SplitUnit,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStage {
    pub config: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStage {
    pub corpus: PathBuf,
    pub annotations: PathBuf,
    pub patterns: Vec<String>,
    pub country: String,
    pub major_lang: String,
    pub diagnosed_window: [NaiveDate; 2],
    pub control_window: [NaiveDate; 2],
    pub history_window: [NaiveDate; 2],
    pub control_cap: usize,
    pub history_cap: usize,
    pub min_tweets: usize,
    pub lang_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStage {
    pub timelines: PathBuf,
    pub representation: Representation,
    pub train_fraction: f64,
    pub split_unit: SplitUnit,
    pub min_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStage {
    pub samples: PathBuf,
    pub vocab: PathBuf,
    pub family: Family,
    pub regime: Regime,
    pub diagnosed_weight: f64,
    /// `train.seed` also drives the balanced downsample.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStage {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub samples: PathBuf,
    pub split_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceStage {
    pub predictions: PathBuf,
    /// Samples whose class distribution is the weighted baseline.
    pub prior_samples: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployStage {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub corpus: PathBuf,
    pub country: String,
    pub window: Option<[NaiveDate; 2]>,
    pub representation: Representation,
    pub mode: RateMode,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportStage {
    pub series: PathBuf,
    pub key_dates: Option<PathBuf>,
    pub smooth_window: usize,
    pub rel_threshold: f64,
    pub baseline_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "args", rename_all = "lowercase")]
pub enum Stage {
    Synth(SynthStage),
    Label(LabelStage),
    Build(BuildStage),
    Train(TrainStage),
    Eval(EvalStage),
    Significance(SignificanceStage),
    Deploy(DeployStage),
    Report(ReportStage),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Synth(_) => "synth",
            Stage::Label(_) => "label",
            Stage::Build(_) => "build",
            Stage::Train(_) => "train",
            Stage::Eval(_) => "eval",
            Stage::Significance(_) => "significance",
            Stage::Deploy(_) => "deploy",
            Stage::Report(_) => "report",
        }
    }

    /// Files the stage reads, keyed by role.
    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v: Vec<(&'static str, &Path)> = Vec::new();
        match self {
            Stage::Synth(_) => {}
            Stage::Label(a) => v.extend([("corpus", a.corpus.as_path()), ("annotations", a.annotations.as_path())]),
            Stage::Build(a) => v.push(("timelines", &a.timelines)),
            Stage::Train(a) => v.extend([("samples", a.samples.as_path()), ("vocab", a.vocab.as_path())]),
            Stage::Eval(a) => {
                v.extend([("model", a.model.as_path()), ("vocab", a.vocab.as_path()), ("samples", a.samples.as_path())])
            }
            Stage::Significance(a) => {
                v.push(("predictions", &a.predictions));
                if let Some(p) = &a.prior_samples {
                    v.push(("prior_samples", p));
                }
            }
            Stage::Deploy(a) => {
                v.extend([("model", a.model.as_path()), ("vocab", a.vocab.as_path()), ("corpus", a.corpus.as_path())])
            }
            Stage::Report(a) => {
                v.push(("series", &a.series));
                if let Some(k) = &a.key_dates {
                    v.push(("key_dates", k));
                }
            }
        }
        v
    }

    /// Runs the stage, writing into `out`, and returns the written file names.
    pub fn run(&self, out: &Path) -> Result<Vec<String>> {
        match self {
            Stage::Synth(a) => run_synth(a, out),
            Stage::Label(a) => run_label(a, out),
            Stage::Build(a) => run_build(a, out),
            Stage::Train(a) => run_train(a, out),
            Stage::Eval(a) => run_eval(a, out),
            Stage::Significance(a) => run_significance(a, out),
            Stage::Deploy(a) => run_deploy(a, out),
            Stage::Report(a) => run_report(a, out),
        }
    }
}

pub fn write_ndjson<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn window(w: [NaiveDate; 2]) -> Result<DateWindow> {
    Ok(DateWindow::new(w[0], w[1])?)
}

fn class_counts(samples: &[Sample]) -> ClassCounts {
    ClassCounts::from_labels(&samples.iter().map(|s| s.label).collect::<Vec<_>>())
}

fn run_synth(a: &SynthStage, out: &Path) -> Result<Vec<String>> {
    let corpus = synth_corpus(&a.config)?;
    export_corpus(&corpus.store, &out.join("corpus.ndjson"))?;
    write_json(&corpus.truth, &out.join("truth.json"))?;
    write_annotations(&corpus.truth.annotations(), &out.join("annotations.tsv"))?;
    Ok(vec!["corpus.ndjson".into(), "truth.json".into(), "annotations.tsv".into()])
}

#[derive(Serialize)]
struct UserSummary<'a> {
    candidates: usize,
    diagnosed_selected: usize,
    control_selected: usize,
    diagnosed: Vec<&'a str>,
    control: Vec<&'a str>,
}

fn run_label(a: &LabelStage, out: &Path) -> Result<Vec<String>> {
    let loaded = load_corpus(&a.corpus, &FieldMap::default())?;
    loaded.write_rejects(&out.join("rejects.ndjson"))?;
    let store = loaded.store;
    let candidates = select_diagnosed_candidates(&store, &a.patterns, window(a.diagnosed_window)?, &a.country)?;
    let mut tsv = String::from("# tweet_id\tuser_id\ttext\n");
    for c in &candidates {
        let text: String = c.tweet.text.chars().map(|ch| if ch == '\t' || ch == '\n' || ch == '\r' { ' ' } else { ch }).collect();
        tsv.push_str(&format!("{}\t{}\t{}\n", c.tweet.id, c.user_id, text));
    }
    std::fs::write(out.join("candidates.tsv"), tsv).context("writing candidates.tsv")?;

    let annotations_text = std::fs::read_to_string(&a.annotations).with_context(|| format!("reading {}", a.annotations.display()))?;
    let diagnosed = apply_annotations(&candidates, &parse_annotations(&annotations_text)?)?;
    let control = build_control(&store, window(a.control_window)?, &a.country, &diagnosed, a.control_cap)?;
    let history = window(a.history_window)?;
    let mut timelines = collect_history(&store, &diagnosed, Group::Diagnosed, history, a.history_cap);
    timelines.extend(collect_history(&store, &control, Group::Control, history, a.history_cap));
    let filter = FilterConfig { min_tweets: a.min_tweets, lang_threshold: a.lang_threshold, major_lang: a.major_lang.clone() };
    let kept = filter_users(timelines, &filter);
    write_ndjson(&kept, &out.join("timelines.ndjson"))?;
    let ids = |g: Group| kept.iter().filter(|t| t.group == g).map(|t| t.user_id.as_str()).collect::<Vec<_>>();
    let summary = UserSummary {
        candidates: candidates.len(),
        diagnosed_selected: diagnosed.len(),
        control_selected: control.len(),
        diagnosed: ids(Group::Diagnosed),
        control: ids(Group::Control),
    };
    write_json(&summary, &out.join("users.json"))?;
    Ok(["rejects.ndjson", "candidates.tsv", "timelines.ndjson", "users.json"].map(String::from).to_vec())
}

#[derive(Serialize)]
struct BuildSummary {
    representation: Representation,
    samples: usize,
    train: ClassCounts,
    validation: ClassCounts,
    vocab_size: usize,
    vocab_hash: String,
}

fn run_build(a: &BuildStage, out: &Path) -> Result<Vec<String>> {
    let timelines: Vec<UserTimeline> = read_ndjson(&a.timelines)?;
    let samples = build_samples(&timelines, a.representation)?;
    let (train, validation) =
        split(&samples, &SplitConfig { train_fraction: a.train_fraction, seed: a.seed, unit: a.split_unit })?;
    let vocab = build_vocab(&train, a.min_count)?;
    write_samples(&train, &out.join("train.ndjson"))?;
    write_samples(&validation, &out.join("validation.ndjson"))?;
    vocab.save(&out.join("vocab.tsv"))?;
    let summary = BuildSummary {
        representation: a.representation,
        samples: samples.len(),
        train: class_counts(&train),
        validation: class_counts(&validation),
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash().to_string(),
    };
    write_json(&summary, &out.join("build.json"))?;
    Ok(["train.ndjson", "validation.ndjson", "vocab.tsv", "build.json"].map(String::from).to_vec())
}

#[derive(Serialize)]
struct TrainSummary {
    family: Family,
    regime: Regime,
    diagnosed_weight: f64,
    trained_on: ClassCounts,
    weighted_mass: f64,
    vocab_hash: String,
}

fn run_train(a: &TrainStage, out: &Path) -> Result<Vec<String>> {
    let train = read_samples(&a.samples)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let mut rebalanced = rebalance(&train, a.regime, a.train.seed)?;
    apply_class_weights(&mut rebalanced, a.diagnosed_weight)?;
    let model = Model::train(a.family, &rebalanced, &vocab, &a.train)?;
    save_model(&model, &out.join("model.json"))?;
    let summary = TrainSummary {
        family: a.family,
        regime: a.regime,
        diagnosed_weight: a.diagnosed_weight,
        trained_on: class_counts(&rebalanced),
        weighted_mass: rebalanced.iter().map(|s| s.weight).sum(),
        vocab_hash: vocab.hash().to_string(),
    };
    write_json(&summary, &out.join("train.json"))?;
    Ok(vec!["model.json".into(), "train.json".into()])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub user_id: String,
    pub span: String,
    pub date: NaiveDate,
    pub gold: u8,
    pub score: f64,
    pub predicted: u8,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    split: &'a str,
    family: Family,
    samples: usize,
    metrics: &'a MetricsReport,
}

fn run_eval(a: &EvalStage, out: &Path) -> Result<Vec<String>> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model_for(&a.model, &vocab)?;
    let samples = read_samples(&a.samples)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv")).context("creating predictions.csv")?;
    let (mut predicted, mut gold) = (Vec::new(), Vec::new());
    for s in &samples {
        let p = model.predict_tokens(&s.tokens, &vocab)?;
        w.serialize(PredictionRow {
            user_id: s.user_id.clone(),
            span: s.span.to_string(),
            date: s.date,
            gold: s.label.into(),
            score: p.score,
            predicted: p.label.into(),
        })?;
        predicted.push(p.label);
        gold.push(s.label);
    }
    w.flush().context("writing predictions.csv")?;
    let report = metrics(&confusion(&predicted, &gold)?);
    write_json(&MetricsFile { split: &a.split_name, family: model.family(), samples: samples.len(), metrics: &report }, &out.join("metrics.json"))?;
    let table = metrics_table(&[(format!("{} ({})", model.family(), a.split_name), report)]);
    std::fs::write(out.join("metrics.txt"), table).context("writing metrics.txt")?;
    Ok(["predictions.csv", "metrics.json", "metrics.txt"].map(String::from).to_vec())
}

fn run_significance(a: &SignificanceStage, out: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
    let mut labels = Vec::new();
    for row in reader.deserialize() {
        let row: PredictionRow = row.with_context(|| format!("reading {}", a.predictions.display()))?;
        labels.push(Label::try_from(row.predicted).map_err(anyhow::Error::msg)?);
    }
    let observed = ClassCounts::from_labels(&labels);
    let mut results: Vec<(String, SignificanceResult)> = vec![("uniform".into(), chi_square(observed, Baseline::Uniform, None)?)];
    if let Some(prior_path) = &a.prior_samples {
        let prior = class_counts(&read_samples(prior_path)?).prior().context("prior samples are empty")?;
        results.push(("weighted".into(), chi_square(observed, Baseline::Weighted, Some(prior))?));
    }
    let json: BTreeMap<&str, &SignificanceResult> = results.iter().map(|(k, v)| (k.as_str(), v)).collect();
    write_json(&json, &out.join("significance.json"))?;
    std::fs::write(out.join("significance.txt"), significance_table(&results)).context("writing significance.txt")?;
    Ok(vec!["significance.json".into(), "significance.txt".into()])
}

/// Unlabeled per-user timelines of the in-country tweets inside `window`.
pub fn experiment_timelines(store: &mhdyn::corpus::TweetStore, country: &str, window: Option<DateWindow>) -> Vec<UserTimeline> {
    store
        .by_user()
        .into_iter()
        .map(|(user, tweets)| UserTimeline {
            user_id: user.to_string(),
            group: Group::Unlabeled,
            tweets: tweets
                .into_iter()
                .filter(|t| t.country == country && window.is_none_or(|w| w.contains(&t.created_at)))
                .cloned()
                .collect(),
        })
        .filter(|t| !t.tweets.is_empty())
        .collect()
}

fn run_deploy(a: &DeployStage, out: &Path) -> Result<Vec<String>> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model_for(&a.model, &vocab)?;
    let store = load_corpus(&a.corpus, &FieldMap::default())?.store;
    let w = a.window.map(window).transpose()?;
    let segs = segments(&experiment_timelines(&store, &a.country, w), a.representation);
    if segs.is_empty() {
        bail!("no tweets from {} in the experiment window", a.country);
    }
    let series = rate_series(&model, &vocab, &segs, &a.country, &a.model_id, a.representation, a.mode)?;
    write_json(&series, &out.join("series.json"))?;
    Ok(vec!["series.json".into()])
}

fn run_report(a: &ReportStage, out: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(&a.series).with_context(|| format!("reading {}", a.series.display()))?;
    let series: RateSeries = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.series.display()))?;
    let key_dates = match &a.key_dates {
        Some(p) => load_key_dates(p)?,
        None => Vec::new(),
    };
    let smoothed = moving_average(&series.points, a.smooth_window)?;
    let spikes = if series.points.len() > a.baseline_window {
        detect_spikes(&series.points, a.rel_threshold, a.baseline_window)?
    } else {
        Vec::new()
    };
    let files = report(&series, &smoothed, &key_dates, &spikes, out)?;
    Ok([files.csv, files.svg, files.json]
        .iter()
        .map(|p| p.file_name().expect("file name").to_string_lossy().into_owned())
        .collect())
}
