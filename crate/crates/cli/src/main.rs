use anyhow::{anyhow, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use mhdyn::corpus::{SpikeDay, SynthConfig, DEFAULT_HISTORY_CAP, DEFAULT_PATTERNS};
use mhdyn::dynamics::RateMode;
use mhdyn::models::{Family, OptimizerKind};
use mhdyn::preprocess::normalize;
use mhdyn::sampling::{Regime, Representation, SplitUnit};
use mhdyn_cli::config::{resolve_seed, RunConfig, SEED_ENV};
use mhdyn_cli::stages::*;
use mhdyn_cli::{execute, rerun, Stage};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Distant-supervision depression classifiers and daily rate series.
#[derive(Parser)]
#[command(name = "mhd", version)]
struct Cli {
    /// TOML run configuration. Explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step. Falls back to the config file, then MHD_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: mhd-out/<stage>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic archive with known diagnosed and control users.
    Synth(SynthFlags),
    /// Select, annotate and filter diagnosed and control users into timelines.
    Label(LabelFlags),
    /// Turn timelines into samples, split them and build the vocabulary.
    Build(BuildFlags),
    /// Train a classifier on a sample file.
    Train(TrainFlags),
    /// Score a sample file and report per-class metrics.
    Eval(EvalFlags),
    /// Chi-square test of the predicted class distribution.
    Significance(SignificanceFlags),
    /// Apply a model to an archive and produce a daily rate series.
    Deploy(DeployFlags),
    /// Smooth a rate series, detect spikes and write CSV, SVG and JSON.
    Report(ReportFlags),
    /// Replay a stage from its manifest and check the outputs are identical.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the normalized tokens of a text as JSON.
    Preprocess { text: Vec<String> },
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long)]
    diagnosed_users: Option<usize>,
    #[arg(long)]
    control_users: Option<usize>,
    #[arg(long)]
    decoy_users: Option<usize>,
    /// Tweets per user as MIN..MAX.
    #[arg(long, value_parser = parse_usize_range)]
    tweets_per_user: Option<[usize; 2]>,
    /// Archive span as START..END.
    #[arg(long, value_parser = parse_window)]
    date_range: Option<[NaiveDate; 2]>,
    #[arg(long, value_parser = parse_window)]
    seed_window: Option<[NaiveDate; 2]>,
    #[arg(long)]
    signal_rate: Option<f64>,
    #[arg(long)]
    control_signal_rate: Option<f64>,
    #[arg(long)]
    mixed_language_user_rate: Option<f64>,
    /// DATE:MULTIPLIER, repeatable.
    #[arg(long = "spike-day", value_parser = parse_spike)]
    spike_days: Vec<SpikeDay>,
    #[arg(long)]
    allow_sparse_users: bool,
}

#[derive(Args)]
struct LabelFlags {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// TSV of `tweet_id<TAB>genuine|non-genuine` covering every candidate.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Diagnosis pattern, repeatable.
    #[arg(long = "pattern")]
    patterns: Vec<String>,
    #[arg(long)]
    country: Option<String>,
    #[arg(long)]
    major_lang: Option<String>,
    #[arg(long, value_parser = parse_window)]
    diagnosed_window: Option<[NaiveDate; 2]>,
    #[arg(long, value_parser = parse_window)]
    control_window: Option<[NaiveDate; 2]>,
    #[arg(long, value_parser = parse_window)]
    history_window: Option<[NaiveDate; 2]>,
    #[arg(long)]
    control_cap: Option<usize>,
    #[arg(long)]
    history_cap: Option<usize>,
    #[arg(long)]
    min_tweets: Option<usize>,
    #[arg(long)]
    lang_threshold: Option<f64>,
}

#[derive(Args)]
struct BuildFlags {
    #[arg(long)]
    timelines: PathBuf,
    #[arg(long)]
    representation: Option<Representation>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// `user` keeps each user on one side of the split; `sample` splits freely.
    #[arg(long)]
    split_unit: Option<SplitUnit>,
    #[arg(long)]
    min_count: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    model: Option<Family>,
    #[arg(long)]
    regime: Option<Regime>,
    /// Loss weight of Diagnosed samples; Control weighs 1 (default 1).
    #[arg(long)]
    diagnosed_weight: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long)]
    model_path: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value = "validation")]
    split_name: String,
}

#[derive(Args)]
struct SignificanceFlags {
    #[arg(long)]
    predictions: PathBuf,
    /// Sample file whose class shares form the weighted baseline.
    #[arg(long)]
    prior_samples: Option<PathBuf>,
}

#[derive(Args)]
struct DeployFlags {
    #[arg(long)]
    model_path: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    country: Option<String>,
    #[arg(long, value_parser = parse_window)]
    window: Option<[NaiveDate; 2]>,
    #[arg(long)]
    representation: Option<Representation>,
    /// Mean score per day instead of the share labelled Diagnosed.
    #[arg(long)]
    soft: bool,
    #[arg(long)]
    model_id: Option<String>,
}

#[derive(Args)]
struct ReportFlags {
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    key_dates: Option<PathBuf>,
    #[arg(long)]
    smooth_window: Option<usize>,
    #[arg(long)]
    rel_threshold: Option<f64>,
    #[arg(long)]
    baseline_window: Option<usize>,
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("{s:?}: {e}"))
}

fn parse_window(s: &str) -> Result<[NaiveDate; 2], String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    Ok([parse_date(a)?, parse_date(b)?])
}

fn parse_usize_range(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let n = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok([n(a)?, n(b)?])
}

fn parse_spike(s: &str) -> Result<SpikeDay, String> {
    let (d, m) = s.split_once(':').ok_or_else(|| format!("expected DATE:MULTIPLIER, got {s:?}"))?;
    Ok(SpikeDay { date: parse_date(d)?, multiplier: m.trim().parse().map_err(|e| format!("{m:?}: {e}"))? })
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        other => Err(format!("unknown optimizer {other:?} (adam, sgd)")),
    }
}

fn existing(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("input file {} not found", p.display()))
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let p = flag.or_else(|| config.clone()).ok_or_else(|| anyhow!("--{name} is required (or set paths.{name} in the config)"))?;
    existing(&p)
}

fn synth_defaults() -> SynthConfig {
    SynthConfig::default()
}

fn build_stage(cmd: Command, cfg: &RunConfig, seed: u64) -> Result<Stage> {
    let country = cfg.country.clone().unwrap_or_else(|| synth_defaults().country);
    let major_lang = cfg.major_lang.clone().unwrap_or_else(|| synth_defaults().major_lang);
    Ok(match cmd {
        Command::Synth(f) => {
            let mut c = cfg.synth.clone().unwrap_or_default();
            c.seed = seed;
            macro_rules! set {
                ($($field:ident <- $flag:expr),*) => { $(if let Some(v) = $flag { c.$field = v; })* };
            }
            set!(n_diagnosed_users <- f.diagnosed_users, n_control_users <- f.control_users,
                decoy_users <- f.decoy_users, tweets_per_user <- f.tweets_per_user,
                date_range <- f.date_range, seed_window <- f.seed_window, signal_rate <- f.signal_rate,
                control_signal_rate <- f.control_signal_rate,
                mixed_language_user_rate <- f.mixed_language_user_rate);
            if !f.spike_days.is_empty() {
                c.spike_days = f.spike_days;
            }
            c.allow_sparse_users |= f.allow_sparse_users;
            Stage::Synth(SynthStage { config: c })
        }
        Command::Label(f) => {
            let d = synth_defaults();
            let seed_window = cfg.windows.diagnosed.unwrap_or(d.seed_window);
            Stage::Label(LabelStage {
                corpus: required(f.corpus, &cfg.paths.corpus, "corpus")?,
                annotations: required(f.annotations, &cfg.paths.annotations, "annotations")?,
                patterns: if !f.patterns.is_empty() {
                    f.patterns
                } else {
                    cfg.patterns.clone().unwrap_or_else(|| DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect())
                },
                country: f.country.unwrap_or(country),
                major_lang: f.major_lang.unwrap_or(major_lang),
                diagnosed_window: f.diagnosed_window.unwrap_or(seed_window),
                control_window: f.control_window.or(cfg.windows.control).unwrap_or(seed_window),
                history_window: f.history_window.or(cfg.windows.history).unwrap_or(d.date_range),
                control_cap: f.control_cap.or(cfg.supervision.control_cap).unwrap_or(100_000),
                history_cap: f.history_cap.or(cfg.supervision.history_cap).unwrap_or(DEFAULT_HISTORY_CAP),
                min_tweets: f.min_tweets.or(cfg.supervision.min_tweets).unwrap_or(20),
                lang_threshold: f.lang_threshold.or(cfg.supervision.lang_threshold).unwrap_or(0.70),
            })
        }
        Command::Build(f) => Stage::Build(BuildStage {
            timelines: existing(&f.timelines)?,
            representation: f.representation.or(cfg.build.representation).unwrap_or(Representation::Individual),
            train_fraction: f.train_fraction.or(cfg.build.train_fraction).unwrap_or(0.8),
            split_unit: f.split_unit.or(cfg.build.split_unit).unwrap_or(SplitUnit::User),
            min_count: f.min_count.or(cfg.build.min_count).unwrap_or(1),
            seed,
        }),
        Command::Train(f) => {
            let mut train = cfg.train.clone().unwrap_or_default();
            train.seed = seed;
            if let Some(v) = f.epochs {
                train.epochs = v;
            }
            if let Some(v) = f.batch_size {
                train.batch_size = v;
            }
            if let Some(v) = f.learning_rate {
                train.learning_rate = v;
            }
            if let Some(v) = f.optimizer {
                train.optimizer = v;
            }
            Stage::Train(TrainStage {
                samples: existing(&f.samples)?,
                vocab: existing(&f.vocab)?,
                family: f.model.or(cfg.model.family).unwrap_or(Family::Svm),
                regime: f.regime.or(cfg.model.regime).unwrap_or(Regime::Imbalanced),
                diagnosed_weight: f.diagnosed_weight.or(cfg.model.diagnosed_weight).unwrap_or(1.0),
                train,
            })
        }
        Command::Eval(f) => Stage::Eval(EvalStage {
            model: existing(&f.model_path)?,
            vocab: existing(&f.vocab)?,
            samples: existing(&f.samples)?,
            split_name: f.split_name,
        }),
        Command::Significance(f) => Stage::Significance(SignificanceStage {
            predictions: existing(&f.predictions)?,
            prior_samples: f.prior_samples.as_deref().map(existing).transpose()?,
        }),
        Command::Deploy(f) => {
            let model = existing(&f.model_path)?;
            let model_id = f.model_id.or(cfg.deploy.model_id.clone()).unwrap_or_else(|| {
                model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
            });
            Stage::Deploy(DeployStage {
                model,
                vocab: existing(&f.vocab)?,
                corpus: required(f.corpus, &cfg.paths.corpus, "corpus")?,
                country: f.country.unwrap_or(country),
                window: f.window.or(cfg.windows.experiment),
                representation: f.representation.or(cfg.build.representation).unwrap_or(Representation::Individual),
                mode: if f.soft { RateMode::Soft } else { cfg.deploy.mode.unwrap_or_default() },
                model_id,
            })
        }
        Command::Report(f) => Stage::Report(ReportStage {
            series: existing(&f.series)?,
            key_dates: f.key_dates.or(cfg.paths.key_dates.clone()).as_deref().map(existing).transpose()?,
            smooth_window: f.smooth_window.or(cfg.report.smooth_window).unwrap_or(7),
            rel_threshold: f.rel_threshold.or(cfg.report.rel_threshold).unwrap_or(0.5),
            baseline_window: f.baseline_window.or(cfg.report.baseline_window).unwrap_or(7),
        }),
        Command::Rerun { .. } | Command::Preprocess { .. } => unreachable!("handled before stage resolution"),
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Preprocess { text } => {
            println!("{}", serde_json::to_string(&normalize(&text.join(" ")))?);
            return Ok(());
        }
        Command::Rerun { manifest } => {
            let out = cli.out.ok_or_else(|| anyhow!("rerun needs --out"))?;
            let m = rerun(&manifest, &out)?;
            println!("{}", serde_json::to_string(&m.outputs)?);
            return Ok(());
        }
        _ => {}
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, cfg.seed, env_seed.as_deref())?;
    let stage = build_stage(cli.command, &cfg, seed)?;
    let out = cli.out.or(cfg.paths.out.clone()).unwrap_or_else(|| Path::new("mhd-out").join(stage.name()));
    let manifest = execute(&stage, &out)?;
    println!("{}", serde_json::to_string(&manifest.outputs)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "causes": chain }));
            ExitCode::FAILURE
        }
    }
}
