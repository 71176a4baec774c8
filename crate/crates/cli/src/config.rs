//! TOML run configuration. Every field is optional; command-line flags win
//! over the file, and relative paths resolve against the file's directory.

use anyhow::{Context, Result};
use chrono::NaiveDate;
use mhdyn::corpus::SynthConfig;
use mhdyn::dynamics::RateMode;
use mhdyn::models::{Family, TrainConfig};
use mhdyn::sampling::{Regime, Representation, SplitUnit};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment variable consulted when neither a flag nor the config file
/// sets the seed.
pub const SEED_ENV: &str = "MHD_SEED";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub country: Option<String>,
    pub major_lang: Option<String>,
    pub patterns: Option<Vec<String>>,
    pub windows: Windows,
    pub supervision: Supervision,
    pub build: BuildSection,
    pub model: ModelSection,
    /// Base hyperparameters; the seed inside is replaced by the resolved one.
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
    pub deploy: DeploySection,
    pub report: ReportSection,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    pub diagnosed: Option<[NaiveDate; 2]>,
    pub control: Option<[NaiveDate; 2]>,
    pub history: Option<[NaiveDate; 2]>,
    pub experiment: Option<[NaiveDate; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Supervision {
    pub control_cap: Option<usize>,
    pub history_cap: Option<usize>,
    pub min_tweets: Option<usize>,
    pub lang_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub representation: Option<Representation>,
    pub train_fraction: Option<f64>,
    pub split_unit: Option<SplitUnit>,
    pub min_count: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: Option<Family>,
    pub regime: Option<Regime>,
    pub diagnosed_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploySection {
    pub mode: Option<RateMode>,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub smooth_window: Option<usize>,
    pub rel_threshold: Option<f64>,
    pub baseline_window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub key_dates: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.corpus, &mut cfg.paths.annotations, &mut cfg.paths.key_dates, &mut cfg.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag, then config file, then `MHD_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        None => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, None, Some("x")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 4\n[paths]\ncorpus = \"data/c.ndjson\"\nkey_dates = \"/abs/k.csv\"\n[build]\nrepresentation = \"user-week\"\n[train]\nepochs = 3\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.paths.corpus.unwrap(), dir.path().join("data/c.ndjson"));
        assert_eq!(cfg.paths.key_dates.unwrap(), PathBuf::from("/abs/k.csv"));
        assert_eq!(cfg.build.representation, Some(Representation::UserWeek));
        let train = cfg.train.unwrap();
        assert_eq!(train.epochs, 3);
        assert_eq!(train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "sede = 4\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
