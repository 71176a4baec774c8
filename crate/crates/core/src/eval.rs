//! Confusion matrices, per-class precision/recall/F1 with macro averaging,
//! and Pearson's χ² goodness-of-fit test for predicted class counts.
//!
//! Diagnosed is the positive class throughout.

use crate::sampling::Label;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{predicted} predictions but {gold} gold labels")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("observed total must be positive")]
    NoObservations,
    #[error("expected count for {0} is zero")]
    ZeroExpected(Label),
    #[error("weighted baseline needs a class prior")]
    MissingPrior,
    #[error("class prior must be two non-negative fractions summing to 1, got {0}/{1}")]
    InvalidPrior(f64, f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total()).unwrap_or(0.0)
    }

    /// The same matrix with Control treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }

    /// Predicted class counts as (Diagnosed, Control).
    pub fn predicted_counts(&self) -> ClassCounts {
        ClassCounts { diagnosed: self.tp + self.fp, control: self.fn_ + self.tn }
    }
}

pub fn confusion(predicted: &[Label], gold: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::LengthMismatch { predicted: predicted.len(), gold: gold.len() });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, g) in predicted.iter().zip(gold) {
        match (p, g) {
            (Label::Diagnosed, Label::Diagnosed) => cm.tp += 1,
            (Label::Diagnosed, Label::Control) => cm.fp += 1,
            (Label::Control, Label::Diagnosed) => cm.fn_ += 1,
            (Label::Control, Label::Control) => cm.tn += 1,
        }
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub diagnosed: ClassMetrics,
    pub control: ClassMetrics,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Metrics whose denominator was zero and were therefore set to 0,
    /// e.g. `diagnosed.precision`.
    pub degenerate: Vec<String>,
}

fn class_metrics(tp: u64, fp: u64, fn_: u64, name: &str, flags: &mut Vec<String>) -> ClassMetrics {
    let mut get = |v: Option<f64>, what: &str| {
        v.unwrap_or_else(|| {
            flags.push(format!("{name}.{what}"));
            0.0
        })
    };
    let precision = get(ratio(tp, tp + fp), "precision");
    let recall = get(ratio(tp, tp + fn_), "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.push(format!("{name}.f1"));
        0.0
    };
    ClassMetrics { precision, recall, f1 }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let mut degenerate = Vec::new();
    let diagnosed = class_metrics(cm.tp, cm.fp, cm.fn_, "diagnosed", &mut degenerate);
    let s = cm.swapped();
    let control = class_metrics(s.tp, s.fp, s.fn_, "control", &mut degenerate);
    MetricsReport {
        macro_f1: (diagnosed.f1 + control.f1) / 2.0,
        accuracy: cm.accuracy(),
        diagnosed,
        control,
        confusion: *cm,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub diagnosed: u64,
    pub control: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.diagnosed + self.control
    }

    /// Class fractions, usable as a prior.
    pub fn prior(&self) -> Option<ClassPrior> {
        let t = self.total() as f64;
        (t > 0.0).then(|| ClassPrior { diagnosed: self.diagnosed as f64 / t, control: self.control as f64 / t })
    }

    pub fn from_labels(labels: &[Label]) -> Self {
        let diagnosed = labels.iter().filter(|l| **l == Label::Diagnosed).count() as u64;
        Self { diagnosed, control: labels.len() as u64 - diagnosed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub diagnosed: f64,
    pub control: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Uniform,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub chi2: f64,
    pub p_value: f64,
    pub dof: u32,
    pub baseline: Baseline,
    pub observed: ClassCounts,
    /// Expected (Diagnosed, Control) counts under the baseline.
    pub expected: [f64; 2],
}

impl SignificanceResult {
    pub fn p_display(&self) -> String {
        format_p(self.p_value)
    }
}

/// Tests observed predicted-class counts against a uniform split or against
/// the supplied class prior.
pub fn chi_square(observed: ClassCounts, baseline: Baseline, prior: Option<ClassPrior>) -> Result<SignificanceResult, EvalError> {
    let total = observed.total() as f64;
    if total == 0.0 {
        return Err(EvalError::NoObservations);
    }
    let expected = match baseline {
        Baseline::Uniform => [total / 2.0, total / 2.0],
        Baseline::Weighted => {
            let p = prior.ok_or(EvalError::MissingPrior)?;
            let ok = p.diagnosed >= 0.0 && p.control >= 0.0 && (p.diagnosed + p.control - 1.0).abs() < 1e-9;
            if !ok {
                return Err(EvalError::InvalidPrior(p.diagnosed, p.control));
            }
            [total * p.diagnosed, total * p.control]
        }
    };
    for (e, label) in expected.iter().zip([Label::Diagnosed, Label::Control]) {
        if *e <= 0.0 {
            return Err(EvalError::ZeroExpected(label));
        }
    }
    let chi2 = pearson(&[observed.diagnosed as f64, observed.control as f64], &expected);
    let dof = 1;
    Ok(SignificanceResult { chi2, p_value: chi2_sf(chi2, dof as f64), dof, baseline, observed, expected })
}

/// Σ (O − E)² / E.
pub fn pearson(observed: &[f64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum()
}

/// Survival function of the χ² distribution, Q(dof/2, x/2).
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(dof / 2.0, x / 2.0)
}

/// "< 0.00001" below that bound, otherwise five decimals.
pub fn format_p(p: f64) -> String {
    if p < 1e-5 {
        "< 0.00001".to_string()
    } else {
        format!("{p:.5}")
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma Q(a, x): power series for P when
/// x < a + 1, modified Lentz continued fraction for Q otherwise.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 10_000;
    if x <= 0.0 {
        return 1.0;
    }
    let prefactor = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..MAX_ITER {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * prefactor).clamp(0.0, 1.0)
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (prefactor * h).clamp(0.0, 1.0)
    }
}

/// Aligned plain-text table of per-class metrics, one row per labelled run.
pub fn metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}  {:>8}",
        "run", "D-P", "D-R", "D-F1", "C-P", "C-R", "C-F1", "Macro-F1"
    );
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4} {:>7.4} {:>7.4}  {:>7.4} {:>7.4} {:>7.4}  {:>8.4}",
            name, m.diagnosed.precision, m.diagnosed.recall, m.diagnosed.f1, m.control.precision, m.control.recall, m.control.f1, m.macro_f1
        );
    }
    out
}

/// Aligned plain-text table of χ² results.
pub fn significance_table(rows: &[(String, SignificanceResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9} {:>9} {:>12} {:>12}  {:>10}  p", "run", "obs-D", "obs-C", "exp-D", "exp-C", "chi2");
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9} {:>9} {:>12.2} {:>12.2}  {:>10.3}  {}",
            name,
            s.observed.diagnosed,
            s.observed.control,
            s.expected[0],
            s.expected[1],
            s.chi2,
            s.p_display()
        );
    }
    out
}
