//! Correlation between explained fractions and downstream test scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{fmt6, markdown_table};
use crate::solvers::SolverKind;
use crate::span::SpanReport;
use crate::tensorio::ScoreTable;

/// Smallest reported p-value. Used when `|r| = 1` or the tail underflows.
pub const P_VALUE_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("series is constant")]
    ConstantSeries,
    #[error("non-finite value in series")]
    NonFinite,
    #[error("correlation {0} outside [-1, 1]")]
    InvalidR(f64),
    #[error("only {found} datasets overlap between reports and test scores for {embedding:?}; need 3")]
    InsufficientOverlap { embedding: String, found: usize },
    #[error("dataset {dataset:?} has no test-split scores")]
    MissingTestSplit { dataset: String },
    #[error("two reports for dataset {dataset:?} and embedding {embedding:?}")]
    DuplicateReport { dataset: String, embedding: String },
    #[error("no model has test scores for every overlapping dataset")]
    NoCommonModel,
}

pub type Result<T> = std::result::Result<T, StatsError>;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Sample Pearson correlation, two-pass with centered sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub p: f64,
    /// Set when the value was clamped to [`P_VALUE_FLOOR`].
    pub floored: bool,
}

/// Two-sided p-value of the t statistic `r·sqrt((n−2)/(1−r²))` with `n − 2`
/// degrees of freedom.
pub fn pearson_p_two_sided(r: f64, n: usize) -> Result<PValue> {
    if n < 3 {
        return Err(StatsError::TooFewPoints(n));
    }
    if !(r.abs() <= 1.0) {
        return Err(StatsError::InvalidR(r));
    }
    let floor = PValue { p: P_VALUE_FLOOR, floored: true };
    if r.abs() == 1.0 {
        return Ok(floor);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    // P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2)
    let x = df / (df + t * t);
    let p = regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0);
    if p < P_VALUE_FLOOR {
        return Ok(floor);
    }
    Ok(PValue { p, floored: false })
}

/// `I_x(a, b)` by the continued fraction, evaluated on whichever side of the
/// mean converges quickly.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
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
    h
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// How per-model test F1 scores collapse to one number per dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Aggregation {
    /// The single model with the highest mean test F1 over the overlapping
    /// datasets (ties go to the lexicographically smallest name).
    #[default]
    BestModel,
    /// Maximum test F1 over models, chosen independently per dataset.
    Max,
}

impl FromStr for F1Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "best-model" | "best_model" => Ok(F1Aggregation::BestModel),
            "max" => Ok(F1Aggregation::Max),
            other => Err(format!("unknown F1 aggregation {other:?} (expected best-model or max)")),
        }
    }
}

impl fmt::Display for F1Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F1Aggregation::BestModel => "best-model",
            F1Aggregation::Max => "max",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub solver: SolverKind,
    pub pearson_r: f64,
    pub p_value: f64,
    #[serde(default)]
    pub p_floored: bool,
    pub spearman_rho: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationAnalysis {
    pub embedding: String,
    pub aggregation: F1Aggregation,
    /// Datasets in point order, with the F1 value used for each.
    pub datasets: Vec<String>,
    pub f1: Vec<f64>,
    /// Model whose scores were used, for [`F1Aggregation::BestModel`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub correlations: Vec<CorrelationReport>,
    /// Solvers left out, with the reason.
    #[serde(default)]
    pub skipped: Vec<(SolverKind, String)>,
}

impl CorrelationAnalysis {
    pub fn get(&self, kind: SolverKind) -> Option<&CorrelationReport> {
        self.correlations.iter().find(|c| c.solver == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .correlations
            .iter()
            .map(|c| {
                vec![
                    c.solver.display_name().to_string(),
                    fmt6(c.pearson_r),
                    fmt6(c.p_value),
                    fmt6(c.spearman_rho),
                    c.points.to_string(),
                ]
            })
            .collect();
        markdown_table(&["Solver", "Pearson r", "p-value", "Spearman ρ", "Points"], &rows)
    }
}

fn per_dataset_f1(
    scores: &ScoreTable,
    datasets: &BTreeSet<String>,
    aggregation: F1Aggregation,
) -> Result<(BTreeMap<String, f64>, Option<String>)> {
    // dataset -> model -> test f1
    let mut table: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for rec in scores.test_records() {
        if datasets.contains(&rec.dataset) {
            table.entry(rec.dataset.as_str()).or_default().insert(rec.model.as_str(), rec.f1);
        }
    }
    match aggregation {
        F1Aggregation::Max => {
            let out = table
                .iter()
                .map(|(ds, models)| (ds.to_string(), models.values().copied().fold(f64::NEG_INFINITY, f64::max)))
                .collect();
            Ok((out, None))
        }
        F1Aggregation::BestModel => {
            let all_models: BTreeSet<&str> = table.values().flat_map(|m| m.keys().copied()).collect();
            let mut best: Option<(&str, f64)> = None;
            for model in all_models {
                let vals: Option<Vec<f64>> = table.values().map(|m| m.get(model).copied()).collect();
                let Some(vals) = vals else { continue };
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                if best.is_none_or(|(_, b)| mean > b) {
                    best = Some((model, mean));
                }
            }
            let (model, _) = best.ok_or(StatsError::NoCommonModel)?;
            let out = table.iter().map(|(ds, m)| (ds.to_string(), m[model])).collect();
            Ok((out, Some(model.to_string())))
        }
    }
}

/// Pair each dataset's explained fraction with its test F1 and correlate,
/// one row per solver found in the reports.
pub fn correlate_span_vs_scores(
    reports: &[SpanReport],
    scores: &ScoreTable,
    embedding: &str,
    aggregation: F1Aggregation,
) -> Result<CorrelationAnalysis> {
    let mut by_dataset: BTreeMap<&str, &SpanReport> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.embedding == embedding) {
        if by_dataset.insert(r.dataset.as_str(), r).is_some() {
            return Err(StatsError::DuplicateReport { dataset: r.dataset.clone(), embedding: embedding.into() });
        }
    }
    let tested: BTreeSet<&str> = scores.test_records().map(|r| r.dataset.as_str()).collect();
    let scored: BTreeSet<&str> = scores.records().iter().map(|r| r.dataset.as_str()).collect();
    for ds in by_dataset.keys() {
        if scored.contains(ds) && !tested.contains(ds) {
            return Err(StatsError::MissingTestSplit { dataset: ds.to_string() });
        }
    }
    let overlap: BTreeSet<String> =
        by_dataset.keys().filter(|ds| tested.contains(*ds)).map(|ds| ds.to_string()).collect();
    if overlap.len() < 3 {
        return Err(StatsError::InsufficientOverlap { embedding: embedding.into(), found: overlap.len() });
    }
    let (f1_by_dataset, model) = per_dataset_f1(scores, &overlap, aggregation)?;

    let kinds: BTreeSet<SolverKind> =
        overlap.iter().flat_map(|ds| by_dataset[ds.as_str()].entries.iter().map(|e| e.solver)).collect();
    let mut correlations = Vec::new();
    let mut skipped = Vec::new();
    for kind in kinds {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for ds in &overlap {
            if let Some(ef) = by_dataset[ds.as_str()].explained_fraction(kind) {
                xs.push(ef);
                ys.push(f1_by_dataset[ds]);
            }
        }
        let row = pearson(&xs, &ys).and_then(|r| {
            let p = pearson_p_two_sided(r, xs.len())?;
            Ok(CorrelationReport {
                solver: kind,
                pearson_r: r,
                p_value: p.p,
                p_floored: p.floored,
                spearman_rho: spearman(&xs, &ys)?,
                points: xs.len(),
            })
        });
        match row {
            Ok(row) => correlations.push(row),
            Err(e) => skipped.push((kind, e.to_string())),
        }
    }

    Ok(CorrelationAnalysis {
        embedding: embedding.to_string(),
        aggregation,
        datasets: overlap.iter().cloned().collect(),
        f1: overlap.iter().map(|ds| f1_by_dataset[ds]).collect(),
        model,
        correlations,
        skipped,
    })
}
