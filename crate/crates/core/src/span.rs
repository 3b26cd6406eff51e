//! Difference matrices and the end-to-end discriminative span pipeline:
//! SVD, diagnostics, truncation level, then every requested solver.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, norm_view, LinalgError, SpanDiagnostics, SvdFactorization};
use crate::report::{fmt6, markdown_table};
use crate::solvers::{self, SolverConfig, SolverError, SolverKind, SolverResult, SATURATION_FLOOR};
use crate::tensorio::PairBatch;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable that caps internal parallelism.
pub const THREADS_ENV: &str = "SPANLAB_THREADS";

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("w has dimension {found}, difference matrix has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("classifier direction is zero or non-finite")]
    BadDirection,
    #[error("fixed truncation level {k} outside [1, {max}]")]
    KOutOfRange { k: usize, max: usize },
    #[error("no solvers requested")]
    NoSolvers,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, SpanError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    RowUnit,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Normalization::None),
            "row-unit" | "row_unit" => Ok(Normalization::RowUnit),
            other => Err(format!("unknown normalization {other:?} (expected none or row-unit)")),
        }
    }
}

/// Rows are synthetic-minus-real embedding displacements.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMatrix {
    rows: Array2<f64>,
    normalization: Normalization,
    zero_rows: usize,
}

impl DifferenceMatrix {
    /// Wrap precomputed difference rows, applying `normalization`.
    pub fn from_rows(mut rows: Array2<f64>, normalization: Normalization) -> Self {
        let mut zero_rows = 0;
        for mut row in rows.rows_mut() {
            let n = norm_view(row.view());
            if n == 0.0 {
                zero_rows += 1;
            } else if normalization == Normalization::RowUnit {
                row.mapv_inplace(|v| v / n);
            }
        }
        Self { rows, normalization, zero_rows }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn n_pairs(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn zero_row_count(&self) -> usize {
        self.zero_rows
    }
}

/// Row `i` is `target_i - source_i`.
pub fn build_difference_matrix(pairs: &PairBatch, normalization: Normalization) -> DifferenceMatrix {
    let diff = pairs.target().values() - pairs.source().values();
    DifferenceMatrix::from_rows(diff, normalization)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// `round(effective_rank)`, clamped to the spectrum length.
    #[default]
    Auto,
    /// `floor(effective_rank)`, clamped the same way. This is the rule the
    /// published diagnostics tables are consistent with.
    Floor,
    Fixed(usize),
}

impl FromStr for KMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => return Ok(KMode::Auto),
            "floor" => return Ok(KMode::Floor),
            _ => {}
        }
        s.parse::<usize>()
            .map(KMode::Fixed)
            .map_err(|_| format!("k must be 'auto', 'floor' or a positive integer, got {s:?}"))
    }
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Auto => f.write_str("auto"),
            KMode::Floor => f.write_str("floor"),
            KMode::Fixed(k) => write!(f, "{k}"),
        }
    }
}

pub fn choose_k(diag: &SpanDiagnostics, mode: KMode) -> Result<usize> {
    let max = diag.spectrum.len();
    match mode {
        KMode::Auto => Ok((diag.effective_rank.round() as usize).clamp(1, max.max(1))),
        KMode::Floor => Ok((diag.effective_rank.floor() as usize).clamp(1, max.max(1))),
        KMode::Fixed(k) if k >= 1 && k <= max => Ok(k),
        KMode::Fixed(k) => Err(SpanError::KOutOfRange { k, max }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanOptions {
    pub solvers: Vec<SolverConfig>,
    pub k_mode: KMode,
    /// Worker threads for the per-solver loop; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SpanOptions {
    fn default() -> Self {
        Self {
            solvers: SolverKind::ALL.iter().map(|&k| SolverConfig::new(k)).collect(),
            k_mode: KMode::Auto,
            threads: None,
        }
    }
}

impl SpanOptions {
    pub fn with_solvers(mut self, solvers: Vec<SolverConfig>) -> Self {
        self.solvers = solvers;
        self
    }

    pub fn with_k_mode(mut self, k_mode: KMode) -> Self {
        self.k_mode = k_mode;
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }
}

/// Thread cap from `SPANLAB_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&t| t > 0)
}

/// Run `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SpanError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// One solver row of a report. A solver failure leaves the numbers empty and
/// records the message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanEntry {
    pub solver: SolverKind,
    pub k_used: usize,
    pub rel_error: Option<f64>,
    pub explained_fraction: Option<f64>,
    pub converged: bool,
    #[serde(default)]
    pub saturated: bool,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SpanEntry {
    fn from_result(k: usize, kind: SolverKind, result: &std::result::Result<SolverResult, SolverError>) -> Self {
        match result {
            Ok(r) => Self {
                solver: kind,
                k_used: r.k_used,
                rel_error: Some(r.rel_error),
                explained_fraction: Some(r.explained_fraction),
                converged: r.converged,
                saturated: r.rel_error < SATURATION_FLOOR,
                iterations: r.iterations,
                error: None,
            },
            Err(e) => Self {
                solver: kind,
                k_used: k,
                rel_error: None,
                explained_fraction: None,
                converged: false,
                saturated: false,
                iterations: 0,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub schema_version: u32,
    pub dataset: String,
    pub embedding: String,
    pub diagnostics: SpanDiagnostics,
    pub entries: Vec<SpanEntry>,
    pub pairs: usize,
    pub dim: usize,
    pub zero_rows: usize,
}

impl SpanReport {
    pub fn entry(&self, kind: SolverKind) -> Option<&SpanEntry> {
        self.entries.iter().find(|e| e.solver == kind)
    }

    pub fn explained_fraction(&self, kind: SolverKind) -> Option<f64> {
        self.entry(kind).and_then(|e| e.explained_fraction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Rows in the column order Embedding, Solver, Eff. Rank, Rel. Error,
    /// Expl. Fraction, Pairs, Dim. "Eff. Rank" is the truncation level used.
    pub fn to_markdown(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| {
                let num = |v: Option<f64>| v.map(fmt6).unwrap_or_else(|| "n/a".into());
                vec![
                    self.embedding.clone(),
                    e.solver.display_name().to_string(),
                    e.k_used.to_string(),
                    num(e.rel_error),
                    num(e.explained_fraction),
                    self.pairs.to_string(),
                    self.dim.to_string(),
                ]
            })
            .collect();
        markdown_table(
            &["Embedding", "Solver", "Eff. Rank", "Rel. Error", "Expl. Fraction", "Pairs", "Dim"],
            &rows,
        )
    }
}

/// One-row table with the columns Eff. Rank, Stable Rank, Cond. Number and
/// Min Singular.
pub fn diagnostics_markdown(diag: &SpanDiagnostics) -> String {
    let row = vec![
        fmt6(diag.effective_rank),
        fmt6(diag.stable_rank),
        fmt6(diag.condition_number),
        fmt6(diag.sigma_min),
    ];
    markdown_table(&["Eff. Rank", "Stable Rank", "Cond. Number", "Min Singular"], &[row])
}

/// Full pipeline output including the raw solver results.
#[derive(Debug)]
pub struct SpanAnalysis {
    pub report: SpanReport,
    pub factorization: SvdFactorization,
    pub truncated: SvdFactorization,
    pub results: Vec<(SolverKind, std::result::Result<SolverResult, SolverError>)>,
    /// `w` after unit normalization.
    pub w: Array1<f64>,
}

impl SpanAnalysis {
    pub fn result(&self, kind: SolverKind) -> Option<&SolverResult> {
        self.results.iter().find(|(k, _)| *k == kind).and_then(|(_, r)| r.as_ref().ok())
    }
}

pub fn analyze(
    diff: &DifferenceMatrix,
    w: ArrayView1<f64>,
    opts: &SpanOptions,
    dataset: &str,
    embedding: &str,
) -> Result<SpanAnalysis> {
    if w.len() != diff.dim() {
        return Err(SpanError::DimensionMismatch { expected: diff.dim(), found: w.len() });
    }
    let wn = norm_view(w);
    if !(wn > 0.0 && wn.is_finite()) {
        return Err(SpanError::BadDirection);
    }
    if opts.solvers.is_empty() {
        return Err(SpanError::NoSolvers);
    }
    for cfg in &opts.solvers {
        cfg.validate()?;
    }
    let w = w.mapv(|v| v / wn);

    let factorization = linalg::svd(diff.values().view())?;
    let diagnostics = linalg::diagnostics(factorization.sigma.as_slice().expect("contiguous"))?;
    let k = choose_k(&diagnostics, opts.k_mode)?;
    let truncated = linalg::truncate(&factorization, k)?;

    let mut configs: Vec<&SolverConfig> = opts.solvers.iter().collect();
    configs.sort_by_key(|c| c.kind);
    let results: Vec<_> = with_threads(opts.threads, || {
        configs.par_iter().map(|cfg| (cfg.kind, solvers::solve(&truncated, w.view(), cfg))).collect()
    })?;

    let entries = results.iter().map(|(kind, r)| SpanEntry::from_result(k, *kind, r)).collect();
    let report = SpanReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: dataset.to_string(),
        embedding: embedding.to_string(),
        diagnostics,
        entries,
        pairs: diff.n_pairs(),
        dim: diff.dim(),
        zero_rows: diff.zero_row_count(),
    };
    Ok(SpanAnalysis { report, factorization, truncated, results, w })
}

pub fn discriminative_span(
    diff: &DifferenceMatrix,
    w: ArrayView1<f64>,
    opts: &SpanOptions,
    dataset: &str,
    embedding: &str,
) -> Result<SpanReport> {
    Ok(analyze(diff, w, opts, dataset, embedding)?.report)
}
