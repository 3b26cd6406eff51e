//! Seeded planted-subspace instances with analytic ground truth.
//!
//! Rows are `Δ_i = B c_i + σ ε_i` where `B` is an orthonormalized Gaussian
//! `d × r` basis and `c_i`, `ε_i` are standard Gaussian. Draws happen in a
//! fixed order (basis, coefficients, noise, in-span direction, complement
//! direction) from one [`SeededRng`], so instances that differ only in
//! `noise_sigma` or `alignment` share everything else.

use std::f64::consts::FRAC_PI_2;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::norm_view;
use crate::rng::SeededRng;
use crate::solvers::{SolverConfig, SolverKind};
use crate::span::{self, DifferenceMatrix, KMode, Normalization, SpanOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("n and d must be positive")]
    EmptyShape,
    #[error("signal rank {rank} outside [1, min(n, d) = {max}]")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("angle {0} outside [0, pi/2]")]
    BadAngle(f64),
    #[error("alignment off the span needs d >= rank + 1 (d = {d}, rank = {rank})")]
    NoComplement { d: usize, rank: usize },
    #[error("empty sweep")]
    EmptySweep,
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// Where the true classifier direction sits relative to the planted span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    InSpan,
    Orthogonal,
    /// Angle in radians from the planted span.
    Angled(f64),
}

impl Alignment {
    pub fn angle(self) -> f64 {
        match self {
            Alignment::InSpan => 0.0,
            Alignment::Orthogonal => FRAC_PI_2,
            Alignment::Angled(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub d: usize,
    pub signal_rank: usize,
    pub noise_sigma: f64,
    pub alignment: Alignment,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(n: usize, d: usize, signal_rank: usize) -> Self {
        Self { n, d, signal_rank, noise_sigma: 0.0, alignment: Alignment::InSpan, seed: 0 }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_alignment(mut self, alignment: Alignment) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(ScenarioError::EmptyShape);
        }
        let max = self.n.min(self.d);
        if self.signal_rank == 0 || self.signal_rank > max {
            return Err(ScenarioError::RankOutOfRange { rank: self.signal_rank, max });
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ScenarioError::BadNoise(self.noise_sigma));
        }
        if let Alignment::Angled(t) = self.alignment {
            if !(0.0..=FRAC_PI_2).contains(&t) {
                return Err(ScenarioError::BadAngle(t));
            }
        }
        if self.alignment != Alignment::InSpan && self.d < self.signal_rank + 1 {
            return Err(ScenarioError::NoComplement { d: self.d, rank: self.signal_rank });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioInstance {
    pub diff: DifferenceMatrix,
    pub w_true: Array1<f64>,
    /// `d × r`, orthonormal columns.
    pub basis: Array2<f64>,
    pub config: ScenarioConfig,
}

/// Row-major standard Gaussian matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeededRng::new(seed);
    Array2::from_shape_vec((rows, cols), rng.gaussian_vec(rows * cols)).expect("shape")
}

/// Subtract the projection onto each column of `basis[:, ..upto]`.
fn remove_components(v: &mut Array1<f64>, basis: &Array2<f64>, upto: usize) {
    for j in 0..upto {
        let q = basis.column(j);
        let c = q.dot(v);
        v.scaled_add(-c, &q);
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(g: Array2<f64>) -> Array2<f64> {
    let mut q = g;
    for j in 0..q.ncols() {
        let mut v = q.column(j).to_owned();
        remove_components(&mut v, &q, j);
        remove_components(&mut v, &q, j);
        let n = norm_view(v.view());
        v /= n;
        q.column_mut(j).assign(&v);
    }
    q
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = norm_view(v.view());
    v / n
}

pub fn generate(config: &ScenarioConfig) -> Result<ScenarioInstance> {
    config.validate()?;
    let ScenarioConfig { n, d, signal_rank: r, noise_sigma, .. } = *config;
    let mut rng = SeededRng::new(config.seed);

    let basis = orthonormalize(Array2::from_shape_vec((d, r), rng.gaussian_vec(d * r)).expect("shape"));
    let coeffs = Array2::from_shape_vec((n, r), rng.gaussian_vec(n * r)).expect("shape");
    let noise = Array2::from_shape_vec((n, d), rng.gaussian_vec(n * d)).expect("shape");
    let u = Array1::from(rng.gaussian_vec(r));
    let mut g = Array1::from(rng.gaussian_vec(d));

    let mut rows = coeffs.dot(&basis.t());
    if noise_sigma > 0.0 {
        rows.scaled_add(noise_sigma, &noise);
    }

    let in_span = unit(basis.dot(&u));
    let w_true = match config.alignment {
        Alignment::InSpan => in_span,
        alignment => {
            remove_components(&mut g, &basis, r);
            remove_components(&mut g, &basis, r);
            let complement = unit(g);
            match alignment {
                Alignment::Orthogonal => complement,
                _ => {
                    let t = alignment.angle();
                    unit(&in_span * libm::cos(t) + &complement * libm::sin(t))
                }
            }
        }
    };

    Ok(ScenarioInstance {
        diff: DifferenceMatrix::from_rows(rows, Normalization::None),
        w_true,
        basis,
        config: config.clone(),
    })
}

/// Two Gaussian classes separated along `direction`: positives centred at
/// `+separation/2 · ŵ`, negatives at the opposite point, unit noise.
pub fn separable_blobs(
    n_per_class: usize,
    direction: ArrayView1<f64>,
    separation: f64,
    seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let d = direction.len();
    let w = unit(direction.to_owned());
    let mut rng = SeededRng::new(seed);
    let mut draw = |sign: f64| {
        let mut m = Array2::from_shape_vec((n_per_class, d), rng.gaussian_vec(n_per_class * d)).expect("shape");
        for mut row in m.rows_mut() {
            row.scaled_add(sign * separation / 2.0, &w);
        }
        m
    };
    let pos = draw(1.0);
    let neg = draw(-1.0);
    (pos, neg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub config_index: usize,
    pub config: ScenarioConfig,
    pub solver: SolverKind,
    pub explained_fraction: Option<f64>,
    pub rel_error: Option<f64>,
    pub k_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Every config crossed with every solver, in config order then solver order.
/// Failures are recorded per cell.
pub fn sweep(
    configs: &[ScenarioConfig],
    solvers: &[SolverConfig],
    k_mode: KMode,
    threads: Option<usize>,
) -> Result<Vec<SweepCell>> {
    if configs.is_empty() || solvers.is_empty() {
        return Err(ScenarioError::EmptySweep);
    }
    let mut sorted: Vec<SolverConfig> = solvers.to_vec();
    sorted.sort_by_key(|c| c.kind);
    let opts = SpanOptions::default().with_solvers(sorted.clone()).with_k_mode(k_mode).with_threads(Some(1));

    let run = || -> Vec<Vec<SweepCell>> {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let fail = |msg: String| {
                    sorted
                        .iter()
                        .map(|s| SweepCell {
                            config_index: i,
                            config: cfg.clone(),
                            solver: s.kind,
                            explained_fraction: None,
                            rel_error: None,
                            k_used: None,
                            error: Some(msg.clone()),
                        })
                        .collect::<Vec<_>>()
                };
                let inst = match generate(cfg) {
                    Ok(inst) => inst,
                    Err(e) => return fail(e.to_string()),
                };
                match span::discriminative_span(&inst.diff, inst.w_true.view(), &opts, "scenario", "scenario") {
                    Ok(report) => report
                        .entries
                        .into_iter()
                        .map(|e| SweepCell {
                            config_index: i,
                            config: cfg.clone(),
                            solver: e.solver,
                            explained_fraction: e.explained_fraction,
                            rel_error: e.rel_error,
                            k_used: Some(e.k_used),
                            error: e.error,
                        })
                        .collect(),
                    Err(e) => fail(e.to_string()),
                }
            })
            .collect()
    };
    let nested = span::with_threads(threads, run).expect("thread pool");
    Ok(nested.into_iter().flatten().collect())
}
