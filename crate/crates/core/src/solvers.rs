//! Estimators for `D_k^T alpha ~ w` and the resulting span statistics.
//!
//! All four solvers work from the truncated factorization
//! `D_k = u_k diag(sigma) v_k^T`. Writing `A = D_k^T = v_k diag(sigma) u_k^T`,
//! every residual splits into a part inside `span(v_k)` and a constant part
//! outside it, so NNLS and L1 run on the reduced `k x n` system
//! `M = diag(sigma) u_k^T`, `c = v_k^T w` with identical optimizers and
//! gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_solve, dot, dot_view, mat_t_vec, mat_vec, norm_view, SvdFactorization};

/// Relative errors below this are reported as saturated.
pub const SATURATION_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("classifier direction is zero")]
    ZeroDirection,
    #[error("classifier direction has a non-finite entry")]
    NonFiniteDirection,
    #[error("dimension mismatch: factorization has dim {expected}, w has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("retained singular value {index} is zero ({value:e}); truncation level is too high")]
    SingularTruncation { index: usize, value: f64 },
    #[error("factorization has an all-zero spectrum")]
    ZeroSpectrum,
    #[error("invalid solver parameter: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    LeastSquares,
    Ridge,
    Nnls,
    L1,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] =
        [SolverKind::LeastSquares, SolverKind::Ridge, SolverKind::Nnls, SolverKind::L1];

    /// Name used in tables.
    pub fn display_name(self) -> &'static str {
        match self {
            SolverKind::LeastSquares => "Least Squares",
            SolverKind::Ridge => "Ridge",
            SolverKind::Nnls => "NNLS",
            SolverKind::L1 => "L1",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            SolverKind::LeastSquares => "least_squares",
            SolverKind::Ridge => "ridge",
            SolverKind::Nnls => "nnls",
            SolverKind::L1 => "l1",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SolverKind {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "least_squares" | "ls" | "lstsq" => Ok(SolverKind::LeastSquares),
            "ridge" => Ok(SolverKind::Ridge),
            "nnls" => Ok(SolverKind::Nnls),
            "l1" | "lasso" => Ok(SolverKind::L1),
            other => Err(SolverError::InvalidConfig(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Ridge penalty is `ridge_tau * sigma_max^2`.
    pub ridge_tau: f64,
    /// L1 penalty is `l1_fraction * ||A^T b||_inf`.
    pub l1_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl SolverConfig {
    pub fn new(kind: SolverKind) -> Self {
        Self { kind, ridge_tau: 1e-3, l1_fraction: 1e-2, max_iter: 10_000, tol: 1e-10 }
    }

    pub fn with_ridge_tau(mut self, tau: f64) -> Self {
        self.ridge_tau = tau;
        self
    }

    pub fn with_l1_fraction(mut self, fraction: f64) -> Self {
        self.l1_fraction = fraction;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_tau > 0.0 && self.ridge_tau.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("ridge_tau must be > 0, got {}", self.ridge_tau)));
        }
        if !(self.l1_fraction > 0.0 && self.l1_fraction < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "l1_fraction must lie in (0, 1), got {}",
                self.l1_fraction
            )));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverResult {
    pub kind: SolverKind,
    /// One coefficient per difference vector.
    pub alpha: Array1<f64>,
    pub w_proj: Array1<f64>,
    pub rel_error: f64,
    pub explained_fraction: f64,
    pub k_used: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Penalty actually applied (ridge and L1 only).
    pub lambda: Option<f64>,
}

impl SolverResult {
    pub fn saturated(&self) -> bool {
        self.rel_error < SATURATION_FLOOR
    }
}

/// Relative projection error and explained fraction of `w_proj` against `w`.
pub fn compute_span(w: ArrayView1<f64>, w_proj: ArrayView1<f64>) -> Result<(f64, f64)> {
    if w.len() != w_proj.len() {
        return Err(SolverError::DimensionMismatch { expected: w.len(), found: w_proj.len() });
    }
    let wn = norm_view(w);
    if wn == 0.0 {
        return Err(SolverError::ZeroDirection);
    }
    let mut s = 0.0;
    for (a, b) in w.iter().zip(w_proj.iter()) {
        let d = a - b;
        s += d * d;
    }
    let rel = s.sqrt() / wn;
    Ok((rel, 1.0 - rel))
}

fn check_inputs(f: &SvdFactorization, w: ArrayView1<f64>) -> Result<()> {
    if w.len() != f.dim() {
        return Err(SolverError::DimensionMismatch { expected: f.dim(), found: w.len() });
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFiniteDirection);
    }
    if w.iter().all(|x| *x == 0.0) {
        return Err(SolverError::ZeroDirection);
    }
    if f.sigma_max() == 0.0 {
        return Err(SolverError::ZeroSpectrum);
    }
    Ok(())
}

/// `alpha = u_k diag(coef) (v_k^T w)` and `w_proj = v_k diag(filter) (v_k^T w)`.
fn spectral_filter(
    kind: SolverKind,
    f: &SvdFactorization,
    w: ArrayView1<f64>,
    coef: impl Fn(f64) -> f64,
    filter: impl Fn(f64) -> f64,
    lambda: Option<f64>,
) -> Result<SolverResult> {
    let c = mat_t_vec(f.v.view(), w);
    let alpha_k = Array1::from_iter(c.iter().zip(f.sigma.iter()).map(|(ci, &s)| coef(s) * ci));
    let proj_k = Array1::from_iter(c.iter().zip(f.sigma.iter()).map(|(ci, &s)| filter(s) * ci));
    let alpha = mat_vec(f.u.view(), alpha_k.view());
    let w_proj = mat_vec(f.v.view(), proj_k.view());
    let (rel_error, explained_fraction) = compute_span(w, w_proj.view())?;
    Ok(SolverResult {
        kind,
        alpha,
        w_proj,
        rel_error,
        explained_fraction,
        k_used: f.rank(),
        iterations: 0,
        converged: true,
        lambda,
    })
}

/// Minimum-norm least squares; `w_proj` is the orthogonal projection of `w`
/// onto `span(v_k)`.
pub fn solve_least_squares(f: &SvdFactorization, w: ArrayView1<f64>) -> Result<SolverResult> {
    check_inputs(f, w)?;
    let floor = f.sigma_max() * (f.rows().max(f.dim()) as f64) * f64::EPSILON;
    if let Some((index, &value)) = f.sigma.iter().enumerate().find(|(_, &s)| s <= floor) {
        return Err(SolverError::SingularTruncation { index, value });
    }
    spectral_filter(SolverKind::LeastSquares, f, w, |s| 1.0 / s, |_| 1.0, None)
}

/// Tikhonov-regularized least squares with `lambda = ridge_tau * sigma_max^2`.
pub fn solve_ridge(f: &SvdFactorization, w: ArrayView1<f64>, config: &SolverConfig) -> Result<SolverResult> {
    check_inputs(f, w)?;
    config.validate()?;
    let lambda = config.ridge_tau * f.sigma_max() * f.sigma_max();
    solve_ridge_lambda(f, w, lambda)
}

/// Ridge with an explicit penalty.
pub fn solve_ridge_lambda(f: &SvdFactorization, w: ArrayView1<f64>, lambda: f64) -> Result<SolverResult> {
    check_inputs(f, w)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolverError::InvalidConfig(format!("ridge lambda must be > 0, got {lambda}")));
    }
    spectral_filter(
        SolverKind::Ridge,
        f,
        w,
        |s| s / (s * s + lambda),
        |s| s * s / (s * s + lambda),
        Some(lambda),
    )
}

/// The reduced system `M = diag(sigma) u_k^T`, stored by column (one column per
/// coefficient), and `c = v_k^T w`.
pub struct ReducedSystem {
    pub columns: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl ReducedSystem {
    pub fn new(f: &SvdFactorization, w: ArrayView1<f64>) -> Self {
        let k = f.rank();
        let columns = f
            .u
            .rows()
            .into_iter()
            .map(|row| (0..k).map(|t| f.sigma[t] * row[t]).collect())
            .collect();
        let rhs = mat_t_vec(f.v.view(), w).to_vec();
        Self { columns, rhs }
    }

    /// `M x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rhs.len()];
        for (col, &xj) in self.columns.iter().zip(x) {
            if xj != 0.0 {
                for (o, m) in out.iter_mut().zip(col) {
                    *o += xj * m;
                }
            }
        }
        out
    }

    /// `M^T (c - M x)`, the negative half-gradient of `||M x - c||^2`.
    pub fn dual(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.apply(x);
        let r: Vec<f64> = self.rhs.iter().zip(&mx).map(|(c, m)| c - m).collect();
        self.columns.iter().map(|col| dot(col, &r)).collect()
    }

    /// `||M^T c||_inf`, equal to `||A^T b||_inf`.
    pub fn dual_scale(&self) -> f64 {
        self.columns.iter().map(|col| dot(col, &self.rhs).abs()).fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_reduced(
    kind: SolverKind,
    f: &SvdFactorization,
    w: ArrayView1<f64>,
    sys: &ReducedSystem,
    alpha: Vec<f64>,
    iterations: usize,
    converged: bool,
    lambda: Option<f64>,
) -> Result<SolverResult> {
    let z = Array1::from(sys.apply(&alpha));
    let w_proj = mat_vec(f.v.view(), z.view());
    let (rel_error, explained_fraction) = compute_span(w, w_proj.view())?;
    Ok(SolverResult {
        kind,
        alpha: Array1::from(alpha),
        w_proj,
        rel_error,
        explained_fraction,
        k_used: f.rank(),
        iterations,
        converged,
        lambda,
    })
}

/// Non-negative least squares by the Lawson-Hanson active-set method.
///
/// `iterations` counts outer (variable-admitting) steps. Hitting `max_iter`
/// returns the current feasible iterate with `converged = false`.
pub fn solve_nnls(f: &SvdFactorization, w: ArrayView1<f64>, config: &SolverConfig) -> Result<SolverResult> {
    check_inputs(f, w)?;
    config.validate()?;
    let sys = ReducedSystem::new(f, w);
    let (alpha, iterations, converged) = lawson_hanson(&sys, config.tol, config.max_iter);
    finish_reduced(SolverKind::Nnls, f, w, &sys, alpha, iterations, converged, None)
}

fn lawson_hanson(sys: &ReducedSystem, tol: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    let n = sys.columns.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut excluded = vec![false; n];
    let threshold = tol * sys.dual_scale().max(f64::MIN_POSITIVE);
    let mut iterations = 0;

    loop {
        let g = sys.dual(&x);
        let mut best: Option<usize> = None;
        for j in 0..n {
            if passive[j] || excluded[j] || g[j] <= threshold {
                continue;
            }
            if best.is_none_or(|b| g[j] > g[b]) {
                best = Some(j);
            }
        }
        let Some(t) = best else {
            return (x, iterations, true);
        };
        if iterations >= max_iter {
            return (x, iterations, false);
        }
        iterations += 1;
        passive[t] = true;

        // Inner loop: step toward the unconstrained solution on the passive set
        // until it is strictly feasible.
        let mut inner = 0;
        loop {
            inner += 1;
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let cols: Vec<Vec<f64>> = idx.iter().map(|&j| sys.columns[j].clone()).collect();
            let Some(zp) = crate::linalg::lstsq_columns(&cols, &sys.rhs) else {
                // Numerically dependent on the passive set; never admit it again.
                passive[t] = false;
                excluded[t] = true;
                x[t] = 0.0;
                break;
            };
            let mut z = vec![0.0; n];
            for (&j, &v) in idx.iter().zip(&zp) {
                z[j] = v;
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut step = f64::INFINITY;
            for &j in &idx {
                if z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    let s = if denom > 0.0 { x[j] / denom } else { 0.0 };
                    step = step.min(s);
                }
            }
            for &j in &idx {
                x[j] += step * (z[j] - x[j]);
            }
            for &j in &idx {
                if x[j] <= 0.0 || (z[j] <= 0.0 && x[j] <= f64::EPSILON * x[j].abs().max(1.0)) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if inner > 3 * n + 10 {
                break;
            }
        }
        // A zero coefficient only stays passive if it carries weight.
        for j in 0..n {
            if passive[j] && x[j] <= 0.0 {
                passive[j] = false;
                x[j] = 0.0;
            }
        }
    }
}

/// Worst KKT violation of `min_{x >= 0} ||M x - c||^2`, relative to
/// `||M^T c||_inf`: negativity, gradient on positive coordinates, and descent
/// directions on zero coordinates.
pub fn nnls_kkt_violation(sys: &ReducedSystem, x: &[f64]) -> f64 {
    let scale = sys.dual_scale().max(f64::MIN_POSITIVE);
    let g = sys.dual(x);
    let mut worst: f64 = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        if xj < 0.0 {
            worst = worst.max(-xj);
        }
        let v = if xj > 0.0 { g[j].abs() } else { g[j].max(0.0) };
        worst = worst.max(v / scale);
    }
    worst
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// L1-regularized least squares `0.5 ||A alpha - b||^2 + lambda ||alpha||_1`
/// with `lambda = l1_fraction * ||A^T b||_inf`.
///
/// The lasso homotopy runs first and lands on the exact solution after
/// finitely many path events. If an active Gram matrix turns singular (exactly
/// collinear rows) it hands over to cyclic coordinate descent. `iterations`
/// counts path events or sweeps respectively.
pub fn solve_l1(f: &SvdFactorization, w: ArrayView1<f64>, config: &SolverConfig) -> Result<SolverResult> {
    check_inputs(f, w)?;
    config.validate()?;
    let sys = ReducedSystem::new(f, w);
    let lambda = config.l1_fraction * sys.dual_scale();
    let (alpha, sweeps, converged) = l1_minimize(&sys, lambda, config.tol, config.max_iter);
    finish_reduced(SolverKind::L1, f, w, &sys, alpha, sweeps, converged, Some(lambda))
}

/// Like [`solve_l1`] with an explicit penalty.
pub fn solve_l1_lambda(
    f: &SvdFactorization,
    w: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolverResult> {
    check_inputs(f, w)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolverError::InvalidConfig(format!("l1 lambda must be >= 0, got {lambda}")));
    }
    let sys = ReducedSystem::new(f, w);
    let (alpha, sweeps, converged) = l1_minimize(&sys, lambda, tol, max_iter);
    finish_reduced(SolverKind::L1, f, w, &sys, alpha, sweeps, converged, Some(lambda))
}

fn l1_minimize(sys: &ReducedSystem, lambda: f64, tol: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    match lasso_homotopy(sys, lambda, tol, max_iter) {
        Some((x, steps)) => (x, steps, true),
        None => coordinate_descent(sys, lambda, tol, max_iter),
    }
}

fn active_gram(sys: &ReducedSystem, active: &[usize]) -> ndarray::Array2<f64> {
    let p = active.len();
    let mut gram = ndarray::Array2::<f64>::zeros((p, p));
    for (a, &ja) in active.iter().enumerate() {
        for (b, &jb) in active.iter().enumerate().skip(a) {
            let v = dot(&sys.columns[ja], &sys.columns[jb]);
            gram[[a, b]] = v;
            gram[[b, a]] = v;
        }
    }
    gram
}

/// Lasso homotopy: follow the piecewise-linear solution path from
/// `lambda_max = ||A^T b||_inf` down to `lambda`, one variable entering or
/// leaving the active set per event, then re-solve the final signed support
/// exactly. `None` when an active Gram matrix is singular, the event budget
/// runs out, or the end point misses the optimality tolerance.
fn lasso_homotopy(sys: &ReducedSystem, lambda: f64, tol: f64, max_events: usize) -> Option<(Vec<f64>, usize)> {
    let n = sys.columns.len();
    let lambda_max = sys.dual_scale();
    let mut x = vec![0.0; n];
    // Within path resolution of lambda_max the zero vector is optimal.
    let tiny = 1e-12 * lambda_max;
    if lambda_max - lambda <= tiny {
        return Some((x, 0));
    }
    let mut g = sys.dual(&x);
    let first = (0..n).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(b.cmp(&a)))?;
    let mut active = vec![first];
    let mut level = lambda_max;
    let mut events = 0;
    while level - lambda > tiny {
        events += 1;
        if events > max_events {
            return None;
        }
        let signs: Vec<f64> = active.iter().map(|&j| g[j].signum()).collect();
        let d = cholesky_solve(&active_gram(sys, &active), &signs).ok()?;
        let mut step_x = vec![0.0; n];
        for (&j, &dj) in active.iter().zip(&d) {
            step_x[j] = dj;
        }
        let u = sys.apply(&step_x);
        let a: Vec<f64> = sys.columns.iter().map(|col| dot(col, &u)).collect();

        let mut gamma = level - lambda;
        let mut event: Option<(usize, bool)> = None;
        for j in (0..n).filter(|j| !active.contains(j)) {
            for cand in [(level - g[j]) / (1.0 - a[j]), (level + g[j]) / (1.0 + a[j])] {
                if cand > tiny && cand < gamma {
                    gamma = cand;
                    event = Some((j, true));
                }
            }
        }
        for (&j, &dj) in active.iter().zip(&d) {
            if dj != 0.0 {
                let cand = -x[j] / dj;
                if cand > tiny && cand < gamma {
                    gamma = cand;
                    event = Some((j, false));
                }
            }
        }

        for (&j, &dj) in active.iter().zip(&d) {
            x[j] += gamma * dj;
        }
        level -= gamma;
        match event {
            Some((j, true)) => active.push(j),
            Some((j, false)) => {
                x[j] = 0.0;
                active.retain(|&i| i != j);
            }
            None => {}
        }
        g = sys.dual(&x);
        if active.is_empty() {
            return None;
        }
    }

    // The path accumulates rounding; finish with the exact sign-fixed solve.
    let signs: Vec<f64> = active.iter().map(|&j| if x[j] != 0.0 { x[j].signum() } else { g[j].signum() }).collect();
    let rhs: Vec<f64> =
        active.iter().zip(&signs).map(|(&j, s)| dot(&sys.columns[j], &sys.rhs) - lambda * s).collect();
    let exact = cholesky_solve(&active_gram(sys, &active), &rhs).ok()?;
    let mut polished = vec![0.0; n];
    for ((&j, v), s) in active.iter().zip(&exact).zip(&signs) {
        if v.signum() == *s {
            polished[j] = *v;
        }
    }
    let candidates = [polished, x];
    candidates
        .into_iter()
        .find(|c| l1_subgradient_violation(sys, c, lambda) <= tol)
        .map(|c| (c, events))
}

fn coordinate_descent(sys: &ReducedSystem, lambda: f64, tol: f64, max_sweeps: usize) -> (Vec<f64>, usize, bool) {
    let n = sys.columns.len();
    let sq: Vec<f64> = sys.columns.iter().map(|c| dot(c, c)).collect();
    let mut x = vec![0.0; n];
    let mut r = sys.rhs.clone();
    for sweep in 1..=max_sweeps {
        let mut max_delta: f64 = 0.0;
        for j in 0..n {
            if sq[j] == 0.0 {
                continue;
            }
            let col = &sys.columns[j];
            let rho = dot(col, &r) + sq[j] * x[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - x[j];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= delta * ci;
                }
                x[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // With more columns than rows the minimizer need not be unique and the
        // iterates can drift along a flat valley long after the fit settles,
        // so optimality of the objective also counts as convergence.
        if max_delta <= tol * (1.0 + xmax) || l1_subgradient_violation(sys, &x, lambda) <= tol {
            return (x, sweep, true);
        }
    }
    (x, max_sweeps, false)
}

/// Worst violation of the L1 subgradient conditions, relative to
/// `||A^T b||_inf`.
pub fn l1_subgradient_violation(sys: &ReducedSystem, x: &[f64], lambda: f64) -> f64 {
    let scale = sys.dual_scale().max(f64::MIN_POSITIVE);
    let g = sys.dual(x);
    let mut worst: f64 = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        let v = if xj != 0.0 { (g[j] - lambda * xj.signum()).abs() } else { (g[j].abs() - lambda).max(0.0) };
        worst = worst.max(v / scale);
    }
    worst
}

/// Dispatch on `config.kind`.
pub fn solve(f: &SvdFactorization, w: ArrayView1<f64>, config: &SolverConfig) -> Result<SolverResult> {
    match config.kind {
        SolverKind::LeastSquares => solve_least_squares(f, w),
        SolverKind::Ridge => solve_ridge(f, w, config),
        SolverKind::Nnls => solve_nnls(f, w, config),
        SolverKind::L1 => solve_l1(f, w, config),
    }
}

/// `D_k^T alpha` computed from the factorization, for checking results.
pub fn reconstruct_direction(f: &SvdFactorization, alpha: ArrayView1<f64>) -> Array1<f64> {
    let z = Array1::from_iter((0..f.rank()).map(|t| f.sigma[t] * dot_view(f.u.column(t), alpha)));
    mat_vec(f.v.view(), z.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::testutil::seeded_matrix;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn fact(rows: Array2<f64>) -> SvdFactorization {
        svd(rows.view()).unwrap()
    }

    #[test]
    fn compute_span_examples() {
        let w = array![3.0, 4.0];
        assert_eq!(compute_span(w.view(), w.view()).unwrap(), (0.0, 1.0));
        assert_eq!(compute_span(w.view(), array![0.0, 0.0].view()).unwrap(), (1.0, 0.0));
        let (r, e) = compute_span(w.view(), array![3.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(r, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(e, 0.2, epsilon = 1e-15);
        assert_eq!(
            compute_span(array![0.0, 0.0].view(), w.view()),
            Err(SolverError::ZeroDirection)
        );
    }

    #[test]
    fn least_squares_single_axis() {
        let f = fact(array![[1.0, 0.0]]);
        let r = solve_least_squares(&f, array![3.0, 4.0].view()).unwrap();
        assert_abs_diff_eq!(r.w_proj[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.w_proj[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.rel_error, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(r.explained_fraction, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn least_squares_errors() {
        let f = fact(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            solve_least_squares(&f, array![1.0, 1.0].view()),
            Err(SolverError::SingularTruncation { index: 1, .. })
        ));
        assert_eq!(
            solve_least_squares(&f, array![0.0, 0.0].view()),
            Err(SolverError::ZeroDirection)
        );
        assert!(matches!(
            solve_least_squares(&f, array![1.0].view()),
            Err(SolverError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn least_squares_in_span_and_pythagoras() {
        let d = seeded_matrix(6, 10, 4);
        let f = fact(d.clone());
        let alpha0 = seeded_matrix(6, 1, 5).column(0).to_owned();
        let w = d.t().dot(&alpha0);
        let r = solve_least_squares(&f, w.view()).unwrap();
        assert!(r.rel_error <= 1e-8);
        assert!(r.saturated());

        let w = seeded_matrix(10, 1, 6).column(0).to_owned();
        let r = solve_least_squares(&f, w.view()).unwrap();
        let pn = norm_view(r.w_proj.view()) / norm_view(w.view());
        assert_abs_diff_eq!(r.rel_error * r.rel_error + pn * pn, 1.0, epsilon = 1e-9);
        let back = reconstruct_direction(&f, r.alpha.view());
        for (a, b) in back.iter().zip(r.w_proj.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn least_squares_matches_pseudoinverse_oracle() {
        let d = seeded_matrix(30, 12, 9);
        let w = seeded_matrix(12, 1, 10).column(0).to_owned();
        let r = solve_least_squares(&fact(d.clone()), w.view()).unwrap();
        // alpha = (D D^T)^+ D w
        let dm = nalgebra::DMatrix::from_row_slice(30, 12, d.as_slice().unwrap());
        let wv = nalgebra::DVector::from_column_slice(w.as_slice().unwrap());
        let gram = &dm * dm.transpose();
        let pinv = gram.pseudo_inverse(1e-10).unwrap();
        let oracle = pinv * (&dm * wv);
        for (a, b) in r.alpha.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn ridge_orthonormal_closed_form() {
        let f = fact(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let w = array![0.6, 0.8, 0.0];
        for lambda in [1e-3, 0.1, 1.0, 10.0] {
            let r = solve_ridge_lambda(&f, w.view(), lambda).unwrap();
            assert_abs_diff_eq!(r.rel_error, lambda / (1.0 + lambda), epsilon = 1e-12);
            assert_abs_diff_eq!(r.explained_fraction, 1.0 / (1.0 + lambda), epsilon = 1e-12);
        }
    }

    #[test]
    fn ridge_limit_is_least_squares() {
        let d = seeded_matrix(8, 5, 12);
        let f = fact(d);
        let w = seeded_matrix(5, 1, 13).column(0).to_owned();
        let ls = solve_least_squares(&f, w.view()).unwrap();
        let lambda = 1e-12 * f.sigma_max().powi(2);
        let rr = solve_ridge_lambda(&f, w.view(), lambda).unwrap();
        for (a, b) in ls.alpha.iter().zip(rr.alpha.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!((ls.rel_error - rr.rel_error).abs() <= 1e-6);
    }

    #[test]
    fn ridge_matches_normal_equations_oracle() {
        let d = seeded_matrix(9, 14, 15);
        let w = seeded_matrix(14, 1, 16).column(0).to_owned();
        let r = solve_ridge_lambda(&fact(d.clone()), w.view(), 0.5).unwrap();
        let dm = nalgebra::DMatrix::from_row_slice(9, 14, d.as_slice().unwrap());
        let wv = nalgebra::DVector::from_column_slice(w.as_slice().unwrap());
        let lhs = &dm * dm.transpose() + nalgebra::DMatrix::identity(9, 9) * 0.5;
        let oracle = lhs.lu().solve(&(&dm * wv)).unwrap();
        for (a, b) in r.alpha.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn nnls_examples() {
        let cfg = SolverConfig::new(SolverKind::Nnls);
        let f = fact(array![[1.0, 0.0], [0.0, 1.0]]);
        let r = solve_nnls(&f, array![2.0, 3.0].view(), &cfg).unwrap();
        assert_abs_diff_eq!(r.alpha[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.alpha[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.explained_fraction, 1.0, epsilon = 1e-12);

        let f = fact(array![[1.0, 0.0]]);
        let r = solve_nnls(&f, array![-1.0, 0.0].view(), &cfg).unwrap();
        assert_eq!(r.alpha.to_vec(), vec![0.0]);
        assert_eq!(r.w_proj.to_vec(), vec![0.0, 0.0]);
        assert_eq!(r.rel_error, 1.0);
        assert_eq!(r.explained_fraction, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn nnls_iteration_cap_flags_partial_result() {
        let d = seeded_matrix(12, 6, 33);
        let w = seeded_matrix(6, 1, 34).column(0).to_owned();
        let cfg = SolverConfig::new(SolverKind::Nnls).with_max_iter(1);
        let f = fact(d);
        let full = solve_nnls(&f, w.view(), &SolverConfig::new(SolverKind::Nnls)).unwrap();
        assert!(full.iterations > 1, "fixture should need several admissions");
        let r = solve_nnls(&f, w.view(), &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.alpha.iter().all(|a| *a >= 0.0));
    }

    #[test]
    fn l1_examples() {
        // Orthonormal columns of A: alpha = soft(A^T b, lambda).
        let f = fact(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let w = array![0.5, -0.2, 0.05];
        let cfg = SolverConfig::new(SolverKind::L1).with_l1_fraction(0.3);
        let r = solve_l1(&f, w.view(), &cfg).unwrap();
        let lambda = 0.3 * 0.5;
        assert_abs_diff_eq!(r.lambda.unwrap(), lambda, epsilon = 1e-15);
        for (a, b) in r.alpha.iter().zip(w.iter()) {
            assert_abs_diff_eq!(*a, soft_threshold(*b, lambda), epsilon = 1e-8);
        }

        let r = solve_l1_lambda(&f, w.view(), 0.5, 1e-10, 100).unwrap();
        assert!(r.alpha.iter().all(|a| *a == 0.0));
        assert_eq!(r.explained_fraction, 0.0);
    }

    #[test]
    fn l1_cap_is_flagged() {
        let d = seeded_matrix(15, 6, 41);
        let w = seeded_matrix(6, 1, 42).column(0).to_owned();
        let r = solve_l1_lambda(&fact(d), w.view(), 1e-3, 1e-14, 1).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn l1_overcomplete_reaches_optimum() {
        // Many more coefficients than reduced rows: the minimizer is not unique
        // and coordinate descent alone crawls here.
        let basis = seeded_matrix(4, 20, 43);
        let d = seeded_matrix(50, 4, 44).dot(&basis);
        let w = seeded_matrix(20, 1, 45).column(0).to_owned();
        let f = crate::linalg::truncate(&fact(d), 4).unwrap();
        let r = solve_l1(&f, w.view(), &SolverConfig::new(SolverKind::L1)).unwrap();
        assert!(r.converged);
        assert!(r.iterations < 100);
        let sys = ReducedSystem::new(&f, w.view());
        assert!(l1_subgradient_violation(&sys, r.alpha.as_slice().unwrap(), r.lambda.unwrap()) <= 1e-10);
        assert!(r.alpha.iter().filter(|a| **a != 0.0).count() <= 4);
    }

    #[test]
    fn l1_duplicate_rows_converge() {
        let row = seeded_matrix(1, 5, 46);
        let mut d = seeded_matrix(6, 5, 47);
        d.row_mut(1).assign(&row.row(0));
        d.row_mut(2).assign(&row.row(0));
        let w = seeded_matrix(5, 1, 48).column(0).to_owned();
        let f = fact(d);
        let r = solve_l1(&f, w.view(), &SolverConfig::new(SolverKind::L1)).unwrap();
        assert!(r.converged);
        let sys = ReducedSystem::new(&f, w.view());
        assert!(l1_subgradient_violation(&sys, r.alpha.as_slice().unwrap(), r.lambda.unwrap()) <= 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(SolverKind::Ridge).with_ridge_tau(0.0).validate().is_err());
        assert!(SolverConfig::new(SolverKind::L1).with_l1_fraction(1.0).validate().is_err());
        assert!(SolverConfig::new(SolverKind::L1).with_max_iter(0).validate().is_err());
        assert!(SolverConfig::new(SolverKind::L1).validate().is_ok());
        assert_eq!("least-squares".parse::<SolverKind>().unwrap(), SolverKind::LeastSquares);
        assert!("elastic".parse::<SolverKind>().is_err());
    }
}
