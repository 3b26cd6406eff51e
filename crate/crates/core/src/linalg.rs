//! Dense SVD, spectrum diagnostics, truncation and orthogonal projection.
//!
//! The SVD is a Householder QR followed by one-sided (Hestenes) Jacobi on the
//! triangular factor. Every reduction runs in a fixed sequential order so that
//! identical input bits always produce identical output bits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be non-empty (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("matrix contains a non-finite value")]
    NonFinite,
    #[error("Jacobi SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("singular spectrum is empty")]
    EmptySpectrum,
    #[error("singular spectrum is all zero")]
    ZeroSpectrum,
    #[error("singular spectrum must be finite, non-negative and non-increasing")]
    InvalidSpectrum,
    #[error("truncation level {k} outside [1, {max}]")]
    RankOutOfRange { k: usize, max: usize },
    #[error("vector must be non-zero")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dot_view(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        s += x * y;
    }
    s
}

pub fn norm_view(a: ArrayView1<f64>) -> f64 {
    dot_view(a, a).sqrt()
}

/// `m^T x` with sequential sums.
pub fn mat_t_vec(m: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_iter(m.axis_iter(Axis(1)).map(|col| dot_view(col, x)))
}

/// `m x` with sequential sums.
pub fn mat_vec(m: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_iter(m.axis_iter(Axis(0)).map(|row| dot_view(row, x)))
}

/// Thin singular value decomposition `a = u diag(sigma) v^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactorization {
    /// `n x r`, orthonormal columns.
    pub u: Array2<f64>,
    /// Non-increasing, non-negative.
    pub sigma: Array1<f64>,
    /// `d x r`, orthonormal columns.
    pub v: Array2<f64>,
}

impl SvdFactorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// `u diag(sigma) v^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let (n, d, r) = (self.rows(), self.dim(), self.rank());
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                for t in 0..r {
                    s += self.u[[i, t]] * self.sigma[t] * self.v[[j, t]];
                }
                out[[i, j]] = s;
            }
        }
        out
    }
}

/// Householder QR of an `m x p` matrix (`m >= p`) held as columns.
/// Returns the thin `Q` (as `p` columns of length `m`) and upper-triangular `R`
/// (as `p` columns of length `p`).
fn householder_qr(mut cols: Vec<Vec<f64>>, m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = cols.len();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(p);
    for k in 0..p {
        let x = &cols[k][k..];
        let xnorm = norm2(x);
        if xnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v: Vec<f64> = x.to_vec();
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        for e in v.iter_mut() {
            *e /= vnorm;
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let s = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        }
        // Exact values below the diagonal.
        cols[k][k] = alpha;
        for e in cols[k][k + 1..].iter_mut() {
            *e = 0.0;
        }
        reflectors.push(Some(v));
    }

    let r: Vec<Vec<f64>> = cols.iter().map(|c| c[..p].to_vec()).collect();
    let mut q: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..p).rev() {
        if let Some(v) = &reflectors[k] {
            for col in q.iter_mut() {
                let tail = &mut col[k..];
                let s = 2.0 * dot(v, tail);
                if s != 0.0 {
                    for (t, vi) in tail.iter_mut().zip(v) {
                        *t -= s * vi;
                    }
                }
            }
        }
    }
    (q, r)
}

/// One-sided Jacobi on columns `g` (each of length `len`). On return the
/// columns are mutually orthogonal and `vcols` holds the accumulated rotation.
fn one_sided_jacobi(g: &mut [Vec<f64>], max_sweeps: usize) -> Result<Vec<Vec<f64>>> {
    let p = g.len();
    let mut vcols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (p.max(1) as f64);
    // Columns at rounding-noise level relative to the whole matrix are
    // numerically zero; rotating them against each other can cycle forever.
    let total: f64 = g.iter().map(|c| dot(c, c)).sum();
    let negligible = total * (f64::EPSILON * p.max(1) as f64).powi(2);
    for _sweep in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let alpha = dot(&g[i], &g[i]);
                let beta = dot(&g[j], &g[j]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&g[i], &g[j]);
                if gamma.abs() <= tol * (alpha.sqrt() * beta.sqrt()) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = g.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = vcols.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
            }
        }
        if !rotated {
            return Ok(vcols);
        }
    }
    Err(LinalgError::NoConvergence { sweeps: max_sweeps })
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xi = *x;
        let yi = *y;
        *x = c * xi - s * yi;
        *y = s * xi + c * yi;
    }
}

/// Fill zero entries of `cols` with unit vectors orthogonal to the rest.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], len: usize) {
    for &j in missing {
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == j || (missing.contains(&k) && norm2(other) == 0.0) {
                        continue;
                    }
                    let s = dot(other, &cand);
                    for (c, o) in cand.iter_mut().zip(other) {
                        *c -= s * o;
                    }
                }
            }
            let nrm = norm2(&cand);
            if nrm > 0.5 {
                for c in cand.iter_mut() {
                    *c /= nrm;
                }
                cols[j] = cand;
                break;
            }
        }
    }
}

/// Thin SVD of an `n x d` matrix.
///
/// Sign convention: in every column of `v` the entry of largest magnitude is
/// positive (ties go to the lowest index). Fails if Jacobi needs more than
/// `100 * min(n, d)` sweeps.
pub fn svd(a: ArrayView2<f64>) -> Result<SvdFactorization> {
    let (n, d) = a.dim();
    if n == 0 || d == 0 {
        return Err(LinalgError::Empty { rows: n, cols: d });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let transposed = n < d;
    let (m, p) = if transposed { (d, n) } else { (n, d) };
    // Columns of the tall working matrix.
    let cols: Vec<Vec<f64>> = if transposed {
        a.axis_iter(Axis(0)).map(|row| row.to_vec()).collect()
    } else {
        a.axis_iter(Axis(1)).map(|col| col.to_vec()).collect()
    };

    let (q, mut r) = householder_qr(cols, m);
    let right = one_sided_jacobi(&mut r, 100 * p)?;

    // Same cutoff as inside the sweep: anything smaller is rounding noise and
    // is reported as an exact zero singular value.
    let total: f64 = r.iter().map(|c| dot(c, c)).sum();
    let negligible = (total * (f64::EPSILON * p as f64).powi(2)).sqrt();
    let sig: Vec<f64> = r.iter().map(|c| norm2(c)).map(|s| if s <= negligible { 0.0 } else { s }).collect();
    let mut zero_cols = Vec::new();
    for (j, col) in r.iter_mut().enumerate() {
        if sig[j] > 0.0 {
            let s = sig[j];
            for e in col.iter_mut() {
                *e /= s;
            }
        } else {
            col.iter_mut().for_each(|e| *e = 0.0);
            zero_cols.push(j);
        }
    }
    complete_orthonormal(&mut r, &zero_cols, p);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]).then(i.cmp(&j)));

    // left = Q * r (m x p), right stays p x p.
    let mut left = Array2::<f64>::zeros((m, p));
    let mut rightm = Array2::<f64>::zeros((p, p));
    let mut sigma = Array1::<f64>::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = sig[src];
        let rc = &r[src];
        for row in 0..m {
            let mut s = 0.0;
            for t in 0..p {
                s += q[t][row] * rc[t];
            }
            left[[row, dst]] = s;
        }
        for row in 0..p {
            rightm[[row, dst]] = right[src][row];
        }
    }

    let (mut u, mut v) = if transposed { (rightm, left) } else { (left, rightm) };
    for j in 0..p {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, x) in v.column(j).iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if v[[best, j]] < 0.0 {
            v.column_mut(j).mapv_inplace(|x| -x);
            u.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(SvdFactorization { u, sigma, v })
}

/// Rank and conditioning statistics of a singular spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanDiagnostics {
    /// `exp` of the Shannon entropy of `sigma_i / sum(sigma)`.
    pub effective_rank: f64,
    /// `sum(sigma_i^2) / sigma_max^2`.
    pub stable_rank: f64,
    /// `sigma_max / sigma_min`; `+inf` (serialized as `null`) when `sigma_min == 0`.
    #[serde(with = "infinite_as_null")]
    pub condition_number: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(skip)]
    pub spectrum: Vec<f64>,
}

impl SpanDiagnostics {
    pub fn is_singular(&self) -> bool {
        self.condition_number.is_infinite()
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn diagnostics(sigma: &[f64]) -> Result<SpanDiagnostics> {
    let len = sigma.len();
    if len == 0 {
        return Err(LinalgError::EmptySpectrum);
    }
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) || sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(LinalgError::InvalidSpectrum);
    }
    let sigma_max = sigma[0];
    if sigma_max == 0.0 {
        return Err(LinalgError::ZeroSpectrum);
    }
    let sigma_min = sigma[len - 1];

    let total: f64 = sigma.iter().sum();
    let mut entropy = 0.0;
    for &s in sigma {
        let p = s / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    let effective_rank = entropy.exp().clamp(1.0, len as f64);

    let mut energy = 0.0;
    for &s in sigma {
        let ratio = s / sigma_max;
        energy += ratio * ratio;
    }
    let stable_rank = energy.clamp(1.0, len as f64);

    let condition_number = if sigma_min == 0.0 { f64::INFINITY } else { sigma_max / sigma_min };
    Ok(SpanDiagnostics {
        effective_rank,
        stable_rank,
        condition_number,
        sigma_min,
        sigma_max,
        spectrum: sigma.to_vec(),
    })
}

/// Keep the leading `k` singular triplets.
pub fn truncate(f: &SvdFactorization, k: usize) -> Result<SvdFactorization> {
    let r = f.rank();
    if k == 0 || k > r {
        return Err(LinalgError::RankOutOfRange { k, max: r });
    }
    Ok(SvdFactorization {
        u: f.u.slice(ndarray::s![.., ..k]).to_owned(),
        sigma: f.sigma.slice(ndarray::s![..k]).to_owned(),
        v: f.v.slice(ndarray::s![.., ..k]).to_owned(),
    })
}

/// `basis basis^T w` for a `d x k` basis with orthonormal columns.
pub fn project_onto_rowspace(basis: ArrayView2<f64>, w: ArrayView1<f64>) -> Result<Array1<f64>> {
    if basis.nrows() != w.len() {
        return Err(LinalgError::DimensionMismatch { expected: basis.nrows(), found: w.len() });
    }
    if w.iter().all(|x| *x == 0.0) {
        return Err(LinalgError::ZeroVector);
    }
    let coeffs = mat_t_vec(basis, w);
    Ok(mat_vec(basis, coeffs.view()))
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major `n x n`).
pub fn cholesky_solve(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, found: b.len() });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// Least squares `min ||[c_1 .. c_p] x - b||` for columns of length `m >= p`
/// via Householder QR. Returns `None` if the columns are numerically
/// dependent.
pub fn lstsq_columns(cols: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = cols.len();
    let m = b.len();
    if p == 0 {
        return Some(Vec::new());
    }
    if p > m {
        return None;
    }
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut rhs = b.to_vec();
    let scale = a.iter().map(|c| norm2(c)).fold(0.0, f64::max);
    for k in 0..p {
        let xnorm = norm2(&a[k][k..]);
        if xnorm <= scale * 1e-13 {
            return None;
        }
        let alpha = if a[k][k] >= 0.0 { -xnorm } else { xnorm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm = norm2(&v);
        for e in v.iter_mut() {
            *e /= vnorm;
        }
        for col in a.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let s = 2.0 * dot(&v, tail);
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        }
        let tail = &mut rhs[k..];
        let s = 2.0 * dot(&v, tail);
        for (t, vi) in tail.iter_mut().zip(&v) {
            *t -= s * vi;
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = rhs[i];
        for k in i + 1..p {
            s -= a[k][i] * x[k];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}
