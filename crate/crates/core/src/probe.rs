//! Linear probe: L2-regularized logistic regression on frozen embeddings.
//!
//! The objective is the mean logistic loss plus `(reg_strength / 2) ||w||^2`;
//! the intercept is not penalized. It is minimized by damped Newton steps from
//! `w = 0, b = 0`, so the fit is a deterministic function of the input bits.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_solve, dot_view, norm_view};
use crate::tensorio::{self, Dtype, EmbeddingMatrix, TensorIoError};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("labels must contain both classes")]
    SingleClass,
    #[error("label count {labels} does not match sample count {rows}")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("feature matrix has a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("positive and negative sets differ in dimension ({pos} vs {neg})")]
    DimensionMismatch { pos: usize, neg: usize },
    #[error("invalid probe option: {0}")]
    InvalidOption(String),
    #[error("probe direction is zero")]
    ZeroDirection,
    #[error(transparent)]
    Io(#[from] TensorIoError),
    #[error("probe sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

/// Samples with binary labels (`true` = positive class).
#[derive(Clone, Debug)]
pub struct LabeledEmbeddings {
    x: Array2<f64>,
    y: Vec<bool>,
}

impl LabeledEmbeddings {
    pub fn new(x: Array2<f64>, y: Vec<bool>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(ProbeError::LabelMismatch { rows: x.nrows(), labels: y.len() });
        }
        if x.nrows() < 2 {
            return Err(ProbeError::TooFewSamples(x.nrows()));
        }
        if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ProbeError::NonFinite { row, col });
        }
        if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
            return Err(ProbeError::SingleClass);
        }
        Ok(Self { x, y })
    }

    /// Stack real positives (label 1) over real negatives (label 0).
    pub fn from_classes<'a>(pos: ArrayView2<'a, f64>, neg: ArrayView2<'a, f64>) -> Result<Self> {
        if pos.ncols() != neg.ncols() {
            return Err(ProbeError::DimensionMismatch { pos: pos.ncols(), neg: neg.ncols() });
        }
        let x = ndarray::concatenate(Axis(0), &[pos, neg])
            .map_err(|_| ProbeError::DimensionMismatch { pos: pos.ncols(), neg: neg.ncols() })?;
        let mut y = vec![true; pos.nrows()];
        y.extend(std::iter::repeat_n(false, neg.nrows()));
        Self::new(x, y)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOptions {
    pub reg_strength: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { reg_strength: 1e-2, tol: 1e-8, max_iter: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub w: Array1<f64>,
    pub b: f64,
    pub reg_strength: f64,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        dot_view(self.w.view(), x) + self.b
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> bool {
        self.decision(x) > 0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Regularized mean logistic loss.
pub fn objective(data: &LabeledEmbeddings, w: ArrayView1<f64>, b: f64, reg_strength: f64) -> f64 {
    let n = data.x.nrows() as f64;
    let mut loss = 0.0;
    for (row, &label) in data.x.rows().into_iter().zip(&data.y) {
        let z = dot_view(row, w) + b;
        loss += softplus(z) - if label { z } else { 0.0 };
    }
    loss / n + 0.5 * reg_strength * dot_view(w, w)
}

/// Gradient of [`objective`]; the last entry is the intercept component.
pub fn gradient(data: &LabeledEmbeddings, w: ArrayView1<f64>, b: f64, reg_strength: f64) -> Array1<f64> {
    let (n, d) = data.x.dim();
    let mut g = Array1::<f64>::zeros(d + 1);
    for (row, &label) in data.x.rows().into_iter().zip(&data.y) {
        let z = dot_view(row, w) + b;
        let r = sigmoid(z) - if label { 1.0 } else { 0.0 };
        for j in 0..d {
            g[j] += r * row[j];
        }
        g[d] += r;
    }
    g.mapv_inplace(|v| v / n as f64);
    for j in 0..d {
        g[j] += reg_strength * w[j];
    }
    g
}

pub fn train_linear_probe(data: &LabeledEmbeddings, opts: ProbeOptions) -> Result<ProbeModel> {
    if !(opts.reg_strength > 0.0 && opts.reg_strength.is_finite()) {
        return Err(ProbeError::InvalidOption(format!("reg_strength must be > 0, got {}", opts.reg_strength)));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(ProbeError::InvalidOption("tol and max_iter must be positive".into()));
    }
    let (n, d) = data.x.dim();
    let lam = opts.reg_strength;
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut f = objective(data, w.view(), b, lam);
    let mut g = gradient(data, w.view(), b, lam);
    let mut gnorm = norm_view(g.view());
    let mut iterations = 0;

    while gnorm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        // Hessian of the augmented parameter [w; b].
        let mut h = Array2::<f64>::zeros((d + 1, d + 1));
        for row in data.x.rows() {
            let p = sigmoid(dot_view(row, w.view()) + b);
            let s = p * (1.0 - p);
            if s == 0.0 {
                continue;
            }
            for i in 0..d {
                let si = s * row[i];
                for j in 0..=i {
                    h[[i, j]] += si * row[j];
                }
                h[[d, i]] += si;
            }
            h[[d, d]] += s;
        }
        for i in 0..=d {
            for j in 0..=i {
                h[[i, j]] /= n as f64;
            }
        }
        for i in 0..d {
            h[[i, i]] += lam;
        }
        h[[d, d]] += 1e-12;
        for i in 0..=d {
            for j in 0..i {
                h[[j, i]] = h[[i, j]];
            }
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = match cholesky_solve(&h, &neg) {
            Ok(s) => Array1::from(s),
            Err(_) => Array1::from(neg),
        };

        // Armijo backtracking.
        let slope = dot_view(g.view(), step.view());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let wt = &w + &(step.slice(ndarray::s![..d]).to_owned() * t);
            let bt = b + t * step[d];
            let ft = objective(data, wt.view(), bt, lam);
            if ft <= f + 1e-4 * t * slope {
                w = wt;
                b = bt;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        g = gradient(data, w.view(), b, lam);
        gnorm = norm_view(g.view());
        if !accepted {
            break;
        }
    }
    Ok(ProbeModel {
        w,
        b,
        reg_strength: lam,
        final_gradient_norm: gnorm,
        iterations,
        converged: gnorm <= opts.tol,
    })
}

/// Rescale so `||w|| = 1`; the decision boundary is unchanged.
pub fn normalize_direction(model: &ProbeModel) -> Result<ProbeModel> {
    let norm = norm_view(model.w.view());
    if norm == 0.0 {
        return Err(ProbeError::ZeroDirection);
    }
    let mut out = model.clone();
    out.w.mapv_inplace(|v| v / norm);
    out.b = model.b / norm;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSidecar {
    pub b: f64,
    pub reg_strength: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

pub fn sidecar_path(emb1_path: &Path) -> PathBuf {
    emb1_path.with_extension("json")
}

/// Write `w` as a `1 x d` f64 EMB1 file plus a JSON sidecar next to it.
pub fn write_probe(model: &ProbeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = model.w.len();
    let m = EmbeddingMatrix::new(model.w.clone().into_shape_with_order((1, d)).expect("1 x d"), Dtype::F64, "w")?;
    tensorio::write_emb1(&m, path)?;
    let sidecar = ProbeSidecar {
        b: model.b,
        reg_strength: model.reg_strength,
        iterations: model.iterations,
        final_gradient_norm: model.final_gradient_norm,
        converged: model.converged,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(TensorIoError::from)?;
    tensorio::write_atomic(&sidecar_path(path), json.as_bytes())?;
    Ok(())
}

/// Read a direction vector stored as a `1 x d` or `d x 1` matrix.
pub fn read_direction(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    let m = tensorio::read_matrix(path)?;
    let (r, c) = (m.rows(), m.cols());
    if r != 1 && c != 1 {
        return Err(ProbeError::Sidecar(format!("direction file must be 1 x d or d x 1, got {r} x {c}")));
    }
    Ok(Array1::from_iter(m.values().iter().copied()))
}

/// Read a probe written by [`write_probe`]; the sidecar must exist.
pub fn read_probe(path: impl AsRef<Path>) -> Result<ProbeModel> {
    let path = path.as_ref();
    let w = read_direction(path)?;
    let text = fs::read_to_string(sidecar_path(path)).map_err(|e| ProbeError::Sidecar(e.to_string()))?;
    let s: ProbeSidecar = serde_json::from_str(&text).map_err(|e| ProbeError::Sidecar(e.to_string()))?;
    Ok(ProbeModel {
        w,
        b: s.b,
        reg_strength: s.reg_strength,
        final_gradient_norm: s.final_gradient_norm,
        iterations: s.iterations,
        converged: s.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use ndarray::array;

    fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        dot_view(a, b) / (norm_view(a) * norm_view(b))
    }

    fn blobs(n: usize, d: usize, seed: u64) -> LabeledEmbeddings {
        let mut rng = SeededRng::new(seed);
        let mut x = Array2::zeros((n, d));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let pos = i % 2 == 0;
            for j in 0..d {
                x[[i, j]] = rng.gaussian();
            }
            x[[i, 0]] += if pos { 1.5 } else { -1.5 };
            y.push(pos);
        }
        LabeledEmbeddings::new(x, y).unwrap()
    }

    /// Plain gradient descent with step 1/L until the gradient norm is 1e-12.
    fn gradient_descent_oracle(data: &LabeledEmbeddings, lam: f64) -> (Array1<f64>, f64) {
        let (n, d) = data.x().dim();
        let mut xnorm2 = 0.0;
        for row in data.x().rows() {
            xnorm2 += dot_view(row, row) + 1.0;
        }
        let lipschitz = 0.25 * xnorm2 / n as f64 + lam;
        let mut w = Array1::<f64>::zeros(d);
        let mut b = 0.0;
        for _ in 0..5_000_000 {
            let g = gradient(data, w.view(), b, lam);
            if norm_view(g.view()) <= 1e-12 {
                break;
            }
            for j in 0..d {
                w[j] -= g[j] / lipschitz;
            }
            b -= g[d] / lipschitz;
        }
        (w, b)
    }

    #[test]
    fn symmetric_pair() {
        let data = LabeledEmbeddings::new(array![[1.0, 0.0], [-1.0, 0.0]], vec![true, false]).unwrap();
        let m = train_linear_probe(&data, ProbeOptions::default()).unwrap();
        assert!(m.converged);
        assert!(cosine(m.w.view(), array![1.0, 0.0].view()) >= 0.999);
        assert!(m.b.abs() <= 1e-6);
    }

    #[test]
    fn label_flip_negates_direction() {
        let data = blobs(40, 3, 2);
        let flipped =
            LabeledEmbeddings::new(data.x().clone(), data.labels().iter().map(|l| !l).collect()).unwrap();
        let a = train_linear_probe(&data, ProbeOptions::default()).unwrap();
        let b = train_linear_probe(&flipped, ProbeOptions::default()).unwrap();
        let neg = a.w.mapv(|v| -v);
        assert!(cosine(b.w.view(), neg.view()) >= 0.999_999);
    }

    #[test]
    fn matches_gradient_descent_oracle() {
        let data = blobs(100, 5, 17);
        let m = train_linear_probe(&data, ProbeOptions::default()).unwrap();
        let (w_oracle, b_oracle) = gradient_descent_oracle(&data, 1e-2);
        assert!(cosine(m.w.view(), w_oracle.view()) >= 0.99);
        let f_model = objective(&data, m.w.view(), m.b, 1e-2);
        let f_oracle = objective(&data, w_oracle.view(), b_oracle, 1e-2);
        assert!(f_model <= f_oracle + 1e-6);
    }

    #[test]
    fn deterministic_and_regularization_monotone() {
        let data = blobs(60, 4, 23);
        let a = train_linear_probe(&data, ProbeOptions::default()).unwrap();
        let b = train_linear_probe(&data, ProbeOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut last = f64::INFINITY;
        for reg in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let m = train_linear_probe(&data, ProbeOptions { reg_strength: reg, ..Default::default() }).unwrap();
            let n = norm_view(m.w.view());
            assert!(n <= last + 1e-12, "norm {n} after {last}");
            last = n;
        }
    }

    #[test]
    fn normalization() {
        let m = ProbeModel {
            w: array![3.0, 4.0],
            b: 5.0,
            reg_strength: 1e-2,
            final_gradient_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        let u = normalize_direction(&m).unwrap();
        assert_eq!(u.w, array![0.6, 0.8]);
        assert_eq!(u.b, 1.0);
        assert_eq!(normalize_direction(&u).unwrap(), u);
        let zero = ProbeModel { w: array![0.0, 0.0], ..m };
        assert!(matches!(normalize_direction(&zero), Err(ProbeError::ZeroDirection)));
    }

    #[test]
    fn normalization_preserves_predictions() {
        let mut rng = SeededRng::new(99);
        let m = ProbeModel {
            w: Array1::from(rng.gaussian_vec(6)),
            b: rng.gaussian(),
            reg_strength: 1e-2,
            final_gradient_norm: 0.0,
            iterations: 0,
            converged: true,
        };
        let u = normalize_direction(&m).unwrap();
        assert!((norm_view(u.w.view()) - 1.0).abs() <= 1e-12);
        for _ in 0..100 {
            let x = Array1::from(rng.gaussian_vec(6));
            assert_eq!(m.predict(x.view()), u.predict(x.view()));
            assert_eq!(m.decision(x.view()).signum(), u.decision(x.view()).signum());
        }
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            LabeledEmbeddings::new(array![[1.0], [2.0]], vec![true, true]),
            Err(ProbeError::SingleClass)
        ));
        assert!(matches!(
            LabeledEmbeddings::new(array![[1.0]], vec![true]),
            Err(ProbeError::TooFewSamples(1))
        ));
        assert!(matches!(
            LabeledEmbeddings::new(array![[1.0], [f64::NAN]], vec![true, false]),
            Err(ProbeError::NonFinite { row: 1, col: 0 })
        ));
        let pos = array![[1.0, 2.0]];
        let neg = array![[1.0, 2.0, 3.0]];
        assert!(matches!(
            LabeledEmbeddings::from_classes(pos.view(), neg.view()),
            Err(ProbeError::DimensionMismatch { pos: 2, neg: 3 })
        ));
    }

    #[test]
    fn iteration_cap_is_flagged() {
        let data = blobs(30, 3, 5);
        let m = train_linear_probe(&data, ProbeOptions { max_iter: 1, tol: 1e-14, ..Default::default() }).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
    }

    #[test]
    fn probe_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.emb1");
        let data = blobs(20, 3, 8);
        let m = normalize_direction(&train_linear_probe(&data, ProbeOptions::default()).unwrap()).unwrap();
        write_probe(&m, &path).unwrap();
        assert_eq!(read_probe(&path).unwrap(), m);
    }
}
