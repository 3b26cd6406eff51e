//! Vector-arithmetic alignment statistics of a difference matrix.
//!
//! Under the additive model `Δ_i ≈ μ + ε_i` the rows share a dominant
//! direction `μ` and the residuals behave like isotropic noise, so their
//! pairwise cosines average out near zero.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, norm_view, LinalgError};
use crate::report::{fmt6, markdown_table};
use crate::span::DifferenceMatrix;

/// Total centered variance at or below this is treated as no spread at all.
pub const DEGENERATE_VARIANCE: f64 = 1e-20;

#[derive(Debug, Error, PartialEq)]
pub enum ArithError {
    #[error("alignment metrics need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("all difference rows are zero")]
    AllZero,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub mean_pairwise_cosine: f64,
    pub mean_alignment_with_mean: f64,
    pub pc1_variance_fraction: f64,
    pub pc_top3_variance_fraction: f64,
    pub residual_mean_pairwise_cosine: f64,
    pub n: usize,
    /// Rows left out of the cosine means because they are zero.
    pub zero_rows: usize,
    pub degenerate: bool,
}

impl AlignmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column table with one labelled row per metric.
    pub fn to_markdown(&self, column: &str) -> String {
        let rows = [
            ("Mean cosine similarity", self.mean_pairwise_cosine),
            ("Alignment with mean vector", self.mean_alignment_with_mean),
            ("Variance explained by PC1", self.pc1_variance_fraction),
            ("Variance explained by first 3 PCs", self.pc_top3_variance_fraction),
            ("Residual cosine similarity", self.residual_mean_pairwise_cosine),
        ]
        .iter()
        .map(|(label, v)| vec![label.to_string(), fmt6(*v)])
        .collect::<Vec<_>>();
        markdown_table(&["Metric", column], &rows)
    }
}

/// Mean cosine over all pairs of nonzero rows and the number of rows used.
///
/// With unit rows `û_i`, `Σ_{i<j} û_i·û_j = (‖Σ û_i‖² − m) / 2`, which is the
/// off-diagonal half of the normalized Gram matrix.
fn mean_pairwise_cosine(rows: &Array2<f64>) -> (f64, usize) {
    let mut sum = Array1::<f64>::zeros(rows.ncols());
    let mut m = 0usize;
    for row in rows.rows() {
        let n = norm_view(row);
        if n > 0.0 {
            sum.scaled_add(1.0 / n, &row);
            m += 1;
        }
    }
    if m < 2 {
        return (0.0, m);
    }
    let s2 = sum.dot(&sum);
    let mf = m as f64;
    (((s2 - mf) / (mf * (mf - 1.0))).clamp(-1.0, 1.0), m)
}

/// Per-component share of centered variance, in decreasing order. Empty when
/// the centered rows carry no variance.
pub fn variance_fractions(diff: &DifferenceMatrix) -> Result<Vec<f64>, ArithError> {
    let rows = diff.values();
    if rows.nrows() < 2 {
        return Err(ArithError::TooFewRows(rows.nrows()));
    }
    let mu = rows.mean_axis(Axis(0)).expect("non-empty");
    let centered = rows - &mu;
    centered_fractions(&centered)
}

fn centered_fractions(centered: &Array2<f64>) -> Result<Vec<f64>, ArithError> {
    let total: f64 = centered.iter().map(|v| v * v).sum();
    if total / (centered.nrows() as f64 - 1.0) <= DEGENERATE_VARIANCE {
        return Ok(Vec::new());
    }
    let f = linalg::svd(centered.view())?;
    let energy: Vec<f64> = f.sigma.iter().map(|s| s * s).collect();
    let sum: f64 = energy.iter().sum();
    Ok(energy.iter().map(|e| e / sum).collect())
}

pub fn alignment_metrics(diff: &DifferenceMatrix) -> Result<AlignmentReport, ArithError> {
    let rows = diff.values();
    let n = rows.nrows();
    if n < 2 {
        return Err(ArithError::TooFewRows(n));
    }
    let (mean_pairwise, nonzero) = mean_pairwise_cosine(rows);
    if nonzero == 0 {
        return Err(ArithError::AllZero);
    }

    let mu = rows.mean_axis(Axis(0)).expect("non-empty");
    let mu_norm = norm_view(mu.view());
    let mean_alignment = if mu_norm > 0.0 {
        let total: f64 = rows
            .rows()
            .into_iter()
            .filter_map(|r| {
                let rn = norm_view(r);
                (rn > 0.0).then(|| r.dot(&mu) / (rn * mu_norm))
            })
            .sum();
        (total / nonzero as f64).clamp(-1.0, 1.0)
    } else {
        0.0
    };

    let centered = rows - &mu;
    let fractions = centered_fractions(&centered)?;
    let degenerate = fractions.is_empty();
    let (pc1, top3, residual) = if degenerate {
        (0.0, 0.0, 0.0)
    } else {
        let pc1 = fractions[0];
        let top3 = fractions.iter().take(3).sum::<f64>().min(1.0);
        (pc1, top3.max(pc1), mean_pairwise_cosine(&centered).0)
    };

    Ok(AlignmentReport {
        mean_pairwise_cosine: mean_pairwise,
        mean_alignment_with_mean: mean_alignment,
        pc1_variance_fraction: pc1,
        pc_top3_variance_fraction: top3,
        residual_mean_pairwise_cosine: residual,
        n,
        zero_rows: n - nonzero,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::span::Normalization;
    use crate::testutil::seeded_matrix;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use ndarray::array;

    fn dm(rows: Array2<f64>) -> DifferenceMatrix {
        DifferenceMatrix::from_rows(rows, Normalization::None)
    }

    fn assert_reports_close(a: &AlignmentReport, b: &AlignmentReport, tol: f64) {
        assert_abs_diff_eq!(a.mean_pairwise_cosine, b.mean_pairwise_cosine, epsilon = tol);
        assert_abs_diff_eq!(a.mean_alignment_with_mean, b.mean_alignment_with_mean, epsilon = tol);
        assert_abs_diff_eq!(a.pc1_variance_fraction, b.pc1_variance_fraction, epsilon = tol);
        assert_abs_diff_eq!(a.pc_top3_variance_fraction, b.pc_top3_variance_fraction, epsilon = tol);
        assert_abs_diff_eq!(a.residual_mean_pairwise_cosine, b.residual_mean_pairwise_cosine, epsilon = tol);
        assert_eq!(a.degenerate, b.degenerate);
    }

    #[test]
    fn identical_rows() {
        let r = alignment_metrics(&dm(array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])).unwrap();
        assert_abs_diff_eq!(r.mean_pairwise_cosine, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean_alignment_with_mean, 1.0, epsilon = 1e-12);
        assert!(r.degenerate);
        assert_eq!(r.pc1_variance_fraction, 0.0);
        assert_eq!(r.residual_mean_pairwise_cosine, 0.0);
    }

    #[test]
    fn two_rows_have_antipodal_residuals() {
        let r = alignment_metrics(&dm(array![[1.0, 0.5, -2.0], [0.3, 4.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(r.residual_mean_pairwise_cosine, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.pc1_variance_fraction, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_rows_against_eigen_oracle() {
        let n = 6;
        let rows = Array2::from_diag(&Array1::from_elem(n, 2.5));
        let r = alignment_metrics(&dm(rows.clone())).unwrap();
        assert_abs_diff_eq!(r.mean_pairwise_cosine, 0.0, epsilon = 1e-12);

        // Sample covariance eigenvalues from an independent symmetric solver.
        let mu = rows.mean_axis(Axis(0)).unwrap();
        let c = &rows - &mu;
        let m = DMatrix::from_fn(n, n, |i, j| c[[i, j]]);
        let cov = m.transpose() * &m / (n as f64 - 1.0);
        let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let trace: f64 = eig.iter().sum();
        assert_abs_diff_eq!(r.pc1_variance_fraction, eig[0] / trace, epsilon = 1e-10);
        assert_abs_diff_eq!(r.pc1_variance_fraction, 1.0 / (n as f64 - 1.0), epsilon = 1e-10);
        assert_abs_diff_eq!(r.pc_top3_variance_fraction, eig[..3].iter().sum::<f64>() / trace, epsilon = 1e-10);
    }

    #[test]
    fn pairwise_mean_matches_brute_force() {
        let mut rows = seeded_matrix(9, 4, 3);
        rows.row_mut(4).fill(0.0);
        let r = alignment_metrics(&dm(rows.clone())).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..9 {
            for j in i + 1..9 {
                let (a, b) = (rows.row(i), rows.row(j));
                let (na, nb) = (norm_view(a), norm_view(b));
                if na > 0.0 && nb > 0.0 {
                    total += a.dot(&b) / (na * nb);
                    count += 1;
                }
            }
        }
        assert_eq!(count, 28);
        assert_abs_diff_eq!(r.mean_pairwise_cosine, total / count as f64, epsilon = 1e-12);
        assert_eq!(r.zero_rows, 1);
    }

    #[test]
    fn errors() {
        assert_eq!(alignment_metrics(&dm(array![[1.0, 2.0]])), Err(ArithError::TooFewRows(1)));
        assert_eq!(alignment_metrics(&dm(Array2::zeros((3, 2)))), Err(ArithError::AllZero));
    }

    #[test]
    fn common_scaling_invariance() {
        let rows = seeded_matrix(20, 6, 11);
        let base = alignment_metrics(&dm(rows.clone())).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = alignment_metrics(&dm(&rows * c)).unwrap();
            assert_reports_close(&base, &scaled, 1e-10);
        }
    }

    #[test]
    fn rotation_invariance() {
        let rows = seeded_matrix(15, 5, 12);
        let q = linalg::svd(seeded_matrix(5, 5, 13).view()).unwrap().v;
        let base = alignment_metrics(&dm(rows.clone())).unwrap();
        let rotated = alignment_metrics(&dm(rows.dot(&q.t()))).unwrap();
        assert_reports_close(&base, &rotated, 1e-9);
    }

    #[test]
    fn fractions_sum_to_one() {
        let f = variance_fractions(&dm(seeded_matrix(12, 7, 14))).unwrap();
        assert_abs_diff_eq!(f.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(f.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn additive_model_residuals_are_uncorrelated() {
        let (n, d) = (500, 128);
        let mut rng = SeededRng::new(2024);
        let mut mu = Array1::from(rng.gaussian_vec(d));
        mu /= norm_view(mu.view());
        let mut rows = Array2::zeros((n, d));
        for mut row in rows.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = mu[j] + 0.05 * rng.gaussian();
            }
        }
        let r = alignment_metrics(&dm(rows)).unwrap();
        let bound = 3.0 / ((n * d) as f64).sqrt();
        assert!(r.residual_mean_pairwise_cosine.abs() <= bound, "{}", r.residual_mean_pairwise_cosine);
        assert!(r.mean_alignment_with_mean > 0.7);
    }

    #[test]
    fn markdown_labels() {
        let r = alignment_metrics(&dm(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])).unwrap();
        let md = r.to_markdown("CLIP");
        assert!(md.starts_with("| Metric | CLIP |"));
        assert!(md.contains("| Residual cosine similarity |"));
    }
}
