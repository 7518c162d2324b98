//! Dense least-squares core shared by the regression, salary and
//! domestic-activity models.
//!
//! The solver is QR with column pivoting; a design is treated as rank
//! deficient when a pivoted diagonal entry of R falls below
//! `1e-10 x` the largest column norm of the design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RANK_TOL_FACTOR: f64 = 1e-10;

/// Result of an ordinary least-squares solve.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    pub tss: f64,
    pub r2: f64,
    /// (X'X)^-1, computed from the pivoted QR factors.
    pub xtx_inv: DMatrix<f64>,
    pub n: usize,
    pub k: usize,
}

fn upper_triangular_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    let mut inv = DMatrix::zeros(k, k);
    for col in 0..k {
        // Solve R x = e_col by back substitution.
        let mut x = DVector::zeros(k);
        x[col] = 1.0;
        for i in (0..=col).rev() {
            let mut s = x[i];
            for j in (i + 1)..k {
                s -= r[(i, j)] * x[j];
            }
            x[i] = s / r[(i, i)];
        }
        inv.set_column(col, &x);
    }
    inv
}

/// Fit y = X b by least squares.
pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LsFit> {
    let n = x.nrows();
    let k = x.ncols();
    if y.len() != n {
        return Err(Error::InsufficientData(format!(
            "response length {} does not match {} design rows",
            y.len(),
            n
        )));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k} columns"
        )));
    }

    let max_col_norm = (0..k)
        .map(|j| x.column(j).norm())
        .fold(0.0f64, f64::max);
    let tol = RANK_TOL_FACTOR * max_col_norm;

    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    // Pivoting sorts |r_ii| in decreasing order, so the rank is the count
    // of diagonal entries above the tolerance.
    let rank = (0..k).take_while(|&i| r[(i, i)].abs() > tol).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }

    // X P = Q R. Solve R z = Q'y, then undo the column pivot.
    let qty = qr.q().transpose() * y;
    let mut beta = DVector::zeros(k);
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in (i + 1)..k {
            s -= r[(i, j)] * beta[j];
        }
        beta[i] = s / r[(i, i)];
    }
    let p = qr.p();
    p.inv_permute_rows(&mut beta);

    // (X'X)^-1 = P (R'R)^-1 P' = P R^-1 R^-T P'.
    let r_inv = upper_triangular_inverse(&r);
    let mut inner = &r_inv * r_inv.transpose();
    p.inv_permute_rows(&mut inner);
    let mut inner_t = inner.transpose();
    p.inv_permute_rows(&mut inner_t);
    let xtx_inv = inner_t.transpose();

    let fitted = x * &beta;
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if tss > 0.0 {
        1.0 - rss / tss
    } else if rss <= tol * tol {
        1.0
    } else {
        f64::NEG_INFINITY
    };

    Ok(LsFit {
        beta,
        residuals,
        rss,
        tss,
        r2,
        xtx_inv,
        n,
        k,
    })
}

/// Gaussian BIC with the full log-likelihood constant:
/// `n ln(rss/n) + k ln(n) + n (1 + ln 2 pi)`.
///
/// The additive constant does not affect model or offset selection; it is
/// included so values are comparable across fits of the same data.
pub fn bic(n: usize, k: usize, rss: f64) -> f64 {
    let nf = n as f64;
    nf * (rss / nf).ln() + (k as f64) * nf.ln() + nf * (1.0 + (2.0 * std::f64::consts::PI).ln())
}

/// CR1 cluster-robust covariance:
/// `(X'X)^-1 [ sum_g X_g' e_g e_g' X_g ] (X'X)^-1 * G/(G-1) * (n-1)/(n-k)`.
pub fn clustered_cov(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    clusters: &[usize],
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    assert_eq!(clusters.len(), n, "one cluster id per row");

    let n_clusters = {
        let mut ids: Vec<usize> = clusters.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if n_clusters < 2 {
        return Err(Error::SingleCluster);
    }

    // Accumulate s_g = X_g' e_g per cluster, then meat = sum s_g s_g'.
    let max_id = clusters.iter().copied().max().unwrap_or(0);
    let mut scores: Vec<DVector<f64>> = vec![DVector::zeros(k); max_id + 1];
    for (i, &g) in clusters.iter().enumerate() {
        let xi = x.row(i).transpose();
        scores[g] += xi * residuals[i];
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in &scores {
        meat += s * s.transpose();
    }

    let g = n_clusters as f64;
    let nf = n as f64;
    let kf = k as f64;
    let scale = g / (g - 1.0) * (nf - 1.0) / (nf - kf);
    Ok(xtx_inv * meat * xtx_inv * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line_recovered() {
        // y = 2x + 1 exactly.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let fit = fit(&x, &y).unwrap();
        assert_relative_eq!(fit.beta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[1], 2.0, epsilon = 1e-12);
        assert!(fit.rss < 1e-20);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn three_point_hand_solve() {
        // Points (0,0), (1,1), (2,3) on {1, x}: slope 1.5, intercept -1/6.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 3.0]);
        let fit = fit(&x, &y).unwrap();
        assert_relative_eq!(fit.beta[0], -1.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[1], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(fit(&x, &y), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn xtx_inverse_matches_direct_inverse() {
        let x = DMatrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.5);
        let y = DVector::from_fn(12, |i, _| (i as f64).sin());
        let fit = fit(&x, &y).unwrap();
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(fit.xtx_inv[(i, j)], direct[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn clustered_cov_single_cluster_errors() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let e = DVector::from_vec(vec![0.1, -0.2, 0.1]);
        let xtx_inv = DMatrix::from_element(1, 1, 1.0 / 3.0);
        assert!(matches!(
            clustered_cov(&x, &e, &xtx_inv, &[0, 0, 0]),
            Err(Error::SingleCluster)
        ));
    }
}
