//! Weighted least-squares helpers shared by the surrogate explainers.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Solves the symmetric system `a·x = b`. Tries Cholesky first and falls back
/// to LU; `None` when the matrix is singular.
pub fn solve_symmetric(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    a.lu().solve(&b).filter(|x| x.iter().all(|v| v.is_finite()))
}

/// Weighted least squares through the origin, `min Σ wᵢ (yᵢ − xᵢ·β)² + λ‖β‖²`.
pub fn weighted_lstsq(rows: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 {
        return Some(Vec::new());
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for j in 0..d {
            let wj = wi * r[j];
            if wj == 0.0 {
                continue;
            }
            rhs[j] += wj * yi;
            for k in j..d {
                gram[(j, k)] += wj * r[k];
            }
        }
    }
    for j in 0..d {
        gram[(j, j)] += lambda;
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    solve_symmetric(gram, rhs).map(|b| b.iter().copied().collect())
}

/// Weighted ridge regression with an unpenalized intercept:
/// minimizes `Σ wᵢ (yᵢ − b − xᵢ·β)² + λ‖β‖²`.
///
/// Rows are centered on their weighted means before solving, so the
/// intercept is recovered exactly and never shrunk.
pub fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Option<RidgeFit> {
    assert_eq!(rows.len(), y.len());
    assert_eq!(rows.len(), w.len());
    let d = rows.first().map_or(0, Vec::len);
    let w_sum: f64 = w.iter().sum();
    if rows.is_empty() || w_sum <= 0.0 {
        return None;
    }
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += wi * v;
        }
        y_mean += wi * yi;
    }
    x_mean.iter_mut().for_each(|m| *m /= w_sum);
    y_mean /= w_sum;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for (c, (v, m)) in centered.iter_mut().zip(r.iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = yi - y_mean;
        for j in 0..d {
            let wj = wi * centered[j];
            rhs[j] += wj * yc;
            for k in j..d {
                gram[(j, k)] += wj * centered[k];
            }
        }
    }
    for j in 0..d {
        gram[(j, j)] += lambda;
        for k in 0..j {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    let beta = if d == 0 {
        DVector::zeros(0)
    } else {
        solve_symmetric(gram, rhs)?
    };
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Some(RidgeFit {
        coefficients: beta.iter().copied().collect(),
        intercept,
    })
}
