//! Ordinary least squares with an intercept.
//!
//! Predictors are standardized before forming the normal equations, which are
//! solved by Cholesky factorization; coefficients are mapped back to the
//! original scale. Standardization makes the fit invariant to predictor units.

use nalgebra::{DMatrix, DVector};

/// Squared Cholesky pivot of the standardized Gram matrix (per observation)
/// below which the design counts as rank deficient.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OlsError {
    #[error("need at least {required} observations, have {n}")]
    TooFewObservations { n: usize, required: usize },
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsSolution {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Zero when the response is constant.
    pub r_squared: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fits `y ~ 1 + columns`. Every column must have `y.len()` entries.
pub fn ols(columns: &[&[f64]], y: &[f64]) -> Result<OlsSolution, OlsError> {
    let n = y.len();
    let p = columns.len();
    if n < p + 1 {
        return Err(OlsError::TooFewObservations { n, required: p + 1 });
    }
    debug_assert!(columns.iter().all(|c| c.len() == n));

    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for (j, col) in columns.iter().enumerate() {
        let m = mean(col);
        let ss: f64 = col.iter().map(|x| (x - m) * (x - m)).sum();
        let sd = (ss / n as f64).sqrt();
        if sd.is_nan() || sd <= f64::EPSILON * m.abs().max(1.0) * 16.0 {
            return Err(OlsError::DegenerateDesign(format!("predictor {j} is constant")));
        }
        for (i, x) in col.iter().enumerate() {
            z[(i, j)] = (x - m) / sd;
        }
        means.push(m);
        scales.push(sd);
    }

    let y_mean = mean(y);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let gram = z.transpose() * &z / n as f64;
    let rhs = z.transpose() * &yc / n as f64;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| OlsError::DegenerateDesign("predictors are collinear".into()))?;
    let l = chol.l();
    if (0..p).any(|j| l[(j, j)] * l[(j, j)] < PIVOT_TOLERANCE) {
        return Err(OlsError::DegenerateDesign("predictors are collinear".into()));
    }
    let b = chol.solve(&rhs);

    let slopes: Vec<f64> = (0..p).map(|j| b[j] / scales[j]).collect();
    let intercept = y_mean - slopes.iter().zip(&means).map(|(s, m)| s * m).sum::<f64>();

    let fitted = &z * &b;
    let residuals: Vec<f64> = (0..n).map(|i| yc[i] - fitted[i]).collect();
    let sst: f64 = yc.iter().map(|v| v * v).sum();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let r_squared = if sst <= (f64::EPSILON * scale).powi(2) * n as f64 {
        0.0
    } else {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    };
    Ok(OlsSolution { intercept, slopes, residuals, r_squared })
}
