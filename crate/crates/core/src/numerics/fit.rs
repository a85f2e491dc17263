//! Small least-squares helpers.

use crate::error::{Error, Result};

/// Straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Largest absolute residual.
    pub max_residual: f64,
    /// Standard error of the intercept.
    pub intercept_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let w = vec![1.0; x.len()];
    weighted_linear_fit(x, y, &w)
}

pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() != w.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("linear fit needs at least two matched points".into()));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - mx) * (xi - mx);
        sxy += wi * (xi - mx) * (yi - my);
        syy += wi * (yi - my) * (yi - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("linear fit with degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut sse = 0.0;
    let mut max_residual = 0.0f64;
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        let r = yi - intercept - slope * xi;
        sse += wi * r * r;
        max_residual = max_residual.max(r.abs());
    }
    // a perfectly flat response is a perfect fit
    let r2 = if syy <= f64::MIN_POSITIVE { 1.0 } else { 1.0 - sse / syy };
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let sigma2 = sse / sw * x.len() as f64 / dof;
    let intercept_se = (sigma2 * (1.0 / x.len() as f64 + mx * mx * sw / (sxx * x.len() as f64))).sqrt();
    Ok(LinearFit { slope, intercept, r2, max_residual, intercept_se })
}

/// Fit `y(t) = limit + c / sqrt(t)`; returns the fit in the variable `1/sqrt(t)`,
/// so `intercept` is the extrapolated limit.
pub fn fit_inverse_sqrt(t: &[f64], y: &[f64]) -> Result<LinearFit> {
    let s: Vec<f64> = t.iter().map(|v| 1.0 / v.sqrt()).collect();
    linear_fit(&s, y)
}

/// Solve a small dense least-squares problem `min |A c - y|` via the normal
/// equations. `rows` holds the basis values per sample.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = rows.first().map_or(0, |r| r.len());
    if m == 0 || rows.len() < m || rows.len() != y.len() {
        return Err(Error::InvalidArgument("least squares: too few samples".into()));
    }
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..m {
            for j in 0..m {
                a[i][j] += r[i] * r[j];
            }
            a[i][m] += r[i] * yi;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return Err(Error::InvalidArgument("least squares: singular normal matrix".into()));
        }
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..=m {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut c = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * c[j]).sum();
        c[i] = (a[i][m] - s) / a[i][i];
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_extrapolation() {
        let t: Vec<f64> = (1..=20).map(|k| 10.0 * k as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| -1.25 + 4.0 / v.sqrt()).collect();
        let f = fit_inverse_sqrt(&t, &y).unwrap();
        assert!((f.intercept + 1.25).abs() < 1e-10);
    }

    #[test]
    fn quadratic_least_squares() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64 * 0.3).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x, x * x]).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 - x + 0.5 * x * x).collect();
        let c = least_squares(&rows, &y).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] + 1.0).abs() < 1e-9 && (c[2] - 0.5).abs() < 1e-9);
    }
}
