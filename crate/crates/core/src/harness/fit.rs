use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares line through `(log x, log error)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the log residuals.
    pub residual: f64,
    pub points: usize,
}

impl OrderFit {
    /// Error predicted by the fitted power law at `x`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Fits `log error = intercept + slope · log x`. Nonpositive errors are
/// dropped; fewer than three usable points is an error.
pub fn fit_order(points: &[(f64, f64)]) -> Result<OrderFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, e)| x > 0.0 && e > 0.0 && x.is_finite() && e.is_finite())
        .map(|&(x, e)| (x.ln(), e.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 positive points, have {}",
            logs.len()
        )));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(OrderFit {
        slope,
        intercept,
        residual,
        points: logs.len(),
    })
}
