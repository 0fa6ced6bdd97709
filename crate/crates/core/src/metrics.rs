//! Regression metrics for affinity prediction: concordance index, modified
//! squared correlation r_m², Pearson correlation and mean squared error.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least 2 values, got {0}")]
    TooFew(usize),
    #[error("no comparable pairs: all true values are equal")]
    NoComparablePairs,
    #[error("constant input: correlation is undefined")]
    DegenerateInput,
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooFew(pred.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fraction of pairs with `truth_i > truth_j` whose predictions are ordered
/// the same way; tied predictions earn half credit.
pub fn concordance_index(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let mut pairs = 0u64;
    // twice the credit, to stay in integers
    let mut credit2 = 0u64;
    for i in 0..truth.len() {
        for j in 0..truth.len() {
            if truth[i] > truth[j] {
                pairs += 1;
                if pred[i] > pred[j] {
                    credit2 += 2;
                } else if pred[i] == pred[j] {
                    credit2 += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok(credit2 as f64 / (2 * pairs) as f64)
}

/// Sample Pearson correlation.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        sxy += (p - mp) * (t - mt);
        sxx += (p - mp) * (p - mp);
        syy += (t - mt) * (t - mt);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// `r² · (1 − √|r² − r₀²|)`, where `r²` is the squared Pearson correlation
/// and `r₀²` the coefficient of determination of the through-origin fit
/// `pred ≈ k · truth`.
pub fn r_m_squared(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    let r = pearson(pred, truth)?;
    let r2 = r * r;
    let k = pred.iter().zip(truth).map(|(&p, &t)| p * t).sum::<f64>() / truth.iter().map(|&t| t * t).sum::<f64>();
    let mp = mean(pred);
    let resid: f64 = pred.iter().zip(truth).map(|(&p, &t)| (p - k * t).powi(2)).sum();
    let total: f64 = pred.iter().map(|&p| (p - mp).powi(2)).sum();
    let r02 = 1.0 - resid / total;
    Ok(r2 * (1.0 - (r2 - r02).abs().sqrt()))
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::TooFew(0));
    }
    Ok(pred.iter().zip(truth).map(|(&p, &t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub ci: f64,
    pub rm2: f64,
    pub pcc: f64,
    pub mse: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self, MetricsError> {
        Ok(MetricsReport {
            ci: concordance_index(pred, truth)?,
            rm2: r_m_squared(pred, truth)?,
            pcc: pearson(pred, truth)?,
            mse: mse(pred, truth)?,
            n: pred.len(),
        })
    }

    pub const CSV_HEADER: &'static str = "n,ci,rm2,pcc,mse";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.n, self.ci, self.rm2, self.pcc, self.mse)
    }
}

/// Flat `key=value` block, one metric per line.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "ci={}", self.ci)?;
        writeln!(f, "rm2={}", self.rm2)?;
        writeln!(f, "pcc={}", self.pcc)?;
        writeln!(f, "mse={}", self.mse)
    }
}
