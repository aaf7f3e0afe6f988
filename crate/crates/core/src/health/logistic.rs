//! Logistic regression by iteratively reweighted least squares, with
//! standard errors, odds ratios and 95% confidence intervals.

use crate::error::{Result, SimError};
use crate::health::linalg::{cholesky, cholesky_inverse, cholesky_solve};
use crate::rng::inverse_logit;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// "(intercept)" followed by the covariate names.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub odds_ratios: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub iterations: usize,
}

const SEPARATION_BOUND: f64 = 30.0;

/// Maximum-likelihood fit of outcome on an intercept plus the named
/// covariate columns. Errors on non-binary outcomes, rank deficiency and
/// (quasi-)separation, naming the offending column.
pub fn fit_logistic(
    outcome: &[f64],
    covariates: &[(&str, &[f64])],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit> {
    let n = outcome.len();
    if n == 0 {
        return Err(SimError::LogisticFailure("no observations".into()));
    }
    for (name, col) in covariates {
        if col.len() != n {
            return Err(SimError::LogisticFailure(format!(
                "column `{name}` has {} rows, outcome has {n}",
                col.len()
            )));
        }
    }
    if outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(SimError::LogisticFailure("outcome is not binary".into()));
    }
    let p = covariates.len() + 1;
    if n < p {
        return Err(SimError::LogisticFailure(format!(
            "{n} observations for {p} coefficients"
        )));
    }

    let x_at = |row: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            covariates[j - 1].1[row]
        }
    };
    let names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(covariates.iter().map(|(name, _)| name.to_string()))
        .collect();
    let column_name = |j: usize| names[j].clone();

    let mut beta = vec![0.0f64; p];
    let mut xtwx = vec![0.0f64; p * p];
    let mut grad = vec![0.0f64; p];
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        xtwx.iter_mut().for_each(|v| *v = 0.0);
        grad.iter_mut().for_each(|v| *v = 0.0);
        for row in 0..n {
            let mut lp = beta[0];
            for j in 1..p {
                lp += beta[j] * x_at(row, j);
            }
            let mu = inverse_logit(lp);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = outcome[row] - mu;
            for j in 0..p {
                let xj = x_at(row, j);
                grad[j] += xj * r;
                for k in 0..=j {
                    xtwx[j * p + k] += w * xj * x_at(row, k);
                }
            }
        }
        for j in 0..p {
            for k in j + 1..p {
                xtwx[j * p + k] = xtwx[k * p + j];
            }
        }
        let l = cholesky(&xtwx, p).map_err(|_| {
            // find the most collinear-looking column for the message
            let j = (0..p)
                .min_by(|&a, &b| {
                    xtwx[a * p + a]
                        .partial_cmp(&xtwx[b * p + b])
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            SimError::LogisticFailure(format!(
                "design matrix rank-deficient near column `{}`",
                column_name(j)
            ))
        })?;
        let delta = cholesky_solve(&l, p, &grad);
        let mut max_step = 0.0f64;
        for j in 0..p {
            beta[j] += delta[j];
            max_step = max_step.max(delta[j].abs());
        }
        if let Some(j) = (0..p).find(|&j| beta[j].abs() > SEPARATION_BOUND) {
            return Err(SimError::LogisticFailure(format!(
                "separation suspected for column `{}` (coefficient {})",
                column_name(j),
                beta[j]
            )));
        }
        if max_step < tol {
            break;
        }
        if iter + 1 == max_iter {
            return Err(SimError::LogisticFailure(format!(
                "no convergence in {max_iter} iterations (last step {max_step})"
            )));
        }
    }

    // information matrix at the final beta for standard errors
    xtwx.iter_mut().for_each(|v| *v = 0.0);
    for row in 0..n {
        let mut lp = beta[0];
        for j in 1..p {
            lp += beta[j] * x_at(row, j);
        }
        let mu = inverse_logit(lp);
        let w = (mu * (1.0 - mu)).max(1e-12);
        for j in 0..p {
            for k in 0..=j {
                xtwx[j * p + k] += w * x_at(row, j) * x_at(row, k);
            }
        }
    }
    for j in 0..p {
        for k in j + 1..p {
            xtwx[j * p + k] = xtwx[k * p + j];
        }
    }
    let l = cholesky(&xtwx, p)
        .map_err(|e| SimError::LogisticFailure(format!("information matrix singular: {e}")))?;
    let cov = cholesky_inverse(&l, p);
    let std_errors: Vec<f64> = (0..p).map(|j| cov[j * p + j].sqrt()).collect();
    let odds_ratios: Vec<f64> = beta.iter().map(|b| b.exp()).collect();
    let ci_low: Vec<f64> = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| (b - 1.96 * se).exp())
        .collect();
    let ci_high: Vec<f64> = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| (b + 1.96 * se).exp())
        .collect();

    Ok(LogisticFit {
        names,
        coefficients: beta,
        std_errors,
        odds_ratios,
        ci_low,
        ci_high,
        iterations,
    })
}

impl LogisticFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn odds_ratio(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.odds_ratios[i])
    }

    /// Rows of (term, OR, CI-low, CI-high) skipping the intercept.
    pub fn or_table(&self) -> Vec<(String, f64, f64, f64)> {
        (1..self.names.len())
            .map(|i| {
                (
                    self.names[i].clone(),
                    self.odds_ratios[i],
                    self.ci_low[i],
                    self.ci_high[i],
                )
            })
            .collect()
    }
}
