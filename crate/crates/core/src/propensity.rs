//! Logistic treatment model and stabilized inverse-probability-of-treatment
//! weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::AnalysisRows;
use crate::error::{Error, Result};
use crate::numerics::{self, newton_maximize, Evaluation, NewtonOptions, NewtonResult};
use crate::terms::{design_matrix, resolve_all, Term};

/// Fitted probabilities closer than this to 0 or 1 mean the treatment is
/// (quasi-)perfectly predicted.
const SEPARATION_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// Coefficients, intercept first.
    pub kappa: DVector<f64>,
    pub term_names: Vec<String>,
    pub terms: Vec<Term>,
    /// Marginal P(A = 1) among the fitting rows.
    pub marginal_p1: f64,
    pub newton: NewtonResult,
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + eˣ) without overflow.
#[inline]
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of `a` under mean `expit(X κ)` with its gradient
/// and Hessian.
pub fn logistic_loglik(x: &DMatrix<f64>, a: &[f64], kappa: &DVector<f64>) -> Evaluation {
    let eta = x * kappa;
    let p = x.ncols();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut hessian = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let e = eta[i];
        value += a[i] * e - log1p_exp(e);
        let mu = expit(e);
        let w = mu * (1.0 - mu);
        let r = a[i] - mu;
        for j in 0..p {
            let xij = x[(i, j)];
            gradient[j] += xij * r;
            for k in 0..=j {
                hessian[(j, k)] -= w * xij * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            hessian[(k, j)] = hessian[(j, k)];
        }
    }
    Evaluation {
        value,
        gradient,
        hessian,
    }
}

pub fn fit_logistic(rows: &AnalysisRows, terms: &[Term]) -> Result<PropensityFit> {
    fit_logistic_with(rows, terms, NewtonOptions::default())
}

pub fn fit_logistic_with(rows: &AnalysisRows, terms: &[Term], options: NewtonOptions) -> Result<PropensityFit> {
    let resolved = resolve_all(terms, rows.schema())?;
    let a: Vec<f64> = rows.treatments().map(f64::from).collect();
    let n1 = a.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 || n1 == a.len() {
        return Err(Error::SingleArm { arm: u8::from(n1 > 0) });
    }
    let x = design_matrix(rows.rows().iter(), &resolved, true);
    let mut term_names = vec!["(Intercept)".to_string()];
    term_names.extend(terms.iter().map(Term::to_string));
    if let Err((columns, condition)) = numerics::check_full_rank(&x) {
        return Err(Error::Singular {
            columns: columns.iter().map(|&j| term_names[j].clone()).collect(),
            condition,
        });
    }

    let marginal_p1 = n1 as f64 / a.len() as f64;
    let mut init = DVector::zeros(x.ncols());
    init[0] = (marginal_p1 / (1.0 - marginal_p1)).ln();
    let newton = match newton_maximize(|k| logistic_loglik(&x, &a, k), init, options) {
        Err(Error::Divergence { .. }) => return Err(Error::Separation),
        other => other?,
    };
    let eta = &x * &newton.argmax;
    if eta
        .iter()
        .map(|&e| expit(e))
        .any(|p| !(SEPARATION_EPS..=1.0 - SEPARATION_EPS).contains(&p))
    {
        return Err(Error::Separation);
    }
    if !newton.converged {
        log::warn!(
            "propensity model did not converge after {} iterations (gradient {:.2e})",
            newton.iterations,
            newton.final_gradient_norm
        );
    }
    Ok(PropensityFit {
        kappa: newton.argmax.clone(),
        term_names,
        terms: terms.to_vec(),
        marginal_p1,
        newton,
    })
}

impl PropensityFit {
    /// P(A = 1 | covariates) for each row.
    pub fn probabilities(&self, rows: &AnalysisRows) -> Result<Vec<f64>> {
        let resolved = resolve_all(&self.terms, rows.schema())?;
        let x = design_matrix(rows.rows().iter(), &resolved, true);
        Ok((x * &self.kappa).iter().map(|&e| expit(e)).collect())
    }
}

/// Stabilized weights `P(A = a) / P(A = a | K)` for the arm `a` each row
/// actually received.
pub fn ipt_weights(fit: &PropensityFit, rows: &AnalysisRows) -> Result<Vec<f64>> {
    let probs = fit.probabilities(rows)?;
    stabilized_weights(fit.marginal_p1, &probs, rows.treatments())
}

pub fn stabilized_weights(
    marginal_p1: f64,
    propensities: &[f64],
    treatments: impl Iterator<Item = u8>,
) -> Result<Vec<f64>> {
    propensities
        .iter()
        .zip(treatments)
        .enumerate()
        .map(|(i, (&p, a))| {
            let w = if a == 1 {
                marginal_p1 / p
            } else {
                (1.0 - marginal_p1) / (1.0 - p)
            };
            if p <= 0.0 || p >= 1.0 || !w.is_finite() {
                Err(Error::Positivity {
                    row: i + 1,
                    probability: p,
                })
            } else {
                Ok(w)
            }
        })
        .collect()
}

/// Symmetric percentile truncation of a weight vector, e.g. `percent = 1.0`
/// clamps to the 1st and 99th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub percent: f64,
}

impl Truncation {
    pub fn apply(&self, weights: &mut [f64]) {
        if weights.is_empty() || self.percent <= 0.0 {
            return;
        }
        let mut sorted = weights.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&sorted, self.percent / 100.0);
        let hi = quantile_sorted(&sorted, 1.0 - self.percent / 100.0);
        for w in weights.iter_mut() {
            *w = w.clamp(lo, hi);
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
