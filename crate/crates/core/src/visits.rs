//! Andersen–Gill proportional rate model for visit (outcome-observation)
//! times and the inverse-intensity-of-visit weights derived from it.
//!
//! Risk sets are taken on the time-since-entry axis: at an event time `t` a
//! row is at risk when `t_start < t <= t_stop` and `at_risk` holds. Events do
//! not remove a subject from later risk sets. Tied event times use the
//! Breslow approximation. The baseline rate is common to every subject at a
//! given time, so it cancels from the weights and is only estimated for the
//! intensity diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{AnalysisRows, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::numerics::{newton_maximize, Evaluation, NewtonOptions, NewtonResult};
use crate::terms::{resolve_all, ResolvedTerm, Term};

/// A fitted coefficient this many covariate standard deviations away from
/// zero means the partial likelihood is monotone in it.
const MONOTONE_LIMIT: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VisitModelFit {
    /// Log rate ratios; no intercept.
    pub gamma: DVector<f64>,
    pub term_names: Vec<String>,
    pub terms: Vec<Term>,
    pub log_partial_likelihood: f64,
    pub newton: NewtonResult,
    /// Rows whose fitted intensity over their interval (Breslow baseline)
    /// exceeds 1, i.e. where the observation-probability bound is violated.
    pub intensity_exceedances: usize,
}

/// Counting-process data prepared for repeated partial-likelihood
/// evaluation.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    /// Centered covariates of at-risk rows.
    v: DMatrix<f64>,
    weight: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
    by_stop_desc: Vec<usize>,
    by_start_desc: Vec<usize>,
    times: Vec<f64>,
    /// Per distinct event time: weighted count and weighted covariate sum.
    event_weight: Vec<f64>,
    event_sum: Vec<DVector<f64>>,
    center: DVector<f64>,
}

impl PartialLikelihood {
    /// `case_weights`, when given, are aligned with `dataset.rows()`.
    pub fn new(dataset: &LongitudinalDataset, terms: &[ResolvedTerm], case_weights: Option<&[f64]>) -> Result<Self> {
        if let Some(w) = case_weights {
            if w.len() != dataset.rows().len() {
                return Err(Error::Dimension(format!(
                    "{} case weights for {} rows",
                    w.len(),
                    dataset.rows().len()
                )));
            }
        }
        let p = terms.len();
        let risk_rows: Vec<usize> = dataset
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.at_risk)
            .map(|(i, _)| i)
            .collect();
        let skipped = dataset.rows().iter().filter(|r| r.event && !r.at_risk).count();
        if skipped > 0 {
            log::warn!("{skipped} event rows are not at risk and do not enter the visit model");
        }
        let m = risk_rows.len();
        let mut v = DMatrix::zeros(m, p);
        let mut weight = Vec::with_capacity(m);
        let mut start = Vec::with_capacity(m);
        let mut stop = Vec::with_capacity(m);
        for (k, &i) in risk_rows.iter().enumerate() {
            let row = &dataset.rows()[i];
            for (j, term) in terms.iter().enumerate() {
                v[(k, j)] = term.eval(row);
            }
            weight.push(case_weights.map_or(1.0, |w| w[i]));
            start.push(row.t_start);
            stop.push(row.t_stop);
        }
        let total_weight: f64 = weight.iter().sum();
        let mut center = DVector::zeros(p);
        if m > 0 {
            for j in 0..p {
                center[j] = (0..m).map(|k| weight[k] * v[(k, j)]).sum::<f64>() / total_weight;
            }
            for k in 0..m {
                for j in 0..p {
                    v[(k, j)] -= center[j];
                }
            }
        }

        let mut events: Vec<usize> = (0..m).filter(|&k| dataset.rows()[risk_rows[k]].event).collect();
        if events.is_empty() {
            return Err(Error::NoEvents);
        }
        events.sort_by(|&a, &b| stop[a].total_cmp(&stop[b]));
        let mut times = Vec::new();
        let mut event_weight = Vec::new();
        let mut event_sum: Vec<DVector<f64>> = Vec::new();
        for &k in &events {
            if times.last() != Some(&stop[k]) {
                times.push(stop[k]);
                event_weight.push(0.0);
                event_sum.push(DVector::zeros(p));
            }
            let last = times.len() - 1;
            event_weight[last] += weight[k];
            for j in 0..p {
                event_sum[last][j] += weight[k] * v[(k, j)];
            }
        }

        let mut by_stop_desc: Vec<usize> = (0..m).collect();
        by_stop_desc.sort_by(|&a, &b| stop[b].total_cmp(&stop[a]));
        let mut by_start_desc: Vec<usize> = (0..m).collect();
        by_start_desc.sort_by(|&a, &b| start[b].total_cmp(&start[a]));

        Ok(PartialLikelihood {
            v,
            weight,
            start,
            stop,
            by_stop_desc,
            by_start_desc,
            times,
            event_weight,
            event_sum,
            center,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn event_times(&self) -> &[f64] {
        &self.times
    }

    /// Breslow log partial likelihood with gradient and Hessian at `gamma`.
    pub fn evaluate(&self, gamma: &DVector<f64>) -> Evaluation {
        self.sweep(gamma, |_, _| {})
    }

    /// Runs the risk-set sweep, handing each event time's risk-set total
    /// `Σ w exp(γᵀ(v − center) − shift)` and the shift to `visit`.
    fn sweep(&self, gamma: &DVector<f64>, mut visit: impl FnMut(usize, f64)) -> Evaluation {
        let p = self.dim();
        let eta = &self.v * gamma;
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let risk: Vec<f64> = eta
            .iter()
            .zip(&self.weight)
            .map(|(&e, &w)| w * (e - shift).exp())
            .collect();

        let mut s0 = 0.0;
        let mut s1 = DVector::<f64>::zeros(p);
        let mut s2 = DMatrix::<f64>::zeros(p, p);
        let accumulate = |k: usize, sign: f64, s0: &mut f64, s1: &mut DVector<f64>, s2: &mut DMatrix<f64>| {
            let r = sign * risk[k];
            *s0 += r;
            for a in 0..p {
                let va = self.v[(k, a)];
                s1[a] += r * va;
                for b in 0..=a {
                    s2[(a, b)] += r * va * self.v[(k, b)];
                }
            }
        };

        let mut value = 0.0;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        let (mut next_stop, mut next_start) = (0, 0);
        for idx in (0..self.times.len()).rev() {
            let t = self.times[idx];
            while next_stop < self.by_stop_desc.len() && self.stop[self.by_stop_desc[next_stop]] >= t {
                accumulate(self.by_stop_desc[next_stop], 1.0, &mut s0, &mut s1, &mut s2);
                next_stop += 1;
            }
            while next_start < self.by_start_desc.len() && self.start[self.by_start_desc[next_start]] >= t {
                accumulate(self.by_start_desc[next_start], -1.0, &mut s0, &mut s1, &mut s2);
                next_start += 1;
            }
            visit(idx, s0);
            let d = self.event_weight[idx];
            let mean = &s1 / s0;
            value += gamma.dot(&self.event_sum[idx]) - d * (s0.ln() + shift);
            gradient += &self.event_sum[idx] - &mean * d;
            for a in 0..p {
                for b in 0..=a {
                    hessian[(a, b)] -= d * (s2[(a, b)] / s0 - mean[a] * mean[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hessian[(b, a)] = hessian[(a, b)];
            }
        }
        Evaluation {
            value,
            gradient,
            hessian,
        }
    }

    /// Breslow baseline increments `dΛ₀(t)` on the raw (uncentered)
    /// covariate scale at each event time.
    fn baseline_increments(&self, gamma: &DVector<f64>) -> Vec<f64> {
        let eta = &self.v * gamma;
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let offset = shift + gamma.dot(&self.center);
        let mut totals = vec![0.0; self.times.len()];
        self.sweep(gamma, |idx, s0| totals[idx] = s0);
        totals
            .iter()
            .zip(&self.event_weight)
            .map(|(&s0, &d)| d / (s0 * offset.exp()))
            .collect()
    }
}

pub fn fit_andersen_gill(dataset: &LongitudinalDataset, terms: &[Term]) -> Result<VisitModelFit> {
    fit_andersen_gill_with(dataset, terms, None, NewtonOptions::default())
}

/// As [`fit_andersen_gill`], optionally weighting every row's contribution
/// to the partial likelihood (`case_weights` aligned with `dataset.rows()`).
pub fn fit_andersen_gill_with(
    dataset: &LongitudinalDataset,
    terms: &[Term],
    case_weights: Option<&[f64]>,
    options: NewtonOptions,
) -> Result<VisitModelFit> {
    let resolved = resolve_all(terms, dataset.schema())?;
    let term_names: Vec<String> = terms.iter().map(Term::to_string).collect();
    let pl = PartialLikelihood::new(dataset, &resolved, case_weights)?;
    let p = pl.dim();

    if p > 0 {
        let info = -pl.evaluate(&DVector::zeros(p)).hessian;
        check_identifiable(&info, &term_names)?;
    }
    let newton = match newton_maximize(|g| pl.evaluate(g), DVector::zeros(p), options) {
        Err(Error::Divergence { .. }) => return Err(Error::MonotoneLikelihood),
        other => other?,
    };
    for j in 0..p {
        let sd = column_sd(&pl.v, j);
        if (newton.argmax[j] * sd).abs() > MONOTONE_LIMIT {
            return Err(Error::MonotoneLikelihood);
        }
    }
    if !newton.converged {
        log::warn!(
            "visit model did not converge after {} iterations (gradient {:.2e})",
            newton.iterations,
            newton.final_gradient_norm
        );
    }

    let gamma = newton.argmax.clone();
    let increments = pl.baseline_increments(&gamma);
    let times = pl.event_times();
    let intensity_exceedances = dataset
        .rows()
        .iter()
        .filter(|r| r.at_risk)
        .filter(|row| {
            let lo = times.partition_point(|&t| t <= row.t_start);
            let hi = times.partition_point(|&t| t <= row.t_stop);
            if lo >= hi {
                return false;
            }
            let lp: f64 = resolved.iter().zip(gamma.iter()).map(|(t, g)| g * t.eval(row)).sum();
            lp.exp() * increments[lo..hi].iter().sum::<f64>() > 1.0
        })
        .count();
    if intensity_exceedances > 0 {
        log::info!("{intensity_exceedances} intervals have fitted visit intensity above 1");
    }

    Ok(VisitModelFit {
        gamma,
        term_names,
        terms: terms.to_vec(),
        log_partial_likelihood: newton.objective_at_argmax,
        newton,
        intensity_exceedances,
    })
}

fn column_sd(v: &DMatrix<f64>, j: usize) -> f64 {
    let col = v.column(j);
    let n = col.len().max(1) as f64;
    let mean = col.sum() / n;
    (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// The information at γ = 0 is the sum over events of within-risk-set
/// covariances; a column that is constant within every risk set has a zero
/// row there.
fn check_identifiable(info: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = info.nrows();
    let scale = (0..p).map(|j| info[(j, j)].abs()).fold(0.0, f64::max);
    let degenerate: Vec<String> = (0..p)
        .filter(|&j| info[(j, j)] <= 1e-12 * scale.max(f64::MIN_POSITIVE))
        .map(|j| names[j].clone())
        .collect();
    if !degenerate.is_empty() || scale == 0.0 {
        return Err(Error::Singular {
            columns: if degenerate.is_empty() {
                names.to_vec()
            } else {
                degenerate
            },
            condition: f64::INFINITY,
        });
    }
    // Equilibrate, then look at the spectrum.
    let d: Vec<f64> = (0..p).map(|j| info[(j, j)].sqrt()).collect();
    let scaled = DMatrix::from_fn(p, p, |a, b| info[(a, b)] / (d[a] * d[b]));
    let eig = SymmetricEigen::new(scaled);
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("p > 0");
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if condition > crate::numerics::MAX_GRAM_CONDITION {
        let vec = eig.eigenvectors.column(imin);
        let columns = (0..p)
            .filter(|&j| vec[j].abs() > 0.1)
            .map(|j| names[j].clone())
            .collect();
        return Err(Error::Singular { columns, condition });
    }
    Ok(())
}

impl VisitModelFit {
    pub fn linear_predictor(&self, rows: &AnalysisRows) -> Result<Vec<f64>> {
        let resolved = resolve_all(&self.terms, rows.schema())?;
        Ok(rows
            .rows()
            .iter()
            .map(|row| {
                resolved
                    .iter()
                    .zip(self.gamma.iter())
                    .map(|(t, g)| g * t.eval(row))
                    .sum()
            })
            .collect())
    }
}

/// `exp(−γ̂ᵀ v)` for each analysis row.
pub fn iiv_weights(fit: &VisitModelFit, rows: &AnalysisRows) -> Result<Vec<f64>> {
    if let Some(i) = rows.rows().iter().position(|r| !r.at_risk) {
        return Err(Error::NotAtRisk { row: i + 1 });
    }
    let lp = fit.linear_predictor(rows)?;
    Ok(lp.into_iter().map(|x| (-x).exp()).collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use approx::assert_relative_eq;

    use super::*;
    use crate::data::{analysis_rows, PersonTimeRow, Schema};
    use crate::terms::linear_terms;

    fn row(id: &str, start: f64, stop: f64, event: bool, x: f64) -> PersonTimeRow {
        PersonTimeRow {
            subject_id: id.into(),
            t_start: start,
            t_stop: stop,
            event,
            at_risk: true,
            treatment: 0,
            outcome: event.then_some(1.0),
            covariates: vec![x],
        }
    }

    fn dataset(rows: Vec<PersonTimeRow>) -> LongitudinalDataset {
        LongitudinalDataset::new(Arc::new(Schema::new(["X"]).unwrap()), rows, None).unwrap()
    }

    #[test]
    fn mirrored_groups_give_zero() {
        let ds = dataset(vec![
            row("a", 0.0, 1.0, true, 1.0),
            row("a", 1.0, 2.0, false, 1.0),
            row("b", 0.0, 1.0, true, 0.0),
            row("b", 1.0, 2.0, false, 0.0),
            row("c", 0.0, 1.0, false, 1.0),
            row("c", 1.0, 2.0, true, 1.0),
            row("d", 0.0, 1.0, false, 0.0),
            row("d", 1.0, 2.0, true, 0.0),
        ]);
        let fit = fit_andersen_gill(&ds, &linear_terms(&["X"])).unwrap();
        assert!(fit.gamma[0].abs() < 1e-10);
    }

    #[test]
    fn single_event_matches_conditional_logit() {
        // Risk set {x = 0, 1, 2}, event at x = 2:
        // solve 2 = (e^g + 2e^{2g}) / (1 + e^g + e^{2g}).
        let ds = dataset(vec![
            row("a", 0.0, 1.0, false, 0.0),
            row("b", 0.0, 1.0, false, 1.0),
            row("c", 0.0, 1.0, true, 2.0),
            row("d", 0.0, 0.5, false, 5.0),
        ]);
        // Monotone: the event row has the largest covariate, so the likelihood
        // increases without bound.
        assert!(matches!(
            fit_andersen_gill(&ds, &linear_terms(&["X"])),
            Err(Error::MonotoneLikelihood)
        ));

        let ds = dataset(vec![
            row("a", 0.0, 1.0, false, 0.0),
            row("b", 0.0, 1.0, true, 1.0),
            row("c", 0.0, 1.0, false, 3.0),
        ]);
        let fit = fit_andersen_gill(&ds, &linear_terms(&["X"])).unwrap();
        let g = fit.gamma[0];
        let w = [1.0, g.exp(), (3.0 * g).exp()];
        let mean = (w[1] + 3.0 * w[2]) / (w[0] + w[1] + w[2]);
        assert_relative_eq!(mean, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn errors() {
        let ds = dataset(vec![row("a", 0.0, 1.0, false, 0.0), row("b", 0.0, 1.0, false, 1.0)]);
        assert!(matches!(
            fit_andersen_gill(&ds, &linear_terms(&["X"])),
            Err(Error::NoEvents)
        ));

        // X is constant within the only risk set.
        let ds = dataset(vec![row("a", 0.0, 1.0, true, 2.0), row("b", 0.0, 1.0, false, 2.0)]);
        assert!(matches!(
            fit_andersen_gill(&ds, &linear_terms(&["X"])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn weights_from_gamma() {
        let ds = dataset(vec![row("a", 0.0, 1.0, true, 2f64.ln()), row("b", 0.0, 1.0, true, 0.0)]);
        let rows = analysis_rows(&ds);
        let mut fit = VisitModelFit {
            gamma: DVector::from_element(1, 0.0),
            term_names: vec!["X".into()],
            terms: linear_terms(&["X"]),
            log_partial_likelihood: 0.0,
            newton: NewtonResult {
                argmax: DVector::zeros(1),
                objective_at_argmax: 0.0,
                iterations: 0,
                converged: true,
                final_gradient_norm: 0.0,
            },
            intensity_exceedances: 0,
        };
        assert_eq!(iiv_weights(&fit, &rows).unwrap(), vec![1.0, 1.0]);
        fit.gamma[0] = 1.0;
        let w = iiv_weights(&fit, &rows).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1], 1.0);

        let mut off = ds.rows().to_vec();
        off[0].at_risk = false;
        let rows = AnalysisRows::new(Arc::clone(ds.schema()), off).unwrap();
        assert!(matches!(iiv_weights(&fit, &rows), Err(Error::NotAtRisk { row: 1 })));
    }
}
