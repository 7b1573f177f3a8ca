//! Doubly-weighted least squares for the treatment-free (β) and blip (ψ)
//! coefficients, and the decision rule the blip induces.
//!
//! The outcome mean is modelled as `βᵀx^β + A·ψᵀx^ψ`. Both coefficient
//! vectors come out of one weighted least squares fit on the stacked design
//! `[X^β, A·X^ψ]` over the rows where the outcome was observed; the weight of
//! a row is the product of its treatment and visit weights (either factor
//! may be absent).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{AnalysisRows, CovariateSource, Schema, TREATMENT};
use crate::error::{Error, Result};
use crate::numerics::solve_wls;
use crate::terms::{design_matrix, resolve_all, ResolvedTerm, Term};

pub const INTERCEPT: &str = "(Intercept)";

/// Term lists for the four working models. The treatment-free and blip
/// models carry implicit intercepts; the blip intercept is the main effect
/// of treatment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub treatment: Vec<Term>,
    #[serde(default)]
    pub visit: Vec<Term>,
    #[serde(default)]
    pub treatment_free: Vec<Term>,
    #[serde(default)]
    pub blip: Vec<Term>,
    /// Covariates on the treatment → outcome pathway; never allowed as
    /// tailoring variables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mediators: Vec<String>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    /// Structural checks that do not need a dataset.
    pub fn check(&self) -> Result<()> {
        if let Some(t) = self.blip.iter().find(|t| self.mediators.contains(&t.name)) {
            return Err(Error::InvalidSpec(format!(
                "blip term `{t}` is a mediator; tailoring variables must not be mediators"
            )));
        }
        for (model, terms) in [
            ("treatment", &self.treatment),
            ("visit", &self.visit),
            ("treatment_free", &self.treatment_free),
            ("blip", &self.blip),
        ] {
            for (i, t) in terms.iter().enumerate() {
                if terms[..i].contains(t) {
                    return Err(Error::InvalidSpec(format!("duplicate {model} term `{t}`")));
                }
            }
        }
        for (model, terms) in [
            ("treatment", &self.treatment),
            ("treatment_free", &self.treatment_free),
            ("blip", &self.blip),
        ] {
            if terms.iter().any(|t| t.name == TREATMENT) {
                return Err(Error::InvalidSpec(format!(
                    "the {model} model cannot use the treatment `{TREATMENT}` as a covariate"
                )));
            }
        }
        Ok(())
    }

    /// Checks that every name resolves against `schema`.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        self.check()?;
        for terms in [&self.treatment, &self.visit, &self.treatment_free, &self.blip] {
            resolve_all(terms, schema)?;
        }
        Ok(())
    }

    pub fn treatment_free_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.treatment_free.iter().map(Term::to_string))
            .collect()
    }

    pub fn blip_names(&self) -> Vec<String> {
        std::iter::once(TREATMENT.to_string())
            .chain(self.blip.iter().map(|t| format!("{TREATMENT}:{t}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// `[1, treatment-free terms]`.
    pub treatment_free: DMatrix<f64>,
    /// `A · [1, blip terms]`.
    pub blip: DMatrix<f64>,
    pub response: DVector<f64>,
}

impl Design {
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.response.len();
        let (pb, pp) = (self.treatment_free.ncols(), self.blip.ncols());
        let mut x = DMatrix::zeros(n, pb + pp);
        x.columns_mut(0, pb).copy_from(&self.treatment_free);
        x.columns_mut(pb, pp).copy_from(&self.blip);
        x
    }
}

pub fn build_design(rows: &AnalysisRows, spec: &ModelSpec) -> Result<Design> {
    if rows.is_empty() {
        return Err(Error::Empty("no analysis rows".into()));
    }
    if let Some(i) = rows.rows().iter().position(|r| !r.event) {
        return Err(Error::NonEventRow { row: i + 1 });
    }
    spec.check()?;
    let tf = resolve_all(&spec.treatment_free, rows.schema())?;
    let bl = resolve_all(&spec.blip, rows.schema())?;
    let treatment_free = design_matrix(rows.rows().iter(), &tf, true);
    let mut blip = design_matrix(rows.rows().iter(), &bl, true);
    for (i, row) in rows.rows().iter().enumerate() {
        if row.treatment == 0 {
            blip.row_mut(i).fill(0.0);
        }
    }
    let response = DVector::from_iterator(rows.len(), rows.outcomes());
    Ok(Design {
        treatment_free,
        blip,
        response,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl WeightSummary {
    pub fn of(weights: &[f64]) -> Self {
        WeightSummary {
            min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            mean: weights.iter().sum::<f64>() / weights.len() as f64,
            max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlipFit {
    pub beta: Vec<(String, f64)>,
    /// Blip coefficients; the first is the main effect of treatment.
    pub psi: Vec<(String, f64)>,
    pub spec: ModelSpec,
    pub weight_summary: WeightSummary,
}

pub fn fit_dwols(rows: &AnalysisRows, weights: &[f64], spec: &ModelSpec) -> Result<BlipFit> {
    if weights.len() != rows.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} analysis rows",
            weights.len(),
            rows.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Dimension(format!("weight {w} is not strictly positive")));
    }
    let design = build_design(rows, spec)?;
    let x = design.stacked();
    let mut names = spec.treatment_free_names();
    names.extend(spec.blip_names());
    let solution = solve_wls(&x, &design.response, weights).map_err(|e| match e {
        Error::Singular { columns, condition } => Error::Singular {
            columns: columns
                .iter()
                .map(|c| {
                    c.parse::<usize>()
                        .map(|j| names[j].clone())
                        .unwrap_or_else(|_| c.clone())
                })
                .collect(),
            condition,
        },
        other => other,
    })?;
    let pb = design.treatment_free.ncols();
    let named = |range: std::ops::Range<usize>| -> Vec<(String, f64)> {
        range.map(|j| (names[j].clone(), solution.coefficients[j])).collect()
    };
    Ok(BlipFit {
        beta: named(0..pb),
        psi: named(pb..names.len()),
        spec: spec.clone(),
        weight_summary: WeightSummary::of(weights),
    })
}

impl BlipFit {
    pub fn psi_values(&self) -> Vec<f64> {
        self.psi.iter().map(|(_, v)| *v).collect()
    }

    pub fn beta_values(&self) -> Vec<f64> {
        self.beta.iter().map(|(_, v)| *v).collect()
    }

    /// `ψ̂₀ + Σ ψ̂ⱼ qⱼ`.
    pub fn blip(&self, covariates: &(impl CovariateSource + ?Sized)) -> Result<f64> {
        let mut value = self.psi[0].1;
        for (term, (_, coef)) in self.spec.blip.iter().zip(&self.psi[1..]) {
            let x = covariates
                .value(&term.name)
                .ok_or_else(|| Error::UnresolvedName(term.name.clone()))?;
            value += coef * term.transform.apply(x);
        }
        Ok(value)
    }

    /// Treat (1) when the blip is non-negative, otherwise 0.
    pub fn decide(&self, covariates: &(impl CovariateSource + ?Sized)) -> Result<u8> {
        Ok(u8::from(self.blip(covariates)? >= 0.0))
    }

    /// The blip resolved against a schema, for evaluation in bulk.
    pub fn rule(&self, schema: &Schema) -> Result<LinearRule> {
        LinearRule::new(self.psi_values(), &self.spec.blip, schema)
    }

    /// Human-readable rule, e.g. `Treat with A=1 if -2.000 + 0.500*Q - 1.000*K1 > 0`.
    pub fn display_rule(&self) -> String {
        let mut expr = format!("{:.3}", self.psi[0].1);
        for (term, (_, coef)) in self.spec.blip.iter().zip(&self.psi[1..]) {
            let sign = if *coef < 0.0 { '-' } else { '+' };
            expr.push_str(&format!(" {sign} {:.3}*{term}", coef.abs()));
        }
        format!("Treat with {TREATMENT}=1 if {expr} > 0")
    }
}

/// A linear blip `c₀ + Σ cⱼ f(xⱼ)` over resolved columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRule {
    coefficients: Vec<f64>,
    terms: Vec<ResolvedTerm>,
}

impl LinearRule {
    pub fn new(coefficients: Vec<f64>, terms: &[Term], schema: &Schema) -> Result<Self> {
        if coefficients.len() != terms.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} blip terms plus intercept",
                coefficients.len(),
                terms.len()
            )));
        }
        Ok(LinearRule {
            coefficients,
            terms: resolve_all(terms, schema)?,
        })
    }

    #[inline]
    pub fn blip(&self, row: &crate::data::PersonTimeRow) -> f64 {
        self.coefficients[0]
            + self
                .terms
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(t, c)| c * t.eval(row))
                .sum::<f64>()
    }

    #[inline]
    pub fn treat(&self, row: &crate::data::PersonTimeRow) -> bool {
        self.blip(row) >= 0.0
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }
}
