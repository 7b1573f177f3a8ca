//! Model terms: a covariate (or the treatment) passed through a transform.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Column, PersonTimeRow, Schema};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Square,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Square => x * x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
}

impl Term {
    pub fn linear(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            transform: Transform::Identity,
        }
    }

    pub fn squared(name: impl Into<String>) -> Self {
        Term {
            name: name.into(),
            transform: Transform::Square,
        }
    }

    pub fn resolve(&self, schema: &Schema) -> Result<ResolvedTerm> {
        Ok(ResolvedTerm {
            column: schema.resolve(&self.name)?,
            transform: self.transform,
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transform {
            Transform::Identity => f.write_str(&self.name),
            Transform::Square => write!(f, "{}^2", self.name),
        }
    }
}

/// Shorthand for a list of linear terms.
pub fn linear_terms(names: &[&str]) -> Vec<Term> {
    names.iter().map(|n| Term::linear(*n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedTerm {
    pub column: Column,
    pub transform: Transform,
}

impl ResolvedTerm {
    #[inline]
    pub fn eval(&self, row: &PersonTimeRow) -> f64 {
        self.transform.apply(row.value(self.column))
    }
}

pub fn resolve_all(terms: &[Term], schema: &Schema) -> Result<Vec<ResolvedTerm>> {
    terms.iter().map(|t| t.resolve(schema)).collect()
}

/// Builds the `rows × (intercept + terms)` design matrix.
pub(crate) fn design_matrix<'a>(
    rows: impl ExactSizeIterator<Item = &'a PersonTimeRow>,
    terms: &[ResolvedTerm],
    intercept: bool,
) -> DMatrix<f64> {
    let offset = usize::from(intercept);
    let n = rows.len();
    let mut x = DMatrix::zeros(n, terms.len() + offset);
    for (i, row) in rows.enumerate() {
        if intercept {
            x[(i, 0)] = 1.0;
        }
        for (j, term) in terms.iter().enumerate() {
            x[(i, j + offset)] = term.eval(row);
        }
    }
    x
}
