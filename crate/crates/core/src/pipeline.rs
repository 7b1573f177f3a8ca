//! End-to-end estimation: nuisance models, weights, then dWOLS.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{analysis_rows, AnalysisRows, LongitudinalDataset};
use crate::dwols::{fit_dwols, BlipFit, ModelSpec};
use crate::error::{Error, Result};
use crate::propensity::{fit_logistic, ipt_weights, PropensityFit, Truncation};
use crate::visits::{fit_andersen_gill, iiv_weights, VisitModelFit};

/// Which weight factors enter the least squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    None,
    Treatment,
    Visit,
    Both,
}

impl Weighting {
    pub fn uses_treatment_model(self) -> bool {
        matches!(self, Weighting::Treatment | Weighting::Both)
    }

    pub fn uses_visit_model(self) -> bool {
        matches!(self, Weighting::Visit | Weighting::Both)
    }
}

/// Named estimators. `DW1`–`DW4` are doubly weighted and differ only in
/// their working models; `OLS` is unweighted, `IPT` uses only the treatment
/// weight and `IIV` only the visit weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    DW1,
    DW2,
    DW3,
    DW4,
    OLS,
    IPT,
    IIV,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::DW1,
        Variant::DW2,
        Variant::DW3,
        Variant::DW4,
        Variant::OLS,
        Variant::IPT,
        Variant::IIV,
    ];

    /// The six estimators compared in the simulation study.
    pub const STUDY: [Variant; 6] = [
        Variant::DW1,
        Variant::DW2,
        Variant::DW3,
        Variant::DW4,
        Variant::OLS,
        Variant::IPT,
    ];

    pub fn weighting(self) -> Weighting {
        match self {
            Variant::DW1 | Variant::DW2 | Variant::DW3 | Variant::DW4 => Weighting::Both,
            Variant::OLS => Weighting::None,
            Variant::IPT => Weighting::Treatment,
            Variant::IIV => Weighting::Visit,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DW1 => "DW1",
            Variant::DW2 => "DW2",
            Variant::DW3 => "DW3",
            Variant::DW4 => "DW4",
            Variant::OLS => "OLS",
            Variant::IPT => "IPT",
            Variant::IIV => "IIV",
        }
    }

    /// Parses a comma-separated list such as `DW1,OLS`.
    pub fn parse_list(text: &str) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = Vec::new();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let v: Variant = part.parse()?;
            if !out.contains(&v) {
                out.push(v);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("empty variant list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown estimator variant `{s}` (expected one of DW1, DW2, DW3, DW4, OLS, IPT, IIV)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub weighting: Weighting,
    pub spec: ModelSpec,
    pub truncation: Option<Truncation>,
}

#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub blip: BlipFit,
    pub propensity: Option<PropensityFit>,
    /// Fitted P(A = 1 | K) per analysis row, when a treatment model was fit.
    pub propensities: Option<Vec<f64>>,
    pub visit: Option<VisitModelFit>,
    /// Combined weight per analysis row.
    pub weights: Vec<f64>,
    pub rows: AnalysisRows,
}

impl Pipeline {
    pub fn new(weighting: Weighting, spec: ModelSpec) -> Self {
        Pipeline {
            weighting,
            spec,
            truncation: None,
        }
    }

    pub fn fit(&self, dataset: &LongitudinalDataset) -> Result<PipelineFit> {
        self.spec.validate(dataset.schema())?;
        let rows = analysis_rows(dataset);
        if rows.is_empty() {
            return Err(Error::Empty("dataset has no observed outcomes".into()));
        }
        let mut weights = vec![1.0; rows.len()];

        let (propensity, propensities) = if self.weighting.uses_treatment_model() {
            let fit = fit_logistic(&rows, &self.spec.treatment)?;
            let mut w = ipt_weights(&fit, &rows)?;
            if let Some(t) = self.truncation {
                t.apply(&mut w);
            }
            weights.iter_mut().zip(&w).for_each(|(a, b)| *a *= b);
            let probs = fit.probabilities(&rows)?;
            (Some(fit), Some(probs))
        } else {
            (None, None)
        };

        let visit = if self.weighting.uses_visit_model() {
            let fit = fit_andersen_gill(dataset, &self.spec.visit)?;
            let w = iiv_weights(&fit, &rows)?;
            weights.iter_mut().zip(&w).for_each(|(a, b)| *a *= b);
            Some(fit)
        } else {
            None
        };

        let blip = fit_dwols(&rows, &weights, &self.spec)?;
        Ok(PipelineFit {
            blip,
            propensity,
            propensities,
            visit,
            weights,
            rows,
        })
    }
}
