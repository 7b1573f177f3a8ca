//! Counting-process longitudinal data.
//!
//! Each subject contributes one row per interval `(t_start, t_stop]` on which
//! its covariates and treatment are constant. `event` marks that the outcome
//! was measured at `t_stop`; `at_risk` marks that the subject was still under
//! observation during the interval. The outcome column is empty on non-event
//! rows so an unobserved outcome is never confused with an observed zero.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved name under which model terms refer to the treatment indicator.
pub const TREATMENT: &str = "A";

/// Ordered covariate names shared by every row of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

/// Where a model term reads its raw value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Treatment,
    Covariate(usize),
}

impl Schema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name == TREATMENT {
                return Err(Error::InvalidSpec(format!(
                    "covariate name `{TREATMENT}` is reserved for the treatment"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate covariate `{name}`")));
            }
        }
        Ok(Schema { names, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<Column> {
        if name == TREATMENT {
            return Ok(Column::Treatment);
        }
        self.position(name)
            .map(Column::Covariate)
            .ok_or_else(|| Error::UnresolvedName(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonTimeRow {
    pub subject_id: String,
    pub t_start: f64,
    pub t_stop: f64,
    /// dN(t_stop) = 1: the outcome was measured at the end of the interval.
    pub event: bool,
    /// ξ(t) = 1: not yet censored.
    pub at_risk: bool,
    pub treatment: u8,
    pub outcome: Option<f64>,
    /// Values aligned with the dataset [`Schema`].
    pub covariates: Vec<f64>,
}

impl PersonTimeRow {
    pub fn value(&self, column: Column) -> f64 {
        match column {
            Column::Treatment => f64::from(self.treatment),
            Column::Covariate(i) => self.covariates[i],
        }
    }

    fn check(&self, width: usize) -> std::result::Result<(), String> {
        if !(self.t_start.is_finite() && self.t_stop.is_finite()) {
            return Err("non-finite time".into());
        }
        if self.t_start < 0.0 {
            return Err(format!("tstart {} is negative", self.t_start));
        }
        if self.t_start >= self.t_stop {
            return Err(format!("tstart {} is not before tstop {}", self.t_start, self.t_stop));
        }
        if self.treatment > 1 {
            return Err(format!("treatment {} is not 0/1", self.treatment));
        }
        match (self.event, self.outcome) {
            (true, None) => return Err("event row with missing outcome".into()),
            (false, Some(_)) => return Err("outcome present on a non-event row".into()),
            (true, Some(y)) if !y.is_finite() => return Err("non-finite outcome".into()),
            _ => {}
        }
        if self.covariates.len() != width {
            return Err(format!(
                "{} covariate values for {} covariates",
                self.covariates.len(),
                width
            ));
        }
        if let Some(v) = self.covariates.iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite covariate value {v}"));
        }
        Ok(())
    }
}

/// Lookup of a covariate value by name; the blip and decision rule use it so
/// callers can pass maps, slices of pairs or dataset rows.
pub trait CovariateSource {
    fn value(&self, name: &str) -> Option<f64>;
}

impl CovariateSource for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateSource for std::collections::BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateSource for [(&str, f64)] {
    fn value(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> CovariateSource for [(&str, f64); N] {
    fn value(&self, name: &str) -> Option<f64> {
        self.as_slice().value(name)
    }
}

/// A row viewed through its schema.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub schema: &'a Schema,
    pub row: &'a PersonTimeRow,
}

impl CovariateSource for RowView<'_> {
    fn value(&self, name: &str) -> Option<f64> {
        self.schema.resolve(name).ok().map(|c| self.row.value(c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSpan {
    pub id: String,
    pub rows: Range<usize>,
    /// End of follow-up C_i.
    pub censoring: f64,
}

/// Validated, immutable collection of person-time rows sorted by
/// `(subject_id, t_start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    schema: Arc<Schema>,
    rows: Vec<PersonTimeRow>,
    tau: f64,
    subjects: Vec<SubjectSpan>,
    subject_index: HashMap<String, usize>,
}

impl LongitudinalDataset {
    /// Validates and sorts `rows`. Errors name the 1-based position of the
    /// offending row in the input. When `tau` is `None` it is taken as the
    /// largest `t_stop`.
    pub fn new(schema: Arc<Schema>, rows: Vec<PersonTimeRow>, tau: Option<f64>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            row.check(schema.len())
                .map_err(|message| Error::InvalidRow { row: i + 1, message })?;
        }
        let max_stop = rows.iter().map(|r| r.t_stop).fold(f64::NEG_INFINITY, f64::max);
        let tau = match tau {
            Some(tau) => {
                if let Some(i) = rows.iter().position(|r| r.t_stop > tau) {
                    return Err(Error::InvalidRow {
                        row: i + 1,
                        message: format!("tstop {} exceeds tau {tau}", rows[i].t_stop),
                    });
                }
                tau
            }
            None if rows.is_empty() => 0.0,
            None => max_stop,
        };

        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| {
            rows[a]
                .subject_id
                .cmp(&rows[b].subject_id)
                .then(rows[a].t_start.total_cmp(&rows[b].t_start))
        });
        for pair in order.windows(2) {
            let (prev, next) = (&rows[pair[0]], &rows[pair[1]]);
            if prev.subject_id == next.subject_id && next.t_start < prev.t_stop {
                return Err(Error::InvalidRow {
                    row: pair[1] + 1,
                    message: format!(
                        "interval ({}, {}] overlaps ({}, {}] of subject {}",
                        next.t_start, next.t_stop, prev.t_start, prev.t_stop, next.subject_id
                    ),
                });
            }
        }

        let mut slots: Vec<Option<PersonTimeRow>> = rows.into_iter().map(Some).collect();
        let rows: Vec<PersonTimeRow> = order
            .iter()
            .map(|&i| slots[i].take().expect("each row moved once"))
            .collect();

        let mut subjects: Vec<SubjectSpan> = Vec::new();
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || rows[i].subject_id != rows[start].subject_id {
                subjects.push(SubjectSpan {
                    id: rows[start].subject_id.clone(),
                    rows: start..i,
                    censoring: rows[i - 1].t_stop,
                });
                start = i;
            }
        }
        let subject_index = subjects.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        Ok(LongitudinalDataset {
            schema,
            rows,
            tau,
            subjects,
            subject_index,
        })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[PersonTimeRow] {
        &self.rows
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn subjects(&self) -> &[SubjectSpan] {
        &self.subjects
    }

    pub fn subject_rows(&self, id: &str) -> Option<&[PersonTimeRow]> {
        self.subject_index
            .get(id)
            .map(|&i| &self.rows[self.subjects[i].rows.clone()])
    }

    pub fn censoring_time(&self, id: &str) -> Option<f64> {
        self.subject_index.get(id).map(|&i| self.subjects[i].censoring)
    }

    pub fn view<'a>(&'a self, row: &'a PersonTimeRow) -> RowView<'a> {
        RowView {
            schema: &self.schema,
            row,
        }
    }

    pub fn event_count(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }

    pub fn into_rows(self) -> Vec<PersonTimeRow> {
        self.rows
    }
}

/// The rows at which the outcome was observed (dN = 1), in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRows {
    schema: Arc<Schema>,
    rows: Vec<PersonTimeRow>,
}

impl AnalysisRows {
    /// Wraps rows that are already known to be event rows.
    pub fn new(schema: Arc<Schema>, rows: Vec<PersonTimeRow>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| !r.event) {
            return Err(Error::NonEventRow { row: i + 1 });
        }
        Ok(AnalysisRows { schema, rows })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[PersonTimeRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn treatments(&self) -> impl Iterator<Item = u8> + '_ {
        self.rows.iter().map(|r| r.treatment)
    }

    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows
            .iter()
            .map(|r| r.outcome.expect("analysis rows carry outcomes"))
    }
}

pub fn analysis_rows(dataset: &LongitudinalDataset) -> AnalysisRows {
    AnalysisRows {
        schema: Arc::clone(&dataset.schema),
        rows: dataset.rows.iter().filter(|r| r.event).cloned().collect(),
    }
}

/// Column-name mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: String,
    pub t_start: String,
    pub t_stop: String,
    pub event: String,
    pub at_risk: String,
    pub treatment: String,
    pub outcome: String,
    /// Covariate columns to keep; `None` keeps every unmapped column in file
    /// order.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            t_start: "tstart".into(),
            t_stop: "tstop".into(),
            event: "event".into(),
            at_risk: "atrisk".into(),
            treatment: TREATMENT.into(),
            outcome: "Y".into(),
            covariates: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LongitudinalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, mapping: &CsvSchema) -> Result<LongitudinalDataset> {
    let (schema, rows) = read_csv_rows(reader, mapping)?;
    LongitudinalDataset::new(schema, rows, None)
}

/// Parses rows without the dataset-level checks, for callers that fill in
/// outcomes before validating.
pub fn read_csv_rows<R: Read>(reader: R, mapping: &CsvSchema) -> Result<(Arc<Schema>, Vec<PersonTimeRow>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id = find(&mapping.id)?;
    let t_start = find(&mapping.t_start)?;
    let t_stop = find(&mapping.t_stop)?;
    let event = find(&mapping.event)?;
    let at_risk = find(&mapping.at_risk)?;
    let treatment = find(&mapping.treatment)?;
    let outcome = find(&mapping.outcome)?;
    let fixed = [id, t_start, t_stop, event, at_risk, treatment, outcome];
    let covariate_names: Vec<String> = match &mapping.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !fixed.contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let covariate_cols = covariate_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let schema = Arc::new(Schema::new(covariate_names.iter().cloned())?);

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |col: usize| record.get(col).unwrap_or("");
        let bad = |col: usize, what: &str| Error::InvalidRow {
            row,
            message: format!("column `{}`: {what} `{}`", &headers[col], field(col)),
        };
        let real = |col: usize| -> Result<f64> {
            field(col)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(col, "cannot parse number"))
        };
        let flag = |col: usize| -> Result<bool> {
            match field(col) {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(col, "expected 0/1, got")),
            }
        };
        let outcome_field = field(outcome);
        let outcome_value = if outcome_field.is_empty() || outcome_field == "NA" {
            None
        } else {
            Some(real(outcome)?)
        };
        rows.push(PersonTimeRow {
            subject_id: field(id).to_string(),
            t_start: real(t_start)?,
            t_stop: real(t_stop)?,
            event: flag(event)?,
            at_risk: flag(at_risk)?,
            treatment: u8::from(flag(treatment)?),
            outcome: outcome_value,
            covariates: covariate_cols.iter().map(|&c| real(c)).collect::<Result<_>>()?,
        });
    }
    Ok((schema, rows))
}

pub fn write_csv(dataset: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, file)
}

/// Writes the canonical column layout: `id, tstart, tstop, event, atrisk, A,
/// Y`, then one column per covariate.
pub fn write_csv_to<W: Write>(dataset: &LongitudinalDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["id", "tstart", "tstop", "event", "atrisk", TREATMENT, "Y"];
    header.extend(dataset.schema.names().iter().map(String::as_str));
    out.write_record(&header)?;
    let flag = |b: bool| if b { "1" } else { "0" };
    for row in &dataset.rows {
        let mut record: Vec<String> = vec![
            row.subject_id.clone(),
            row.t_start.to_string(),
            row.t_stop.to_string(),
            flag(row.event).into(),
            flag(row.at_risk).into(),
            row.treatment.to_string(),
            row.outcome.map(|y| y.to_string()).unwrap_or_default(),
        ];
        record.extend(row.covariates.iter().map(f64::to_string));
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for PositivityThresholds {
    fn default() -> Self {
        PositivityThresholds {
            lower: 0.01,
            upper: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub min: f64,
    pub max: f64,
    pub thresholds: PositivityThresholds,
    pub below_lower: usize,
    pub above_upper: usize,
    pub n_treated: usize,
    pub n_control: usize,
}

impl PositivityReport {
    pub fn flagged(&self) -> usize {
        self.below_lower + self.above_upper
    }
}

pub fn check_positivity(
    rows: &AnalysisRows,
    propensities: &[f64],
    thresholds: PositivityThresholds,
) -> Result<PositivityReport> {
    if rows.len() != propensities.len() {
        return Err(Error::Dimension(format!(
            "{} propensities for {} analysis rows",
            propensities.len(),
            rows.len()
        )));
    }
    let n_treated = rows.treatments().filter(|&a| a == 1).count();
    Ok(PositivityReport {
        min: propensities.iter().copied().fold(f64::INFINITY, f64::min),
        max: propensities.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        thresholds,
        below_lower: propensities.iter().filter(|&&p| p < thresholds.lower).count(),
        above_upper: propensities.iter().filter(|&&p| p > thresholds.upper).count(),
        n_treated,
        n_control: rows.len() - n_treated,
    })
}
