//! Utility score for change in body mass index relative to baseline.
//!
//! `U = 100 − 5·I[detrimental category change] + I[gain gate]·Δ% − I[loss gate]·Δ%`
//! where `Δ% = 100 (bmi_t − bmi_0) / bmi_0`. A category change is detrimental
//! when the new category differs from the old one, is not normal weight, and
//! is not the move from obese to overweight. The gain gate opens for an
//! underweight baseline, or a normal baseline with `bmi_t < 20`; the loss
//! gate for a baseline of 25 or more, or a normal baseline with
//! `bmi_t > 23.5`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, PersonTimeRow, Schema};
use crate::error::{Error, Result};

/// BMI values outside this closed range are treated as recording errors.
pub const VALID_RANGE: (f64, f64) = (15.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BmiCategory {
    Underweight,
    Normal,
    Overweight,
    Obese,
}

impl BmiCategory {
    pub fn of(bmi: f64) -> Self {
        if bmi < 18.5 {
            BmiCategory::Underweight
        } else if bmi < 25.0 {
            BmiCategory::Normal
        } else if bmi < 30.0 {
            BmiCategory::Overweight
        } else {
            BmiCategory::Obese
        }
    }
}

pub fn detrimental_change(bmi0: f64, bmi_t: f64) -> bool {
    use BmiCategory::*;
    let (from, to) = (BmiCategory::of(bmi0), BmiCategory::of(bmi_t));
    from != to && to != Normal && !(from == Obese && to == Overweight)
}

/// `None` when either value lies outside [`VALID_RANGE`] or is not finite.
pub fn bmi_utility(bmi0: f64, bmi_t: f64) -> Option<f64> {
    let valid = |b: f64| (VALID_RANGE.0..=VALID_RANGE.1).contains(&b);
    if !valid(bmi0) || !valid(bmi_t) {
        return None;
    }
    let pct = 100.0 * (bmi_t - bmi0) / bmi0;
    let normal = BmiCategory::of(bmi0) == BmiCategory::Normal;
    let gain = bmi0 < 18.5 || (normal && bmi_t < 20.0);
    let loss = bmi0 >= 25.0 || (normal && bmi_t > 23.5);
    let mut u = 100.0;
    if detrimental_change(bmi0, bmi_t) {
        u -= 5.0;
    }
    if gain {
        u += pct;
    }
    if loss {
        u -= pct;
    }
    Some(u)
}

/// Replaces each event row's outcome by the utility of the covariates
/// `baseline` and `current`. Event rows whose utility is missing are turned
/// into non-event rows (they stay in the visit model's risk sets). Returns
/// the new dataset and the number of rows dropped from the analysis.
pub fn apply_bmi_utility(
    dataset: &LongitudinalDataset,
    baseline: &str,
    current: &str,
) -> Result<(LongitudinalDataset, usize)> {
    score_rows(
        Arc::clone(dataset.schema()),
        dataset.rows().to_vec(),
        Some(dataset.tau()),
        baseline,
        current,
    )
}

/// Like [`apply_bmi_utility`] for rows straight from a file, whose event rows
/// may not carry an outcome yet.
pub fn score_bmi_rows(
    schema: Arc<Schema>,
    rows: Vec<PersonTimeRow>,
    baseline: &str,
    current: &str,
) -> Result<(LongitudinalDataset, usize)> {
    score_rows(schema, rows, None, baseline, current)
}

fn score_rows(
    schema: Arc<Schema>,
    mut rows: Vec<PersonTimeRow>,
    tau: Option<f64>,
    baseline: &str,
    current: &str,
) -> Result<(LongitudinalDataset, usize)> {
    let col = |name: &str| schema.position(name).ok_or_else(|| Error::MissingColumn(name.into()));
    let (b0, bt) = (col(baseline)?, col(current)?);
    let mut dropped = 0;
    for row in rows.iter_mut().filter(|r| r.event) {
        match bmi_utility(row.covariates[b0], row.covariates[bt]) {
            Some(u) => row.outcome = Some(u),
            None => {
                row.event = false;
                row.outcome = None;
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::info!("{dropped} measurements with BMI outside [15, 50] dropped from the analysis");
    }
    let out = LongitudinalDataset::new(schema, rows, tau)?;
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(bmi_utility(22.0, 22.0), Some(100.0));
        assert_abs_diff_eq!(bmi_utility(30.0, 28.0).unwrap(), 106.67, epsilon = 0.005);
        assert_abs_diff_eq!(bmi_utility(18.0, 19.0).unwrap(), 105.56, epsilon = 0.005);
    }

    #[test]
    fn detrimental_moves() {
        assert!(detrimental_change(24.0, 26.0));
        assert!(detrimental_change(29.0, 31.0));
        assert!(detrimental_change(19.0, 18.0));
        assert!(!detrimental_change(31.0, 29.0));
        assert!(!detrimental_change(27.0, 24.0));
        assert!(!detrimental_change(26.0, 27.0));
        // overweight baseline gaining into obese: 100 − 5 − 10
        assert_abs_diff_eq!(bmi_utility(28.0, 30.8).unwrap(), 85.0, epsilon = 1e-9);
    }

    #[test]
    fn normal_band_and_range() {
        assert_eq!(bmi_utility(21.0, 22.0), Some(100.0));
        assert_abs_diff_eq!(bmi_utility(21.0, 19.95).unwrap(), 95.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bmi_utility(20.0, 24.0).unwrap(), 80.0, epsilon = 1e-9);
        assert_eq!(bmi_utility(14.9, 20.0), None);
        assert_eq!(bmi_utility(20.0, 50.1), None);
        assert_eq!(bmi_utility(f64::NAN, 20.0), None);
        assert!(bmi_utility(15.0, 50.0).is_some());
    }
}
