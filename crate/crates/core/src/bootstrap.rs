//! Two-stage clustered bootstrap: subjects are drawn with replacement, then
//! each drawn subject's outcome measurements are drawn with replacement from
//! its own measurements.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;

pub const DEFAULT_REPLICATES: usize = 500;

/// Failure share above which the bootstrap is abandoned.
const MAX_FAILURE_SHARE: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: usize,
    pub failed_replicates: usize,
    /// Treatment-free coefficients followed by blip coefficients.
    pub intervals: Vec<Interval>,
}

impl BootstrapResult {
    pub fn get(&self, name: &str) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.name == name)
    }
}

/// One bootstrap dataset. Every drawn subject keeps its full follow-up, so
/// the at-risk intervals and their timing are unchanged; each event row of
/// the subject takes the treatment, outcome and covariates of one of the
/// subject's event rows drawn with replacement. Drawn subjects are renamed
/// `"{k}#{original id}"`.
pub fn two_stage_resample(dataset: &LongitudinalDataset, rng: &mut impl Rng) -> LongitudinalDataset {
    let subjects = dataset.subjects();
    let n = subjects.len();
    let mut rows = Vec::with_capacity(dataset.rows().len());
    for k in 0..n {
        let span = &subjects[rng.random_range(0..n)];
        let own = &dataset.rows()[span.rows.clone()];
        let events: Vec<usize> = (0..own.len()).filter(|&i| own[i].event).collect();
        let id = format!("{k}#{}", span.id);
        for row in own {
            let mut new = row.clone();
            new.subject_id.clone_from(&id);
            if row.event {
                let donor = &own[events[rng.random_range(0..events.len())]];
                new.treatment = donor.treatment;
                new.outcome = donor.outcome;
                new.covariates.clone_from(&donor.covariates);
            }
            rows.push(new);
        }
    }
    LongitudinalDataset::new(Arc::clone(dataset.schema()), rows, Some(dataset.tau()))
        .expect("resampling preserves row validity and ordering")
}

fn coefficients(pipeline: &Pipeline, dataset: &LongitudinalDataset) -> Result<(Vec<String>, Vec<f64>)> {
    let fit = pipeline.fit(dataset)?.blip;
    Ok(fit.beta.into_iter().chain(fit.psi).unzip())
}

/// Percentile 95% intervals from `replicates` refits of the whole pipeline.
/// Replicate `b` draws from the ChaCha8 stream `b` under `seed`, so results
/// do not depend on scheduling.
pub fn bootstrap_ci(
    dataset: &LongitudinalDataset,
    pipeline: &Pipeline,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
    }
    if dataset.subjects().is_empty() {
        return Err(Error::Empty("dataset has no subjects".into()));
    }
    let (names, estimates) = coefficients(pipeline, dataset)?;

    let draws: Vec<Option<Vec<f64>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let sample = two_stage_resample(dataset, &mut rng);
            match coefficients(pipeline, &sample) {
                Ok((_, c)) => Some(c),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = replicates - ok.len();
    if failed as f64 > MAX_FAILURE_SHARE * replicates as f64 || ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed,
            total: replicates,
            reason: "bootstrap refits".into(),
        });
    }
    if failed > 0 {
        log::warn!("{failed} of {replicates} bootstrap replicates failed and were dropped");
    }

    let intervals = names
        .into_iter()
        .zip(estimates)
        .enumerate()
        .map(|(j, (name, estimate))| {
            let mut column: Vec<f64> = ok.iter().map(|c| c[j]).collect();
            column.sort_by(f64::total_cmp);
            let (lower, upper) = percentile_bounds(&column);
            Interval {
                name,
                estimate,
                lower,
                upper,
            }
        })
        .collect();
    Ok(BootstrapResult {
        replicates,
        failed_replicates: failed,
        intervals,
    })
}

/// 2.5% and 97.5% order statistics of sorted, non-empty data: positions
/// `⌈0.025 m⌉` and `⌈0.975 m⌉` (1-based).
pub fn percentile_bounds(sorted: &[f64]) -> (f64, f64) {
    let m = sorted.len();
    let pick = |q: f64| sorted[((q * m as f64).ceil() as usize).clamp(1, m) - 1];
    (pick(0.025), pick(0.975))
}
