//! Monte Carlo study of the estimators under covariate-driven visit times.
//!
//! Each subject has baseline confounders `K1 ~ N(1, 1)`, `K2 ~ Bernoulli(0.55)`
//! and `K3 ~ N(0, 1)` and a subject-level random effect `φ ~ N(0, 0.04)`. On
//! every grid step the treatment, mediator `Z` and tailoring variable `Q` are
//! redrawn:
//!
//! ```text
//! A ~ Bernoulli(expit(0.5 + 0.55 K1 − 0.2 K2 − K3))
//! Z | A=1 ~ N(2, 1),  Z | A=0 ~ N(4, 2)          (second argument: variance)
//! Q ~ Bernoulli(0.5)
//! Y = √(t/100) − 2A + 2.5 (Z − E[Z|A]) + 0.4 K1 + 0.05 K2 − 0.6 K3
//!     + 0.5 A·Q − A·K1 + ε,   ε ~ N(φ, 0.01)
//! ```
//!
//! and the outcome is observed on that step with probability
//! `min(1, base_rate · exp(γ₁A + γ₂Z + γ₃K2 + γ₄K3))`.
//!
//! Random streams are ChaCha8 keyed by the root seed with one stream per
//! replicate, so serial and parallel runs produce identical numbers.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, PersonTimeRow, Schema};
use crate::dwols::{LinearRule, ModelSpec};
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, Variant};
use crate::propensity::{expit, quantile_sorted};
use crate::terms::{linear_terms, Term};

/// Covariate columns of simulated datasets, in order.
pub const COVARIATES: [&str; 5] = ["K1", "K2", "K3", "Z", "Q"];
const K1: usize = 0;
const K2: usize = 1;
const K3: usize = 2;
const Z: usize = 3;
const Q: usize = 4;

/// Blip coefficients of the generating model: intercept, Q, K1.
pub const TRUE_PSI: BlipCoefficients = BlipCoefficients {
    intercept: -2.0,
    q: 0.5,
    k1: -1.0,
};

const Z_MEAN: [f64; 2] = [4.0, 2.0];
const Z_SD: [f64; 2] = [std::f64::consts::SQRT_2, 1.0];
const PHI_SD: f64 = 0.2;
const EPS_SD: f64 = 0.1;

/// Failure share above which a scenario run is aborted.
const MAX_FAILURE_SHARE: f64 = 0.10;

pub fn true_blip(q: f64, k1: f64) -> f64 {
    TRUE_PSI.blip(q, k1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlipCoefficients {
    pub intercept: f64,
    pub q: f64,
    pub k1: f64,
}

impl BlipCoefficients {
    #[inline]
    pub fn blip(&self, q: f64, k1: f64) -> f64 {
        self.intercept + self.q * q + self.k1 * k1
    }

    /// From a fitted ψ ordered as the simulation blip terms `[A, A:Q, A:K1]`.
    pub fn from_psi(psi: &[f64]) -> Self {
        BlipCoefficients {
            intercept: psi[0],
            q: psi[1],
            k1: psi[2],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        BlipCoefficients {
            intercept: c * self.intercept,
            q: c * self.q,
            k1: c * self.k1,
        }
    }

    pub fn rule(&self) -> LinearRule {
        LinearRule::new(
            vec![self.intercept, self.q, self.k1],
            &blip_terms(),
            &simulation_schema(),
        )
        .expect("simulation schema has Q and K1")
    }
}

fn blip_terms() -> Vec<Term> {
    linear_terms(&["Q", "K1"])
}

pub fn simulation_schema() -> Schema {
    Schema::new(COVARIATES).expect("fixed names")
}

fn default_base_rate() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    0.01
}
fn default_tau() -> f64 {
    1.0
}
fn default_variants() -> Vec<Variant> {
    Variant::STUDY.to_vec()
}
fn default_value_population() -> usize {
    25_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Label carried into the metrics output.
    #[serde(default)]
    pub scenario: Option<u32>,
    /// Visit-intensity coefficients on A, Z, K2, K3.
    pub gamma: [f64; 4],
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    pub n: usize,
    pub replications: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Size of the fresh population the value of each fitted rule is
    /// estimated in; 0 skips the value computation.
    #[serde(default = "default_value_population")]
    pub value_population: usize,
}

impl ScenarioConfig {
    /// The four observation-process scenarios of the study.
    pub fn preset(scenario: u32) -> Result<Self> {
        let gamma = match scenario {
            1 => [-2.0, -0.3, 0.2, -1.2],
            2 => [0.3, -0.6, -0.4, -0.3],
            3 => [0.4, -0.8, 1.0, 0.6],
            4 => [0.0, 0.0, 0.0, 0.0],
            other => return Err(Error::InvalidConfig(format!("unknown scenario {other} (expected 1-4)"))),
        };
        Ok(ScenarioConfig {
            scenario: Some(scenario),
            gamma,
            base_rate: default_base_rate(),
            n: 500,
            replications: 1000,
            dt: default_dt(),
            tau: default_tau(),
            seed: 0,
            variants: default_variants(),
            value_population: default_value_population(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.tau > 0.0) {
            return bad(format!("dt {} and tau {} must be positive", self.dt, self.tau));
        }
        let steps = self.tau / self.dt;
        if (steps - steps.round()).abs() * self.dt > 1e-9 || steps.round() < 1.0 {
            return bad(format!("dt {} does not divide tau {}", self.dt, self.tau));
        }
        if self.n == 0 || self.replications == 0 {
            return bad("n and replications must be at least 1".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return bad(format!("base rate {} must be positive", self.base_rate));
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return bad("gamma must be finite".into());
        }
        if self.variants.is_empty() {
            return bad("no estimator variants requested".into());
        }
        Ok(())
    }
}

/// The working models each variant uses in the simulation study.
pub fn variant_spec(variant: Variant) -> ModelSpec {
    let confounders = linear_terms(&["K1", "K2", "K3"]);
    let full_visit = linear_terms(&["A", "Z", "K2", "K3"]);
    let (treatment, visit, treatment_free) = match variant {
        Variant::DW1 => (confounders.clone(), full_visit, confounders.clone()),
        Variant::DW2 => (
            confounders.clone(),
            linear_terms(&["A", "Z"]),
            linear_terms(&["K1", "K3"]),
        ),
        Variant::DW3 => (
            vec![Term::squared("K1"), Term::linear("K2"), Term::squared("K3")],
            linear_terms(&["A", "Z"]),
            confounders.clone(),
        ),
        Variant::DW4 => (confounders.clone(), linear_terms(&["A", "K2"]), confounders.clone()),
        Variant::OLS => (vec![], vec![], confounders.clone()),
        Variant::IPT => (confounders.clone(), vec![], confounders.clone()),
        Variant::IIV => (vec![], full_visit, confounders.clone()),
    };
    ModelSpec {
        treatment,
        visit,
        treatment_free,
        blip: blip_terms(),
        mediators: vec!["Z".into()],
    }
}

pub fn variant_pipeline(variant: Variant) -> Pipeline {
    Pipeline::new(variant.weighting(), variant_spec(variant))
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

#[inline]
fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn alpha(t: f64) -> f64 {
    (t / 100.0).sqrt()
}

fn propensity(k1: f64, k2: f64, k3: f64) -> f64 {
    expit(0.5 + 0.55 * k1 - 0.2 * k2 - k3)
}

/// Outcome mean apart from the mediator deviation and noise.
#[inline]
fn outcome_mean(t: f64, a: f64, q: f64, k: [f64; 3]) -> f64 {
    alpha(t) - 2.0 * a + 0.4 * k[0] + 0.05 * k[1] - 0.6 * k[2] + 0.5 * a * q - a * k[0]
}

/// A simulated cohort plus the number of visit probabilities clamped at 1.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dataset: LongitudinalDataset,
    pub clamped: usize,
}

pub fn simulate_cohort(config: &ScenarioConfig, replicate: u64) -> Result<LongitudinalDataset> {
    Ok(simulate_cohort_detailed(config, replicate)?.dataset)
}

pub fn simulate_cohort_detailed(config: &ScenarioConfig, replicate: u64) -> Result<Cohort> {
    config.validate()?;
    let mut rng = replicate_rng(config.seed, 2 * replicate);
    let steps = config.steps();
    let width = config.n.to_string().len().max(4);
    let mut rows = Vec::with_capacity(config.n * steps);
    let mut clamped = 0;
    let g = config.gamma;
    for i in 0..config.n {
        let id = format!("{:0width$}", i + 1);
        let k1 = normal(&mut rng, 1.0, 1.0);
        let k2 = f64::from(u8::from(bernoulli(&mut rng, 0.55)));
        let k3 = normal(&mut rng, 0.0, 1.0);
        let phi = normal(&mut rng, 0.0, PHI_SD);
        let p_a = propensity(k1, k2, k3);
        for step in 1..=steps {
            let t_start = config.tau * (step - 1) as f64 / steps as f64;
            let t_stop = config.tau * step as f64 / steps as f64;
            let a = usize::from(bernoulli(&mut rng, p_a));
            let z_dev = normal(&mut rng, 0.0, Z_SD[a]);
            let z = Z_MEAN[a] + z_dev;
            let q = f64::from(u8::from(bernoulli(&mut rng, 0.5)));
            let eps = normal(&mut rng, phi, EPS_SD);
            let af = a as f64;
            let y = outcome_mean(t_stop, af, q, [k1, k2, k3]) + 2.5 * z_dev + eps;
            let mut p_visit = config.base_rate * (g[0] * af + g[1] * z + g[2] * k2 + g[3] * k3).exp();
            if p_visit > 1.0 {
                p_visit = 1.0;
                clamped += 1;
            }
            let event = bernoulli(&mut rng, p_visit);
            rows.push(PersonTimeRow {
                subject_id: id.clone(),
                t_start,
                t_stop,
                event,
                at_risk: true,
                treatment: a as u8,
                outcome: event.then_some(y),
                covariates: vec![k1, k2, k3, z, q],
            });
        }
    }
    if clamped > 0 {
        log::debug!("replicate {replicate}: {clamped} visit probabilities clamped at 1");
    }
    let dataset = LongitudinalDataset::new(Arc::new(simulation_schema()), rows, Some(config.tau))?;
    Ok(Cohort { dataset, clamped })
}

/// Error accumulator for one replication's blip estimate over its
/// evaluation points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlipErrors {
    pub points: usize,
    pub sum: f64,
    pub sum_sq: f64,
    pub sum_abs: f64,
    pub disagreements: usize,
}

impl BlipErrors {
    /// Errors `true − estimated` blip at `(q, k1)` points.
    pub fn of(psi: &BlipCoefficients, points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut acc = BlipErrors::default();
        for (q, k1) in points {
            let truth = true_blip(q, k1);
            let est = psi.blip(q, k1);
            let e = truth - est;
            acc.points += 1;
            acc.sum += e;
            acc.sum_sq += e * e;
            acc.sum_abs += e.abs();
            if (truth >= 0.0) != (est >= 0.0) {
                acc.disagreements += 1;
            }
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.points as f64
    }

    pub fn mse(&self) -> f64 {
        self.sum_sq / self.points as f64
    }

    pub fn mean_abs(&self) -> f64 {
        self.sum_abs / self.points as f64
    }
}

/// Blip MSE: the mean over replications of each replication's mean squared
/// error at its own evaluation points.
pub fn mse_blip(psi_hats: &[BlipCoefficients], eval_points: &[Vec<(f64, f64)>]) -> Result<f64> {
    let errs = replication_errors(psi_hats, eval_points)?;
    Ok(errs.iter().map(BlipErrors::mse).sum::<f64>() / errs.len() as f64)
}

/// Fraction of (replication, point) pairs whose estimated decision differs
/// from the optimal one.
pub fn error_rate(psi_hats: &[BlipCoefficients], eval_points: &[Vec<(f64, f64)>]) -> Result<f64> {
    let errs = replication_errors(psi_hats, eval_points)?;
    let wrong: usize = errs.iter().map(|e| e.disagreements).sum();
    let total: usize = errs.iter().map(|e| e.points).sum();
    Ok(wrong as f64 / total as f64)
}

fn replication_errors(psi_hats: &[BlipCoefficients], eval_points: &[Vec<(f64, f64)>]) -> Result<Vec<BlipErrors>> {
    if psi_hats.len() != eval_points.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} evaluation sets",
            psi_hats.len(),
            eval_points.len()
        )));
    }
    if psi_hats.is_empty() || eval_points.iter().any(Vec::is_empty) {
        return Err(Error::Empty("blip evaluation points".into()));
    }
    Ok(psi_hats
        .iter()
        .zip(eval_points)
        .map(|(psi, pts)| BlipErrors::of(psi, pts.iter().copied()))
        .collect())
}

/// Mean outcome achieved by each rule in a fresh population of `n_eval`
/// subjects followed over the whole grid, with treatment assigned by the
/// rule at every grid point. All rules see the same draws. The extra last
/// entry is the value under the observational treatment mechanism.
pub fn value_functions(rules: &[LinearRule], n_eval: usize, config: &ScenarioConfig, stream: u64) -> Vec<f64> {
    let mut rng = replicate_rng(config.seed, stream);
    let steps = config.steps();
    let mut totals = vec![0.0; rules.len() + 1];
    let mut scratch = PersonTimeRow {
        subject_id: String::new(),
        t_start: 0.0,
        t_stop: 0.0,
        event: false,
        at_risk: true,
        treatment: 0,
        outcome: None,
        covariates: vec![0.0; COVARIATES.len()],
    };
    // The rule may not look at the mediator, which is drawn after treatment.
    scratch.covariates[Z] = f64::NAN;
    for _ in 0..n_eval {
        let k1 = normal(&mut rng, 1.0, 1.0);
        let k2 = f64::from(u8::from(bernoulli(&mut rng, 0.55)));
        let k3 = normal(&mut rng, 0.0, 1.0);
        let phi = normal(&mut rng, 0.0, PHI_SD);
        let p_a = propensity(k1, k2, k3);
        scratch.covariates[K1] = k1;
        scratch.covariates[K2] = k2;
        scratch.covariates[K3] = k3;
        for step in 1..=steps {
            let t = config.tau * step as f64 / steps as f64;
            let q = f64::from(u8::from(bernoulli(&mut rng, 0.5)));
            let u: f64 = rng.sample(StandardNormal);
            let eps = normal(&mut rng, phi, EPS_SD);
            let observed = usize::from(bernoulli(&mut rng, p_a));
            scratch.covariates[Q] = q;
            let y = |a: usize| outcome_mean(t, a as f64, q, [k1, k2, k3]) + 2.5 * Z_SD[a] * u + eps;
            for (total, rule) in totals.iter_mut().zip(rules) {
                *total += y(usize::from(rule.treat(&scratch)));
            }
            totals[rules.len()] += y(observed);
        }
    }
    let count = (n_eval * steps) as f64;
    totals.into_iter().map(|s| s / count).collect()
}

pub fn value_function(rule: &LinearRule, n_eval: usize, config: &ScenarioConfig, stream: u64) -> f64 {
    value_functions(std::slice::from_ref(rule), n_eval, config, stream)[0]
}

/// How replications are scheduled. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: Variant,
    /// Replications whose fit succeeded and enter the metrics.
    pub replications: usize,
    pub failures: usize,
    pub mse_blip: f64,
    /// Squared mean and variance of the replication-level mean blip error.
    pub mse_bias_sq: f64,
    pub mse_variance: f64,
    pub error_rate: f64,
    /// Mean over replications of the mean absolute blip error.
    pub blip_abs_error: f64,
    pub mean_psi: BlipCoefficients,
    /// |mean ψ̂ − ψ| for the intercept, K1 and Q coefficients.
    pub abs_bias: [f64; 3],
    /// Mean value of the fitted rules; NaN when values were not computed.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub config: ScenarioConfig,
    pub variants: Vec<VariantMetrics>,
    pub events_per_subject: EventSummary,
    pub value_true_rule: f64,
    pub value_observed_treatment: f64,
    pub clamped_draws: usize,
}

impl SimMetrics {
    pub fn variant(&self, v: Variant) -> Option<&VariantMetrics> {
        self.variants.iter().find(|m| m.variant == v)
    }
}

struct ReplicationResult {
    fits: Vec<Option<(BlipCoefficients, BlipErrors)>>,
    values: Vec<f64>,
    value_true: f64,
    value_observed: f64,
    event_counts: Vec<u32>,
    clamped: usize,
}

fn run_replication(config: &ScenarioConfig, replicate: u64) -> Result<ReplicationResult> {
    let cohort = simulate_cohort_detailed(config, replicate)?;
    let ds = &cohort.dataset;
    let event_counts = ds
        .subjects()
        .iter()
        .map(|s| ds.rows()[s.rows.clone()].iter().filter(|r| r.event).count() as u32)
        .collect();
    let points: Vec<(f64, f64)> = ds
        .rows()
        .iter()
        .filter(|r| r.event)
        .map(|r| (r.covariates[Q], r.covariates[K1]))
        .collect();

    let fits: Vec<Option<(BlipCoefficients, BlipErrors)>> = config
        .variants
        .iter()
        .map(|&v| match variant_pipeline(v).fit(ds) {
            Ok(fit) => {
                let psi = BlipCoefficients::from_psi(&fit.blip.psi_values());
                Some((psi, BlipErrors::of(&psi, points.iter().copied())))
            }
            Err(e) => {
                log::debug!("replicate {replicate}, {v}: {e}");
                None
            }
        })
        .collect();

    let (values, value_true, value_observed) = if config.value_population > 0 {
        let mut rules: Vec<LinearRule> = fits.iter().map(|f| f.map_or(TRUE_PSI, |(psi, _)| psi).rule()).collect();
        rules.push(TRUE_PSI.rule());
        let v = value_functions(&rules, config.value_population, config, 2 * replicate + 1);
        let k = fits.len();
        (v[..k].to_vec(), v[k], v[k + 1])
    } else {
        (vec![f64::NAN; fits.len()], f64::NAN, f64::NAN)
    };

    Ok(ReplicationResult {
        fits,
        values,
        value_true,
        value_observed,
        event_counts,
        clamped: cohort.clamped,
    })
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimMetrics> {
    run_scenario_with(config, Execution::default())
}

pub fn run_scenario_with(config: &ScenarioConfig, execution: Execution) -> Result<SimMetrics> {
    config.validate()?;
    let reps = 0..config.replications as u64;
    let results: Vec<ReplicationResult> = match execution {
        Execution::Serial => reps.map(|r| run_replication(config, r)).collect::<Result<_>>()?,
        Execution::Parallel => reps
            .into_par_iter()
            .map(|r| run_replication(config, r))
            .collect::<Result<_>>()?,
    };
    aggregate(config, &results)
}

fn aggregate(config: &ScenarioConfig, results: &[ReplicationResult]) -> Result<SimMetrics> {
    let m = results.len();
    let mut variants = Vec::with_capacity(config.variants.len());
    for (k, &variant) in config.variants.iter().enumerate() {
        let ok: Vec<(usize, &(BlipCoefficients, BlipErrors))> = results
            .iter()
            .enumerate()
            .filter_map(|(r, res)| res.fits[k].as_ref().map(|f| (r, f)))
            .collect();
        let failures = m - ok.len();
        if failures as f64 > MAX_FAILURE_SHARE * m as f64 || ok.is_empty() {
            return Err(Error::TooManyFailures {
                failed: failures,
                total: m,
                reason: format!("{variant} fits"),
            });
        }
        if failures > 0 {
            log::warn!("{variant}: {failures} of {m} replications failed and were skipped");
        }
        let used = ok.len() as f64;
        let mean_of =
            |f: &dyn Fn(&(BlipCoefficients, BlipErrors)) -> f64| ok.iter().map(|(_, x)| f(x)).sum::<f64>() / used;
        let mse_blip = mean_of(&|(_, e)| e.mse());
        let mean_err = mean_of(&|(_, e)| e.mean());
        let var_err = ok.iter().map(|(_, (_, e))| (e.mean() - mean_err).powi(2)).sum::<f64>() / used;
        let wrong: usize = ok.iter().map(|(_, (_, e))| e.disagreements).sum();
        let points: usize = ok.iter().map(|(_, (_, e))| e.points).sum();
        let mean_psi = BlipCoefficients {
            intercept: mean_of(&|(p, _)| p.intercept),
            q: mean_of(&|(p, _)| p.q),
            k1: mean_of(&|(p, _)| p.k1),
        };
        let value = ok.iter().map(|&(r, _)| results[r].values[k]).sum::<f64>() / used;
        variants.push(VariantMetrics {
            variant,
            replications: ok.len(),
            failures,
            mse_blip,
            mse_bias_sq: mean_err * mean_err,
            mse_variance: var_err,
            error_rate: wrong as f64 / points as f64,
            blip_abs_error: mean_of(&|(_, e)| e.mean_abs()),
            mean_psi,
            abs_bias: [
                (mean_psi.intercept - TRUE_PSI.intercept).abs(),
                (mean_psi.k1 - TRUE_PSI.k1).abs(),
                (mean_psi.q - TRUE_PSI.q).abs(),
            ],
            value,
        });
    }

    let mut counts: Vec<f64> = results
        .iter()
        .flat_map(|r| r.event_counts.iter().map(|&c| f64::from(c)))
        .collect();
    counts.sort_by(f64::total_cmp);
    let events_per_subject = EventSummary {
        mean: counts.iter().sum::<f64>() / counts.len() as f64,
        q1: quantile_sorted(&counts, 0.25),
        q3: quantile_sorted(&counts, 0.75),
    };
    Ok(SimMetrics {
        config: config.clone(),
        variants,
        events_per_subject,
        value_true_rule: results.iter().map(|r| r.value_true).sum::<f64>() / m as f64,
        value_observed_treatment: results.iter().map(|r| r.value_observed).sum::<f64>() / m as f64,
        clamped_draws: results.iter().map(|r| r.clamped).sum(),
    })
}

/// Sizes the global worker pool used by parallel runs. Must be called
/// before any parallel work starts.
pub fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Columns of the metrics table.
pub const METRICS_HEADER: [&str; 10] = [
    "scenario",
    "variant",
    "n",
    "M",
    "mse",
    "error_rate",
    "bias_intercept",
    "bias_K1",
    "bias_Q",
    "value",
];

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub variant: String,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub mse: f64,
    pub error_rate: f64,
    pub bias_intercept: f64,
    #[serde(rename = "bias_K1")]
    pub bias_k1: f64,
    #[serde(rename = "bias_Q")]
    pub bias_q: f64,
    pub value: f64,
}

impl SimMetrics {
    pub fn records(&self) -> Vec<MetricsRecord> {
        let scenario = self
            .config
            .scenario
            .map(|s| s.to_string())
            .unwrap_or_else(|| "custom".into());
        self.variants
            .iter()
            .map(|v| MetricsRecord {
                scenario: scenario.clone(),
                variant: v.variant.to_string(),
                n: self.config.n,
                m: v.replications,
                mse: v.mse_blip,
                error_rate: v.error_rate,
                bias_intercept: v.abs_bias[0],
                bias_k1: v.abs_bias[1],
                bias_q: v.abs_bias[2],
                value: v.value,
            })
            .collect()
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    out.write_record(METRICS_HEADER)?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<metrics output>", e))?;
    Ok(())
}

/// Reads a metrics table, rejecting files whose header differs from
/// [`METRICS_HEADER`].
pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::InvalidConfig(format!(
            "metrics header `{}` does not match `{}`",
            headers.iter().collect::<Vec<_>>().join(","),
            METRICS_HEADER.join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
