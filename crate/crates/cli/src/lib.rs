//! Subcommands of the `dwols` binary.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dwols_core::bootstrap::{bootstrap_ci, BootstrapResult};
use dwols_core::data::{
    check_positivity, load_csv, read_csv_rows, write_csv, CsvSchema, PositivityReport, PositivityThresholds,
};
use dwols_core::dwols::{ModelSpec, WeightSummary};
use dwols_core::pipeline::{Pipeline, Variant};
use dwols_core::propensity::Truncation;
use dwols_core::sim::{self, Execution, ScenarioConfig, SimMetrics};
use dwols_core::utility::{bmi_utility, score_bmi_rows};

pub mod report;

#[derive(Debug, Parser)]
#[command(
    name = "dwols",
    version,
    about = "Doubly-weighted estimation of treatment rules under irregular visits"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation scenario and write its metrics table.
    Simulate(SimulateArgs),
    /// Fit a treatment rule to a person-time CSV.
    Analyze(AnalyzeArgs),
    /// Compute BMI-change utilities, for a pair of values or a whole file.
    Utility(UtilityArgs),
    /// Render metrics CSVs as comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario 1-4.
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<u32>,
    /// Scenario configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated estimator list, e.g. `DW1,OLS`.
    #[arg(long)]
    pub variants: Option<String>,
    /// Size of the population used to estimate rule values (0 skips it).
    #[arg(long)]
    pub value_population: Option<usize>,
    /// Run replications one after another instead of in parallel.
    #[arg(long)]
    pub serial: bool,
    /// Metrics CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the first replication's cohort as a person-time CSV.
    #[arg(long)]
    pub export_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Person-time CSV with columns id, tstart, tstop, event, atrisk, A, Y and covariates.
    #[arg(long)]
    pub data: PathBuf,
    /// Model specification JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value = "DW1")]
    pub variant: String,
    /// Bootstrap replicates for percentile intervals (0 disables).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clamp treatment weights to the given lower/upper percentile.
    #[arg(long)]
    pub truncate: Option<f64>,
    /// Result JSON destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UtilityArgs {
    /// Person-time CSV whose event-row outcomes are replaced by utilities.
    #[arg(long, conflicts_with_all = ["bmi0", "bmi"])]
    pub data: Option<PathBuf>,
    /// Baseline BMI column of `--data`.
    #[arg(long, default_value = "bmi0")]
    pub baseline_column: String,
    /// Current BMI column of `--data`.
    #[arg(long, default_value = "bmi")]
    pub current_column: String,
    #[arg(long, requires = "bmi", allow_negative_numbers = true)]
    pub bmi0: Option<f64>,
    #[arg(long, requires = "bmi0", allow_negative_numbers = true)]
    pub bmi: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Text,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon_threads(threads)?;
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Utility(args) => cmd_utility(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn rayon_threads(threads: usize) -> Result<()> {
    dwols_core::sim::configure_threads(threads).context("configuring the thread pool")
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn scenario_config(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut config = match (&args.config, args.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(s)) => ScenarioConfig::preset(s)?,
        (None, None) => bail!("one of --scenario or --config is required"),
    };
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(v) = &args.variants {
        config.variants = Variant::parse_list(v)?;
    }
    if let Some(p) = args.value_population {
        config.value_population = p;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = scenario_config(args)?;
    if let Some(path) = &args.export_data {
        let cohort = sim::simulate_cohort(&config, 0)?;
        write_csv(&cohort, path).with_context(|| format!("writing {}", path.display()))?;
    }
    let execution = if args.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let metrics = sim::run_scenario_with(&config, execution).context("simulation failed")?;
    let mut out = output(args.out.as_deref())?;
    sim::write_metrics_csv(&metrics.records(), &mut out)?;
    out.flush()?;
    let summary = summary(&metrics);
    if args.out.is_some() {
        print!("{summary}");
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

fn summary(m: &SimMetrics) -> String {
    let c = &m.config;
    let label = c.scenario.map_or_else(|| "custom".to_string(), |s| s.to_string());
    let mut s = format!(
        "scenario {label}: n = {}, M = {}, seed = {}\nevents per subject: mean {:.2}, IQR ({}, {})\n",
        c.n, c.replications, c.seed, m.events_per_subject.mean, m.events_per_subject.q1, m.events_per_subject.q3
    );
    if c.value_population > 0 {
        s.push_str(&format!(
            "value of the optimal rule {:.3}, of observed treatment {:.3}\n",
            m.value_true_rule, m.value_observed_treatment
        ));
    }
    s.push_str(&format!(
        "{:<8}{:>10}{:>10}{:>10}{:>12}{:>10}{:>10}\n",
        "variant", "mse", "bias^2", "var", "error rate", "value", "failed"
    ));
    for v in &m.variants {
        s.push_str(&format!(
            "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>12.4}{:>10.3}{:>10}\n",
            v.variant.as_str(),
            v.mse_blip,
            v.mse_bias_sq,
            v.mse_variance,
            v.error_rate,
            v.value,
            v.failures
        ));
    }
    if m.clamped_draws > 0 {
        s.push_str(&format!("{} visit probabilities clamped at 1\n", m.clamped_draws));
    }
    s
}

#[derive(Debug, Serialize)]
pub struct AnalysisOutput {
    pub variant: Variant,
    pub rows: usize,
    pub subjects: usize,
    pub beta: Vec<(String, f64)>,
    pub psi: Vec<(String, f64)>,
    pub rule: String,
    pub weights: WeightSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positivity: Option<PositivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub treatment_model: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visit_model: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapResult>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<AnalysisOutput> {
    let variant: Variant = args.variant.parse()?;
    let dataset =
        load_csv(&args.data, &CsvSchema::default()).with_context(|| format!("loading {}", args.data.display()))?;
    let spec = ModelSpec::load(&args.spec).with_context(|| format!("loading {}", args.spec.display()))?;
    let mut pipeline = Pipeline::new(variant.weighting(), spec);
    if let Some(percent) = args.truncate {
        if !(0.0..50.0).contains(&percent) {
            bail!("--truncate must be in [0, 50), got {percent}");
        }
        pipeline.truncation = Some(Truncation { percent });
    }
    let fit = pipeline.fit(&dataset).context("fitting the pipeline")?;

    let positivity = match &fit.propensities {
        Some(p) => {
            let report = check_positivity(&fit.rows, p, PositivityThresholds::default())?;
            if report.flagged() > 0 {
                log::warn!(
                    "{} rows have propensity below {} and {} above {}",
                    report.below_lower,
                    report.thresholds.lower,
                    report.above_upper,
                    report.thresholds.upper
                );
            }
            Some(report)
        }
        None => None,
    };
    let bootstrap = if args.bootstrap > 0 {
        Some(bootstrap_ci(&dataset, &pipeline, args.bootstrap, args.seed).context("bootstrap failed")?)
    } else {
        None
    };
    Ok(AnalysisOutput {
        variant,
        rows: fit.rows.len(),
        subjects: dataset.subjects().len(),
        beta: fit.blip.beta.clone(),
        psi: fit.blip.psi.clone(),
        rule: fit.blip.display_rule(),
        weights: fit.blip.weight_summary,
        positivity,
        treatment_model: fit
            .propensity
            .as_ref()
            .map(|p| p.term_names.iter().cloned().zip(p.kappa.iter().copied()).collect()),
        visit_model: fit
            .visit
            .as_ref()
            .map(|v| v.term_names.iter().cloned().zip(v.gamma.iter().copied()).collect()),
        bootstrap,
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let result = analyze(args)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    writeln!(out)?;
    out.flush()?;
    if args.out.is_some() {
        println!("{}", result.rule);
    } else {
        eprintln!("{}", result.rule);
    }
    Ok(())
}

pub fn cmd_utility(args: &UtilityArgs) -> Result<()> {
    if let (Some(b0), Some(bt)) = (args.bmi0, args.bmi) {
        match bmi_utility(b0, bt) {
            Some(u) => println!("{u:.2}"),
            None => println!("NA"),
        }
        return Ok(());
    }
    let Some(path) = &args.data else {
        bail!("give either --data or both --bmi0 and --bmi");
    };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (schema, rows) =
        read_csv_rows(file, &CsvSchema::default()).with_context(|| format!("loading {}", path.display()))?;
    let (transformed, dropped) = score_bmi_rows(schema, rows, &args.baseline_column, &args.current_column)?;
    let mut out = output(args.out.as_deref())?;
    dwols_core::data::write_csv_to(&transformed, &mut out)?;
    out.flush()?;
    eprintln!(
        "{} measurements scored, {dropped} dropped with BMI outside [15, 50]",
        transformed.event_count()
    );
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = report::render_files(&args.files, args.format)?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
