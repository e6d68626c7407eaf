//! `smartlab`: simulate platform SMART trials, estimate regime means, and
//! run operating-characteristics studies.

mod manifest;
mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use manifest::{manifest_path_for_file, RunManifest};
use smartlab::big::{BigError, Family};
use smartlab::datagen::{self, AllocationMode, DatagenError};
use smartlab::harness::{
    analyze_records, run_study, AnalysisError, AnalysisSettings, Approach, PriorSettings,
    RunOptions, SamplerSettings, StudyConfig, StudyError, STUDY_SCHEMA,
};
use smartlab::ipw::DesignProbs;
use smartlab::trial::{
    resolve_scenario, Cohort, Direction, Dtr, TrialDesign, TrialError, SCENARIO_SCHEMA,
};

#[derive(Parser)]
#[command(
    name = "smartlab",
    version,
    about = "Two-stage platform SMART trial simulation and regime-mean estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a platform SMART dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate regime means from a dataset CSV with one or more approaches.
    Estimate(EstimateArgs),
    /// Run an operating-characteristics study and emit metrics plus figures.
    RunStudy(RunStudyArgs),
    /// Print the scenario and study configuration schemas.
    PrintSchema,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario name or scenario file path.
    #[arg(long)]
    scenario: String,
    /// Original sample size n.
    #[arg(long)]
    n: usize,
    /// Adaptation timing ratio r = n1/n.
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// First-stage assignment: fixed target counts or per-participant draws.
    #[arg(long, default_value = "fixed")]
    allocation: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV (columns cohort,a1,r,a2,y).
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated approaches to run.
    #[arg(long, value_delimiter = ',', default_value = "separate")]
    approaches: Vec<String>,
    /// Reconstruct nominal design probabilities from (n, r); realized
    /// frequencies are used when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    /// Outcome family: auto-detected from the data unless given.
    #[arg(long, default_value = "auto")]
    family: String,
    #[arg(long, default_value = "maximize")]
    direction: String,
    /// Estimand pair, e.g. `d11,d31`.
    #[arg(long, value_delimiter = ',', default_values = ["d11", "d31"])]
    estimand: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    burn_in: usize,
    #[arg(long, default_value_t = 4000)]
    draws: usize,
    /// Mixture grid for BIGcommP.
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    /// Mixture weights for BIGcommP.
    #[arg(long, value_delimiter = ',')]
    tau_weights: Option<Vec<f64>>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunStudyArgs {
    /// Study configuration file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    approaches: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    direction: Option<String>,
    /// Worker threads (0 = default pool).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Reuse completed per-cell checkpoint files.
    #[arg(long)]
    resume: bool,
    /// Output directory for metrics, figures, checkpoints and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
    Partial(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Partial(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m)
            | CliError::Partial(m) => m,
        }
    }
}

impl From<TrialError> for CliError {
    fn from(e: TrialError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Trial(t) => CliError::Config(t.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match &e {
            AnalysisError::Ipw(_) => CliError::Data(e.to_string()),
            AnalysisError::Big(big) => match big {
                BigError::MissingCohort(_) => CliError::Data(e.to_string()),
                BigError::InvalidPrior(_) => CliError::Config(e.to_string()),
                _ => CliError::Numerical(e.to_string()),
            },
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match &e {
            StudyError::ConfigParse(_) | StudyError::Trial(_) => CliError::Config(e.to_string()),
            StudyError::Io { .. } | StudyError::Datagen(_) => CliError::Data(e.to_string()),
            StudyError::InsufficientReplicates { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::RunStudy(args) => cmd_run_study(args),
        Command::PrintSchema => {
            print!("{SCENARIO_SCHEMA}\n{STUDY_SCHEMA}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Seed precedence: explicit flag, then SMARTLAB_SEED, then the fallback
/// (configuration value or 0).
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("SMARTLAB_SEED") {
        Ok(text) => text
            .parse()
            .map_err(|_| CliError::Config(format!("SMARTLAB_SEED is not a u64: `{text}`"))),
        Err(_) => Ok(fallback),
    }
}

fn create_parent_dirs(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let scenario = resolve_scenario(&args.scenario)?;
    let design = TrialDesign::new(args.n, args.r)?;
    let seed = resolve_seed(args.seed, 0)?;
    let mode = match args.allocation.as_str() {
        "fixed" => AllocationMode::Fixed,
        "bernoulli" => AllocationMode::Bernoulli,
        other => {
            return Err(CliError::Config(format!(
                "unknown allocation `{other}` (expected fixed or bernoulli)"
            )))
        }
    };

    let dataset = datagen::simulate_trial_with(&design, &scenario, seed, mode)?;
    create_parent_dirs(&args.out)?;
    let mut buf = Vec::new();
    datagen::write_csv(&dataset.records, &mut buf).map_err(|e| io_err(&args.out, e))?;
    std::fs::write(&args.out, &buf).map_err(|e| io_err(&args.out, e))?;

    let config = serde_json::json!({
        "scenario": scenario.name,
        "n": args.n,
        "r": args.r,
        "allocation": args.allocation,
        "records": dataset.records.len(),
    });
    let mut manifest = RunManifest::new("simulate", config, seed);
    manifest
        .record_output(&args.out)
        .map_err(|e| io_err(&args.out, e))?;
    let mpath = manifest_path_for_file(&args.out);
    manifest.write(&mpath).map_err(|e| io_err(&mpath, e))?;

    println!(
        "wrote {} records to {} (manifest {})",
        dataset.records.len(),
        args.out.display(),
        mpath.display()
    );
    Ok(())
}

fn parse_approaches(list: &[String]) -> Result<Vec<Approach>, CliError> {
    list.iter()
        .map(|a| a.parse().map_err(|e: StudyError| CliError::Config(e.to_string())))
        .collect()
}

fn parse_estimand(list: &[String]) -> Result<(Dtr, Dtr), CliError> {
    if list.len() != 2 {
        return Err(CliError::Config(format!(
            "estimand needs exactly two regimes, got {}",
            list.len()
        )));
    }
    let a: Dtr = list[0].parse()?;
    let b: Dtr = list[1].parse()?;
    Ok((a, b))
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.data).map_err(|e| io_err(&args.data, e))?;
    let records = datagen::read_csv(std::io::BufReader::new(file))?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: dataset has no records",
            args.data.display()
        )));
    }

    let approaches = parse_approaches(&args.approaches)?;
    let has_c1 = records.iter().any(|r| r.cohort == Cohort::C1);
    for &approach in &approaches {
        if approach.is_bayesian() && approach != Approach::BigWeak && !has_c1 {
            return Err(CliError::Data(format!(
                "{approach}: prior source cohort missing (dataset has no c1 records)"
            )));
        }
    }

    let family = match args.family.as_str() {
        "continuous" => Family::Continuous,
        "binary" => Family::Binary,
        "auto" => {
            if records.iter().all(|r| r.y == 0.0 || r.y == 1.0) {
                Family::Binary
            } else {
                Family::Continuous
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown family `{other}` (expected auto, continuous or binary)"
            )))
        }
    };

    let probs = match (args.n, args.r) {
        (Some(n), Some(r)) => {
            let design = TrialDesign::new(n, r)?;
            DesignProbs::nominal(&design.allocation_plan()?)
        }
        (None, None) => DesignProbs::realized(&records)
            .map_err(|e| CliError::Data(e.to_string()))?,
        _ => {
            return Err(CliError::Config(
                "provide both --n and --r for nominal weighting, or neither".into(),
            ))
        }
    };

    let direction: Direction = args.direction.parse()?;
    let estimand = parse_estimand(&args.estimand)?;
    let seed = resolve_seed(args.seed, 0)?;
    let priors = PriorSettings {
        mixed_taus: args.tau_grid.clone().unwrap_or_else(|| vec![0.1, 20.0]),
        mixed_weights: args.tau_weights.clone().unwrap_or_else(|| vec![0.5, 0.5]),
        tau_range: (0.01, 100.0),
    };
    let settings = AnalysisSettings {
        estimand,
        direction,
        sampler: SamplerSettings {
            chains: args.chains,
            burn_in: args.burn_in,
            draws: args.draws,
        },
        gformula_mode: smartlab::big::GformulaMode::ClosedForm,
        priors: priors.clone(),
    };

    let mut buf = Vec::new();
    writeln!(buf, "approach,dtr,mean,var,ci_lo,ci_hi").expect("write to vec");
    for (idx, &approach) in approaches.iter().enumerate() {
        let estimate = analyze_records(
            &records,
            approach,
            family,
            &probs,
            &settings,
            seed.wrapping_add(idx as u64),
        )?;
        for (dtr, triple) in &estimate.dtr_estimates {
            writeln!(
                buf,
                "{approach},{dtr},{},{},{},{}",
                triple.mean, triple.var, triple.ci.0, triple.ci.1
            )
            .expect("write to vec");
        }
        writeln!(
            buf,
            "{approach},{}-{},{},{},{},{}",
            estimand.0,
            estimand.1,
            estimate.diff.mean,
            estimate.diff.var,
            estimate.diff.ci.0,
            estimate.diff.ci.1
        )
        .expect("write to vec");
    }
    create_parent_dirs(&args.out)?;
    std::fs::write(&args.out, &buf).map_err(|e| io_err(&args.out, e))?;

    let config = serde_json::json!({
        "data": args.data.display().to_string(),
        "approaches": approaches.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        "family": match family { Family::Continuous => "continuous", Family::Binary => "binary" },
        "direction": args.direction,
        "estimand": [estimand.0.to_string(), estimand.1.to_string()],
        "sampler": { "chains": args.chains, "burn_in": args.burn_in, "draws": args.draws },
        "priors": {
            "mixed_taus": priors.mixed_taus,
            "mixed_weights": priors.mixed_weights,
            "tau_range": priors.tau_range,
        },
        "weighting": if args.n.is_some() { "nominal" } else { "realized" },
    });
    let mut manifest = RunManifest::new("estimate", config, seed);
    manifest
        .record_output(&args.out)
        .map_err(|e| io_err(&args.out, e))?;
    let mpath = manifest_path_for_file(&args.out);
    manifest.write(&mpath).map_err(|e| io_err(&mpath, e))?;

    println!("wrote estimates to {}", args.out.display());
    Ok(())
}

fn cmd_run_study(args: RunStudyArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => StudyConfig::from_path(path)?,
        None => {
            let scenario = args.scenario.clone().ok_or_else(|| {
                CliError::Config("provide --config or at least --scenario/--replicates".into())
            })?;
            let mut c = StudyConfig::new("placeholder", 1000, 0.5, 1);
            c.scenarios = scenario;
            c.replicates = args.replicates.ok_or_else(|| {
                CliError::Config("provide --replicates when running without --config".into())
            })?;
            c
        }
    };
    if let Some(scenarios) = args.scenario {
        config.scenarios = scenarios;
    }
    if let Some(ns) = args.n {
        config.ns = ns;
    }
    if let Some(rs) = args.r {
        config.rs = rs;
    }
    if let Some(reps) = args.replicates {
        config.replicates = reps;
    }
    if let Some(list) = args.approaches {
        config.approaches = parse_approaches(&list)?;
    }
    if let Some(direction) = args.direction {
        config.direction = direction.parse()?;
    }
    config.seed = resolve_seed(args.seed, config.seed)?;
    config.validate()?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let options = RunOptions {
        out_dir: Some(args.out.clone()),
        workers: args.workers,
        resume: args.resume,
    };
    let output = run_study(&config, &options)?;

    let mut manifest = RunManifest::new(
        "run-study",
        serde_json::to_value(&config).expect("config serializes"),
        config.seed,
    );
    let metrics_path = args.out.join("metrics.csv");
    manifest
        .record_output(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    for metric in svg::METRICS {
        let body = svg::render_metric_svg(metric, &output.rows);
        let path = args.out.join(format!("{metric}.svg"));
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        manifest.record_output(&path).map_err(|e| io_err(&path, e))?;
    }
    let mpath = args.out.join("manifest.json");
    manifest.write(&mpath).map_err(|e| io_err(&mpath, e))?;

    println!(
        "study complete: {} metric rows in {}",
        output.rows.len(),
        metrics_path.display()
    );
    if output.degraded_cells > 0 {
        return Err(CliError::Partial(format!(
            "{} approach-cells had too few successful replicates; partial results preserved in {}",
            output.degraded_cells,
            args.out.display()
        )));
    }
    Ok(())
}
