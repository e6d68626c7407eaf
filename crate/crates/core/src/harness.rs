//! Replicate-level operating-characteristics engine.
//!
//! Runs the six analysis approaches over simulated trial replicates across a
//! (scenario x n x r) grid and aggregates the five metrics: bias, empirical
//! variance, MSE, interval coverage, and the probability of identifying the
//! true optimal regime. The estimand is the difference between two regime
//! means in the post-adaptation cohort (`d11 - d31` by default), with the
//! truth taken from the analytic regime means.
//!
//! Replicates are independent work units scheduled on a bounded worker pool;
//! per-replicate seeds come from the split-stream construction, so results
//! are deterministic regardless of scheduling. Completed grid cells are
//! checkpointed as JSON so interrupted studies can resume.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::big::{
    build_log_distance_prior, fit_cohort_models, gformula_all, sample_posterior,
    summarize_estimands, Family, GformulaConfig, GformulaMode, Hyperpriors, PriorSpec,
    SamplerConfig,
};
use crate::datagen::{simulate_trial_with, AllocationMode, DatagenError, ParticipantRecord};
use crate::ipw::{pooled_estimates, separate_estimates, DesignProbs, IpwError};
use crate::rng::StreamRng;
use crate::trial::{
    optimal_dtr, resolve_scenario, true_dtr_mean, Cohort, Direction, Dtr, ScenarioParams,
    TrialDesign, TrialError,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error("{approach}: only {got} successful replicates (need at least 2)")]
    InsufficientReplicates { approach: String, got: usize },
    #[error("io error at {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("config parse error: {0}")]
    ConfigParse(String),
}

// ---------------------------------------------------------------------------
// Approaches and configuration
// ---------------------------------------------------------------------------

/// The six analysis approaches compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Approach {
    Separate,
    Pooling,
    BigWeak,
    BigLogDistance,
    BigCommensurate,
    BigMixedCommensurate,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::Separate,
        Approach::Pooling,
        Approach::BigWeak,
        Approach::BigLogDistance,
        Approach::BigCommensurate,
        Approach::BigMixedCommensurate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Approach::Separate => "separate",
            Approach::Pooling => "pooling",
            Approach::BigWeak => "BIGweak",
            Approach::BigLogDistance => "BIGlogdis",
            Approach::BigCommensurate => "BIGcomP",
            Approach::BigMixedCommensurate => "BIGcommP",
        }
    }

    pub fn is_bayesian(self) -> bool {
        !matches!(self, Approach::Separate | Approach::Pooling)
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Approach {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Approach::ALL
            .into_iter()
            .find(|a| a.label().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                StudyError::ConfigParse(format!(
                    "unknown approach `{s}` (expected one of separate, pooling, BIGweak, \
                     BIGlogdis, BIGcomP, BIGcommP)"
                ))
            })
    }
}

impl Serialize for Approach {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Approach {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sampler settings applied to every Bayesian approach in a study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub chains: usize,
    pub burn_in: usize,
    pub draws: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            chains: 4,
            burn_in: 2000,
            draws: 4000,
        }
    }
}

/// Prior settings for the commensurate variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSettings {
    pub mixed_taus: Vec<f64>,
    pub mixed_weights: Vec<f64>,
    pub tau_range: (f64, f64),
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            mixed_taus: vec![0.1, 20.0],
            mixed_weights: vec![0.5, 0.5],
            tau_range: (0.01, 100.0),
        }
    }
}

/// Randomization probabilities used in the IPW weights: the design's
/// nominal values (the default) or realized frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    #[default]
    Nominal,
    Realized,
}

/// Full description of one operating-characteristics study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    /// Built-in scenario names or paths to scenario files.
    pub scenarios: Vec<String>,
    pub ns: Vec<usize>,
    pub rs: Vec<f64>,
    pub replicates: usize,
    pub approaches: Vec<Approach>,
    /// Regime pair whose mean difference is the estimand.
    pub estimand: (Dtr, Dtr),
    pub seed: u64,
    pub direction: Direction,
    pub allocation: AllocationMode,
    pub weighting: WeightMode,
    pub sampler: SamplerSettings,
    pub gformula_mode: GformulaMode,
    pub priors: PriorSettings,
}

impl StudyConfig {
    pub fn new(scenario: &str, n: usize, r: f64, replicates: usize) -> Self {
        StudyConfig {
            scenarios: vec![scenario.to_string()],
            ns: vec![n],
            rs: vec![r],
            replicates,
            approaches: Approach::ALL.to_vec(),
            estimand: ("d11".parse().unwrap(), "d31".parse().unwrap()),
            seed: 0,
            direction: Direction::Maximize,
            allocation: AllocationMode::Fixed,
            weighting: WeightMode::Nominal,
            sampler: SamplerSettings::default(),
            gformula_mode: GformulaMode::ClosedForm,
            priors: PriorSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, StudyError> {
        let raw: RawStudy =
            toml::from_str(text).map_err(|e| StudyError::ConfigParse(e.to_string()))?;
        raw.into_config()
    }

    pub fn from_path(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.replicates < 1 {
            return Err(StudyError::ConfigParse(
                "replicates must be at least 1".into(),
            ));
        }
        if self.scenarios.is_empty() || self.ns.is_empty() || self.rs.is_empty() {
            return Err(StudyError::ConfigParse(
                "scenarios, n and r lists must be nonempty".into(),
            ));
        }
        if self.approaches.is_empty() {
            return Err(StudyError::ConfigParse("approaches list is empty".into()));
        }
        if !self.estimand.0.reachable_in(Cohort::C2) || !self.estimand.1.reachable_in(Cohort::C2) {
            return Err(StudyError::ConfigParse(
                "estimand regimes must be reachable post-adaptation".into(),
            ));
        }
        Ok(())
    }
}

/// Documented key schema for study configuration files.
pub const STUDY_SCHEMA: &str = r#"# Study configuration (TOML)
#
# [study]
# scenarios  = ["table1-s2"]        # built-in names or scenario file paths
# n          = [1000]               # original sample sizes
# r          = [0.5]                # adaptation timing ratios, in [0, 1)
# replicates = 200
# approaches = ["separate", "pooling", "BIGweak", "BIGlogdis", "BIGcomP", "BIGcommP"]
# seed       = 42                   # master seed (SMARTLAB_SEED overrides)
# direction  = "maximize"           # or "minimize" (e.g. mortality risks)
# estimand   = ["d11", "d31"]       # regime-mean difference of interest
# allocation = "fixed"              # or "bernoulli"
# weighting  = "nominal"            # or "realized" arm frequencies in weights
#
# [sampler]                         # optional, applies to BIG approaches
# chains  = 4
# burn_in = 2000
# draws   = 4000                    # retained draws, total across chains
#
# [gformula]                        # optional
# mode       = "closed-form"        # or "simulate"
# population = 10000                # simulate mode only
#
# [priors]                          # optional
# mixed_taus    = [0.1, 20.0]       # mixture grid for BIGcommP
# mixed_weights = [0.5, 0.5]
# tau_range     = [0.01, 100.0]     # log-uniform support for BIGcomP
"#;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    study: RawStudySection,
    sampler: Option<SamplerSettings>,
    gformula: Option<RawGformula>,
    priors: Option<RawPriors>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudySection {
    scenarios: Vec<String>,
    n: Vec<usize>,
    r: Vec<f64>,
    replicates: usize,
    approaches: Option<Vec<String>>,
    seed: Option<u64>,
    direction: Option<String>,
    estimand: Option<[String; 2]>,
    allocation: Option<String>,
    weighting: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGformula {
    mode: Option<String>,
    population: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPriors {
    mixed_taus: Option<Vec<f64>>,
    mixed_weights: Option<Vec<f64>>,
    tau_range: Option<(f64, f64)>,
}

impl RawStudy {
    fn into_config(self) -> Result<StudyConfig, StudyError> {
        let s = self.study;
        let approaches = match s.approaches {
            None => Approach::ALL.to_vec(),
            Some(list) => list
                .iter()
                .map(|a| a.parse())
                .collect::<Result<Vec<_>, _>>()?,
        };
        let direction = match s.direction.as_deref() {
            None => Direction::Maximize,
            Some(d) => d
                .parse()
                .map_err(|e: TrialError| StudyError::ConfigParse(e.to_string()))?,
        };
        let estimand = match s.estimand {
            None => ("d11".parse().unwrap(), "d31".parse().unwrap()),
            Some([a, b]) => (
                a.parse()
                    .map_err(|e: TrialError| StudyError::ConfigParse(e.to_string()))?,
                b.parse()
                    .map_err(|e: TrialError| StudyError::ConfigParse(e.to_string()))?,
            ),
        };
        let allocation = match s.allocation.as_deref() {
            None | Some("fixed") => AllocationMode::Fixed,
            Some("bernoulli") => AllocationMode::Bernoulli,
            Some(other) => {
                return Err(StudyError::ConfigParse(format!(
                    "unknown allocation `{other}` (expected fixed or bernoulli)"
                )))
            }
        };
        let weighting = match s.weighting.as_deref() {
            None | Some("nominal") => WeightMode::Nominal,
            Some("realized") => WeightMode::Realized,
            Some(other) => {
                return Err(StudyError::ConfigParse(format!(
                    "unknown weighting `{other}` (expected nominal or realized)"
                )))
            }
        };
        let gformula_mode = match self.gformula {
            None => GformulaMode::ClosedForm,
            Some(g) => match g.mode.as_deref() {
                None | Some("closed-form") => GformulaMode::ClosedForm,
                Some("simulate") => GformulaMode::Simulate {
                    population: g.population.unwrap_or(10_000),
                },
                Some(other) => {
                    return Err(StudyError::ConfigParse(format!(
                        "unknown gformula mode `{other}` (expected closed-form or simulate)"
                    )))
                }
            },
        };
        let defaults = PriorSettings::default();
        let priors = match self.priors {
            None => defaults,
            Some(p) => PriorSettings {
                mixed_taus: p.mixed_taus.unwrap_or(defaults.mixed_taus),
                mixed_weights: p.mixed_weights.unwrap_or(defaults.mixed_weights),
                tau_range: p.tau_range.unwrap_or(defaults.tau_range),
            },
        };
        let config = StudyConfig {
            scenarios: s.scenarios,
            ns: s.n,
            rs: s.r,
            replicates: s.replicates,
            approaches,
            estimand,
            seed: s.seed.unwrap_or(0),
            direction,
            allocation,
            weighting,
            sampler: self.sampler.unwrap_or_default(),
            gformula_mode,
            priors,
        };
        config.validate()?;
        Ok(config)
    }
}

// ---------------------------------------------------------------------------
// Replicate execution
// ---------------------------------------------------------------------------

/// Point estimate, variance, and 95% interval (Wald for the frequentist
/// approaches, equal-tailed credible for the Bayesian ones).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimateTriple {
    pub mean: f64,
    pub var: f64,
    pub ci: (f64, f64),
}

/// One approach's estimates in one replicate: the estimand difference plus
/// every regime mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproachEstimate {
    pub diff: EstimateTriple,
    pub optimal: Option<Dtr>,
    pub dtr_estimates: BTreeMap<Dtr, EstimateTriple>,
}

/// All requested approaches' results for one replicate. Per-approach
/// failures are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub outcomes: BTreeMap<Approach, Result<ApproachEstimate, String>>,
}

/// Stable stream for a grid cell: `master seed -> split(cell index)`.
pub fn cell_stream(master_seed: u64, cell_index: u64) -> StreamRng {
    StreamRng::new(master_seed).split(cell_index)
}

/// Simulate and analyze one replicate of one grid cell. The replicate seed
/// is split from the cell stream by replicate index, so identical
/// configurations reproduce identical rows.
pub fn run_replicate(
    config: &StudyConfig,
    scenario: &ScenarioParams,
    design: &TrialDesign,
    cell: &StreamRng,
    replicate: usize,
) -> Result<ReplicateResult, StudyError> {
    let rep_stream = cell.split(replicate as u64);
    let trial_seed = rep_stream.derive_seed(0);
    let dataset = simulate_trial_with(design, scenario, trial_seed, config.allocation)?;
    let plan = design.allocation_plan()?;
    // A realized-frequency failure (e.g. an arm with no responders in this
    // replicate) fails every approach for the replicate, not the study.
    let probs = match config.weighting {
        WeightMode::Nominal => Ok(DesignProbs::nominal(&plan)),
        WeightMode::Realized => DesignProbs::realized(&dataset.records),
    };
    let probs = match probs {
        Ok(p) => p,
        Err(e) => {
            let message = e.to_string();
            return Ok(ReplicateResult {
                replicate,
                outcomes: config
                    .approaches
                    .iter()
                    .map(|&a| (a, Err(message.clone())))
                    .collect(),
            });
        }
    };
    let family = Family::from_outcome(scenario.family);

    let settings = AnalysisSettings {
        estimand: config.estimand,
        direction: config.direction,
        sampler: config.sampler,
        gformula_mode: config.gformula_mode,
        priors: config.priors.clone(),
    };
    let mut outcomes = BTreeMap::new();
    for (a_idx, &approach) in config.approaches.iter().enumerate() {
        let result = analyze_records(
            &dataset.records,
            approach,
            family,
            &probs,
            &settings,
            rep_stream.derive_seed(1 + a_idx as u64),
        );
        outcomes.insert(approach, result.map_err(|e| e.to_string()));
    }
    Ok(ReplicateResult {
        replicate,
        outcomes,
    })
}

/// Estimand, inference, and prior settings for analyzing one dataset.
#[derive(Debug, Clone)]
pub struct AnalysisSettings {
    pub estimand: (Dtr, Dtr),
    pub direction: Direction,
    pub sampler: SamplerSettings,
    pub gformula_mode: GformulaMode,
    pub priors: PriorSettings,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            estimand: ("d11".parse().unwrap(), "d31".parse().unwrap()),
            direction: Direction::Maximize,
            sampler: SamplerSettings::default(),
            gformula_mode: GformulaMode::ClosedForm,
            priors: PriorSettings::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Ipw(#[from] IpwError),
    #[error(transparent)]
    Big(#[from] crate::big::BigError),
}

/// Analyze one dataset with one approach. The Bayesian approaches use the
/// given seed for the sampler (and a derived stream for the G-formula
/// simulation path, when enabled).
pub fn analyze_records(
    records: &[ParticipantRecord],
    approach: Approach,
    family: Family,
    probs: &DesignProbs,
    settings: &AnalysisSettings,
    seed: u64,
) -> Result<ApproachEstimate, AnalysisError> {
    let (a, b) = settings.estimand;
    match approach {
        Approach::Separate | Approach::Pooling => {
            let estimates = if approach == Approach::Separate {
                separate_estimates(records, probs)?
            } else {
                pooled_estimates(records, probs)?
            };
            let diff = estimates.difference(a, b)?;
            Ok(ApproachEstimate {
                diff: EstimateTriple {
                    mean: diff.mean,
                    var: diff.var,
                    ci: diff.ci,
                },
                optimal: estimates.optimal(settings.direction),
                dtr_estimates: estimates
                    .estimates
                    .iter()
                    .map(|(&d, e)| {
                        (
                            d,
                            EstimateTriple {
                                mean: e.mean,
                                var: e.var,
                                ci: e.ci,
                            },
                        )
                    })
                    .collect(),
            })
        }
        _ => {
            let c1: Vec<ParticipantRecord> = records
                .iter()
                .filter(|r| r.cohort == Cohort::C1)
                .copied()
                .collect();
            let c2: Vec<ParticipantRecord> = records
                .iter()
                .filter(|r| r.cohort == Cohort::C2)
                .copied()
                .collect();
            let (prior, data_c1): (PriorSpec, Option<&[ParticipantRecord]>) = match approach {
                Approach::BigWeak => (PriorSpec::Weak, None),
                Approach::BigLogDistance => {
                    let fits_c1 = fit_cohort_models(&c1, Cohort::C1, family)?;
                    let fits_c2 = fit_cohort_models(&c2, Cohort::C2, family)?;
                    let shared = build_log_distance_prior(&fits_c1, &fits_c2)?;
                    (PriorSpec::LogDistance { shared }, None)
                }
                Approach::BigCommensurate => (
                    PriorSpec::Commensurate {
                        tau_range: settings.priors.tau_range,
                        per_coefficient: false,
                    },
                    Some(&c1),
                ),
                Approach::BigMixedCommensurate => (
                    PriorSpec::MixedCommensurate {
                        taus: settings.priors.mixed_taus.clone(),
                        weights: settings.priors.mixed_weights.clone(),
                    },
                    Some(&c1),
                ),
                _ => unreachable!(),
            };
            let stream = StreamRng::new(seed);
            let sampler = SamplerConfig {
                chains: settings.sampler.chains,
                burn_in: settings.sampler.burn_in,
                draws: settings.sampler.draws,
                seed: stream.derive_seed(1),
                fixed_sigma: None,
            };
            let draws = sample_posterior(
                data_c1,
                &c2,
                family,
                &prior,
                &Hyperpriors::default(),
                &sampler,
            )?;
            let gf = GformulaConfig {
                mode: settings.gformula_mode,
                seed: stream.derive_seed(2),
            };
            let mean_draws = gformula_all(&draws, &gf);
            let summary = summarize_estimands(&mean_draws, &[(a, b)])?;
            let diff = &summary.differences[0].summary;
            Ok(ApproachEstimate {
                diff: EstimateTriple {
                    mean: diff.mean,
                    var: diff.var,
                    ci: diff.ci,
                },
                optimal: summary.optimal(settings.direction),
                dtr_estimates: summary
                    .dtrs
                    .iter()
                    .map(|(&d, s)| {
                        (
                            d,
                            EstimateTriple {
                                mean: s.mean,
                                var: s.var,
                                ci: s.ci,
                            },
                        )
                    })
                    .collect(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics aggregation
// ---------------------------------------------------------------------------

/// Operating characteristics for one (approach, scenario, n, r) cell, with
/// Monte Carlo standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub approach: Approach,
    pub scenario: String,
    pub n: usize,
    pub r: f64,
    /// Successful replicates entering the aggregates.
    pub replicates: usize,
    pub bias: f64,
    pub bias_mcse: f64,
    pub var: f64,
    pub var_mcse: f64,
    pub mse: f64,
    pub mse_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    /// NaN when the scenario has no true optimal regime (null scenario).
    pub prob_optimal: f64,
    pub prob_optimal_mcse: f64,
    pub has_true_optimal: bool,
    pub failures: usize,
}

/// Analytic truth for one cell's estimand.
#[derive(Debug, Clone, Copy)]
pub struct CellTruth {
    pub diff: f64,
    pub optimal: Option<Dtr>,
}

pub fn cell_truth(
    config: &StudyConfig,
    scenario: &ScenarioParams,
) -> Result<CellTruth, StudyError> {
    let (a, b) = config.estimand;
    let diff = true_dtr_mean(scenario, Cohort::C2, a)? - true_dtr_mean(scenario, Cohort::C2, b)?;
    let optimal = optimal_dtr(scenario, Cohort::C2, config.direction)?;
    Ok(CellTruth { diff, optimal })
}

/// Aggregate one approach's replicate series into a metrics row. Bias uses
/// the `truth - estimate` sign convention; variance is the sample variance
/// of the estimates; coverage counts intervals containing the truth.
pub fn aggregate_metrics(
    approach: Approach,
    scenario_name: &str,
    n: usize,
    r: f64,
    truth: &CellTruth,
    results: &[ReplicateResult],
) -> Result<MetricsRow, StudyError> {
    let mut estimates = Vec::with_capacity(results.len());
    let mut covered = 0usize;
    let mut hit_optimal = 0usize;
    let mut failures = 0usize;
    for rep in results {
        match rep.outcomes.get(&approach) {
            Some(Ok(est)) => {
                estimates.push(est.diff.mean);
                if est.diff.ci.0 <= truth.diff && truth.diff <= est.diff.ci.1 {
                    covered += 1;
                }
                if let Some(true_opt) = truth.optimal {
                    if est.optimal == Some(true_opt) {
                        hit_optimal += 1;
                    }
                }
            }
            Some(Err(_)) | None => failures += 1,
        }
    }
    let count = estimates.len();
    if count < 2 {
        return Err(StudyError::InsufficientReplicates {
            approach: approach.to_string(),
            got: count,
        });
    }
    let rf = count as f64;
    let errors: Vec<f64> = estimates.iter().map(|e| truth.diff - e).collect();
    let bias = errors.iter().sum::<f64>() / rf;
    let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / (rf - 1.0);
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / rf;
    let sq_var = errors
        .iter()
        .map(|e| (e * e - mse) * (e * e - mse))
        .sum::<f64>()
        / (rf - 1.0);
    let coverage = covered as f64 / rf;
    let (prob_optimal, prob_optimal_mcse, has_true_optimal) = match truth.optimal {
        Some(_) => {
            let p = hit_optimal as f64 / rf;
            (p, (p * (1.0 - p) / rf).sqrt(), true)
        }
        None => (f64::NAN, f64::NAN, false),
    };
    Ok(MetricsRow {
        approach,
        scenario: scenario_name.to_string(),
        n,
        r,
        replicates: count,
        bias,
        bias_mcse: (var / rf).sqrt(),
        var,
        var_mcse: var * (2.0 / (rf - 1.0)).sqrt(),
        mse,
        mse_mcse: (sq_var / rf).sqrt(),
        coverage,
        coverage_mcse: (coverage * (1.0 - coverage) / rf).sqrt(),
        prob_optimal,
        prob_optimal_mcse,
        has_true_optimal,
        failures,
    })
}

// ---------------------------------------------------------------------------
// Study execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output/checkpoint directory. No checkpointing when absent.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses the default pool size.
    pub workers: usize,
    /// Reuse existing per-cell checkpoint files.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<MetricsRow>,
    /// (approach, cell) pairs whose aggregation lacked successful replicates.
    pub degraded_cells: usize,
}

/// Run every replicate of one grid cell (exposed for tests and focused
/// reproductions). `cell_index` is the cell's position in the study grid
/// enumeration.
pub fn run_cell(
    config: &StudyConfig,
    scenario: &ScenarioParams,
    n: usize,
    r: f64,
    cell_index: u64,
) -> Result<Vec<ReplicateResult>, StudyError> {
    let design = TrialDesign::new(n, r)?;
    let stream = cell_stream(config.seed, cell_index);
    (0..config.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(config, scenario, &design, &stream, rep))
        .collect()
}

/// Run the full (scenario x n x r) grid and aggregate metrics for every
/// requested approach. With an output directory, each completed cell is
/// checkpointed, `resume` skips completed cells, and `metrics.csv` is
/// written at the end; partially completed runs leave their finished cell
/// files on disk.
pub fn run_study(config: &StudyConfig, options: &RunOptions) -> Result<StudyOutput, StudyError> {
    config.validate()?;
    let scenarios: Vec<ScenarioParams> = config
        .scenarios
        .iter()
        .map(|s| resolve_scenario(s))
        .collect::<Result<_, _>>()?;

    if let Some(dir) = &options.out_dir {
        let cells = dir.join("cells");
        std::fs::create_dir_all(&cells).map_err(|source| StudyError::Io {
            path: cells.display().to_string(),
            source,
        })?;
    }

    let pool = if options.workers > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(options.workers)
                .build()
                .expect("worker pool"),
        )
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut degraded_cells = 0usize;
    let mut cell_index: u64 = 0;
    for scenario in &scenarios {
        for &n in &config.ns {
            for &r in &config.rs {
                let truth = cell_truth(config, scenario)?;
                let checkpoint = options.out_dir.as_ref().map(|dir| {
                    dir.join("cells")
                        .join(format!("{}_n{}_r{}.json", scenario.name, n, r))
                });

                let mut results: Option<Vec<ReplicateResult>> = None;
                if options.resume {
                    if let Some(path) = &checkpoint {
                        if let Some(loaded) = load_checkpoint(path, config.replicates) {
                            results = Some(loaded);
                        }
                    }
                }
                let results = match results {
                    Some(r) => r,
                    None => {
                        let compute = || run_cell(config, scenario, n, r, cell_index);
                        let computed = match &pool {
                            Some(p) => p.install(compute)?,
                            None => compute()?,
                        };
                        if let Some(path) = &checkpoint {
                            write_checkpoint(path, &computed)?;
                        }
                        computed
                    }
                };

                for &approach in &config.approaches {
                    match aggregate_metrics(approach, &scenario.name, n, r, &truth, &results) {
                        Ok(row) => rows.push(row),
                        Err(StudyError::InsufficientReplicates { .. }) => {
                            degraded_cells += 1;
                            rows.push(MetricsRow {
                                approach,
                                scenario: scenario.name.clone(),
                                n,
                                r,
                                replicates: 0,
                                bias: f64::NAN,
                                bias_mcse: f64::NAN,
                                var: f64::NAN,
                                var_mcse: f64::NAN,
                                mse: f64::NAN,
                                mse_mcse: f64::NAN,
                                coverage: f64::NAN,
                                coverage_mcse: f64::NAN,
                                prob_optimal: f64::NAN,
                                prob_optimal_mcse: f64::NAN,
                                has_true_optimal: truth.optimal.is_some(),
                                failures: config.replicates,
                            });
                        }
                        Err(other) => return Err(other),
                    }
                }
                cell_index += 1;
            }
        }
    }

    if let Some(dir) = &options.out_dir {
        let path = dir.join("metrics.csv");
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).map_err(|source| StudyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        atomic_write(&path, &buf)?;
    }

    Ok(StudyOutput {
        rows,
        degraded_cells,
    })
}

fn load_checkpoint(path: &Path, expected: usize) -> Option<Vec<ReplicateResult>> {
    let text = std::fs::read_to_string(path).ok()?;
    let results: Vec<ReplicateResult> = serde_json::from_str(&text).ok()?;
    (results.len() == expected).then_some(results)
}

fn write_checkpoint(path: &Path, results: &[ReplicateResult]) -> Result<(), StudyError> {
    let body = serde_json::to_vec(results).expect("replicate results serialize");
    atomic_write(path, &body)
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StudyError> {
    let io_err = |source: io::Error| StudyError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Metrics CSV: `approach,scenario,n,r,replicates,bias,bias_mcse,var,mse,
/// coverage,prob_optimal,failures`. NaN metrics (e.g. `prob_optimal` in null
/// scenarios) are written as `NA`.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "approach,scenario,n,r,replicates,bias,bias_mcse,var,mse,coverage,prob_optimal,failures"
    )?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.approach,
            row.scenario,
            row.n,
            row.r,
            row.replicates,
            fmt_metric(row.bias),
            fmt_metric(row.bias_mcse),
            fmt_metric(row.var),
            fmt_metric(row.mse),
            fmt_metric(row.coverage),
            fmt_metric(row.prob_optimal),
            row.failures
        )?;
    }
    Ok(())
}

fn fmt_metric(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x}")
    }
}
