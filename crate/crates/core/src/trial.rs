//! Domain vocabulary of the two-stage platform SMART.
//!
//! Treatments, embedded regimes, cohorts, trial designs, and scenario
//! parameter sets, plus the analytic regime means every estimator in this
//! crate is validated against. All types are immutable after construction
//! and all operations are pure.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Regime means closer than this are treated as tied (null scenario).
pub const OPTIMAL_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("regime {dtr} is not reachable in cohort {cohort}")]
    UnreachableDtr { dtr: Dtr, cohort: Cohort },
    #[error("missing parameter: {0}")]
    MissingParameter(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Treatments, regimes, cohorts
// ---------------------------------------------------------------------------

/// First-stage treatment arm. `A13` is the arm added mid-trial and exists
/// only in the post-adaptation cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Arm {
    A11,
    A12,
    A13,
}

impl Stage1Arm {
    pub const ALL: [Stage1Arm; 3] = [Stage1Arm::A11, Stage1Arm::A12, Stage1Arm::A13];

    pub fn index(self) -> usize {
        match self {
            Stage1Arm::A11 => 1,
            Stage1Arm::A12 => 2,
            Stage1Arm::A13 => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage1Arm::A11 => "a11",
            Stage1Arm::A12 => "a12",
            Stage1Arm::A13 => "a13",
        }
    }
}

impl fmt::Display for Stage1Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage1Arm {
    type Err = TrialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a11" => Ok(Stage1Arm::A11),
            "a12" => Ok(Stage1Arm::A12),
            "a13" => Ok(Stage1Arm::A13),
            other => Err(TrialError::ConfigParse(format!(
                "unknown first-stage arm `{other}` (expected a11, a12 or a13)"
            ))),
        }
    }
}

/// Second-stage treatment arm offered to responders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage2Arm {
    A21,
    A22,
}

impl Stage2Arm {
    pub const ALL: [Stage2Arm; 2] = [Stage2Arm::A21, Stage2Arm::A22];

    pub fn index(self) -> usize {
        match self {
            Stage2Arm::A21 => 1,
            Stage2Arm::A22 => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage2Arm::A21 => "a21",
            Stage2Arm::A22 => "a22",
        }
    }
}

impl fmt::Display for Stage2Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Stage2Arm {
    type Err = TrialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a21" => Ok(Stage2Arm::A21),
            "a22" => Ok(Stage2Arm::A22),
            other => Err(TrialError::ConfigParse(format!(
                "unknown second-stage arm `{other}` (expected a21 or a22)"
            ))),
        }
    }
}

/// An embedded dynamic treatment regime: start with `first`, continue `first`
/// on non-response, switch to `on_response` on response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dtr {
    pub first: Stage1Arm,
    pub on_response: Stage2Arm,
}

impl Dtr {
    pub const ALL: [Dtr; 6] = [
        Dtr::new(Stage1Arm::A11, Stage2Arm::A21),
        Dtr::new(Stage1Arm::A11, Stage2Arm::A22),
        Dtr::new(Stage1Arm::A12, Stage2Arm::A21),
        Dtr::new(Stage1Arm::A12, Stage2Arm::A22),
        Dtr::new(Stage1Arm::A13, Stage2Arm::A21),
        Dtr::new(Stage1Arm::A13, Stage2Arm::A22),
    ];

    pub const fn new(first: Stage1Arm, on_response: Stage2Arm) -> Self {
        Dtr { first, on_response }
    }

    pub fn reachable_in(self, cohort: Cohort) -> bool {
        cohort.arms().contains(&self.first)
    }

    /// Regimes embedded in the given cohort, in index order.
    pub fn embedded_in(cohort: Cohort) -> Vec<Dtr> {
        Dtr::ALL
            .into_iter()
            .filter(|d| d.reachable_in(cohort))
            .collect()
    }
}

impl fmt::Display for Dtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}{}", self.first.index(), self.on_response.index())
    }
}

impl FromStr for Dtr {
    type Err = TrialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || {
            TrialError::ConfigParse(format!(
                "unknown regime `{s}` (expected d11, d12, d21, d22, d31 or d32)"
            ))
        };
        let bytes = s.as_bytes();
        if bytes.len() != 3 || bytes[0] != b'd' {
            return Err(err());
        }
        let first = match bytes[1] {
            b'1' => Stage1Arm::A11,
            b'2' => Stage1Arm::A12,
            b'3' => Stage1Arm::A13,
            _ => return Err(err()),
        };
        let second = match bytes[2] {
            b'1' => Stage2Arm::A21,
            b'2' => Stage2Arm::A22,
            _ => return Err(err()),
        };
        Ok(Dtr::new(first, second))
    }
}

impl Serialize for Dtr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Dtr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Concurrently randomized cohort: `C1` before the new arm is added, `C2`
/// after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    C1,
    C2,
}

impl Cohort {
    pub const ALL: [Cohort; 2] = [Cohort::C1, Cohort::C2];

    /// First-stage arms available in this cohort.
    pub fn arms(self) -> &'static [Stage1Arm] {
        match self {
            Cohort::C1 => &[Stage1Arm::A11, Stage1Arm::A12],
            Cohort::C2 => &Stage1Arm::ALL,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cohort::C1 => "c1",
            Cohort::C2 => "c2",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Cohort {
    type Err = TrialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "c1" => Ok(Cohort::C1),
            "c2" => Ok(Cohort::C2),
            other => Err(TrialError::ConfigParse(format!(
                "unknown cohort `{other}` (expected c1 or c2)"
            ))),
        }
    }
}

/// Whether larger or smaller regime means are preferable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl FromStr for Direction {
    type Err = TrialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maximize" | "max" => Ok(Direction::Maximize),
            "minimize" | "min" => Ok(Direction::Minimize),
            other => Err(TrialError::ConfigParse(format!(
                "unknown direction `{other}` (expected maximize or minimize)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario parameters
// ---------------------------------------------------------------------------

/// Outcome distribution family for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OutcomeFamily {
    /// Normal outcome with a shared standard deviation across sequences.
    Continuous { sd: f64 },
    /// Bernoulli outcome; sequence means are event probabilities.
    Binary,
}

impl OutcomeFamily {
    pub fn is_binary(self) -> bool {
        matches!(self, OutcomeFamily::Binary)
    }

    /// Standard deviation of the outcome within a treatment sequence whose
    /// mean is `mean`.
    pub fn sequence_sd(self, mean: f64) -> f64 {
        match self {
            OutcomeFamily::Continuous { sd } => sd,
            OutcomeFamily::Binary => (mean * (1.0 - mean)).max(0.0).sqrt(),
        }
    }
}

/// Informational descriptor of the between-cohort drift baked into a
/// scenario's parameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeEffect {
    Additive { value: f64 },
    OddsRatio { value: f64 },
    Heterogeneous,
}

/// Generative parameters for one first-stage arm within one cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmParams {
    /// Response rate for the arm.
    pub response_rate: f64,
    /// Mean outcome for the sequence "start arm, do not respond, continue".
    pub mean_continue: f64,
    /// Mean outcome for the sequences "start arm, respond, switch to a2k",
    /// indexed k-1.
    pub mean_switch: [f64; 2],
}

impl ArmParams {
    pub fn mean_switch_to(&self, arm: Stage2Arm) -> f64 {
        self.mean_switch[arm.index() - 1]
    }
}

/// Per-cohort generative parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CohortParams {
    pub arms: BTreeMap<Stage1Arm, ArmParams>,
}

impl CohortParams {
    pub fn arm(&self, arm: Stage1Arm) -> Result<&ArmParams, TrialError> {
        self.arms
            .get(&arm)
            .ok_or_else(|| TrialError::MissingParameter(format!("no parameters for arm {arm}")))
    }

    /// Composition of the regime mean from the response rate and sequence
    /// means of this parameter set, with no reachability gate. Used for truth
    /// tables, which list hypothetical new-arm values for the pre-adaptation
    /// cohort as well.
    pub fn dtr_mean(&self, dtr: Dtr) -> Result<f64, TrialError> {
        let arm = self.arm(dtr.first)?;
        let pi = arm.response_rate;
        Ok(pi * arm.mean_switch_to(dtr.on_response) + (1.0 - pi) * arm.mean_continue)
    }
}

/// One scenario row of the generative tables: outcome family plus per-cohort
/// response rates and sequence means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioParams {
    pub name: String,
    pub family: OutcomeFamily,
    pub time_effect: Option<TimeEffect>,
    pub c1: CohortParams,
    pub c2: CohortParams,
}

impl ScenarioParams {
    pub fn cohort(&self, cohort: Cohort) -> &CohortParams {
        match cohort {
            Cohort::C1 => &self.c1,
            Cohort::C2 => &self.c2,
        }
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        let invalid = |what: String| Err(TrialError::InvalidScenario(what));
        if let OutcomeFamily::Continuous { sd } = self.family {
            if !(sd.is_finite() && sd >= 0.0) {
                return invalid(format!("sd must be finite and non-negative, got {sd}"));
            }
        }
        for (cohort, params) in [(Cohort::C1, &self.c1), (Cohort::C2, &self.c2)] {
            for arm in cohort.arms() {
                if !params.arms.contains_key(arm) {
                    return invalid(format!("cohort {cohort} is missing parameters for {arm}"));
                }
            }
            for (arm, p) in &params.arms {
                if !(p.response_rate > 0.0 && p.response_rate < 1.0) {
                    return invalid(format!(
                        "response_rate.{arm}.{cohort} must lie in (0, 1), got {}",
                        p.response_rate
                    ));
                }
                let means = [p.mean_continue, p.mean_switch[0], p.mean_switch[1]];
                for m in means {
                    if !m.is_finite() {
                        return invalid(format!("sequence mean for {arm}.{cohort} is not finite"));
                    }
                    if self.family.is_binary() && !(m > 0.0 && m < 1.0) {
                        return invalid(format!(
                            "binary sequence mean for {arm}.{cohort} must lie in (0, 1), got {m}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Analytic mean of one regime in one cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtrTruth {
    pub dtr: Dtr,
    pub cohort: Cohort,
    pub mean: f64,
}

/// Expected outcome of `dtr` in `cohort`: the response-rate-weighted
/// composition of the two sequence means. Errors when the regime's first
/// arm does not exist in the cohort.
pub fn true_dtr_mean(
    scenario: &ScenarioParams,
    cohort: Cohort,
    dtr: Dtr,
) -> Result<f64, TrialError> {
    if !dtr.reachable_in(cohort) {
        return Err(TrialError::UnreachableDtr { dtr, cohort });
    }
    scenario.cohort(cohort).dtr_mean(dtr)
}

/// All reachable regime truths for a cohort, in regime index order.
pub fn truth_table(scenario: &ScenarioParams, cohort: Cohort) -> Result<Vec<DtrTruth>, TrialError> {
    Dtr::embedded_in(cohort)
        .into_iter()
        .map(|dtr| {
            true_dtr_mean(scenario, cohort, dtr).map(|mean| DtrTruth { dtr, cohort, mean })
        })
        .collect()
}

/// Arg-extremum of the regime means reachable in `cohort`. Returns `None`
/// when all means agree within [`OPTIMAL_TIE_TOL`] (null scenario). Ties at
/// the extremum break to the lowest regime index.
pub fn optimal_dtr(
    scenario: &ScenarioParams,
    cohort: Cohort,
    direction: Direction,
) -> Result<Option<Dtr>, TrialError> {
    let truths = truth_table(scenario, cohort)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in &truths {
        lo = lo.min(t.mean);
        hi = hi.max(t.mean);
    }
    if hi - lo <= OPTIMAL_TIE_TOL {
        return Ok(None);
    }
    Ok(pick_extremum(
        truths.iter().map(|t| (t.dtr, t.mean)),
        direction,
    ))
}

/// First strict extremum in iteration order (lowest-index tie-break).
pub fn pick_extremum<I: IntoIterator<Item = (Dtr, f64)>>(
    items: I,
    direction: Direction,
) -> Option<Dtr> {
    let mut best: Option<(Dtr, f64)> = None;
    for (dtr, mean) in items {
        let better = match (&best, direction) {
            (None, _) => true,
            (Some((_, b)), Direction::Maximize) => mean > *b,
            (Some((_, b)), Direction::Minimize) => mean < *b,
        };
        if better {
            best = Some((dtr, mean));
        }
    }
    best.map(|(dtr, _)| dtr)
}

// ---------------------------------------------------------------------------
// Trial design and allocation
// ---------------------------------------------------------------------------

/// Planned design of a platform SMART: the original sample size `n` and the
/// adaptation timing ratio `r = n1 / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    n: usize,
    r: f64,
}

impl TrialDesign {
    /// Validates `n >= 2` and `0 <= r < 1`, and that the derived per-arm
    /// targets are all at least one participant (an exactly empty
    /// pre-adaptation cohort at `r = 0` is permitted).
    pub fn new(n: usize, r: f64) -> Result<Self, TrialError> {
        let invalid = |what: String| Err(TrialError::InvalidDesign(what));
        if n < 2 {
            return invalid(format!("n must be at least 2, got {n}"));
        }
        if !(r.is_finite() && (0.0..1.0).contains(&r)) {
            return invalid(format!("r must lie in [0, 1), got {r}"));
        }
        let design = TrialDesign { n, r };
        design.allocation_plan()?;
        Ok(design)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Pre-adaptation cohort size, `round(r * n)`.
    pub fn cohort1_size(&self) -> usize {
        (self.r * self.n as f64).round() as usize
    }

    /// Per-cohort, per-arm target counts and randomization probabilities.
    ///
    /// The pre-adaptation cohort splits `n1` equally over the two original
    /// arms with stage-1 probability 0.5 each. The post-adaptation cohort is
    /// skewed toward the new arm so each of the three arms ends the trial
    /// with `n / 2` participants overall: targets `(n - n1)/2`, `(n - n1)/2`
    /// and `n/2`, with stage-1 probabilities proportional to the targets.
    /// Second-stage randomization is 0.5 in both cohorts. Fractional targets
    /// are resolved by largest remainder so cohort totals are exact.
    pub fn allocation_plan(&self) -> Result<AllocationPlan, TrialError> {
        let n = self.n as f64;
        let n1 = self.cohort1_size();

        let c1 = if n1 == 0 {
            CohortAllocation {
                arm_targets: BTreeMap::new(),
                stage1_probs: BTreeMap::new(),
                stage2_prob: 0.5,
                total: 0,
            }
        } else {
            let counts = largest_remainder(&[n1 as f64 / 2.0, n1 as f64 / 2.0], n1);
            let arms = [Stage1Arm::A11, Stage1Arm::A12];
            for (arm, &c) in arms.iter().zip(&counts) {
                if c < 1 {
                    return Err(TrialError::InvalidDesign(format!(
                        "cohort c1 target for {arm} is below one participant (n={}, r={})",
                        self.n, self.r
                    )));
                }
            }
            CohortAllocation {
                arm_targets: arms.iter().copied().zip(counts.iter().copied()).collect(),
                stage1_probs: arms.iter().map(|&a| (a, 0.5)).collect(),
                stage2_prob: 0.5,
                total: n1,
            }
        };

        let c2_total = (1.5 * n).round() as usize - n1;
        let quotas = [(n - n1 as f64) / 2.0, (n - n1 as f64) / 2.0, n / 2.0];
        let counts = largest_remainder(&quotas, c2_total);
        for (arm, &c) in Stage1Arm::ALL.iter().zip(&counts) {
            if c < 1 {
                return Err(TrialError::InvalidDesign(format!(
                    "cohort c2 target for {arm} is below one participant (n={}, r={})",
                    self.n, self.r
                )));
            }
        }
        let c2 = CohortAllocation {
            arm_targets: Stage1Arm::ALL
                .iter()
                .copied()
                .zip(counts.iter().copied())
                .collect(),
            stage1_probs: Stage1Arm::ALL
                .iter()
                .zip(&counts)
                .map(|(&a, &c)| (a, c as f64 / c2_total as f64))
                .collect(),
            stage2_prob: 0.5,
            total: c2_total,
        };

        Ok(AllocationPlan { c1, c2 })
    }
}

/// Arm targets and randomization probabilities for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortAllocation {
    pub arm_targets: BTreeMap<Stage1Arm, usize>,
    pub stage1_probs: BTreeMap<Stage1Arm, f64>,
    /// Randomization probability for each second-stage arm among responders.
    pub stage2_prob: f64,
    pub total: usize,
}

/// Full allocation plan for both cohorts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    pub c1: CohortAllocation,
    pub c2: CohortAllocation,
}

impl AllocationPlan {
    pub fn cohort(&self, cohort: Cohort) -> &CohortAllocation {
        match cohort {
            Cohort::C1 => &self.c1,
            Cohort::C2 => &self.c2,
        }
    }

    /// Trial-wide target for one first-stage arm (sums both cohorts).
    pub fn arm_total(&self, arm: Stage1Arm) -> usize {
        self.c1.arm_targets.get(&arm).copied().unwrap_or(0)
            + self.c2.arm_targets.get(&arm).copied().unwrap_or(0)
    }

    pub fn trial_total(&self) -> usize {
        self.c1.total + self.c2.total
    }
}

/// Round real quotas to integers summing exactly to `total` by largest
/// remainder; ties go to the earliest index.
fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.max(0.0).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(assigned);
    for idx in order {
        if remaining == 0 {
            break;
        }
        counts[idx] += 1;
        remaining -= 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Built-in scenario registry
// ---------------------------------------------------------------------------

/// Shared outcome standard deviation for the built-in continuous scenarios.
/// The generative tables do not pin this value; it is configurable in custom
/// scenario files and scales all variance-level results.
pub const DEFAULT_CONTINUOUS_SD: f64 = 2.0;

/// Sequence order used by the compact table constructors below:
/// a11a11, a11a21, a11a22, a12a12, a12a21, a12a22, a13a13, a13a21, a13a22.
fn scenario_from_rows(
    name: &str,
    family: OutcomeFamily,
    time_effect: Option<TimeEffect>,
    response_rates: [[f64; 2]; 3],
    seq_means: [[f64; 2]; 9],
) -> ScenarioParams {
    let cohort = |l: usize| {
        let arms = Stage1Arm::ALL
            .iter()
            .enumerate()
            .map(|(j, &arm)| {
                (
                    arm,
                    ArmParams {
                        response_rate: response_rates[j][l],
                        mean_continue: seq_means[3 * j][l],
                        mean_switch: [seq_means[3 * j + 1][l], seq_means[3 * j + 2][l]],
                    },
                )
            })
            .collect();
        CohortParams { arms }
    };
    ScenarioParams {
        name: name.to_string(),
        family,
        time_effect,
        c1: cohort(0),
        c2: cohort(1),
    }
}

/// All built-in scenarios: five continuous rows (`table1-s1` .. `table1-s5`)
/// and three binary rows (`table2-s1` .. `table2-s3`).
pub fn builtin_scenarios() -> Vec<ScenarioParams> {
    let cont = OutcomeFamily::Continuous {
        sd: DEFAULT_CONTINUOUS_SD,
    };
    let eq = |v: f64| [v, v];
    vec![
        scenario_from_rows(
            "table1-s1",
            cont,
            None,
            [eq(0.5), eq(0.5), eq(0.5)],
            [
                eq(15.0),
                eq(17.0),
                eq(17.0),
                eq(15.0),
                eq(17.0),
                eq(17.0),
                eq(15.0),
                eq(17.0),
                eq(17.0),
            ],
        ),
        scenario_from_rows(
            "table1-s2",
            cont,
            None,
            [eq(0.4), eq(0.5), eq(0.6)],
            [
                eq(15.0),
                eq(17.0),
                eq(18.0),
                eq(19.0),
                eq(18.0),
                eq(16.0),
                eq(16.0),
                eq(16.0),
                eq(17.0),
            ],
        ),
        scenario_from_rows(
            "table1-s3",
            cont,
            None,
            [eq(0.4), eq(0.5), eq(0.6)],
            [
                eq(15.0),
                eq(17.0),
                eq(18.0),
                eq(19.0),
                eq(18.0),
                eq(16.0),
                eq(20.0),
                eq(19.0),
                eq(17.0),
            ],
        ),
        scenario_from_rows(
            "table1-s4",
            cont,
            Some(TimeEffect::Additive { value: 2.0 }),
            [[0.4, 0.5], [0.5, 0.6], [0.6, 0.7]],
            [
                [16.0, 18.0],
                [19.0, 21.0],
                [18.0, 20.0],
                [19.0, 21.0],
                [18.0, 20.0],
                [16.0, 18.0],
                [20.0, 22.0],
                [19.0, 21.0],
                [17.0, 19.0],
            ],
        ),
        scenario_from_rows(
            "table1-s5",
            cont,
            Some(TimeEffect::Heterogeneous),
            [[0.4, 0.5], [0.5, 0.6], [0.6, 0.7]],
            [
                [15.0, 17.0],
                [17.0, 19.0],
                [18.0, 20.0],
                [19.0, 21.0],
                [18.0, 20.0],
                [16.0, 18.0],
                [21.0, 22.0],
                [19.0, 20.0],
                [17.0, 18.0],
            ],
        ),
        scenario_from_rows(
            "table2-s1",
            OutcomeFamily::Binary,
            None,
            [eq(0.550), eq(0.500), eq(0.450)],
            [
                eq(0.168),
                eq(0.150),
                eq(0.150),
                eq(0.168),
                eq(0.150),
                eq(0.150),
                eq(0.168),
                eq(0.150),
                eq(0.150),
            ],
        ),
        scenario_from_rows(
            "table2-s2",
            OutcomeFamily::Binary,
            None,
            [eq(0.550), eq(0.500), eq(0.450)],
            [
                eq(0.168),
                eq(0.150),
                eq(0.160),
                eq(0.200),
                eq(0.160),
                eq(0.190),
                eq(0.140),
                eq(0.120),
                eq(0.130),
            ],
        ),
        scenario_from_rows(
            "table2-s3",
            OutcomeFamily::Binary,
            Some(TimeEffect::OddsRatio { value: 1.5 }),
            [eq(0.550), eq(0.500), eq(0.450)],
            [
                [0.168, 0.230],
                [0.150, 0.210],
                [0.160, 0.220],
                [0.200, 0.270],
                [0.160, 0.220],
                [0.190, 0.260],
                [0.140, 0.200],
                [0.120, 0.170],
                [0.130, 0.240],
            ],
        ),
    ]
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioParams> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

/// Resolve a scenario reference: a built-in name first, otherwise a path to a
/// scenario configuration file.
pub fn resolve_scenario(reference: &str) -> Result<ScenarioParams, TrialError> {
    if let Some(s) = builtin_scenario(reference) {
        return Ok(s);
    }
    let path = Path::new(reference);
    if path.exists() {
        return load_scenario_file(path);
    }
    Err(TrialError::ConfigParse(format!(
        "`{reference}` is neither a built-in scenario nor an existing file; built-ins: {}",
        builtin_scenarios()
            .iter()
            .map(|s| s.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    )))
}

// ---------------------------------------------------------------------------
// Scenario configuration files
// ---------------------------------------------------------------------------

/// Documented key schema for scenario configuration files.
pub const SCENARIO_SCHEMA: &str = r#"# Scenario configuration (TOML)
#
# name    = "my-scenario"        # required
# outcome = "continuous"         # "continuous" | "binary"
# sd      = 2.0                  # required for continuous, forbidden for binary
# time_effect = { kind = "additive", value = 2.0 }   # optional; kinds:
#                                # "additive", "odds-ratio" (value), "heterogeneous"
#
# One block per first-stage arm; c1 values for a13 are optional (the new arm
# does not exist pre-adaptation; supply them to define hypothetical truths).
#
# [response_rate.a11]
# c1 = 0.4
# c2 = 0.4
#
# One block per treatment sequence. Sequence keys:
#   a11_a11 a11_a21 a11_a22   (continue / switch-to-a21 / switch-to-a22)
#   a12_a12 a12_a21 a12_a22
#   a13_a13 a13_a21 a13_a22
#
# [seq_mean.a11_a21]
# c1 = 17.0
# c2 = 17.0
"#;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    outcome: String,
    sd: Option<f64>,
    time_effect: Option<RawTimeEffect>,
    #[serde(default)]
    response_rate: BTreeMap<String, RawCohortPair>,
    #[serde(default)]
    seq_mean: BTreeMap<String, RawCohortPair>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeEffect {
    kind: String,
    value: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCohortPair {
    c1: Option<f64>,
    c2: Option<f64>,
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioParams, TrialError> {
    let text = std::fs::read_to_string(path).map_err(|source| TrialError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_toml(&text)
}

pub fn parse_scenario_toml(text: &str) -> Result<ScenarioParams, TrialError> {
    let raw: RawScenario =
        toml::from_str(text).map_err(|e| TrialError::ConfigParse(e.to_string()))?;

    let family = match raw.outcome.as_str() {
        "continuous" => {
            let sd = raw.sd.ok_or_else(|| {
                TrialError::ConfigParse("missing field `sd` for continuous outcome".into())
            })?;
            OutcomeFamily::Continuous { sd }
        }
        "binary" => {
            if raw.sd.is_some() {
                return Err(TrialError::ConfigParse(
                    "field `sd` is not allowed for binary outcome".into(),
                ));
            }
            OutcomeFamily::Binary
        }
        other => {
            return Err(TrialError::ConfigParse(format!(
                "unknown outcome `{other}` (expected continuous or binary)"
            )))
        }
    };

    let time_effect = match raw.time_effect {
        None => None,
        Some(te) => Some(match te.kind.as_str() {
            "additive" => TimeEffect::Additive {
                value: te.value.ok_or_else(|| {
                    TrialError::ConfigParse("time_effect.value required for additive".into())
                })?,
            },
            "odds-ratio" => TimeEffect::OddsRatio {
                value: te.value.ok_or_else(|| {
                    TrialError::ConfigParse("time_effect.value required for odds-ratio".into())
                })?,
            },
            "heterogeneous" => TimeEffect::Heterogeneous,
            other => {
                return Err(TrialError::ConfigParse(format!(
                    "unknown time_effect kind `{other}`"
                )))
            }
        }),
    };

    let lookup = |map: &BTreeMap<String, RawCohortPair>,
                  section: &str,
                  key: &str,
                  cohort: Cohort,
                  required: bool|
     -> Result<Option<f64>, TrialError> {
        let pair = map.get(key);
        let value = pair.and_then(|p| match cohort {
            Cohort::C1 => p.c1,
            Cohort::C2 => p.c2,
        });
        if value.is_none() && required {
            return Err(TrialError::ConfigParse(format!(
                "missing field `{section}.{key}.{cohort}`"
            )));
        }
        Ok(value)
    };

    for key in raw.response_rate.keys() {
        key.parse::<Stage1Arm>()?;
    }
    let seq_keys = [
        "a11_a11", "a11_a21", "a11_a22", "a12_a12", "a12_a21", "a12_a22", "a13_a13", "a13_a21",
        "a13_a22",
    ];
    for key in raw.seq_mean.keys() {
        if !seq_keys.contains(&key.as_str()) {
            return Err(TrialError::ConfigParse(format!(
                "unknown sequence key `seq_mean.{key}`"
            )));
        }
    }

    let mut cohorts = [CohortParams::default(), CohortParams::default()];
    for (ci, cohort) in Cohort::ALL.into_iter().enumerate() {
        for (j, &arm) in Stage1Arm::ALL.iter().enumerate() {
            // a13 rows are optional for the pre-adaptation cohort.
            let required = cohort == Cohort::C2 || arm != Stage1Arm::A13;
            let rr = lookup(&raw.response_rate, "response_rate", arm.label(), cohort, required)?;
            let keys = &seq_keys[3 * j..3 * j + 3];
            let cont = lookup(&raw.seq_mean, "seq_mean", keys[0], cohort, required)?;
            let sw1 = lookup(&raw.seq_mean, "seq_mean", keys[1], cohort, required)?;
            let sw2 = lookup(&raw.seq_mean, "seq_mean", keys[2], cohort, required)?;
            match (rr, cont, sw1, sw2) {
                (Some(rr), Some(cont), Some(sw1), Some(sw2)) => {
                    cohorts[ci].arms.insert(
                        arm,
                        ArmParams {
                            response_rate: rr,
                            mean_continue: cont,
                            mean_switch: [sw1, sw2],
                        },
                    );
                }
                (None, None, None, None) => {}
                _ => {
                    return Err(TrialError::ConfigParse(format!(
                        "incomplete parameters for {arm}.{cohort}: provide all of response_rate \
                         and the three sequence means, or none"
                    )))
                }
            }
        }
    }
    let [c1, c2] = cohorts;

    let scenario = ScenarioParams {
        name: raw.name,
        family,
        time_effect,
        c1,
        c2,
    };
    scenario.validate()?;
    Ok(scenario)
}
