//! Inverse-probability-weighted regime-mean estimation.
//!
//! Point estimates weight each trajectory by the inverse of its
//! randomization probability under the regime: non-responders on the
//! regime's first arm get weight `1/p`, responders who also received the
//! regime's second-stage arm get `1/(p q)`, everyone else zero. Variance and
//! covariance come either from the weighted-residual sums over the cohort or
//! from the asymptotic formulas evaluated at scenario-level parameters.
//!
//! Two platform analyses are built on top: `separate` (post-adaptation
//! cohort only) and `pooling` (cohort-size-weighted combination for the
//! original regimes, falling back to the post-adaptation estimate for the
//! new-arm regimes).

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::datagen::ParticipantRecord;
use crate::trial::{AllocationPlan, Cohort, Direction, Dtr, OutcomeFamily, ScenarioParams, Stage1Arm, pick_extremum};

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum IpwError {
    #[error("no record is consistent with regime {0}")]
    EmptyWeight(Dtr),
    #[error("cohort {cohort} has no records for arm {arm}")]
    EmptyArm { cohort: Cohort, arm: Stage1Arm },
    #[error("cohort {0} is empty")]
    EmptyCohort(Cohort),
    #[error("randomization probability out of (0, 1): {0}")]
    InvalidProb(f64),
    #[error("no responders in cohort {cohort} arm {arm} to estimate second-stage frequencies")]
    NoResponders { cohort: Cohort, arm: Stage1Arm },
    #[error("no randomization probability available for arm {0}")]
    MissingProbability(Stage1Arm),
}

fn check_prob(p: f64) -> Result<(), IpwError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(IpwError::InvalidProb(p))
    }
}

/// Regime weight for one record.
fn weight(rec: &ParticipantRecord, dtr: Dtr, p: f64, q: f64) -> f64 {
    if rec.first != dtr.first {
        return 0.0;
    }
    match rec.switch_arm() {
        None => 1.0 / p,
        Some(arm) if arm == dtr.on_response => 1.0 / (p * q),
        Some(_) => 0.0,
    }
}

/// Weighted-mean regime estimate: `sum(w y) / sum(w)`.
pub fn ipw_dtr_mean(
    records: &[ParticipantRecord],
    dtr: Dtr,
    p: f64,
    q: f64,
) -> Result<f64, IpwError> {
    check_prob(p)?;
    check_prob(q)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for rec in records {
        let w = weight(rec, dtr, p, q);
        num += w * rec.y;
        den += w;
    }
    if den == 0.0 {
        return Err(IpwError::EmptyWeight(dtr));
    }
    Ok(num / den)
}

/// Weighted-residual variance estimate,
/// `(1/n^2) sum { w (y - mean_hat) }^2`, with `n` the number of records
/// passed in (the cohort size, not the regime-consistent count).
pub fn ipw_var_empirical(
    records: &[ParticipantRecord],
    dtr: Dtr,
    p: f64,
    q: f64,
    mean_hat: f64,
) -> Result<f64, IpwError> {
    check_prob(p)?;
    check_prob(q)?;
    let n = records.len() as f64;
    let mut sum = 0.0;
    let mut any = false;
    for rec in records {
        let w = weight(rec, dtr, p, q);
        if w > 0.0 {
            any = true;
            let term = w * (rec.y - mean_hat);
            sum += term * term;
        }
    }
    if !any {
        return Err(IpwError::EmptyWeight(dtr));
    }
    Ok(sum / (n * n))
}

/// Weighted cross-product covariance estimate for two regimes sharing a
/// first-stage arm. Regimes starting with different arms have zero
/// covariance by construction and return 0 immediately.
pub fn ipw_cov_empirical(
    records: &[ParticipantRecord],
    dtr_a: Dtr,
    dtr_b: Dtr,
    p: f64,
    q_a: f64,
    q_b: f64,
    mean_a: f64,
    mean_b: f64,
) -> Result<f64, IpwError> {
    if dtr_a.first != dtr_b.first {
        return Ok(0.0);
    }
    if dtr_a == dtr_b {
        return ipw_var_empirical(records, dtr_a, p, q_a, mean_a);
    }
    check_prob(p)?;
    check_prob(q_a)?;
    check_prob(q_b)?;
    let n = records.len() as f64;
    let mut sum = 0.0;
    let mut any = false;
    for rec in records {
        let wa = weight(rec, dtr_a, p, q_a);
        let wb = weight(rec, dtr_b, p, q_b);
        if wa > 0.0 || wb > 0.0 {
            any = true;
        }
        if wa > 0.0 && wb > 0.0 {
            sum += wa * (rec.y - mean_a) * wb * (rec.y - mean_b);
        }
    }
    if !any {
        return Err(IpwError::EmptyWeight(dtr_a));
    }
    Ok(sum / (n * n))
}

/// Scenario-level inputs to the asymptotic variance formula.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticInputs {
    pub response_rate: f64,
    pub p: f64,
    pub q: f64,
    pub mean_continue: f64,
    pub mean_switch: f64,
    pub var_continue: f64,
    pub var_switch: f64,
    pub n: usize,
}

/// Asymptotic variance of the IPW regime estimator:
///
/// `(1/n) [ (pi/(p q)) { var_sw + (1-pi)^2 (mu_ct - mu_sw)^2 }
///        + ((1-pi)/p) { var_ct + pi^2 (mu_ct - mu_sw)^2 } ]`.
pub fn ipw_var_asymptotic(inp: &AsymptoticInputs) -> f64 {
    let pi = inp.response_rate;
    let gap = inp.mean_continue - inp.mean_switch;
    let term_sw = (pi / (inp.p * inp.q)) * (inp.var_switch + (1.0 - pi).powi(2) * gap * gap);
    let term_ct = ((1.0 - pi) / inp.p) * (inp.var_continue + pi * pi * gap * gap);
    (term_sw + term_ct) / inp.n as f64
}

/// Asymptotic covariance of two IPW regime estimators sharing a first-stage
/// arm:
///
/// `((1-pi)/(p n)) { var_ct + pi^2 (mu_ct - mu_sw)(mu_ct - mu_sw') }`.
pub fn ipw_cov_asymptotic(
    response_rate: f64,
    p: f64,
    mean_continue: f64,
    var_continue: f64,
    mean_switch_a: f64,
    mean_switch_b: f64,
    n: usize,
) -> f64 {
    let pi = response_rate;
    let cross = (mean_continue - mean_switch_a) * (mean_continue - mean_switch_b);
    ((1.0 - pi) / (p * n as f64)) * (var_continue + pi * pi * cross)
}

/// Build the asymptotic-formula inputs for one regime from scenario
/// parameters and an allocation plan.
pub fn asymptotic_inputs(
    scenario: &ScenarioParams,
    cohort: Cohort,
    dtr: Dtr,
    plan: &AllocationPlan,
) -> Result<AsymptoticInputs, IpwError> {
    let params = scenario
        .cohort(cohort)
        .arm(dtr.first)
        .map_err(|_| IpwError::EmptyArm {
            cohort,
            arm: dtr.first,
        })?;
    let alloc = plan.cohort(cohort);
    let p = *alloc
        .stage1_probs
        .get(&dtr.first)
        .ok_or(IpwError::EmptyArm {
            cohort,
            arm: dtr.first,
        })?;
    let mean_switch = params.mean_switch_to(dtr.on_response);
    Ok(AsymptoticInputs {
        response_rate: params.response_rate,
        p,
        q: alloc.stage2_prob,
        mean_continue: params.mean_continue,
        mean_switch,
        var_continue: sequence_var(scenario.family, params.mean_continue),
        var_switch: sequence_var(scenario.family, mean_switch),
        n: alloc.total,
    })
}

fn sequence_var(family: OutcomeFamily, mean: f64) -> f64 {
    let sd = family.sequence_sd(mean);
    sd * sd
}

// ---------------------------------------------------------------------------
// Approach-level estimates
// ---------------------------------------------------------------------------

/// Which analysis produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproachKind {
    Separate,
    Pooling,
    CohortSpecific(Cohort),
}

impl std::fmt::Display for ApproachKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApproachKind::Separate => f.write_str("separate"),
            ApproachKind::Pooling => f.write_str("pooling"),
            ApproachKind::CohortSpecific(c) => write!(f, "cohort-{c}"),
        }
    }
}

/// Point estimate and Wald interval for one regime mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DtrEstimate {
    pub dtr: Dtr,
    pub mean: f64,
    pub var: f64,
    pub approach: ApproachKind,
    /// Number of records consistent with the regime.
    pub n_effective: usize,
    pub ci: (f64, f64),
}

/// Symmetric regime-pair covariance table. Pairs with different first-stage
/// arms are zero.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DtrCovarianceTable {
    entries: BTreeMap<(Dtr, Dtr), f64>,
}

impl DtrCovarianceTable {
    fn key(a: Dtr, b: Dtr) -> (Dtr, Dtr) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn set(&mut self, a: Dtr, b: Dtr, value: f64) {
        self.entries.insert(Self::key(a, b), value);
    }

    pub fn get(&self, a: Dtr, b: Dtr) -> f64 {
        self.entries.get(&Self::key(a, b)).copied().unwrap_or(0.0)
    }
}

/// Difference of two regime means with a Wald interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiffEstimate {
    pub a: Dtr,
    pub b: Dtr,
    pub mean: f64,
    pub var: f64,
    pub ci: (f64, f64),
}

/// One analysis approach's estimates for every reachable regime.
#[derive(Debug, Clone, Serialize)]
pub struct ApproachEstimates {
    pub approach: ApproachKind,
    pub estimates: BTreeMap<Dtr, DtrEstimate>,
    pub cov: DtrCovarianceTable,
}

impl ApproachEstimates {
    pub fn estimate(&self, dtr: Dtr) -> Option<&DtrEstimate> {
        self.estimates.get(&dtr)
    }

    /// `mean_a - mean_b` with variance `V_a + V_b - 2 cov`.
    pub fn difference(&self, a: Dtr, b: Dtr) -> Result<DiffEstimate, IpwError> {
        let ea = self.estimates.get(&a).ok_or(IpwError::EmptyWeight(a))?;
        let eb = self.estimates.get(&b).ok_or(IpwError::EmptyWeight(b))?;
        let mean = ea.mean - eb.mean;
        let var = (ea.var + eb.var - 2.0 * self.cov.get(a, b)).max(0.0);
        let half = WALD_Z * var.sqrt();
        Ok(DiffEstimate {
            a,
            b,
            mean,
            var,
            ci: (mean - half, mean + half),
        })
    }

    /// Estimated optimal regime (lowest-index tie-break).
    pub fn optimal(&self, direction: Direction) -> Option<Dtr> {
        pick_extremum(self.estimates.iter().map(|(&d, e)| (d, e.mean)), direction)
    }
}

/// Export one approach's estimates as CSV
/// (`approach,dtr,mean,var,ci_lo,ci_hi`).
pub fn write_estimates_csv<W: std::io::Write>(
    estimates: &ApproachEstimates,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "approach,dtr,mean,var,ci_lo,ci_hi")?;
    for (dtr, est) in &estimates.estimates {
        writeln!(
            out,
            "{},{dtr},{},{},{},{}",
            estimates.approach, est.mean, est.var, est.ci.0, est.ci.1
        )?;
    }
    Ok(())
}

/// Stage-1 and stage-2 randomization probabilities used in the weights for
/// one cohort. Stage-2 probabilities are per (first arm, second arm).
#[derive(Debug, Clone, Default)]
pub struct CohortProbs {
    pub stage1: BTreeMap<Stage1Arm, f64>,
    pub stage2: BTreeMap<Stage1Arm, [f64; 2]>,
}

impl CohortProbs {
    pub fn p(&self, arm: Stage1Arm) -> Result<f64, IpwError> {
        self.stage1
            .get(&arm)
            .copied()
            .ok_or(IpwError::MissingProbability(arm))
    }

    pub fn q(&self, dtr: Dtr) -> Result<f64, IpwError> {
        self.stage2
            .get(&dtr.first)
            .map(|qs| qs[dtr.on_response.index() - 1])
            .ok_or(IpwError::MissingProbability(dtr.first))
    }
}

/// Weight probabilities for both cohorts.
#[derive(Debug, Clone)]
pub struct DesignProbs {
    pub c1: CohortProbs,
    pub c2: CohortProbs,
}

impl DesignProbs {
    pub fn cohort(&self, cohort: Cohort) -> &CohortProbs {
        match cohort {
            Cohort::C1 => &self.c1,
            Cohort::C2 => &self.c2,
        }
    }

    /// The design's nominal probabilities (the default weighting).
    pub fn nominal(plan: &AllocationPlan) -> Self {
        let build = |cohort: Cohort| {
            let alloc = plan.cohort(cohort);
            CohortProbs {
                stage1: alloc.stage1_probs.clone(),
                stage2: alloc
                    .stage1_probs
                    .keys()
                    .map(|&arm| (arm, [alloc.stage2_prob, 1.0 - alloc.stage2_prob]))
                    .collect(),
            }
        };
        DesignProbs {
            c1: build(Cohort::C1),
            c2: build(Cohort::C2),
        }
    }

    /// Realized arm frequencies, for analyzing datasets whose design is
    /// unknown (or as the optional realized-weighting mode).
    pub fn realized(records: &[ParticipantRecord]) -> Result<Self, IpwError> {
        let mut probs = DesignProbs {
            c1: CohortProbs::default(),
            c2: CohortProbs::default(),
        };
        for cohort in Cohort::ALL {
            let cohort_records: Vec<&ParticipantRecord> =
                records.iter().filter(|r| r.cohort == cohort).collect();
            if cohort_records.is_empty() {
                continue;
            }
            let total = cohort_records.len() as f64;
            let target = match cohort {
                Cohort::C1 => &mut probs.c1,
                Cohort::C2 => &mut probs.c2,
            };
            for &arm in cohort.arms() {
                let in_arm: Vec<&&ParticipantRecord> = cohort_records
                    .iter()
                    .filter(|r| r.first == arm)
                    .collect();
                if in_arm.is_empty() {
                    continue;
                }
                target.stage1.insert(arm, in_arm.len() as f64 / total);
                let responders: Vec<&&&ParticipantRecord> =
                    in_arm.iter().filter(|r| r.responded()).collect();
                if responders.is_empty() {
                    return Err(IpwError::NoResponders { cohort, arm });
                }
                let to_a21 = responders
                    .iter()
                    .filter(|r| r.switch_arm() == Some(crate::trial::Stage2Arm::A21))
                    .count() as f64;
                let q1 = to_a21 / responders.len() as f64;
                target.stage2.insert(arm, [q1, 1.0 - q1]);
            }
        }
        Ok(probs)
    }
}

/// IPW estimates and covariance table from one cohort's records.
pub fn cohort_estimates(
    records: &[ParticipantRecord],
    cohort: Cohort,
    probs: &CohortProbs,
) -> Result<ApproachEstimates, IpwError> {
    let cohort_records: Vec<ParticipantRecord> = records
        .iter()
        .filter(|r| r.cohort == cohort)
        .copied()
        .collect();
    if cohort_records.is_empty() {
        return Err(IpwError::EmptyCohort(cohort));
    }
    for &arm in cohort.arms() {
        if !cohort_records.iter().any(|r| r.first == arm) {
            return Err(IpwError::EmptyArm { cohort, arm });
        }
    }

    let dtrs = Dtr::embedded_in(cohort);
    let mut estimates = BTreeMap::new();
    for &dtr in &dtrs {
        let p = probs.p(dtr.first)?;
        let q = probs.q(dtr)?;
        let mean = ipw_dtr_mean(&cohort_records, dtr, p, q)?;
        let var = ipw_var_empirical(&cohort_records, dtr, p, q, mean)?;
        let n_effective = cohort_records
            .iter()
            .filter(|r| weight(r, dtr, p, q) > 0.0)
            .count();
        let half = WALD_Z * var.sqrt();
        estimates.insert(
            dtr,
            DtrEstimate {
                dtr,
                mean,
                var,
                approach: ApproachKind::CohortSpecific(cohort),
                n_effective,
                ci: (mean - half, mean + half),
            },
        );
    }

    let mut cov = DtrCovarianceTable::default();
    for (i, &a) in dtrs.iter().enumerate() {
        for &b in &dtrs[i..] {
            let value = if a == b {
                estimates[&a].var
            } else if a.first == b.first {
                ipw_cov_empirical(
                    &cohort_records,
                    a,
                    b,
                    probs.p(a.first)?,
                    probs.q(a)?,
                    probs.q(b)?,
                    estimates[&a].mean,
                    estimates[&b].mean,
                )?
            } else {
                0.0
            };
            cov.set(a, b, value);
        }
    }

    Ok(ApproachEstimates {
        approach: ApproachKind::CohortSpecific(cohort),
        estimates,
        cov,
    })
}

/// The `separate` analysis: regime means from the post-adaptation cohort
/// only.
pub fn separate_estimates(
    records: &[ParticipantRecord],
    probs: &DesignProbs,
) -> Result<ApproachEstimates, IpwError> {
    let mut result = cohort_estimates(records, Cohort::C2, &probs.c2)?;
    result.approach = ApproachKind::Separate;
    for est in result.estimates.values_mut() {
        est.approach = ApproachKind::Separate;
    }
    Ok(result)
}

/// The `pooling` analysis: cohort-size-weighted combination of the two
/// cohort estimates for the original regimes (`n_l / (n_1 + n_2)` weights,
/// quadratic weights for variance and covariance under cohort independence).
/// Regimes starting with the new arm have no pre-adaptation data and keep
/// their post-adaptation estimates.
pub fn pooled_estimates(
    records: &[ParticipantRecord],
    probs: &DesignProbs,
) -> Result<ApproachEstimates, IpwError> {
    let c1 = cohort_estimates(records, Cohort::C1, &probs.c1)?;
    let c2 = cohort_estimates(records, Cohort::C2, &probs.c2)?;
    let n1 = records.iter().filter(|r| r.cohort == Cohort::C1).count() as f64;
    let n2 = records.iter().filter(|r| r.cohort == Cohort::C2).count() as f64;
    let w1 = n1 / (n1 + n2);
    let w2 = n2 / (n1 + n2);

    let mut estimates = BTreeMap::new();
    for (&dtr, est2) in &c2.estimates {
        let (mean, var, n_effective) = match c1.estimates.get(&dtr) {
            Some(est1) => (
                w1 * est1.mean + w2 * est2.mean,
                w1 * w1 * est1.var + w2 * w2 * est2.var,
                est1.n_effective + est2.n_effective,
            ),
            None => (est2.mean, est2.var, est2.n_effective),
        };
        let half = WALD_Z * var.sqrt();
        estimates.insert(
            dtr,
            DtrEstimate {
                dtr,
                mean,
                var,
                approach: ApproachKind::Pooling,
                n_effective,
                ci: (mean - half, mean + half),
            },
        );
    }

    let dtrs = Dtr::embedded_in(Cohort::C2);
    let mut cov = DtrCovarianceTable::default();
    for (i, &a) in dtrs.iter().enumerate() {
        for &b in &dtrs[i..] {
            let value = if a == b {
                estimates[&a].var
            } else if a.first != b.first {
                0.0
            } else if a.first == Stage1Arm::A13 {
                c2.cov.get(a, b)
            } else {
                w1 * w1 * c1.cov.get(a, b) + w2 * w2 * c2.cov.get(a, b)
            };
            cov.set(a, b, value);
        }
    }

    Ok(ApproachEstimates {
        approach: ApproachKind::Pooling,
        estimates,
        cov,
    })
}
