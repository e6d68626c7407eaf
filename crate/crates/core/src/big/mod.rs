//! Bayesian integration G-formula engine.
//!
//! Regime means are estimated by (1) sampling the joint posterior of the
//! response- and outcome-model coefficients fit to the post-adaptation
//! cohort, under priors that optionally borrow from the pre-adaptation
//! cohort, then (2) standardizing each posterior draw through the regime's
//! treatment/response distribution (the G-formula) to obtain per-draw regime
//! means, and (3) summarizing the draw collections.
//!
//! Four prior variants are supported for the shared coefficients (those the
//! pre-adaptation cohort is informative about):
//!
//! - weak: independent `N(0, 100)` on everything,
//! - log-distance: normal priors centered at the pre-adaptation MLE with
//!   scale `sqrt(max((mle2 - mle1)^2, var1))`,
//! - commensurate: a hierarchical replicate of the shared coefficients tied
//!   to its historical counterpart with precision `tau`, `tau` sampled under
//!   a log-uniform hyperprior,
//! - mixed commensurate: a finite mixture over fixed `tau` values with
//!   weights, realized through a latent component indicator resampled from
//!   its exact full conditional.

mod gformula;
mod sampler;

pub use gformula::{gformula_all, gformula_dtr_draws, GformulaConfig, GformulaMode};
pub use sampler::{sample_posterior, BlockDiag, SamplerConfig, SamplerDiagnostics};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::datagen::{ParticipantRecord, SecondStage};
use crate::glm::{fit_mle, GlmError, MleFit, ModelSpec};
use crate::trial::{pick_extremum, Cohort, Direction, Dtr, OutcomeFamily};

/// Coefficients: `[beta0, beta1, beta2, psi_r0..psi_r5, psi_nr0..psi_nr2]`.
pub const N_COEF: usize = 12;
/// Number of shared coefficients (identified in both cohorts).
pub const N_SHARED: usize = 8;
/// Number of new-arm coefficients (post-adaptation only).
pub const N_NEW: usize = 4;

/// Flat indices of the shared coefficients
/// `(beta0, beta1, psi_r0, psi_r1, psi_r3, psi_r4, psi_nr0, psi_nr1)`.
pub const THETA_S_IDX: [usize; N_SHARED] = [0, 1, 3, 4, 6, 7, 9, 10];
/// Flat indices of the new-arm coefficients
/// `(beta2, psi_r2, psi_r5, psi_nr2)`.
pub const THETA_NS_IDX: [usize; N_NEW] = [2, 5, 8, 11];

pub const COEF_NAMES: [&str; N_COEF] = [
    "beta0", "beta1", "beta2", "psi_r0", "psi_r1", "psi_r2", "psi_r3", "psi_r4", "psi_r5",
    "psi_nr0", "psi_nr1", "psi_nr2",
];

#[derive(Debug, Error)]
pub enum BigError {
    #[error("misaligned shared coefficients: {0}")]
    MisalignedCoefficients(String),
    #[error("misaligned posterior draws: {0}")]
    MisalignedDraws(String),
    #[error("cohort {0} data is required for this prior variant")]
    MissingCohort(Cohort),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error(transparent)]
    Fit(#[from] GlmError),
}

/// Outcome model family for the Bayesian engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Continuous,
    Binary,
}

impl Family {
    pub fn from_outcome(family: OutcomeFamily) -> Self {
        match family {
            OutcomeFamily::Continuous { .. } => Family::Continuous,
            OutcomeFamily::Binary => Family::Binary,
        }
    }

    pub fn outcome_spec(self, include_new_arm: bool) -> ModelSpec {
        match self {
            Family::Continuous => ModelSpec::outcome_linear(include_new_arm),
            Family::Binary => ModelSpec::outcome_logistic(include_new_arm),
        }
    }
}

/// A univariate normal prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        normal_logpdf(x, self.mean, self.sd)
    }
}

pub(crate) fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// Half-normal on `x > 0` with the given scale.
pub(crate) fn half_normal_logpdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - x * x / (2.0 * scale * scale)
}

/// Log-uniform on `[lo, hi]`.
pub(crate) fn log_uniform_logpdf(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        return f64::NEG_INFINITY;
    }
    -x.ln() - (hi / lo).ln().ln()
}

/// Prior variant for the shared coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Weakly informative `N(0, weak_sd^2)` on every coefficient.
    Weak,
    /// Per-coefficient normal priors on the shared set built from the two
    /// cohort MLE fits (see [`build_log_distance_prior`]).
    LogDistance { shared: Vec<NormalPrior> },
    /// Hierarchical link `theta_s,b ~ N(theta_s1,b, 1/tau)` with `tau`
    /// sampled under a log-uniform hyperprior on `tau_range`. One shared
    /// `tau` by default; `per_coefficient` samples one per shared
    /// coefficient (experimental).
    Commensurate {
        tau_range: (f64, f64),
        per_coefficient: bool,
    },
    /// Finite mixture over fixed `tau` values with the given weights.
    MixedCommensurate { taus: Vec<f64>, weights: Vec<f64> },
}

impl PriorSpec {
    /// Default commensurate hyperprior support, single shared `tau`.
    pub fn commensurate() -> Self {
        PriorSpec::Commensurate {
            tau_range: (0.01, 100.0),
            per_coefficient: false,
        }
    }

    /// Experimental variant with one commensurability precision per shared
    /// coefficient.
    pub fn commensurate_per_coefficient() -> Self {
        PriorSpec::Commensurate {
            tau_range: (0.01, 100.0),
            per_coefficient: true,
        }
    }

    /// The default mixture grid: `tau = (0.1, 20)` with equal weights.
    pub fn mixed_default() -> Self {
        PriorSpec::MixedCommensurate {
            taus: vec![0.1, 20.0],
            weights: vec![0.5, 0.5],
        }
    }

    /// Whether the posterior itself involves the pre-adaptation likelihood.
    pub fn needs_historical_data(&self) -> bool {
        matches!(
            self,
            PriorSpec::Commensurate { .. } | PriorSpec::MixedCommensurate { .. }
        )
    }

    pub fn validate(&self) -> Result<(), BigError> {
        match self {
            PriorSpec::Weak => Ok(()),
            PriorSpec::LogDistance { shared } => {
                if shared.len() != N_SHARED {
                    return Err(BigError::InvalidPrior(format!(
                        "log-distance prior needs {N_SHARED} components, got {}",
                        shared.len()
                    )));
                }
                if shared.iter().any(|p| !(p.sd > 0.0) || !p.mean.is_finite()) {
                    return Err(BigError::InvalidPrior(
                        "log-distance prior components must have positive scale".into(),
                    ));
                }
                Ok(())
            }
            PriorSpec::Commensurate {
                tau_range: (lo, hi),
                ..
            } => {
                if !(0.0 < *lo && lo < hi && hi.is_finite()) {
                    return Err(BigError::InvalidPrior(format!(
                        "commensurate tau range ({lo}, {hi}) is not a positive interval"
                    )));
                }
                Ok(())
            }
            PriorSpec::MixedCommensurate { taus, weights } => {
                if taus.is_empty() || taus.len() != weights.len() {
                    return Err(BigError::InvalidPrior(
                        "mixture needs matching, nonempty tau and weight lists".into(),
                    ));
                }
                if taus.iter().any(|&t| !(t > 0.0)) {
                    return Err(BigError::InvalidPrior("mixture taus must be positive".into()));
                }
                if weights.iter().any(|&w| !(w > 0.0)) {
                    return Err(BigError::InvalidPrior(
                        "mixture weights must be positive".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(BigError::InvalidPrior(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Hyperpriors the generative tables leave unspecified.
#[derive(Debug, Clone)]
pub struct Hyperpriors {
    /// Standard deviation of the weak normal priors (`N(0, 100)` read as
    /// variance 100).
    pub weak_sd: f64,
    /// Half-normal scale for the outcome dispersion.
    pub sigma_scale: f64,
    /// Location of the weak priors per coefficient (and of the historical
    /// replicate's hyperprior). All zeros by default; tests use this to
    /// recenter priors under location shifts of the outcome.
    pub coef_loc: [f64; N_COEF],
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            weak_sd: 10.0,
            sigma_scale: 10.0,
            coef_loc: [0.0; N_COEF],
        }
    }
}

/// One point in the sampler's state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterState {
    /// Full coefficient vector in [`COEF_NAMES`] order.
    pub coef: [f64; N_COEF],
    /// Outcome dispersion (continuous families only).
    pub sigma: Option<f64>,
    /// Historical replicate of the shared coefficients (commensurate
    /// variants only).
    pub theta_s1: Option<[f64; N_SHARED]>,
    /// Commensurability precision (sampled commensurate variant only).
    pub tau: Option<f64>,
    /// Per-coefficient precisions (experimental commensurate variant).
    pub tau_vec: Option<[f64; N_SHARED]>,
    /// Mixture component indicator (mixed commensurate only).
    pub component: Option<usize>,
}

impl ParameterState {
    pub fn theta_s(&self) -> [f64; N_SHARED] {
        let mut out = [0.0; N_SHARED];
        for (b, &idx) in THETA_S_IDX.iter().enumerate() {
            out[b] = self.coef[idx];
        }
        out
    }

    pub fn theta_ns(&self) -> [f64; N_NEW] {
        let mut out = [0.0; N_NEW];
        for (g, &idx) in THETA_NS_IDX.iter().enumerate() {
            out[g] = self.coef[idx];
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Cell sufficient statistics
// ---------------------------------------------------------------------------

/// Per-cell sufficient statistics. Both models are saturated over treatment
/// cells, so the exact likelihood depends on the data only through per-cell
/// counts and outcome sums; the sampler exploits this to evaluate the target
/// in O(cells) instead of O(records). Equality with the record-level
/// likelihood is covered by tests.
#[derive(Debug, Clone, Default)]
pub(crate) struct CellStats {
    pub n_total: usize,
    /// Per arm: `[n, responders]`.
    pub resp: [[f64; 2]; 3],
    /// Per arm, non-responder cell: `[n, sum_y, sum_y2]`.
    pub nonresp: [[f64; 3]; 3],
    /// Per arm, per second-stage arm: `[n, sum_y, sum_y2]`.
    pub respcell: [[[f64; 3]; 2]; 3],
}

impl CellStats {
    pub fn from_records<'a, I: IntoIterator<Item = &'a ParticipantRecord>>(records: I) -> Self {
        let mut stats = CellStats::default();
        for rec in records {
            let j = rec.first.index() - 1;
            stats.n_total += 1;
            stats.resp[j][0] += 1.0;
            match rec.second {
                SecondStage::Continue => {
                    stats.nonresp[j][0] += 1.0;
                    stats.nonresp[j][1] += rec.y;
                    stats.nonresp[j][2] += rec.y * rec.y;
                }
                SecondStage::Switch(a2) => {
                    stats.resp[j][1] += 1.0;
                    let k = a2.index() - 1;
                    stats.respcell[j][k][0] += 1.0;
                    stats.respcell[j][k][1] += rec.y;
                    stats.respcell[j][k][2] += rec.y * rec.y;
                }
            }
        }
        stats
    }

    /// Bernoulli-logit log-likelihood of the response indicators.
    pub fn response_loglik(&self, coef: &[f64; N_COEF]) -> f64 {
        let mut ll = 0.0;
        for j in 0..3 {
            let n = self.resp[j][0];
            if n == 0.0 {
                continue;
            }
            let s = self.resp[j][1];
            let eta = response_lp(coef, j);
            ll += s * eta - n * log1p_exp(eta);
        }
        ll
    }

    /// Outcome log-likelihood over the nine treatment cells.
    pub fn outcome_loglik(&self, coef: &[f64; N_COEF], family: Family, sigma: Option<f64>) -> f64 {
        match family {
            Family::Continuous => {
                let sigma = match sigma {
                    Some(s) if s > 0.0 && s.is_finite() => s,
                    _ => return f64::NEG_INFINITY,
                };
                let inv2 = 1.0 / (2.0 * sigma * sigma);
                let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
                let mut ll = 0.0;
                {
                    let mut cell = |stats: &[f64; 3], mu: f64| {
                        let n = stats[0];
                        if n > 0.0 {
                            ll += n * log_norm
                                - (stats[2] - 2.0 * mu * stats[1] + n * mu * mu) * inv2;
                        }
                    };
                    for j in 0..3 {
                        cell(&self.nonresp[j], nonresp_lp(coef, j));
                        for k in 0..2 {
                            cell(&self.respcell[j][k], resp_lp(coef, j, k));
                        }
                    }
                }
                ll
            }
            Family::Binary => {
                let mut ll = 0.0;
                {
                    let mut cell = |stats: &[f64; 3], eta: f64| {
                        let n = stats[0];
                        if n > 0.0 {
                            ll += stats[1] * eta - n * log1p_exp(eta);
                        }
                    };
                    for j in 0..3 {
                        cell(&self.nonresp[j], nonresp_lp(coef, j));
                        for k in 0..2 {
                            cell(&self.respcell[j][k], resp_lp(coef, j, k));
                        }
                    }
                }
                ll
            }
        }
    }

    /// Diagonal of the observed information at `coef`; used only to set
    /// per-coordinate proposal scales.
    pub fn diag_info(
        &self,
        coef: &[f64; N_COEF],
        family: Family,
        sigma: Option<f64>,
    ) -> [f64; N_COEF] {
        let mut info = [0.0; N_COEF];
        for j in 0..3 {
            let n = self.resp[j][0];
            if n == 0.0 {
                continue;
            }
            let p = sigmoid(response_lp(coef, j));
            let w = n * (p * (1.0 - p)).max(1e-4);
            for (idx, x) in response_row(j) {
                info[idx] += w * x * x;
            }
        }
        let outcome_weight = |n: f64, eta: f64| match family {
            Family::Continuous => {
                let s = sigma.unwrap_or(1.0).max(1e-6);
                n / (s * s)
            }
            Family::Binary => {
                let p = sigmoid(eta);
                n * (p * (1.0 - p)).max(1e-4)
            }
        };
        for j in 0..3 {
            let n = self.nonresp[j][0];
            if n > 0.0 {
                let w = outcome_weight(n, nonresp_lp(coef, j));
                for (idx, x) in nonresp_row(j) {
                    info[idx] += w * x * x;
                }
            }
            for k in 0..2 {
                let n = self.respcell[j][k][0];
                if n > 0.0 {
                    let w = outcome_weight(n, resp_lp(coef, j, k));
                    for (idx, x) in resp_row(j, k) {
                        info[idx] += w * x * x;
                    }
                }
            }
        }
        info
    }
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Response-model linear predictor for 0-based arm index `j`.
pub(crate) fn response_lp(coef: &[f64; N_COEF], j: usize) -> f64 {
    coef[0] + coef[1] * ((j == 1) as u8 as f64) + coef[2] * ((j == 2) as u8 as f64)
}

fn response_row(j: usize) -> [(usize, f64); 3] {
    [
        (0, 1.0),
        (1, (j == 1) as u8 as f64),
        (2, (j == 2) as u8 as f64),
    ]
}

/// Responder-cell linear predictor for arm `j`, second-stage index `k`.
pub(crate) fn resp_lp(coef: &[f64; N_COEF], j: usize, k: usize) -> f64 {
    let i12 = (j == 1) as u8 as f64;
    let i13 = (j == 2) as u8 as f64;
    let i22 = (k == 1) as u8 as f64;
    coef[3] + coef[4] * i12 + coef[5] * i13 + coef[6] * i22 + coef[7] * i12 * i22
        + coef[8] * i13 * i22
}

fn resp_row(j: usize, k: usize) -> [(usize, f64); 6] {
    let i12 = (j == 1) as u8 as f64;
    let i13 = (j == 2) as u8 as f64;
    let i22 = (k == 1) as u8 as f64;
    [
        (3, 1.0),
        (4, i12),
        (5, i13),
        (6, i22),
        (7, i12 * i22),
        (8, i13 * i22),
    ]
}

/// Non-responder-cell linear predictor for arm `j`.
pub(crate) fn nonresp_lp(coef: &[f64; N_COEF], j: usize) -> f64 {
    coef[9] + coef[10] * ((j == 1) as u8 as f64) + coef[11] * ((j == 2) as u8 as f64)
}

fn nonresp_row(j: usize) -> [(usize, f64); 3] {
    [
        (9, 1.0),
        (10, (j == 1) as u8 as f64),
        (11, (j == 2) as u8 as f64),
    ]
}

/// Embed the historical shared replicate into a full coefficient vector
/// (new-arm coordinates zero; the pre-adaptation data never touches them).
pub(crate) fn embed_theta_s1(theta_s1: &[f64; N_SHARED]) -> [f64; N_COEF] {
    let mut coef = [0.0; N_COEF];
    for (b, &idx) in THETA_S_IDX.iter().enumerate() {
        coef[idx] = theta_s1[b];
    }
    coef
}

// ---------------------------------------------------------------------------
// The unnormalized posterior
// ---------------------------------------------------------------------------

/// Data, prior, and hyperprior bundle defining one posterior target.
#[derive(Debug, Clone)]
pub(crate) struct BigModel {
    pub family: Family,
    pub c2: CellStats,
    pub c1: Option<CellStats>,
    pub prior: PriorSpec,
    pub hyper: Hyperpriors,
}

impl BigModel {
    pub fn new(
        family: Family,
        data_c1: Option<&[ParticipantRecord]>,
        data_c2: &[ParticipantRecord],
        prior: PriorSpec,
        hyper: Hyperpriors,
    ) -> Result<Self, BigError> {
        prior.validate()?;
        if prior.needs_historical_data() && data_c1.is_none_or(|d| d.is_empty()) {
            return Err(BigError::MissingCohort(Cohort::C1));
        }
        Ok(BigModel {
            family,
            c2: CellStats::from_records(data_c2),
            c1: data_c1.map(CellStats::from_records),
            prior,
            hyper,
        })
    }

    /// Unnormalized log posterior density; `-inf` for out-of-support states.
    pub fn log_target(&self, state: &ParameterState) -> f64 {
        let coef = &state.coef;
        let sigma = match self.family {
            Family::Continuous => match state.sigma {
                Some(s) if s > 0.0 && s.is_finite() => Some(s),
                _ => return f64::NEG_INFINITY,
            },
            Family::Binary => None,
        };

        let mut lp =
            self.c2.response_loglik(coef) + self.c2.outcome_loglik(coef, self.family, sigma);

        let hyper = &self.hyper;
        match &self.prior {
            PriorSpec::Weak => {
                for i in 0..N_COEF {
                    lp += normal_logpdf(coef[i], hyper.coef_loc[i], hyper.weak_sd);
                }
            }
            PriorSpec::LogDistance { shared } => {
                for (b, &idx) in THETA_S_IDX.iter().enumerate() {
                    lp += shared[b].logpdf(coef[idx]);
                }
                for &idx in &THETA_NS_IDX {
                    lp += normal_logpdf(coef[idx], hyper.coef_loc[idx], hyper.weak_sd);
                }
            }
            PriorSpec::Commensurate { .. } | PriorSpec::MixedCommensurate { .. } => {
                let theta_s1 = match &state.theta_s1 {
                    Some(t) => t,
                    None => return f64::NEG_INFINITY,
                };
                let link_taus: [f64; N_SHARED] = match &self.prior {
                    PriorSpec::Commensurate {
                        tau_range,
                        per_coefficient: false,
                    } => match state.tau {
                        Some(t) if t >= tau_range.0 && t <= tau_range.1 => {
                            lp += log_uniform_logpdf(t, tau_range.0, tau_range.1);
                            [t; N_SHARED]
                        }
                        _ => return f64::NEG_INFINITY,
                    },
                    PriorSpec::Commensurate {
                        tau_range,
                        per_coefficient: true,
                    } => match &state.tau_vec {
                        Some(taus)
                            if taus
                                .iter()
                                .all(|&t| t >= tau_range.0 && t <= tau_range.1) =>
                        {
                            for &t in taus {
                                lp += log_uniform_logpdf(t, tau_range.0, tau_range.1);
                            }
                            *taus
                        }
                        _ => return f64::NEG_INFINITY,
                    },
                    PriorSpec::MixedCommensurate { taus, weights } => match state.component {
                        Some(h) if h < taus.len() => {
                            lp += weights[h].ln();
                            [taus[h]; N_SHARED]
                        }
                        _ => return f64::NEG_INFINITY,
                    },
                    _ => unreachable!(),
                };

                // Historical likelihood at the replicate (shared dispersion).
                let c1 = self.c1.as_ref().expect("checked in constructor");
                let embedded = embed_theta_s1(theta_s1);
                lp += c1.response_loglik(&embedded)
                    + c1.outcome_loglik(&embedded, self.family, sigma);

                // Commensurate link N(theta_s | theta_s1, 1/tau).
                for (b, &idx) in THETA_S_IDX.iter().enumerate() {
                    lp += normal_logpdf(coef[idx], theta_s1[b], (1.0 / link_taus[b]).sqrt());
                }
                // Hyperpriors on the replicate and the new-arm coefficients.
                for (b, &idx) in THETA_S_IDX.iter().enumerate() {
                    lp += normal_logpdf(theta_s1[b], hyper.coef_loc[idx], hyper.weak_sd);
                }
                for &idx in &THETA_NS_IDX {
                    lp += normal_logpdf(coef[idx], hyper.coef_loc[idx], hyper.weak_sd);
                }
            }
        }

        if let Some(s) = sigma {
            lp += half_normal_logpdf(s, hyper.sigma_scale);
        }
        if lp.is_nan() {
            return f64::NEG_INFINITY;
        }
        lp
    }
}

/// Unnormalized log posterior density of `state` under the given data and
/// prior variant. Weak and log-distance variants use the post-adaptation
/// likelihood only; commensurate variants additionally involve the
/// pre-adaptation likelihood evaluated at the historical replicate.
pub fn log_posterior_density(
    state: &ParameterState,
    data_c1: Option<&[ParticipantRecord]>,
    data_c2: &[ParticipantRecord],
    family: Family,
    prior: &PriorSpec,
    hyper: &Hyperpriors,
) -> Result<f64, BigError> {
    let model = BigModel::new(family, data_c1, data_c2, prior.clone(), hyper.clone())?;
    Ok(model.log_target(state))
}

// ---------------------------------------------------------------------------
// Log-distance prior construction
// ---------------------------------------------------------------------------

/// The response and outcome MLE fits for one cohort.
#[derive(Debug, Clone)]
pub struct CohortFits {
    pub response: MleFit,
    pub outcome: MleFit,
}

/// Fit the response and outcome models on one cohort's records. The
/// pre-adaptation cohort uses the reduced specs (new-arm columns dropped).
pub fn fit_cohort_models(
    records: &[ParticipantRecord],
    cohort: Cohort,
    family: Family,
) -> Result<CohortFits, BigError> {
    let include_new_arm = cohort == Cohort::C2;
    let response = fit_mle(records, &ModelSpec::response(include_new_arm), Some(cohort))?;
    let outcome = fit_mle(records, &family.outcome_spec(include_new_arm), Some(cohort))?;
    Ok(CohortFits { response, outcome })
}

/// For each shared coefficient, a normal prior located at the pre-adaptation
/// MLE with scale `sqrt(max((mle2 - mle1)^2, var1))`: tight when the cohorts
/// agree and the historical estimate is precise, diffuse otherwise. The
/// log-sample-size term sometimes placed in the denominator of the squared
/// scale is deliberately omitted.
pub fn build_log_distance_prior(
    c1: &CohortFits,
    c2: &CohortFits,
) -> Result<Vec<NormalPrior>, BigError> {
    let misaligned = |what: &str| Err(BigError::MisalignedCoefficients(what.to_string()));
    if c1.response.spec.include_new_arm || c1.outcome.spec.include_new_arm {
        return misaligned("pre-adaptation fits must use the reduced model");
    }
    if !c2.response.spec.include_new_arm || !c2.outcome.spec.include_new_arm {
        return misaligned("post-adaptation fits must use the full model");
    }
    if c1.outcome.spec.kind != c2.outcome.spec.kind {
        return misaligned("outcome model kinds differ between cohorts");
    }

    // Shared index maps: the reduced outcome fit's coefficients line up with
    // full indices (0, 1, 3, 4, 6, 7).
    let outcome_full_idx = [0usize, 1, 3, 4, 6, 7];
    let mut priors = Vec::with_capacity(N_SHARED);
    for b in 0..N_SHARED {
        let (mle1, var1, mle2) = if b < 2 {
            (
                c1.response.coefficients[b],
                c1.response.coef_var(b),
                c2.response.coefficients[b],
            )
        } else {
            let i1 = b - 2;
            let i2 = outcome_full_idx[b - 2];
            (
                c1.outcome.coefficients[i1],
                c1.outcome.coef_var(i1),
                c2.outcome.coefficients[i2],
            )
        };
        let gap = mle2 - mle1;
        let sd = (gap * gap).max(var1).sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(BigError::MisalignedCoefficients(format!(
                "degenerate log-distance scale for shared coefficient {b}"
            )));
        }
        priors.push(NormalPrior { mean: mle1, sd });
    }
    Ok(priors)
}

// ---------------------------------------------------------------------------
// Posterior draws and estimand summaries
// ---------------------------------------------------------------------------

/// Retained posterior draws with sampler diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Retained states, chain-major (all of chain 0, then chain 1, ...).
    pub states: Vec<ParameterState>,
    pub family: Family,
    pub chains: usize,
    pub per_chain: usize,
    pub diagnostics: SamplerDiagnostics,
}

/// Aligned per-regime posterior draws of the regime means.
#[derive(Debug, Clone)]
pub struct DtrMeanDraws {
    pub per_dtr: BTreeMap<Dtr, Vec<f64>>,
    pub family: Family,
}

/// Mean, sample variance and equal-tailed 95% interval of a draw vector.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub var: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct DifferenceSummary {
    pub a: Dtr,
    pub b: Dtr,
    pub summary: PosteriorSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimandSummary {
    pub dtrs: BTreeMap<Dtr, PosteriorSummary>,
    pub differences: Vec<DifferenceSummary>,
}

impl EstimandSummary {
    /// Estimated optimal regime: extremum of the posterior-mean regime
    /// means, lowest index on ties.
    pub fn optimal(&self, direction: Direction) -> Option<Dtr> {
        pick_extremum(self.dtrs.iter().map(|(&d, s)| (d, s.mean)), direction)
    }
}

fn summarize_vec(draws: &[f64]) -> PosteriorSummary {
    let m = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / m;
    let var = if draws.len() > 1 {
        draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    PosteriorSummary {
        mean,
        var,
        ci: (quantile(draws, 0.025), quantile(draws, 0.975)),
    }
}

/// Interpolated empirical quantile.
fn quantile(draws: &[f64], p: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Point estimates, variances and equal-tailed 95% credible intervals per
/// regime, plus the same summaries for the requested pairwise differences
/// computed on the paired (same-draw) difference vectors.
pub fn summarize_estimands(
    draws: &DtrMeanDraws,
    pairs: &[(Dtr, Dtr)],
) -> Result<EstimandSummary, BigError> {
    let mut len: Option<usize> = None;
    for (dtr, v) in &draws.per_dtr {
        if v.is_empty() {
            return Err(BigError::MisalignedDraws(format!("no draws for {dtr}")));
        }
        match len {
            None => len = Some(v.len()),
            Some(l) if l == v.len() => {}
            Some(l) => {
                return Err(BigError::MisalignedDraws(format!(
                    "{dtr} has {} draws, expected {l}",
                    v.len()
                )))
            }
        }
    }

    let mut dtrs = BTreeMap::new();
    for (&dtr, v) in &draws.per_dtr {
        dtrs.insert(dtr, summarize_vec(v));
    }

    let mut differences = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let va = draws
            .per_dtr
            .get(&a)
            .ok_or_else(|| BigError::MisalignedDraws(format!("no draws for {a}")))?;
        let vb = draws
            .per_dtr
            .get(&b)
            .ok_or_else(|| BigError::MisalignedDraws(format!("no draws for {b}")))?;
        let diff: Vec<f64> = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        differences.push(DifferenceSummary {
            a,
            b,
            summary: summarize_vec(&diff),
        });
    }

    Ok(EstimandSummary { dtrs, differences })
}

/// Export retained draws as CSV: one row per draw with `chain,draw`, every
/// coefficient, the dispersion and commensurate latents when present, and
/// one column per regime mean.
pub fn write_draws_csv<W: std::io::Write>(
    draws: &PosteriorDraws,
    means: &DtrMeanDraws,
    mut out: W,
) -> std::io::Result<()> {
    let has_sigma = draws.states.first().is_some_and(|s| s.sigma.is_some());
    let has_tau = draws.states.first().is_some_and(|s| s.tau.is_some());
    let has_tau_vec = draws.states.first().is_some_and(|s| s.tau_vec.is_some());
    let has_component = draws.states.first().is_some_and(|s| s.component.is_some());

    let mut header = String::from("chain,draw");
    for name in COEF_NAMES {
        header.push(',');
        header.push_str(name);
    }
    if has_sigma {
        header.push_str(",sigma");
    }
    if has_tau {
        header.push_str(",tau");
    }
    if has_tau_vec {
        for b in 0..N_SHARED {
            header.push_str(&format!(",tau_{b}"));
        }
    }
    if has_component {
        header.push_str(",component");
    }
    for dtr in means.per_dtr.keys() {
        header.push_str(&format!(",mu_{dtr}"));
    }
    writeln!(out, "{header}")?;

    for (m, state) in draws.states.iter().enumerate() {
        let chain = m / draws.per_chain.max(1);
        let within = m % draws.per_chain.max(1);
        let mut line = format!("{chain},{within}");
        for c in state.coef {
            line.push_str(&format!(",{c}"));
        }
        if has_sigma {
            line.push_str(&format!(",{}", state.sigma.unwrap_or(f64::NAN)));
        }
        if has_tau {
            line.push_str(&format!(",{}", state.tau.unwrap_or(f64::NAN)));
        }
        if has_tau_vec {
            let taus = state.tau_vec.unwrap_or([f64::NAN; N_SHARED]);
            for t in taus {
                line.push_str(&format!(",{t}"));
            }
        }
        if has_component {
            line.push_str(&format!(",{}", state.component.unwrap_or(0)));
        }
        for vals in means.per_dtr.values() {
            line.push_str(&format!(",{}", vals[m]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

impl SamplerDiagnostics {
    /// Human-readable diagnostics report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "converged: {} (max split-chain PSRF {:.4}, threshold 1.05)\n",
            if self.converged { "yes" } else { "NO" },
            self.max_psrf
        ));
        out.push_str("block acceptance rates:\n");
        for block in &self.blocks {
            out.push_str(&format!(
                "  {:<14} {:.3} (scale {:.4})\n",
                block.name, block.accept_rate, block.mean_scale
            ));
        }
        out.push_str(&format!("min effective sample size: {:.0}\n", self.min_ess));
        out.push_str("per-parameter PSRF / ESS:\n");
        for ((name, psrf), (_, ess)) in self.psrf.iter().zip(&self.ess) {
            out.push_str(&format!("  {name:<10} {psrf:.4}  {ess:.0}\n"));
        }
        if let Some(freq) = &self.component_freq {
            out.push_str("mixture component frequencies:");
            for (h, f) in freq.iter().enumerate() {
                out.push_str(&format!(" [{h}] {f:.3}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Cell predictors entering the regime-mean composition for one draw:
/// `(response rate, responder-cell mean, non-responder-cell mean)`.
pub(crate) fn dtr_cell_values(state: &ParameterState, family: Family, dtr: Dtr) -> (f64, f64, f64) {
    let j = dtr.first.index() - 1;
    let k = dtr.on_response.index() - 1;
    let pi = sigmoid(response_lp(&state.coef, j));
    let transform = |lp: f64| match family {
        Family::Continuous => lp,
        Family::Binary => sigmoid(lp),
    };
    (
        pi,
        transform(resp_lp(&state.coef, j, k)),
        transform(nonresp_lp(&state.coef, j)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{simulate_trial, ParticipantRecord, SecondStage};
    use crate::glm::log_likelihood;
    use crate::trial::{builtin_scenario, Stage1Arm, Stage2Arm, TrialDesign};
    use approx::assert_relative_eq;

    fn rec(cohort: Cohort, first: Stage1Arm, second: SecondStage, y: f64) -> ParticipantRecord {
        ParticipantRecord {
            cohort,
            first,
            second,
            y,
        }
    }

    fn three_records() -> Vec<ParticipantRecord> {
        vec![
            rec(Cohort::C2, Stage1Arm::A11, SecondStage::Continue, 1.5),
            rec(
                Cohort::C2,
                Stage1Arm::A12,
                SecondStage::Switch(Stage2Arm::A22),
                -0.25,
            ),
            rec(
                Cohort::C2,
                Stage1Arm::A13,
                SecondStage::Switch(Stage2Arm::A21),
                2.0,
            ),
        ]
    }

    fn any_state() -> ParameterState {
        let coef = [
            0.1, -0.2, 0.3, 0.5, -0.4, 0.25, 0.6, -0.1, 0.05, 1.0, -0.3, 0.2,
        ];
        ParameterState {
            coef,
            sigma: Some(1.3),
            theta_s1: None,
            tau: None,
            tau_vec: None,
            component: None,
        }
    }

    #[test]
    fn cell_stats_likelihood_matches_record_level() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(300, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 4).unwrap();
        let state = any_state();

        let stats = CellStats::from_records(data.records.iter());
        let fast = stats.response_loglik(&state.coef)
            + stats.outcome_loglik(&state.coef, Family::Continuous, state.sigma);

        let (resp_ll, _) = log_likelihood(
            &data.records,
            &ModelSpec::response(true),
            &state.coef[0..3],
            None,
        )
        .unwrap();
        let (out_ll, _) = log_likelihood(
            &data.records,
            &ModelSpec::outcome_linear(true),
            &state.coef[3..12],
            state.sigma,
        )
        .unwrap();
        assert_relative_eq!(fast, resp_ll + out_ll, max_relative = 1e-9);
    }

    #[test]
    fn weak_posterior_matches_hand_computation() {
        let records = three_records();
        let state = any_state();
        let hyper = Hyperpriors::default();
        let lp = log_posterior_density(
            &state,
            None,
            &records,
            Family::Continuous,
            &PriorSpec::Weak,
            &hyper,
        )
        .unwrap();

        let (resp_ll, _) =
            log_likelihood(&records, &ModelSpec::response(true), &state.coef[0..3], None).unwrap();
        let (out_ll, _) = log_likelihood(
            &records,
            &ModelSpec::outcome_linear(true),
            &state.coef[3..12],
            state.sigma,
        )
        .unwrap();
        let mut expect = resp_ll + out_ll;
        for c in state.coef {
            expect += normal_logpdf(c, 0.0, 10.0);
        }
        expect += half_normal_logpdf(state.sigma.unwrap(), 10.0);
        assert_relative_eq!(lp, expect, max_relative = 1e-10);
    }

    #[test]
    fn mixed_with_one_component_reduces_to_fixed_tau_commensurate() {
        let tau = 3.7;
        let c1_data = vec![
            rec(Cohort::C1, Stage1Arm::A11, SecondStage::Continue, 0.5),
            rec(
                Cohort::C1,
                Stage1Arm::A12,
                SecondStage::Switch(Stage2Arm::A21),
                1.5,
            ),
        ];
        let c2_data = three_records();
        let hyper = Hyperpriors::default();

        let mut state = any_state();
        state.theta_s1 = Some([0.2, -0.1, 0.4, -0.3, 0.5, -0.05, 0.9, -0.2]);
        state.component = Some(0);
        let mixed = PriorSpec::MixedCommensurate {
            taus: vec![tau],
            weights: vec![1.0],
        };
        let lp_mixed = log_posterior_density(
            &state,
            Some(&c1_data),
            &c2_data,
            Family::Continuous,
            &mixed,
            &hyper,
        )
        .unwrap();

        // Densities differ from the sampled-tau variant at the same tau by
        // exactly the tau hyperprior term (the one-component mixture weight
        // contributes log 1 = 0).
        let mut state_tau = state;
        state_tau.component = None;
        state_tau.tau = Some(tau);
        let comm = PriorSpec::Commensurate {
            tau_range: (0.01, 100.0),
            per_coefficient: false,
        };
        let lp_comm = log_posterior_density(
            &state_tau,
            Some(&c1_data),
            &c2_data,
            Family::Continuous,
            &comm,
            &hyper,
        )
        .unwrap();
        let tau_prior = log_uniform_logpdf(tau, 0.01, 100.0);
        assert_relative_eq!(lp_mixed, lp_comm - tau_prior, max_relative = 1e-10);
    }

    #[test]
    fn commensurate_link_peaks_at_agreement_for_large_tau() {
        let c1_data = vec![rec(Cohort::C1, Stage1Arm::A11, SecondStage::Continue, 0.5)];
        let c2_data = three_records();
        let hyper = Hyperpriors::default();
        let huge_tau = PriorSpec::MixedCommensurate {
            taus: vec![1e6],
            weights: vec![1.0],
        };

        let mut agree = any_state();
        agree.theta_s1 = Some(agree.theta_s());
        agree.component = Some(0);
        let lp_agree = log_posterior_density(
            &agree,
            Some(&c1_data),
            &c2_data,
            Family::Continuous,
            &huge_tau,
            &hyper,
        )
        .unwrap();

        let mut disagree = agree;
        let mut ts1 = disagree.theta_s1.unwrap();
        ts1[0] += 0.05;
        disagree.theta_s1 = Some(ts1);
        let lp_disagree = log_posterior_density(
            &disagree,
            Some(&c1_data),
            &c2_data,
            Family::Continuous,
            &huge_tau,
            &hyper,
        )
        .unwrap();
        assert!(lp_agree > lp_disagree + 100.0);
    }

    #[test]
    fn out_of_support_states_are_rejected() {
        let records = three_records();
        let hyper = Hyperpriors::default();
        let mut state = any_state();
        state.sigma = Some(-1.0);
        let lp = log_posterior_density(
            &state,
            None,
            &records,
            Family::Continuous,
            &PriorSpec::Weak,
            &hyper,
        )
        .unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);

        // Missing latents under a commensurate prior.
        let mut state = any_state();
        state.tau = Some(1.0);
        let lp = log_posterior_density(
            &state,
            Some(&records),
            &records,
            Family::Continuous,
            &PriorSpec::commensurate(),
            &hyper,
        )
        .unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);

        // Tau outside the hyperprior support.
        let mut state = any_state();
        state.theta_s1 = Some(state.theta_s());
        state.tau = Some(1e4);
        let lp = log_posterior_density(
            &state,
            Some(&records),
            &records,
            Family::Continuous,
            &PriorSpec::commensurate(),
            &hyper,
        )
        .unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);

        // Commensurate variants require the historical cohort.
        assert!(matches!(
            log_posterior_density(
                &state,
                None,
                &records,
                Family::Continuous,
                &PriorSpec::commensurate(),
                &hyper,
            ),
            Err(BigError::MissingCohort(Cohort::C1))
        ));
    }

    #[test]
    fn log_distance_prior_examples() {
        // Gap dominates: scale sqrt(max(0.25, 0.04)) = 0.5.
        let gap_sd = ((1.5f64 - 1.0).powi(2)).max(0.04).sqrt();
        assert_relative_eq!(gap_sd, 0.5);
        // Variance dominates: scale sqrt(0.04) = 0.2.
        let var_sd = ((1.0f64 - 1.0).powi(2)).max(0.04).sqrt();
        assert_relative_eq!(var_sd, 0.2);
    }

    #[test]
    fn log_distance_prior_from_fits() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(2000, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 17).unwrap();
        let c1 = fit_cohort_models(&data.records, Cohort::C1, Family::Continuous).unwrap();
        let c2 = fit_cohort_models(&data.records, Cohort::C2, Family::Continuous).unwrap();
        let priors = build_log_distance_prior(&c1, &c2).unwrap();
        assert_eq!(priors.len(), N_SHARED);
        for (b, p) in priors.iter().enumerate() {
            assert!(p.sd > 0.0, "prior {b} has nonpositive scale");
            let var1 = if b < 2 {
                c1.response.coef_var(b)
            } else {
                c1.outcome.coef_var(b - 2)
            };
            assert!(p.sd >= var1.sqrt() - 1e-12);
        }
        assert!(build_log_distance_prior(&c2, &c2).is_err());
    }

    #[test]
    fn log_distance_scale_shrinks_with_n() {
        // Identical cohorts: as n grows the prior concentrates.
        let scenario = builtin_scenario("table1-s2").unwrap();
        let mut widths = Vec::new();
        for &n in &[1_000usize, 10_000, 100_000] {
            let design = TrialDesign::new(n, 0.5).unwrap();
            let data = simulate_trial(&design, &scenario, 23).unwrap();
            let c1 = fit_cohort_models(&data.records, Cohort::C1, Family::Continuous).unwrap();
            let c2 = fit_cohort_models(&data.records, Cohort::C2, Family::Continuous).unwrap();
            let priors = build_log_distance_prior(&c1, &c2).unwrap();
            widths.push(priors.iter().map(|p| p.sd).sum::<f64>());
        }
        assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
    }

    #[test]
    fn summarize_estimands_identities() {
        let d11: Dtr = "d11".parse().unwrap();
        let d31: Dtr = "d31".parse().unwrap();
        let mut per_dtr = BTreeMap::new();
        per_dtr.insert(d11, vec![1.0, 2.0, 3.0, 4.0]);
        per_dtr.insert(d31, vec![0.5, 2.5, 1.5, 3.5]);
        let draws = DtrMeanDraws {
            per_dtr,
            family: Family::Continuous,
        };
        let summary = summarize_estimands(&draws, &[(d11, d31)]).unwrap();

        // Var(diff) = Var(a) + Var(b) - 2 Cov(a, b).
        let a = &draws.per_dtr[&d11];
        let b = &draws.per_dtr[&d31];
        let ma = summary.dtrs[&d11].mean;
        let mb = summary.dtrs[&d31].mean;
        let cov = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / 3.0;
        let expect = summary.dtrs[&d11].var + summary.dtrs[&d31].var - 2.0 * cov;
        assert_relative_eq!(summary.differences[0].summary.var, expect, epsilon = 1e-12);

        // Degenerate draws: zero variance, collapsed interval.
        let mut per_dtr = BTreeMap::new();
        per_dtr.insert(d11, vec![2.0; 5]);
        let draws = DtrMeanDraws {
            per_dtr,
            family: Family::Continuous,
        };
        let summary = summarize_estimands(&draws, &[]).unwrap();
        assert_eq!(summary.dtrs[&d11].var, 0.0);
        assert_eq!(summary.dtrs[&d11].ci, (2.0, 2.0));
    }

    #[test]
    fn summarize_estimands_rejects_misaligned_draws() {
        let d11: Dtr = "d11".parse().unwrap();
        let d31: Dtr = "d31".parse().unwrap();
        let mut per_dtr = BTreeMap::new();
        per_dtr.insert(d11, vec![1.0, 2.0]);
        per_dtr.insert(d31, vec![1.0]);
        let draws = DtrMeanDraws {
            per_dtr,
            family: Family::Continuous,
        };
        assert!(matches!(
            summarize_estimands(&draws, &[]),
            Err(BigError::MisalignedDraws(_))
        ));
    }

    #[test]
    fn draws_export_and_report() {
        use crate::big::{gformula_all, sample_posterior, GformulaConfig, SamplerConfig};
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(300, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 88).unwrap();
        let c1: Vec<ParticipantRecord> = data
            .records
            .iter()
            .filter(|r| r.cohort == Cohort::C1)
            .copied()
            .collect();
        let c2: Vec<ParticipantRecord> = data
            .records
            .iter()
            .filter(|r| r.cohort == Cohort::C2)
            .copied()
            .collect();
        let config = SamplerConfig {
            chains: 2,
            burn_in: 100,
            draws: 200,
            seed: 3,
            fixed_sigma: None,
        };
        let draws = sample_posterior(
            Some(&c1),
            &c2,
            Family::Continuous,
            &PriorSpec::mixed_default(),
            &Hyperpriors::default(),
            &config,
        )
        .unwrap();
        let means = gformula_all(&draws, &GformulaConfig::default());
        let mut buf = Vec::new();
        write_draws_csv(&draws, &means, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 201);
        let header = lines[0];
        assert!(header.starts_with("chain,draw,beta0,"));
        assert!(header.contains(",sigma"));
        assert!(header.contains(",component"));
        assert!(header.ends_with("mu_d31,mu_d32"));
        let cols = header.split(',').count();
        assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));

        let report = draws.diagnostics.report();
        assert!(report.contains("block acceptance rates"));
        assert!(report.contains("theta_s"));
        assert!(report.contains("mixture component frequencies"));
    }

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::mixed_default().validate().is_ok());
        assert!(PriorSpec::MixedCommensurate {
            taus: vec![1.0],
            weights: vec![0.9]
        }
        .validate()
        .is_err());
        assert!(PriorSpec::MixedCommensurate {
            taus: vec![-1.0, 2.0],
            weights: vec![0.5, 0.5]
        }
        .validate()
        .is_err());
        assert!(PriorSpec::Commensurate {
            tau_range: (0.0, 1.0),
            per_coefficient: false,
        }
        .validate()
        .is_err());
    }
}
