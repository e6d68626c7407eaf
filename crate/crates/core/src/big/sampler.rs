//! Adaptive random-walk Metropolis-within-Gibbs over the model parameters.
//!
//! Update blocks per sweep: shared coefficients, new-arm coefficients, then
//! for commensurate variants the historical replicate, a joint shift of
//! (shared, replicate) along the commensurate ridge, and the precision on
//! the log scale; the dispersion moves on the log scale; the mixture
//! indicator is resampled from its exact full conditional. Proposal scales
//! adapt toward a 0.25-0.40 acceptance rate during burn-in and are frozen
//! afterwards, preserving detailed balance for the retained draws. Chains
//! run concurrently on split seeds and results are deterministic given
//! `(seed, chains)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::ParticipantRecord;
use crate::rng::StreamRng;
use crate::trial::Cohort;

use super::{
    embed_theta_s1, fit_cohort_models, normal_logpdf, BigError, BigModel, Family, Hyperpriors,
    ParameterState, PosteriorDraws, PriorSpec, COEF_NAMES, N_COEF, N_SHARED, THETA_NS_IDX,
    THETA_S_IDX,
};

/// Proposals between scale adaptations.
const ADAPT_BATCH: usize = 50;
/// Split-chain scale-reduction threshold for the convergence flag.
const PSRF_WARN: f64 = 1.05;

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    pub burn_in: usize,
    /// Total retained draws across chains (rounded up to a multiple of
    /// `chains`).
    pub draws: usize,
    pub seed: u64,
    /// Fix the dispersion at a known value instead of sampling it.
    pub fixed_sigma: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            burn_in: 2000,
            draws: 4000,
            seed: 0,
            fixed_sigma: None,
        }
    }
}

/// Per-block acceptance diagnostics (post burn-in).
#[derive(Debug, Clone, Serialize)]
pub struct BlockDiag {
    pub name: String,
    pub accept_rate: f64,
    pub mean_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerDiagnostics {
    pub blocks: Vec<BlockDiag>,
    /// Split-chain potential-scale-reduction statistic per monitored scalar.
    pub psrf: Vec<(String, f64)>,
    pub max_psrf: f64,
    /// Effective sample size per monitored scalar (summed over chains).
    pub ess: Vec<(String, f64)>,
    pub min_ess: f64,
    /// Mixture component frequencies over retained draws (mixed variant).
    pub component_freq: Option<Vec<f64>>,
    /// False when `max_psrf` exceeds the warning threshold; draws are still
    /// returned.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    ThetaS,
    ThetaNs,
    ThetaS1,
    SharedShift,
    LogSigma,
    LogTau,
}

struct Block {
    kind: BlockKind,
    name: &'static str,
    scale: f64,
    target_rate: f64,
    batch_accepts: usize,
    batch_proposals: usize,
    batches: usize,
    post_accepts: usize,
    post_proposals: usize,
}

impl Block {
    fn new(kind: BlockKind) -> Self {
        let (name, dim) = match kind {
            BlockKind::ThetaS => ("theta_s", N_SHARED),
            BlockKind::ThetaNs => ("theta_ns", N_NEW_DIM),
            BlockKind::ThetaS1 => ("theta_s1", N_SHARED),
            BlockKind::SharedShift => ("shared_shift", N_SHARED),
            BlockKind::LogSigma => ("log_sigma", 1),
            BlockKind::LogTau => ("log_tau", 1),
        };
        let target_rate = if dim == 1 { 0.38 } else { 0.30 };
        Block {
            kind,
            name,
            scale: 2.38 / (dim as f64).sqrt(),
            target_rate,
            batch_accepts: 0,
            batch_proposals: 0,
            batches: 0,
            post_accepts: 0,
            post_proposals: 0,
        }
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.batch_proposals += 1;
            if accepted {
                self.batch_accepts += 1;
            }
            if self.batch_proposals == ADAPT_BATCH {
                self.batches += 1;
                let rate = self.batch_accepts as f64 / ADAPT_BATCH as f64;
                let gain = 1.0 / (self.batches as f64).sqrt();
                self.scale = (self.scale * ((rate - self.target_rate) * gain).exp())
                    .clamp(1e-6, 1e3);
                self.batch_accepts = 0;
                self.batch_proposals = 0;
            }
        } else {
            self.post_proposals += 1;
            if accepted {
                self.post_accepts += 1;
            }
        }
    }
}

const N_NEW_DIM: usize = 4;

/// What to monitor for convergence diagnostics.
#[derive(Debug, Clone, Copy)]
enum Monitor {
    Coef(usize),
    Sigma,
    Tau,
    TauAt(usize),
}

impl Monitor {
    fn extract(&self, state: &ParameterState) -> f64 {
        match self {
            Monitor::Coef(i) => state.coef[*i],
            Monitor::Sigma => state.sigma.unwrap_or(f64::NAN),
            Monitor::Tau => state.tau.unwrap_or(f64::NAN),
            Monitor::TauAt(b) => state.tau_vec.map_or(f64::NAN, |taus| taus[*b]),
        }
    }
}

struct ChainOutput {
    states: Vec<ParameterState>,
    block_stats: Vec<(String, usize, usize, f64)>,
}

/// Draw `M` retained samples from the posterior of the model parameters.
/// Pre-adaptation data is required (and used in the target) only for the
/// commensurate variants; the log-distance variant carries its historical
/// information inside the prebuilt prior.
pub fn sample_posterior(
    data_c1: Option<&[ParticipantRecord]>,
    data_c2: &[ParticipantRecord],
    family: Family,
    prior: &PriorSpec,
    hyper: &Hyperpriors,
    config: &SamplerConfig,
) -> Result<PosteriorDraws, BigError> {
    if data_c2.is_empty() {
        return Err(BigError::MissingCohort(Cohort::C2));
    }
    let model = BigModel::new(family, data_c1, data_c2, prior.clone(), hyper.clone())?;

    let chains = config.chains.max(1);
    let per_chain = config.draws.max(1).div_ceil(chains);

    // Deterministic initialization from the post-adaptation MLE when it
    // exists; otherwise zeros. Degenerate designs (empty cells) fall back
    // gracefully because the weak priors keep the posterior proper.
    let mut init = ParameterState {
        coef: [0.0; N_COEF],
        sigma: None,
        theta_s1: None,
        tau: None,
        tau_vec: None,
        component: None,
    };
    if let Ok(fits) = fit_cohort_models(data_c2, Cohort::C2, family) {
        for i in 0..3 {
            init.coef[i] = fits.response.coefficients[i];
        }
        for i in 0..9 {
            init.coef[3 + i] = fits.outcome.coefficients[i];
        }
        if family == Family::Continuous {
            init.sigma = fits.outcome.dispersion;
        }
    }
    if family == Family::Continuous {
        let sigma0 = config.fixed_sigma.or(init.sigma).unwrap_or(1.0).max(0.05);
        init.sigma = Some(sigma0);
    }
    if prior.needs_historical_data() {
        let c1_records = data_c1.expect("validated by BigModel::new");
        let mut theta_s1 = [0.0; N_SHARED];
        if let Ok(fits) = fit_cohort_models(c1_records, Cohort::C1, family) {
            theta_s1[0] = fits.response.coefficients[0];
            theta_s1[1] = fits.response.coefficients[1];
            for b in 0..6 {
                theta_s1[2 + b] = fits.outcome.coefficients[b];
            }
        }
        init.theta_s1 = Some(theta_s1);
        match prior {
            PriorSpec::Commensurate {
                per_coefficient: false,
                ..
            } => init.tau = Some(1.0),
            PriorSpec::Commensurate {
                per_coefficient: true,
                ..
            } => init.tau_vec = Some([1.0; N_SHARED]),
            PriorSpec::MixedCommensurate { weights, .. } => {
                let argmax = weights
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(h, _)| h)
                    .unwrap_or(0);
                init.component = Some(argmax);
            }
            _ => {}
        }
    }

    // Per-coordinate proposal scales from the curvature at the init point
    // plus the weak-prior precision, so coordinates without data still move
    // on the prior's scale.
    let prior_precision = 1.0 / (hyper.weak_sd * hyper.weak_sd);
    let info_c2 = model.c2.diag_info(&init.coef, family, init.sigma);
    let mut base_coef = [0.0; N_COEF];
    for i in 0..N_COEF {
        base_coef[i] = 1.0 / (info_c2[i] + prior_precision).sqrt();
    }
    let mut base_s1 = [0.0; N_SHARED];
    if let (Some(c1_stats), Some(theta_s1)) = (&model.c1, &init.theta_s1) {
        let info_c1 = c1_stats.diag_info(&embed_theta_s1(theta_s1), family, init.sigma);
        for (b, &idx) in THETA_S_IDX.iter().enumerate() {
            base_s1[b] = 1.0 / (info_c1[idx] + prior_precision).sqrt();
        }
    }

    let monitors = monitor_list(family, prior, config);
    let master = StreamRng::new(config.seed);
    let chain_outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|chain_idx| {
            run_chain(
                &model,
                &init,
                &base_coef,
                &base_s1,
                config,
                per_chain,
                master.split(chain_idx as u64),
            )
        })
        .collect();

    // Assemble chain-major draws and diagnostics.
    let mut states = Vec::with_capacity(chains * per_chain);
    for out in &chain_outputs {
        states.extend(out.states.iter().copied());
    }

    let mut block_totals: Vec<(String, usize, usize, f64)> = Vec::new();
    for out in &chain_outputs {
        for (name, acc, prop, scale) in &out.block_stats {
            match block_totals.iter_mut().find(|(n, ..)| n == name) {
                Some(entry) => {
                    entry.1 += acc;
                    entry.2 += prop;
                    entry.3 += scale;
                }
                None => block_totals.push((name.clone(), *acc, *prop, *scale)),
            }
        }
    }
    let blocks: Vec<BlockDiag> = block_totals
        .into_iter()
        .map(|(name, acc, prop, scale_sum)| BlockDiag {
            name,
            accept_rate: if prop > 0 { acc as f64 / prop as f64 } else { 0.0 },
            mean_scale: scale_sum / chains as f64,
        })
        .collect();

    let mut psrf = Vec::with_capacity(monitors.len());
    let mut ess = Vec::with_capacity(monitors.len());
    for (name, monitor) in &monitors {
        let series: Vec<Vec<f64>> = chain_outputs
            .iter()
            .map(|out| out.states.iter().map(|s| monitor.extract(s)).collect())
            .collect();
        psrf.push((name.clone(), split_rhat(&series)));
        ess.push((
            name.clone(),
            series.iter().map(|x| chain_ess(x)).sum::<f64>(),
        ));
    }
    let max_psrf = psrf.iter().map(|(_, r)| *r).fold(1.0f64, f64::max);
    let min_ess = ess
        .iter()
        .map(|(_, e)| *e)
        .fold(f64::INFINITY, f64::min)
        .min(states.len() as f64);

    let component_freq = match prior {
        PriorSpec::MixedCommensurate { taus, .. } => {
            let mut counts = vec![0usize; taus.len()];
            for s in &states {
                if let Some(h) = s.component {
                    counts[h] += 1;
                }
            }
            Some(
                counts
                    .into_iter()
                    .map(|c| c as f64 / states.len() as f64)
                    .collect(),
            )
        }
        _ => None,
    };

    let converged = max_psrf.is_finite() && max_psrf <= PSRF_WARN;
    Ok(PosteriorDraws {
        states,
        family,
        chains,
        per_chain,
        diagnostics: SamplerDiagnostics {
            blocks,
            psrf,
            max_psrf,
            ess,
            min_ess,
            component_freq,
            converged,
        },
    })
}

fn monitor_list(
    family: Family,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Vec<(String, Monitor)> {
    let mut monitors: Vec<(String, Monitor)> = COEF_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), Monitor::Coef(i)))
        .collect();
    if family == Family::Continuous && config.fixed_sigma.is_none() {
        monitors.push(("sigma".to_string(), Monitor::Sigma));
    }
    match prior {
        PriorSpec::Commensurate {
            per_coefficient: false,
            ..
        } => monitors.push(("tau".to_string(), Monitor::Tau)),
        PriorSpec::Commensurate {
            per_coefficient: true,
            ..
        } => {
            for b in 0..N_SHARED {
                monitors.push((format!("tau_{b}"), Monitor::TauAt(b)));
            }
        }
        _ => {}
    }
    monitors
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    model: &BigModel,
    init: &ParameterState,
    base_coef: &[f64; N_COEF],
    base_s1: &[f64; N_SHARED],
    config: &SamplerConfig,
    per_chain: usize,
    mut rng: StreamRng,
) -> ChainOutput {
    let sample_sigma =
        model.family == Family::Continuous && config.fixed_sigma.is_none();
    let commensurate = model.prior.needs_historical_data();

    // Over-dispersed but deterministic chain start.
    let mut state = *init;
    for i in 0..N_COEF {
        let z: f64 = rng.sample(StandardNormal);
        state.coef[i] += 0.5 * base_coef[i] * z;
    }
    if let Some(sigma) = state.sigma {
        if sample_sigma {
            let z: f64 = rng.sample(StandardNormal);
            state.sigma = Some(sigma * (0.25 * z).exp());
        }
    }
    if let Some(mut theta_s1) = state.theta_s1 {
        for b in 0..N_SHARED {
            let z: f64 = rng.sample(StandardNormal);
            theta_s1[b] += 0.5 * base_s1[b] * z;
        }
        state.theta_s1 = Some(theta_s1);
    }
    if let PriorSpec::Commensurate { tau_range, .. } = &model.prior {
        let interior = (tau_range.0 * 2.0, tau_range.1 / 2.0);
        if let Some(tau) = state.tau {
            let z: f64 = rng.sample(StandardNormal);
            state.tau = Some((tau * (0.5 * z).exp()).clamp(interior.0, interior.1));
        }
        if let Some(mut taus) = state.tau_vec {
            for t in taus.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *t = (*t * (0.5 * z).exp()).clamp(interior.0, interior.1);
            }
            state.tau_vec = Some(taus);
        }
    }

    let mut blocks = vec![Block::new(BlockKind::ThetaS), Block::new(BlockKind::ThetaNs)];
    if commensurate {
        blocks.push(Block::new(BlockKind::ThetaS1));
        blocks.push(Block::new(BlockKind::SharedShift));
    }
    if sample_sigma {
        blocks.push(Block::new(BlockKind::LogSigma));
    }
    if matches!(model.prior, PriorSpec::Commensurate { .. }) {
        blocks.push(Block::new(BlockKind::LogTau));
    }

    let mut cur_lp = model.log_target(&state);
    let mut retained = Vec::with_capacity(per_chain);
    let total_sweeps = config.burn_in + per_chain;

    for sweep in 0..total_sweeps {
        let adapting = sweep < config.burn_in;
        for block in blocks.iter_mut() {
            let mut cand = state;
            let mut log_jac = 0.0;
            match block.kind {
                BlockKind::ThetaS => {
                    for &idx in &THETA_S_IDX {
                        let z: f64 = rng.sample(StandardNormal);
                        cand.coef[idx] += block.scale * base_coef[idx] * z;
                    }
                }
                BlockKind::ThetaNs => {
                    for &idx in &THETA_NS_IDX {
                        let z: f64 = rng.sample(StandardNormal);
                        cand.coef[idx] += block.scale * base_coef[idx] * z;
                    }
                }
                BlockKind::ThetaS1 => {
                    if let Some(mut theta_s1) = cand.theta_s1 {
                        for b in 0..N_SHARED {
                            let z: f64 = rng.sample(StandardNormal);
                            theta_s1[b] += block.scale * base_s1[b] * z;
                        }
                        cand.theta_s1 = Some(theta_s1);
                    }
                }
                BlockKind::SharedShift => {
                    // Identical increment on theta_s and its replicate: moves
                    // along the commensurate ridge without paying the link.
                    if let Some(mut theta_s1) = cand.theta_s1 {
                        for (b, &idx) in THETA_S_IDX.iter().enumerate() {
                            let z: f64 = rng.sample(StandardNormal);
                            let delta = block.scale * base_s1[b].min(base_coef[idx]) * z;
                            cand.coef[idx] += delta;
                            theta_s1[b] += delta;
                        }
                        cand.theta_s1 = Some(theta_s1);
                    }
                }
                BlockKind::LogSigma => {
                    if let Some(sigma) = cand.sigma {
                        let z: f64 = rng.sample(StandardNormal);
                        let new = sigma * (block.scale * 0.25 * z).exp();
                        log_jac = new.ln() - sigma.ln();
                        cand.sigma = Some(new);
                    }
                }
                BlockKind::LogTau => {
                    if let Some(tau) = cand.tau {
                        let z: f64 = rng.sample(StandardNormal);
                        let new = tau * (block.scale * 0.75 * z).exp();
                        log_jac = new.ln() - tau.ln();
                        cand.tau = Some(new);
                    }
                    if let Some(mut taus) = cand.tau_vec {
                        for t in taus.iter_mut() {
                            let z: f64 = rng.sample(StandardNormal);
                            let new = *t * (block.scale * 0.75 * z).exp();
                            log_jac += new.ln() - t.ln();
                            *t = new;
                        }
                        cand.tau_vec = Some(taus);
                    }
                }
            }
            let cand_lp = model.log_target(&cand);
            let log_alpha = cand_lp - cur_lp + log_jac;
            let accepted = log_alpha >= 0.0 || rng.next_f64().ln() < log_alpha;
            if accepted {
                state = cand;
                cur_lp = cand_lp;
            }
            block.record(accepted, adapting);
        }

        // Exact full-conditional update of the mixture indicator.
        if let PriorSpec::MixedCommensurate { taus, weights } = &model.prior {
            if let Some(theta_s1) = &state.theta_s1 {
                let theta_s = state.theta_s();
                let log_probs: Vec<f64> = taus
                    .iter()
                    .zip(weights)
                    .map(|(&tau, &w)| {
                        let link_sd = (1.0 / tau).sqrt();
                        let mut lp = w.ln();
                        for b in 0..N_SHARED {
                            lp += normal_logpdf(theta_s[b], theta_s1[b], link_sd);
                        }
                        lp
                    })
                    .collect();
                let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights_exp: Vec<f64> = log_probs.iter().map(|lp| (lp - max).exp()).collect();
                let total: f64 = weights_exp.iter().sum();
                let u = rng.next_f64() * total;
                let mut acc = 0.0;
                let mut chosen = weights_exp.len() - 1;
                for (h, w) in weights_exp.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = h;
                        break;
                    }
                }
                if state.component != Some(chosen) {
                    state.component = Some(chosen);
                    cur_lp = model.log_target(&state);
                }
            }
        }

        if !adapting {
            retained.push(state);
        }
    }

    let block_stats = blocks
        .iter()
        .map(|b| {
            (
                b.name.to_string(),
                b.post_accepts,
                b.post_proposals,
                b.scale,
            )
        })
        .collect();
    ChainOutput {
        states: retained,
        block_stats,
    }
}

/// Split-chain potential scale reduction over per-chain series.
fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut sequences: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let half = chain.len() / 2;
        if half < 2 {
            return 1.0;
        }
        sequences.push(&chain[..half]);
        sequences.push(&chain[half..2 * half]);
    }
    let m = sequences.len() as f64;
    let n = sequences[0].len() as f64;
    let seq_means: Vec<f64> = sequences
        .iter()
        .map(|s| s.iter().sum::<f64>() / n)
        .collect();
    let grand = seq_means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0)
        * seq_means
            .iter()
            .map(|mu| (mu - grand) * (mu - grand))
            .sum::<f64>();
    let w = sequences
        .iter()
        .zip(&seq_means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 1e-300 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Effective sample size of one chain via the initial monotone positive
/// sequence estimator on paired autocorrelations.
fn chain_ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if var <= 1e-300 {
        return nf;
    }
    let acf = |t: usize| -> f64 {
        let mut sum = 0.0;
        for i in 0..n - t {
            sum += (x[i] - mean) * (x[i + t] - mean);
        }
        sum / (nf * var)
    };
    let mut tau_int = 1.0; // rho_0
    let mut prev_pair = f64::INFINITY;
    let mut t = 1;
    while t + 1 < n {
        let pair = acf(t) + acf(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau_int += 2.0 * pair;
        prev_pair = pair;
        t += 2;
        if t > 1000 {
            break;
        }
    }
    (nf / tau_int).clamp(1.0, nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::big::{gformula_all, summarize_estimands, GformulaConfig};
    use crate::datagen::{simulate_trial, SecondStage};
    use crate::trial::{builtin_scenario, Stage1Arm, Stage2Arm, TrialDesign};

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: 2,
            burn_in: 400,
            draws: 800,
            seed,
            fixed_sigma: None,
        }
    }

    /// Records concentrated in one arm: the non-responder intercept behaves
    /// as an intercept-only Gaussian model.
    fn one_arm_records(n: usize, mu: f64, seed: u64) -> Vec<ParticipantRecord> {
        let mut rng = StreamRng::new(seed);
        (0..n)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                let second = if i % 2 == 0 {
                    SecondStage::Continue
                } else {
                    SecondStage::Switch(Stage2Arm::A21)
                };
                ParticipantRecord {
                    cohort: Cohort::C2,
                    first: Stage1Arm::A11,
                    second,
                    y: mu + z,
                }
            })
            .collect()
    }

    #[test]
    fn conjugate_normal_check() {
        // Known sigma = 1, weak prior N(0, 100) on the non-responder
        // intercept: the closed-form posterior is Normal with
        // var = 1 / (n_cell + 0.01), mean = var * sum(y_cell).
        for seed in [11u64, 12, 13] {
            let records = one_arm_records(400, 1.5, seed);
            let cell: Vec<f64> = records
                .iter()
                .filter(|r| !r.responded())
                .map(|r| r.y)
                .collect();
            let n_cell = cell.len() as f64;
            let sum: f64 = cell.iter().sum();
            let post_var = 1.0 / (n_cell + 0.01);
            let post_mean = post_var * sum;

            let config = SamplerConfig {
                chains: 2,
                burn_in: 1500,
                draws: 6000,
                seed: 1000 + seed,
                fixed_sigma: Some(1.0),
            };
            let draws = sample_posterior(
                None,
                &records,
                Family::Continuous,
                &PriorSpec::Weak,
                &Hyperpriors::default(),
                &config,
            )
            .unwrap();
            let series: Vec<f64> = draws.states.iter().map(|s| s.coef[9]).collect();
            let m = series.len() as f64;
            let mean = series.iter().sum::<f64>() / m;
            let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);

            let ess = draws
                .diagnostics
                .ess
                .iter()
                .find(|(n, _)| n == "psi_nr0")
                .unwrap()
                .1;
            let mcse_mean = (var / ess).sqrt();
            assert!(
                (mean - post_mean).abs() < 3.0 * mcse_mean,
                "seed {seed}: mean {mean} vs {post_mean} (mcse {mcse_mean}, ess {ess})"
            );
            let mcse_var = var * (2.0 / ess).sqrt();
            assert!(
                (var - post_var).abs() < 3.0 * mcse_var,
                "seed {seed}: var {var} vs {post_var} (mcse {mcse_var})"
            );
        }
    }

    #[test]
    fn weak_posterior_concentrates_at_mle() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(100_000, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 321).unwrap();
        let c2: Vec<ParticipantRecord> = data
            .records
            .iter()
            .filter(|r| r.cohort == Cohort::C2)
            .copied()
            .collect();
        let fits = fit_cohort_models(&c2, Cohort::C2, Family::Continuous).unwrap();

        let draws = sample_posterior(
            None,
            &c2,
            Family::Continuous,
            &PriorSpec::Weak,
            &Hyperpriors::default(),
            &quick_config(7),
        )
        .unwrap();
        let m = draws.states.len() as f64;
        for i in 0..3 {
            let mean: f64 = draws.states.iter().map(|s| s.coef[i]).sum::<f64>() / m;
            assert!(
                (mean - fits.response.coefficients[i]).abs() < 0.05,
                "beta{i}: {mean} vs {}",
                fits.response.coefficients[i]
            );
        }
        for i in 0..9 {
            let mean: f64 = draws.states.iter().map(|s| s.coef[3 + i]).sum::<f64>() / m;
            assert!(
                (mean - fits.outcome.coefficients[i]).abs() < 0.05,
                "psi{i}: {mean} vs {}",
                fits.outcome.coefficients[i]
            );
        }
    }

    #[test]
    fn mixture_favors_strong_borrowing_without_time_effect() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(1000, 0.5).unwrap();
        let mut mass_on_tight = Vec::new();
        for rep in 0..5u64 {
            let data = simulate_trial(&design, &scenario, 9000 + rep).unwrap();
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
            let draws = sample_posterior(
                Some(&c1),
                &c2,
                Family::Continuous,
                &PriorSpec::mixed_default(),
                &Hyperpriors::default(),
                &quick_config(500 + rep),
            )
            .unwrap();
            let freq = draws.diagnostics.component_freq.clone().unwrap();
            assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            mass_on_tight.push(freq[1]);

            // Determinism of the indicator stream.
            let again = sample_posterior(
                Some(&c1),
                &c2,
                Family::Continuous,
                &PriorSpec::mixed_default(),
                &Hyperpriors::default(),
                &quick_config(500 + rep),
            )
            .unwrap();
            assert_eq!(draws.diagnostics.component_freq, again.diagnostics.component_freq);
        }
        let avg: f64 = mass_on_tight.iter().sum::<f64>() / mass_on_tight.len() as f64;
        assert!(avg > 0.5, "tau=20 component mass {avg} <= 0.5");
    }

    #[test]
    fn location_equivariance_of_the_pipeline() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(400, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 77).unwrap();
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
        let shift = 5.0;
        let shift_records = |records: &[ParticipantRecord]| -> Vec<ParticipantRecord> {
            records
                .iter()
                .map(|r| ParticipantRecord {
                    y: r.y + shift,
                    ..*r
                })
                .collect()
        };
        let c1_shifted = shift_records(&c1);
        let c2_shifted = shift_records(&c2);

        // Recenter the fixed priors for the outcome intercepts.
        let mut hyper_shifted = Hyperpriors::default();
        hyper_shifted.coef_loc[3] = shift; // psi_r0
        hyper_shifted.coef_loc[9] = shift; // psi_nr0

        let gf = GformulaConfig::default();
        let variants: Vec<(PriorSpec, PriorSpec)> = vec![
            (PriorSpec::Weak, PriorSpec::Weak),
            (PriorSpec::commensurate(), PriorSpec::commensurate()),
            (PriorSpec::mixed_default(), PriorSpec::mixed_default()),
            {
                let base = build_log_distance_prior(
                    &fit_cohort_models(&c1, Cohort::C1, Family::Continuous).unwrap(),
                    &fit_cohort_models(&c2, Cohort::C2, Family::Continuous).unwrap(),
                )
                .unwrap();
                let shifted = build_log_distance_prior(
                    &fit_cohort_models(&c1_shifted, Cohort::C1, Family::Continuous).unwrap(),
                    &fit_cohort_models(&c2_shifted, Cohort::C2, Family::Continuous).unwrap(),
                )
                .unwrap();
                (
                    PriorSpec::LogDistance { shared: base },
                    PriorSpec::LogDistance { shared: shifted },
                )
            },
        ];

        for (prior, prior_shifted) in variants {
            let config = SamplerConfig {
                chains: 1,
                burn_in: 200,
                draws: 200,
                seed: 4242,
                fixed_sigma: None,
            };
            let base = sample_posterior(
                Some(&c1),
                &c2,
                Family::Continuous,
                &prior,
                &Hyperpriors::default(),
                &config,
            )
            .unwrap();
            let shifted = sample_posterior(
                Some(&c1_shifted),
                &c2_shifted,
                Family::Continuous,
                &prior_shifted,
                &hyper_shifted,
                &config,
            )
            .unwrap();
            let base_draws = gformula_all(&base, &gf);
            let shifted_draws = gformula_all(&shifted, &gf);
            for (dtr, vals) in &base_draws.per_dtr {
                let shifted_vals = &shifted_draws.per_dtr[dtr];
                for (a, b) in vals.iter().zip(shifted_vals) {
                    assert!(
                        (a + shift - b).abs() < 1e-6,
                        "{dtr}: draw {a} + {shift} != {b} under {prior:?}"
                    );
                }
            }
            // Summaries stay aligned too.
            let s = summarize_estimands(&base_draws, &[]).unwrap();
            let s2 = summarize_estimands(&shifted_draws, &[]).unwrap();
            for (dtr, sum) in &s.dtrs {
                assert!((sum.mean + shift - s2.dtrs[dtr].mean).abs() < 1e-6);
            }
        }
    }

    use super::super::build_log_distance_prior;

    #[test]
    fn missing_cohorts_are_rejected() {
        let records = one_arm_records(50, 0.0, 3);
        assert!(matches!(
            sample_posterior(
                None,
                &records,
                Family::Continuous,
                &PriorSpec::commensurate(),
                &Hyperpriors::default(),
                &quick_config(1),
            ),
            Err(BigError::MissingCohort(Cohort::C1))
        ));
        assert!(matches!(
            sample_posterior(
                None,
                &[],
                Family::Continuous,
                &PriorSpec::Weak,
                &Hyperpriors::default(),
                &quick_config(1),
            ),
            Err(BigError::MissingCohort(Cohort::C2))
        ));
    }

    #[test]
    fn per_coefficient_tau_variant_runs() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let design = TrialDesign::new(500, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 61).unwrap();
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
        let draws = sample_posterior(
            Some(&c1),
            &c2,
            Family::Continuous,
            &PriorSpec::commensurate_per_coefficient(),
            &Hyperpriors::default(),
            &quick_config(9),
        )
        .unwrap();
        for state in &draws.states {
            let taus = state.tau_vec.expect("per-coefficient taus present");
            assert!(state.tau.is_none());
            assert!(taus.iter().all(|&t| (0.01..=100.0).contains(&t)));
        }
        assert!(draws.diagnostics.psrf.iter().any(|(n, _)| n == "tau_7"));
        // The per-coordinate precisions actually move.
        let first = draws.states[0].tau_vec.unwrap();
        assert!(draws.states.iter().any(|s| s.tau_vec.unwrap() != first));
    }

    #[test]
    fn diagnostics_are_populated() {
        let scenario = builtin_scenario("table2-s2").unwrap();
        let design = TrialDesign::new(600, 0.5).unwrap();
        let data = simulate_trial(&design, &scenario, 15).unwrap();
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
        let draws = sample_posterior(
            Some(&c1),
            &c2,
            Family::Binary,
            &PriorSpec::commensurate(),
            &Hyperpriors::default(),
            &quick_config(2),
        )
        .unwrap();
        assert_eq!(draws.states.len(), 800);
        assert!(draws.diagnostics.blocks.iter().any(|b| b.name == "log_tau"));
        assert!(draws.diagnostics.psrf.iter().any(|(n, _)| n == "tau"));
        assert!(draws.diagnostics.min_ess > 1.0);
        // Binary family: no sigma anywhere.
        assert!(draws.states.iter().all(|s| s.sigma.is_none()));
        // Tau stays inside the hyperprior support.
        assert!(draws
            .states
            .iter()
            .all(|s| (0.01..=100.0).contains(&s.tau.unwrap())));
    }
}
