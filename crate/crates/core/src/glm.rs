//! Maximum-likelihood fitting of the response and outcome models.
//!
//! The response model is a logistic regression of the response indicator on
//! first-stage arm indicators. The outcome model is saturated over treatment
//! cells, with a responder block (intercept, arm contrasts, second-stage
//! contrast and interactions) and a non-responder block (intercept, arm
//! contrasts). Pre-adaptation fits drop every new-arm column.
//!
//! Coefficient covariance is the inverse observed information; for linear
//! models this is `sigma_hat^2 (X'X)^-1`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::datagen::{ParticipantRecord, SecondStage};
use crate::trial::{Cohort, Stage1Arm, Stage2Arm};

/// Convergence threshold on the infinity norm of the score.
pub const GRAD_TOL: f64 = 1e-8;
/// Maximum Newton iterations before declaring non-convergence.
pub const MAX_ITER: usize = 100;
/// Ridge penalty applied to non-intercept coefficients when separation is
/// detected.
pub const RIDGE_LAMBDA: f64 = 1e-4;
/// Floor on the estimated dispersion so likelihoods stay finite on
/// degenerate data.
pub const SIGMA_MIN: f64 = 1e-6;

/// Coefficient magnitude past which a logistic fit is treated as separated
/// (fitted probabilities pinned within ~1e-13 of 0 or 1).
const SEPARATION_BETA: f64 = 30.0;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("design matrix is rank deficient for {0}")]
    RankDeficient(String),
    #[error("fit did not converge within {max_iter} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { max_iter: usize, grad_norm: f64 },
    #[error("not enough data: {n} records for {p} coefficients")]
    InsufficientData { n: usize, p: usize },
    #[error("coefficient vector has length {got}, spec requires {want}")]
    DimensionMismatch { got: usize, want: usize },
}

/// Which regression a [`ModelSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Bernoulli response indicator on stage-1 arm (logit link).
    ResponseLogistic,
    /// Continuous outcome on treatment cells (identity link).
    OutcomeLinear,
    /// Binary outcome on treatment cells (logit link).
    OutcomeLogistic,
}

impl ModelKind {
    pub fn is_logistic(self) -> bool {
        !matches!(self, ModelKind::OutcomeLinear)
    }
}

/// Model structure plus scope: whether new-arm columns are included
/// (post-adaptation data) or dropped (pre-adaptation data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub include_new_arm: bool,
}

impl ModelSpec {
    pub fn response(include_new_arm: bool) -> Self {
        ModelSpec {
            kind: ModelKind::ResponseLogistic,
            include_new_arm,
        }
    }

    pub fn outcome_linear(include_new_arm: bool) -> Self {
        ModelSpec {
            kind: ModelKind::OutcomeLinear,
            include_new_arm,
        }
    }

    pub fn outcome_logistic(include_new_arm: bool) -> Self {
        ModelSpec {
            kind: ModelKind::OutcomeLogistic,
            include_new_arm,
        }
    }

    pub fn is_outcome(&self) -> bool {
        !matches!(self.kind, ModelKind::ResponseLogistic)
    }

    pub fn has_dispersion(&self) -> bool {
        matches!(self.kind, ModelKind::OutcomeLinear)
    }

    pub fn coef_len(&self) -> usize {
        match (self.kind, self.include_new_arm) {
            (ModelKind::ResponseLogistic, true) => 3,
            (ModelKind::ResponseLogistic, false) => 2,
            (_, true) => 9,
            (_, false) => 6,
        }
    }

    pub fn coef_labels(&self) -> &'static [&'static str] {
        match (self.kind, self.include_new_arm) {
            (ModelKind::ResponseLogistic, true) => &["beta0", "beta1", "beta2"],
            (ModelKind::ResponseLogistic, false) => &["beta0", "beta1"],
            (_, true) => &[
                "psi_r0", "psi_r1", "psi_r2", "psi_r3", "psi_r4", "psi_r5", "psi_nr0", "psi_nr1",
                "psi_nr2",
            ],
            (_, false) => &["psi_r0", "psi_r1", "psi_r3", "psi_r4", "psi_nr0", "psi_nr1"],
        }
    }

    /// Intercept-like coefficients stay unpenalized when ridge stabilization
    /// kicks in.
    pub fn is_intercept(&self, idx: usize) -> bool {
        match self.kind {
            ModelKind::ResponseLogistic => idx == 0,
            _ => {
                let labels = self.coef_labels();
                labels[idx] == "psi_r0" || labels[idx] == "psi_nr0"
            }
        }
    }

    /// Fill `row` with the design row for a trajectory. `row` must have
    /// length `coef_len()`.
    pub fn design_row(&self, first: Stage1Arm, second: SecondStage, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.coef_len());
        row.fill(0.0);
        let i12 = (first == Stage1Arm::A12) as u8 as f64;
        let i13 = (first == Stage1Arm::A13) as u8 as f64;
        match self.kind {
            ModelKind::ResponseLogistic => {
                row[0] = 1.0;
                row[1] = i12;
                if self.include_new_arm {
                    row[2] = i13;
                }
            }
            ModelKind::OutcomeLinear | ModelKind::OutcomeLogistic => match second {
                SecondStage::Switch(a2) => {
                    let i22 = (a2 == Stage2Arm::A22) as u8 as f64;
                    if self.include_new_arm {
                        row[0] = 1.0;
                        row[1] = i12;
                        row[2] = i13;
                        row[3] = i22;
                        row[4] = i12 * i22;
                        row[5] = i13 * i22;
                    } else {
                        row[0] = 1.0;
                        row[1] = i12;
                        row[2] = i22;
                        row[3] = i12 * i22;
                    }
                }
                SecondStage::Continue => {
                    if self.include_new_arm {
                        row[6] = 1.0;
                        row[7] = i12;
                        row[8] = i13;
                    } else {
                        row[4] = 1.0;
                        row[5] = i12;
                    }
                }
            },
        }
    }

    /// Regression target for a record: the response indicator for the
    /// response model, the outcome otherwise.
    pub fn target(&self, rec: &ParticipantRecord) -> f64 {
        match self.kind {
            ModelKind::ResponseLogistic => rec.responded() as u8 as f64,
            _ => rec.y,
        }
    }
}

/// A converged maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub spec: ModelSpec,
    pub coefficients: DVector<f64>,
    /// Inverse observed information (for linear fits, `sigma^2 (X'X)^-1`).
    pub covariance: DMatrix<f64>,
    /// Residual-scale estimate for linear fits, floored at [`SIGMA_MIN`].
    pub dispersion: Option<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Set when separation forced a ridge-stabilized refit.
    pub ridged: bool,
    pub n_used: usize,
}

impl MleFit {
    pub fn coef_var(&self, idx: usize) -> f64 {
        self.covariance[(idx, idx)]
    }

    /// Human-readable fit report: coefficients with standard errors and the
    /// convergence diagnostics.
    pub fn report(&self) -> String {
        let mut out = format!(
            "{:?} fit on {} records ({} iterations, gradient norm {:.2e}{})\n",
            self.spec.kind,
            self.n_used,
            self.iterations,
            self.gradient_norm,
            if self.ridged { ", ridge-stabilized" } else { "" }
        );
        for (i, label) in self.spec.coef_labels().iter().enumerate() {
            out.push_str(&format!(
                "  {label:<8} {:>12.6} (se {:.6})\n",
                self.coefficients[i],
                self.coef_var(i).sqrt()
            ));
        }
        if let Some(sigma) = self.dispersion {
            out.push_str(&format!("  sigma    {sigma:>12.6}\n"));
        }
        out
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn filtered(
    records: &[ParticipantRecord],
    cohort: Option<Cohort>,
) -> impl Iterator<Item = &ParticipantRecord> {
    records
        .iter()
        .filter(move |r| cohort.is_none_or(|c| r.cohort == c))
}

/// Fit `spec` by maximum likelihood on `records`, optionally restricted to
/// one cohort. Logistic models use Newton iteration to [`GRAD_TOL`]; linear
/// models solve the normal equations. Detected separation triggers a
/// ridge-stabilized refit with the `ridged` flag set.
pub fn fit_mle(
    records: &[ParticipantRecord],
    spec: &ModelSpec,
    cohort: Option<Cohort>,
) -> Result<MleFit, GlmError> {
    let p = spec.coef_len();
    let n = filtered(records, cohort).count();
    if n <= p {
        return Err(GlmError::InsufficientData { n, p });
    }
    if spec.kind.is_logistic() {
        match fit_logistic(records, spec, cohort, 0.0) {
            Ok(fit) => Ok(fit),
            Err(GlmError::NonConvergence { .. }) => fit_logistic(records, spec, cohort, RIDGE_LAMBDA),
            Err(other) => Err(other),
        }
    } else {
        fit_linear(records, spec, cohort)
    }
}

fn fit_linear(
    records: &[ParticipantRecord],
    spec: &ModelSpec,
    cohort: Option<Cohort>,
) -> Result<MleFit, GlmError> {
    let p = spec.coef_len();
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    let mut n = 0usize;
    for rec in filtered(records, cohort) {
        spec.design_row(rec.first, rec.second, &mut row);
        let y = spec.target(rec);
        for i in 0..p {
            if row[i] == 0.0 {
                continue;
            }
            xty[i] += row[i] * y;
            for j in 0..p {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
        n += 1;
    }
    let chol = Cholesky::new(xtx.clone())
        .ok_or_else(|| GlmError::RankDeficient(format!("{:?}", spec.kind)))?;
    let beta = chol.solve(&xty);

    let mut rss = 0.0;
    for rec in filtered(records, cohort) {
        spec.design_row(rec.first, rec.second, &mut row);
        let fitted: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
        let resid = spec.target(rec) - fitted;
        rss += resid * resid;
    }
    let df = (n - p) as f64;
    let sigma = (rss / df).sqrt().max(SIGMA_MIN);
    let xtx_inv = chol.inverse();
    let covariance = &xtx_inv * (sigma * sigma);

    // Score residual at the solution, for the diagnostics field.
    let grad_norm = {
        let grad = &xty - &xtx * &beta;
        grad.amax() / (sigma * sigma).max(SIGMA_MIN * SIGMA_MIN)
    };

    Ok(MleFit {
        spec: *spec,
        coefficients: beta,
        covariance,
        dispersion: Some(sigma),
        iterations: 1,
        gradient_norm: grad_norm,
        ridged: false,
        n_used: n,
    })
}

fn fit_logistic(
    records: &[ParticipantRecord],
    spec: &ModelSpec,
    cohort: Option<Cohort>,
    lambda: f64,
) -> Result<MleFit, GlmError> {
    let p = spec.coef_len();
    let penalty: Vec<f64> = (0..p)
        .map(|i| if spec.is_intercept(i) { 0.0 } else { lambda })
        .collect();

    let mut beta = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    let mut n = 0usize;

    let penalized_loglik = |beta: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        let mut row = vec![0.0; p];
        for rec in filtered(records, cohort) {
            spec.design_row(rec.first, rec.second, &mut row);
            let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let y = spec.target(rec);
            ll += y * eta - log1p_exp(eta);
        }
        for i in 0..p {
            ll -= 0.5 * penalty[i] * beta[i] * beta[i];
        }
        ll
    };

    let mut current_ll = penalized_loglik(&beta);
    let mut grad_norm = f64::INFINITY;
    let mut last_info = DMatrix::<f64>::zeros(p, p);

    for iter in 0..MAX_ITER {
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        n = 0;
        for rec in filtered(records, cohort) {
            spec.design_row(rec.first, rec.second, &mut row);
            let eta: f64 = row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let resid = spec.target(rec) - mu;
            for i in 0..p {
                if row[i] == 0.0 {
                    continue;
                }
                score[i] += row[i] * resid;
                for j in 0..p {
                    info[(i, j)] += w * row[i] * row[j];
                }
            }
            n += 1;
        }
        for i in 0..p {
            score[i] -= penalty[i] * beta[i];
            info[(i, i)] += penalty[i];
        }
        grad_norm = score.amax();
        last_info = info.clone();
        if grad_norm < GRAD_TOL {
            let covariance = Cholesky::new(info)
                .ok_or_else(|| GlmError::RankDeficient(format!("{:?}", spec.kind)))?
                .inverse();
            return Ok(MleFit {
                spec: *spec,
                coefficients: beta,
                covariance,
                dispersion: None,
                iterations: iter,
                gradient_norm: grad_norm,
                ridged: lambda > 0.0,
                n_used: n,
            });
        }

        let chol = match Cholesky::new(info) {
            Some(c) => c,
            None if iter == 0 => {
                return Err(GlmError::RankDeficient(format!("{:?}", spec.kind)))
            }
            // Curvature collapsed mid-iteration: separated fit.
            None => {
                return Err(GlmError::NonConvergence {
                    max_iter: MAX_ITER,
                    grad_norm,
                })
            }
        };
        let direction = chol.solve(&score);

        // Newton step with halving until the penalized likelihood improves.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let candidate = &beta + &direction * step;
            let ll = penalized_loglik(&candidate);
            if ll >= current_ll - 1e-12 {
                beta = candidate;
                current_ll = ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if lambda == 0.0 && beta.amax() > SEPARATION_BETA {
            return Err(GlmError::NonConvergence {
                max_iter: MAX_ITER,
                grad_norm,
            });
        }
    }

    if grad_norm < 1e-6 {
        // Numerically flat likelihood (e.g. fitted probabilities at machine
        // resolution); accept with the weaker tolerance.
        let covariance = Cholesky::new(last_info)
            .ok_or_else(|| GlmError::RankDeficient(format!("{:?}", spec.kind)))?
            .inverse();
        return Ok(MleFit {
            spec: *spec,
            coefficients: beta,
            covariance,
            dispersion: None,
            iterations: MAX_ITER,
            gradient_norm: grad_norm,
            ridged: lambda > 0.0,
            n_used: n,
        });
    }
    Err(GlmError::NonConvergence {
        max_iter: MAX_ITER,
        grad_norm,
    })
}

/// Exact log-likelihood of `records` under `spec` at the supplied
/// coefficients, plus the analytic gradient with respect to the
/// coefficients. Zero records yield `(0, 0)`. Linear models require a
/// positive dispersion; out-of-support dispersion yields `-inf`.
pub fn log_likelihood(
    records: &[ParticipantRecord],
    spec: &ModelSpec,
    coefficients: &[f64],
    dispersion: Option<f64>,
) -> Result<(f64, Vec<f64>), GlmError> {
    let p = spec.coef_len();
    if coefficients.len() != p {
        return Err(GlmError::DimensionMismatch {
            got: coefficients.len(),
            want: p,
        });
    }
    let mut grad = vec![0.0; p];
    if records.is_empty() {
        return Ok((0.0, grad));
    }

    let mut row = vec![0.0; p];
    let mut ll = 0.0;
    match spec.kind {
        ModelKind::ResponseLogistic | ModelKind::OutcomeLogistic => {
            for rec in records {
                spec.design_row(rec.first, rec.second, &mut row);
                let eta: f64 = row.iter().zip(coefficients).map(|(x, b)| x * b).sum();
                let y = spec.target(rec);
                ll += y * eta - log1p_exp(eta);
                let resid = y - sigmoid(eta);
                for i in 0..p {
                    grad[i] += row[i] * resid;
                }
            }
        }
        ModelKind::OutcomeLinear => {
            let sigma = match dispersion {
                Some(s) if s > 0.0 && s.is_finite() => s,
                _ => return Ok((f64::NEG_INFINITY, grad)),
            };
            let inv_var = 1.0 / (sigma * sigma);
            let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
            for rec in records {
                spec.design_row(rec.first, rec.second, &mut row);
                let mu: f64 = row.iter().zip(coefficients).map(|(x, b)| x * b).sum();
                let resid = rec.y - mu;
                ll += log_norm - 0.5 * resid * resid * inv_var;
                for i in 0..p {
                    grad[i] += row[i] * resid * inv_var;
                }
            }
        }
    }
    Ok((ll, grad))
}
