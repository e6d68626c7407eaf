//! Simulation and estimation toolkit for two-stage platform SMART trials.
//!
//! A platform SMART is a sequential multiple assignment randomized trial that
//! admits a new first-stage treatment mid-trial, producing a pre-adaptation
//! cohort (`c1`, two initial treatments) and a post-adaptation cohort (`c2`,
//! three initial treatments). This crate provides:
//!
//! - [`trial`]: the domain vocabulary (treatments, regimes, cohorts, designs,
//!   scenario parameter sets) and analytic regime means,
//! - [`datagen`]: deterministic participant-level trial simulation,
//! - [`ipw`]: inverse-probability-weighted regime-mean estimators with the
//!   separate and pooling analyses for platform cohorts,
//! - [`glm`]: maximum-likelihood fitting of the response and outcome models,
//! - [`big`]: the Bayesian integration G-formula engine (priors, posterior
//!   sampling, regime-mean draws, estimand summaries),
//! - [`harness`]: the replicate-level operating-characteristics engine,
//! - [`rng`]: splittable counter-based random streams used throughout.

pub mod big;
pub mod datagen;
pub mod glm;
pub mod harness;
pub mod ipw;
pub mod rng;
pub mod trial;
