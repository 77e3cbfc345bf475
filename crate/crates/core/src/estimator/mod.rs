//! Parameter estimation: sufficient statistics, M-steps, SAEM and exact EM.

mod config;
mod em;
mod init;
mod mstep;
mod saem;
mod stats;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ObservationSeries;

pub use config::{gamma_schedule, GammaSchedule, InitStrategy, SaemConfig};
pub use em::em_fit;
pub use init::{kmeans_like, random_from_prior};
pub use mstep::{
    complete_data_loglik, estimate_transition, mstep, mstep_ar, mstep_hmm, MStepOptions, MStepOutput,
    EMPTY_STATE_FRACTION,
};
pub use saem::{saem_fit, saem_fit_with_rng, FitResult, TrajectoryPoint};
pub(crate) use saem::finish as finish_fit;
pub use stats::{update_stats, SufficientStats};

/// Fitting algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Saem,
    Em,
}

impl Algorithm {
    pub fn fit(self, series: &ObservationSeries, cfg: &SaemConfig) -> Result<FitResult> {
        match self {
            Algorithm::Saem => saem_fit(series, cfg),
            Algorithm::Em => em_fit(series, cfg),
        }
    }
}

/// Configuration of restart `r`: restart 0 is `cfg` itself, later ones
/// start from random draws with seed `cfg.seed + r`.
pub fn restart_config(cfg: &SaemConfig, r: usize) -> SaemConfig {
    if r == 0 {
        cfg.clone()
    } else {
        cfg.clone()
            .with_seed(cfg.seed.wrapping_add(r as u64))
            .with_init(InitStrategy::RandomFromPrior)
    }
}

/// Picks the highest log-likelihood among successful fits, earliest index
/// on ties. Fails with the first error when nothing succeeded.
pub fn best_of(results: Vec<Result<FitResult>>) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.loglik_hat > b.loglik_hat) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| Error::invalid("no restarts requested")))
}

/// Runs `restarts` independent fits (in parallel) and keeps the best.
/// The result does not depend on thread scheduling.
pub fn fit_best(
    series: &ObservationSeries,
    cfg: &SaemConfig,
    restarts: usize,
    algorithm: Algorithm,
) -> Result<FitResult> {
    cfg.validate()?;
    let results: Vec<_> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| algorithm.fit(series, &restart_config(cfg, r)))
        .collect();
    best_of(results)
}
