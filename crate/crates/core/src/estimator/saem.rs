use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ffbs::sample_path_from_filter;
use crate::likelihood::forward_filter;
use crate::model::{canonicalize, ModelSpec, ObservationSeries};

use super::config::SaemConfig;
use super::init::initial_spec;
use super::mstep::{mstep, MStepOptions};
use super::stats::SufficientStats;

/// Parameter snapshot after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub gamma: f64,
    /// See [`ModelSpec::flat_params`].
    pub params: Vec<f64>,
    pub loglik: Option<f64>,
}

/// Outcome of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Estimate in canonical state order.
    pub spec_hat: ModelSpec,
    /// Exact log-likelihood at `spec_hat`.
    pub loglik_hat: f64,
    pub converged: bool,
    pub iterations_run: usize,
    /// Old→new state relabeling applied to the raw estimate.
    pub permutation: Vec<usize>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
}

pub(crate) fn max_abs_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn finish(
    spec: &ModelSpec,
    series: &ObservationSeries,
    converged: bool,
    iterations_run: usize,
    trajectory: Vec<TrajectoryPoint>,
) -> Result<FitResult> {
    let (spec_hat, permutation) = canonicalize(spec);
    let loglik_hat = forward_filter(&spec_hat, series)?.loglik();
    Ok(FitResult {
        spec_hat,
        loglik_hat,
        converged,
        iterations_run,
        permutation,
        trajectory,
    })
}

/// SAEM with a generator seeded from `cfg.seed`.
pub fn saem_fit(series: &ObservationSeries, cfg: &SaemConfig) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    saem_fit_with_rng(series, cfg, &mut rng)
}

/// Stochastic approximation EM: each iteration samples a hidden path from
/// the current posterior, folds it into the running statistics with step
/// γ_t and maximizes.
pub fn saem_fit_with_rng<R: Rng + ?Sized>(
    series: &ObservationSeries,
    cfg: &SaemConfig,
    rng: &mut R,
) -> Result<FitResult> {
    cfg.validate()?;
    let mut spec = initial_spec(series, cfg, rng)?;
    let mut stats = SufficientStats::zeros(series.len(), cfg.m);
    let mut trajectory = Vec::with_capacity(cfg.iterations);
    let mut changes = Vec::with_capacity(cfg.iterations);
    let mut params = spec.flat_params();

    for t in 1..=cfg.iterations {
        let mut step = || -> Result<(ModelSpec, Option<f64>)> {
            let bank = forward_filter(&spec, series)?;
            let path = sample_path_from_filter(&spec, &bank, rng)?;
            stats.update(&path, cfg.gamma(t))?;
            let next = mstep(
                &stats,
                series,
                cfg.kind,
                MStepOptions {
                    delta: cfg.delta_clamp,
                    fallback: Some(&spec),
                },
            )?
            .into_spec(cfg.kind)?;
            // the filter of the previous iterate doubles as the periodic loglik probe
            let probe = (t % cfg.loglik_every == 0).then(|| bank.loglik());
            Ok((next, probe))
        };
        let (next, loglik) = step().map_err(|e| e.at_iteration(t))?;
        let next_params = next.flat_params();
        changes.push(max_abs_change(&params, &next_params));
        trajectory.push(TrajectoryPoint {
            iteration: t,
            gamma: cfg.gamma(t),
            params: next_params.clone(),
            loglik,
        });
        params = next_params;
        spec = next;
    }

    let window = cfg.convergence_window;
    let converged = changes.len() >= window
        && changes[changes.len() - window..]
            .iter()
            .all(|&c| c < cfg.tol_param);
    finish(&spec, series, converged, cfg.iterations, trajectory)
}
