//! Forward-filtering backward-sampling of the hidden path.
//!
//! Draws are exact samples from p(x_{1:N} | y_{1:N}, ψ): the last state comes
//! from the final filter, and each earlier state from the backward kernel
//! `p(X_n = i | X_{n+1} = j, y_{1:n}) ∝ a_ij · p(X_n = i | y_{1:n})`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::likelihood::{
    check_enumeration_size, for_each_path, forward_filter, path_log_joint, FilterBank,
};
use crate::model::{sample_categorical, stationary_distribution, HiddenPath, ModelSpec, ObservationSeries};
use crate::special::LogSumExp;

/// Largest number of paths [`exact_posterior_enumeration`] will visit.
pub const POSTERIOR_ENUMERATION_LIMIT: f64 = 1e5;

/// Unnormalized backward kernel weights for step `n` given `X_{n+1} = next`.
pub fn backward_kernel(spec: &ModelSpec, bank: &FilterBank, n: usize, next: usize) -> Vec<f64> {
    let a = spec.transition();
    bank.filter(n)
        .iter()
        .enumerate()
        .map(|(i, &f)| a.get(i, next) * f)
        .collect()
}

/// Samples a path from the posterior, running the forward filter first.
pub fn sample_path<R: Rng + ?Sized>(
    spec: &ModelSpec,
    series: &ObservationSeries,
    rng: &mut R,
) -> Result<HiddenPath> {
    let bank = forward_filter(spec, series)?;
    sample_path_from_filter(spec, &bank, rng)
}

/// Backward sampling pass over a stored filter.
pub fn sample_path_from_filter<R: Rng + ?Sized>(
    spec: &ModelSpec,
    bank: &FilterBank,
    rng: &mut R,
) -> Result<HiddenPath> {
    let n_obs = bank.len();
    let m = spec.num_states();
    let a = spec.transition();
    let mut states = vec![0usize; n_obs];
    states[n_obs - 1] = sample_categorical(bank.filter(n_obs - 1), rng);
    let mut weights = vec![0.0; m];
    for n in (0..n_obs - 1).rev() {
        let next = states[n + 1];
        let filt = bank.filter(n);
        let mut total = 0.0;
        for i in 0..m {
            weights[i] = a.get(i, next) * filt[i];
            total += weights[i];
        }
        if !(total > 0.0) {
            return Err(Error::numerical(n + 1, "backward kernel has zero mass"));
        }
        states[n] = sample_categorical(&weights, rng);
    }
    Ok(HiddenPath(states))
}

/// Exact posterior over all paths, for small problems.
pub fn exact_posterior_enumeration(
    spec: &ModelSpec,
    series: &ObservationSeries,
) -> Result<BTreeMap<HiddenPath, f64>> {
    let m = spec.num_states();
    check_enumeration_size(m, series.len(), POSTERIOR_ENUMERATION_LIMIT)?;
    let mu = stationary_distribution(spec.transition())?;
    let mut logs = Vec::new();
    let mut norm = LogSumExp::default();
    for_each_path(m, series.len(), |path| {
        let lp = path_log_joint(spec, series, &mu, path);
        norm.push(lp);
        logs.push((HiddenPath(path.to_vec()), lp));
    });
    let log_z = norm.value();
    Ok(logs
        .into_iter()
        .map(|(p, lp)| (p, (lp - log_z).exp()))
        .collect())
}
