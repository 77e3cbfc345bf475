//! Exact likelihood evaluation: Gaussian emissions, the scaled forward
//! filter, a path-enumeration oracle, forward-backward smoothing and the EM
//! intermediate quantity.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{stationary_distribution, InitialLaw, ModelSpec, ObservationSeries};
use crate::special::LogSumExp;

/// Largest number of paths the enumeration routines will visit.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// Log density of `y` given the previous value and regime `i`.
#[inline]
pub fn emission_logdensity(spec: &ModelSpec, i: usize, y_prev: f64, y: f64) -> f64 {
    gaussian_logpdf(y - spec.theta()[i].mean(y_prev), spec.sigma2())
}

#[inline]
pub(crate) fn gaussian_logpdf(residual: f64, sigma2: f64) -> f64 {
    -0.5 * (2.0 * PI * sigma2).ln() - residual * residual / (2.0 * sigma2)
}

/// Per-step filtered state probabilities and log normalizers.
#[derive(Debug, Clone)]
pub struct FilterBank {
    m: usize,
    /// Row n holds p(X_n = · | y_{1:n}), row-major N×m.
    filt: Vec<f64>,
    /// log p(y_n | y_{1:n-1}).
    log_norm: Vec<f64>,
    loglik: f64,
}

impl FilterBank {
    #[inline]
    pub fn num_states(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.log_norm.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.log_norm.is_empty()
    }

    /// Filter distribution at 0-based step `n`.
    #[inline]
    pub fn filter(&self, n: usize) -> &[f64] {
        &self.filt[n * self.m..(n + 1) * self.m]
    }

    pub fn log_norm(&self) -> &[f64] {
        &self.log_norm
    }

    #[inline]
    pub fn loglik(&self) -> f64 {
        self.loglik
    }
}

fn initial_weights(spec: &ModelSpec, law: InitialLaw) -> Result<Vec<f64>> {
    let m = spec.num_states();
    match law {
        InitialLaw::Stationary => stationary_distribution(spec.transition()),
        InitialLaw::Fixed(i) if i < m => {
            let mut w = vec![0.0; m];
            w[i] = 1.0;
            Ok(w)
        }
        InitialLaw::Fixed(i) => Err(Error::invalid(format!("initial state {} out of range", i + 1))),
    }
}

/// Forward filter with the first state drawn from the invariant law.
pub fn forward_filter(spec: &ModelSpec, series: &ObservationSeries) -> Result<FilterBank> {
    forward_filter_with(spec, series, InitialLaw::Stationary)
}

/// Scaled forward recursion; `loglik` is log p(y_{1:N} | y_0, ψ).
pub fn forward_filter_with(
    spec: &ModelSpec,
    series: &ObservationSeries,
    law: InitialLaw,
) -> Result<FilterBank> {
    let m = spec.num_states();
    let n_obs = series.len();
    let a = spec.transition();
    let mut filt = vec![0.0; n_obs * m];
    let mut log_norm = vec![0.0; n_obs];
    let mut pred = initial_weights(spec, law)?;
    let mut logemit = vec![0.0; m];
    let mut loglik = 0.0;

    for n in 0..n_obs {
        if n > 0 {
            let prev = &filt[(n - 1) * m..n * m];
            for (j, p) in pred.iter_mut().enumerate() {
                *p = (0..m).map(|i| prev[i] * a.get(i, j)).sum();
            }
        }
        let (y_prev, y) = (series.prev(n), series.values()[n]);
        let mut max = f64::NEG_INFINITY;
        for (j, le) in logemit.iter_mut().enumerate() {
            *le = emission_logdensity(spec, j, y_prev, y);
            if pred[j] > 0.0 && *le > max {
                max = *le;
            }
        }
        let row = &mut filt[n * m..(n + 1) * m];
        let mut c = 0.0;
        for j in 0..m {
            row[j] = if pred[j] > 0.0 {
                pred[j] * (logemit[j] - max).exp()
            } else {
                0.0
            };
            c += row[j];
        }
        if !(c > 0.0 && c.is_finite() && max.is_finite()) {
            return Err(Error::numerical(n + 1, "forward normalizer vanished"));
        }
        row.iter_mut().for_each(|v| *v /= c);
        log_norm[n] = c.ln() + max;
        loglik += log_norm[n];
    }
    if !loglik.is_finite() {
        return Err(Error::numerical(n_obs, "log-likelihood is not finite"));
    }
    Ok(FilterBank {
        m,
        filt,
        log_norm,
        loglik,
    })
}

pub(crate) fn check_enumeration_size(m: usize, n: usize, limit: f64) -> Result<()> {
    let size = (m as f64).powi(n as i32);
    if size > limit {
        return Err(Error::SizeLimit { size, limit });
    }
    Ok(())
}

/// Visits every path in {0..m}^n in lexicographic order.
pub(crate) fn for_each_path(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; n];
    loop {
        f(&path);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < m {
                break;
            }
            path[k] = 0;
        }
    }
}

/// Joint log density log p(y_{1:N}, X_{1:N} = path | y_0) with a given initial law.
pub(crate) fn path_log_joint(
    spec: &ModelSpec,
    series: &ObservationSeries,
    initial: &[f64],
    path: &[usize],
) -> f64 {
    let a = spec.transition();
    let mut lp = initial[path[0]].ln();
    for (n, &x) in path.iter().enumerate() {
        if n > 0 {
            lp += a.get(path[n - 1], x).ln();
        }
        lp += emission_logdensity(spec, x, series.prev(n), series.values()[n]);
    }
    lp
}

/// Log-likelihood by summing over every hidden path.
pub fn brute_force_likelihood(spec: &ModelSpec, series: &ObservationSeries) -> Result<f64> {
    brute_force_likelihood_with(spec, series, InitialLaw::Stationary)
}

pub fn brute_force_likelihood_with(
    spec: &ModelSpec,
    series: &ObservationSeries,
    law: InitialLaw,
) -> Result<f64> {
    let m = spec.num_states();
    check_enumeration_size(m, series.len(), ENUMERATION_LIMIT)?;
    let initial = initial_weights(spec, law)?;
    let mut acc = LogSumExp::default();
    for_each_path(m, series.len(), |path| {
        acc.push(path_log_joint(spec, series, &initial, path));
    });
    Ok(acc.value())
}

/// Posterior state and transition moments given all observations.
#[derive(Debug, Clone)]
pub struct SmoothedMoments {
    m: usize,
    /// Row-major N×m: E[1_i(X_n) | y_{1:N}].
    gamma: Vec<f64>,
    /// (N-1)×m×m: E[1_{ij}(X_n, X_{n+1}) | y_{1:N}].
    xi: Vec<f64>,
    loglik: f64,
}

impl SmoothedMoments {
    #[inline]
    pub fn num_states(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.gamma.len() / self.m
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    #[inline]
    pub fn gamma(&self, n: usize) -> &[f64] {
        &self.gamma[n * self.m..(n + 1) * self.m]
    }

    /// Pair moment for the transition n → n+1 as an m×m row-major block.
    #[inline]
    pub fn xi(&self, n: usize) -> &[f64] {
        let mm = self.m * self.m;
        &self.xi[n * mm..(n + 1) * mm]
    }

    pub fn gamma_all(&self) -> &[f64] {
        &self.gamma
    }

    /// Log-likelihood of the model the moments were computed under.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }
}

/// Forward-backward smoother on scaled quantities.
pub fn smooth(spec: &ModelSpec, series: &ObservationSeries) -> Result<SmoothedMoments> {
    smooth_with(spec, series, InitialLaw::Stationary)
}

pub fn smooth_with(
    spec: &ModelSpec,
    series: &ObservationSeries,
    law: InitialLaw,
) -> Result<SmoothedMoments> {
    let bank = forward_filter_with(spec, series, law)?;
    let m = spec.num_states();
    let n_obs = series.len();
    let a = spec.transition();

    let mut gamma = vec![0.0; n_obs * m];
    let mut xi = vec![0.0; n_obs.saturating_sub(1) * m * m];
    // beta_n(i) = p(y_{n+1:N} | X_n = i) / p(y_{n+1:N} | y_{1:n})
    let mut beta = vec![1.0; m];
    let mut next_beta = vec![0.0; m];
    let mut scaled_emit = vec![0.0; m];
    gamma[(n_obs - 1) * m..].copy_from_slice(bank.filter(n_obs - 1));

    for n in (0..n_obs - 1).rev() {
        let (y_prev, y) = (series.prev(n + 1), series.values()[n + 1]);
        for (j, e) in scaled_emit.iter_mut().enumerate() {
            *e = (emission_logdensity(spec, j, y_prev, y) - bank.log_norm[n + 1]).exp() * beta[j];
        }
        let filt = bank.filter(n);
        let block = &mut xi[n * m * m..(n + 1) * m * m];
        for i in 0..m {
            let mut b = 0.0;
            for j in 0..m {
                let t = a.get(i, j) * scaled_emit[j];
                block[i * m + j] = filt[i] * t;
                b += t;
            }
            next_beta[i] = b;
        }
        std::mem::swap(&mut beta, &mut next_beta);
        let g = &mut gamma[n * m..(n + 1) * m];
        for i in 0..m {
            g[i] = filt[i] * beta[i];
        }
        // renormalize against accumulated rounding
        let s: f64 = g.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::numerical(n + 1, "smoothed probabilities vanished"));
        }
        g.iter_mut().for_each(|v| *v /= s);
        let sx: f64 = block.iter().sum();
        block.iter_mut().for_each(|v| *v /= sx);
    }
    Ok(SmoothedMoments {
        m,
        gamma,
        xi,
        loglik: bank.loglik,
    })
}

/// EM intermediate quantity for a candidate model under given moments.
///
/// `Σ_{n<N} Σ_{ij} ξ_n(i,j) log a_ij + Σ_{n≤N} Σ_i γ_n(i) log p(y_n | y_{n-1}, i)`.
/// Each state is paired with its own observation. Zero-weight terms with
/// `a_ij = 0` contribute nothing; positive weight on a zero transition
/// yields `-inf`.
pub fn q_function(
    candidate: &ModelSpec,
    moments: &SmoothedMoments,
    series: &ObservationSeries,
) -> Result<f64> {
    let m = candidate.num_states();
    if moments.num_states() != m || moments.len() != series.len() {
        return Err(Error::invalid("moments do not match candidate/series dimensions"));
    }
    let a = candidate.transition();
    let mut q = 0.0;
    for n in 0..series.len().saturating_sub(1) {
        let block = moments.xi(n);
        for i in 0..m {
            for j in 0..m {
                let w = block[i * m + j];
                if w > 0.0 {
                    q += w * a.get(i, j).ln();
                }
            }
        }
    }
    for (n, (y_prev, y)) in series.lagged_pairs().enumerate() {
        let g = moments.gamma(n);
        for i in 0..m {
            if g[i] > 0.0 {
                q += g[i] * emission_logdensity(candidate, i, y_prev, y);
            }
        }
    }
    Ok(q)
}
