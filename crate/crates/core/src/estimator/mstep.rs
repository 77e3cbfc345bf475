//! Closed-form maximization of the weighted complete-data log-likelihood.
//!
//! Transitions use `s3 / s2`; regression coefficients solve per-state
//! weighted least squares of `y_n` on `(y_{n-1}, 1)` over n = 1..N with
//! weights `s1[n][i]`; σ² is the pooled weighted residual variance.

use crate::error::{Error, Result};
use crate::likelihood::gaussian_logpdf;
use crate::model::{clamp_rows, ModelSpec, ObservationSeries, Regime, RegimeKind, TransitionMatrix, DEFAULT_DELTA};

use super::stats::SufficientStats;

/// Relative occupancy below which a state is treated as empty.
pub const EMPTY_STATE_FRACTION: f64 = 1e-6;

const DESIGN_EPS: f64 = 1e-12;

/// Parameters produced by an M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub theta: Vec<Regime>,
    pub sigma2: f64,
    pub transition: TransitionMatrix,
}

impl MStepOutput {
    pub fn into_spec(self, kind: RegimeKind) -> Result<ModelSpec> {
        ModelSpec::new(kind, self.theta, self.sigma2, self.transition)
    }
}

/// Knobs for [`mstep`].
#[derive(Debug, Clone, Copy)]
pub struct MStepOptions<'a> {
    /// Lower clamp on transition entries.
    pub delta: f64,
    /// Model whose regimes are kept for empty or degenerate states. Without
    /// it such states are an error.
    pub fallback: Option<&'a ModelSpec>,
}

impl Default for MStepOptions<'_> {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            fallback: None,
        }
    }
}

/// M-step for constant regimes.
pub fn mstep_hmm(stats: &SufficientStats, series: &ObservationSeries) -> Result<MStepOutput> {
    mstep(stats, series, RegimeKind::Hmm, MStepOptions::default())
}

/// M-step for linear autoregressive regimes.
pub fn mstep_ar(stats: &SufficientStats, series: &ObservationSeries) -> Result<MStepOutput> {
    mstep(stats, series, RegimeKind::LinearAr, MStepOptions::default())
}

/// Transition estimate `s3[i][j] / s2[i]`, δ-clamped; rows with no visits
/// become uniform.
pub fn estimate_transition(stats: &SufficientStats, delta: f64) -> TransitionMatrix {
    let m = stats.num_states();
    let n = stats.len();
    let eps_occ = EMPTY_STATE_FRACTION * (n.saturating_sub(1).max(1)) as f64;
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        let row = &mut data[i * m..(i + 1) * m];
        let visits = stats.s2()[i];
        if visits < eps_occ {
            row.fill(1.0 / m as f64);
        } else {
            let counts = &stats.s3()[i * m..(i + 1) * m];
            let total: f64 = counts.iter().sum();
            for (a, &c) in row.iter_mut().zip(counts) {
                *a = c / total;
            }
        }
    }
    clamp_rows(m, &mut data, delta);
    TransitionMatrix::from_row_major(m, data).expect("clamped rows are stochastic")
}

#[derive(Default, Clone, Copy)]
struct Moments {
    w: f64,
    x: f64,
    y: f64,
    xx: f64,
    xy: f64,
}

pub fn mstep(
    stats: &SufficientStats,
    series: &ObservationSeries,
    kind: RegimeKind,
    opts: MStepOptions<'_>,
) -> Result<MStepOutput> {
    let m = stats.num_states();
    let n_obs = series.len();
    if stats.len() != n_obs {
        return Err(Error::invalid("statistics and series lengths differ"));
    }
    if let Some(fb) = opts.fallback {
        if fb.num_states() != m {
            return Err(Error::invalid("fallback model has a different state count"));
        }
    }

    let mut acc = vec![Moments::default(); m];
    for (k, (x, y)) in series.lagged_pairs().enumerate() {
        for (i, &w) in stats.s1(k).iter().enumerate() {
            let a = &mut acc[i];
            a.w += w;
            a.x += w * x;
            a.y += w * y;
            a.xx += w * x * x;
            a.xy += w * x * y;
        }
    }
    let total_weight: f64 = acc.iter().map(|a| a.w).sum();
    if !(total_weight > 0.0) {
        return Err(Error::DegenerateStats);
    }
    let eps_occ = EMPTY_STATE_FRACTION * n_obs as f64;

    let mut theta = Vec::with_capacity(m);
    for (i, a) in acc.iter().enumerate() {
        let fitted = if a.w < eps_occ {
            None
        } else {
            match kind {
                RegimeKind::Hmm => Some(Regime::constant(a.y / a.w)),
                RegimeKind::LinearAr => {
                    let det = a.w * a.xx - a.x * a.x;
                    if det <= DESIGN_EPS * a.w * a.xx.max(f64::MIN_POSITIVE) || det <= 0.0 {
                        None
                    } else {
                        let slope = (a.w * a.xy - a.x * a.y) / det;
                        let intercept = (a.y - slope * a.x) / a.w;
                        Some(Regime::new(slope, intercept))
                    }
                }
            }
        };
        match (fitted, opts.fallback) {
            (Some(r), _) => theta.push(r),
            (None, Some(fb)) => {
                let mut r = fb.theta()[i];
                if kind == RegimeKind::Hmm {
                    r.slope = 0.0;
                }
                theta.push(r)
            }
            (None, None) => return Err(Error::DegenerateDesign { state: i + 1 }),
        }
    }

    let mut rss = 0.0;
    for (k, (x, y)) in series.lagged_pairs().enumerate() {
        for (i, &w) in stats.s1(k).iter().enumerate() {
            if w > 0.0 {
                let r = y - theta[i].mean(x);
                rss += w * r * r;
            }
        }
    }
    let sigma2 = (rss / total_weight).max(f64::MIN_POSITIVE);

    Ok(MStepOutput {
        theta,
        sigma2,
        transition: estimate_transition(stats, opts.delta),
    })
}

/// Weighted complete-data log-likelihood
/// `Σ s3 log a + Σ_n Σ_i s1[n][i] log N(y_n; f_i(y_{n-1}), σ²)`.
/// `transition` is row-major and need not be stochastic.
pub fn complete_data_loglik(
    stats: &SufficientStats,
    series: &ObservationSeries,
    theta: &[Regime],
    sigma2: f64,
    transition: &[f64],
) -> f64 {
    let mut ll = 0.0;
    for (&c, &a) in stats.s3().iter().zip(transition) {
        if c > 0.0 {
            ll += c * a.ln();
        }
    }
    for (k, (x, y)) in series.lagged_pairs().enumerate() {
        for (i, &w) in stats.s1(k).iter().enumerate() {
            if w > 0.0 {
                ll += w * gaussian_logpdf(y - theta[i].mean(x), sigma2);
            }
        }
    }
    ll
}
