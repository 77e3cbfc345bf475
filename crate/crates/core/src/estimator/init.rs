//! Starting points for the fitters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ObservationSeries, Regime, RegimeKind, TransitionMatrix};

use super::config::{InitStrategy, SaemConfig};

pub(crate) fn initial_spec<R: Rng + ?Sized>(
    series: &ObservationSeries,
    cfg: &SaemConfig,
    rng: &mut R,
) -> Result<ModelSpec> {
    match &cfg.init {
        InitStrategy::KMeansLike => kmeans_like(series, cfg.m, cfg.kind),
        InitStrategy::RandomFromPrior => random_from_prior(series, cfg.m, cfg.kind, rng),
        InitStrategy::Provided(spec) => {
            if spec.num_states() != cfg.m {
                return Err(Error::invalid("provided start has a different state count"));
            }
            match (spec.kind(), cfg.kind) {
                (a, b) if a == b => Ok(spec.clone()),
                (RegimeKind::Hmm, RegimeKind::LinearAr) => Ok(spec.as_linear_ar()),
                _ => Err(Error::invalid("cannot start an hmm fit from a model with slopes")),
            }
        }
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn variance_floor(var: f64) -> f64 {
    1e-6 * var.max(1e-12)
}

/// Quantile partition of `y` into `m` groups, each fitted separately;
/// uniform transitions.
pub fn kmeans_like(series: &ObservationSeries, m: usize, kind: RegimeKind) -> Result<ModelSpec> {
    let y = series.values();
    let n = y.len();
    let (mean, var) = mean_var(y);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut group = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        group[idx] = rank * m / n;
    }

    let sd = var.sqrt().max(1e-6);
    let mut theta = Vec::with_capacity(m);
    let mut rss = 0.0;
    for g in 0..m {
        let members: Vec<(f64, f64)> = series
            .lagged_pairs()
            .zip(&group)
            .filter(|(_, &k)| k == g)
            .map(|(p, _)| p)
            .collect();
        let regime = if members.is_empty() {
            Regime::constant(mean + sd * (g as f64 - (m as f64 - 1.0) / 2.0))
        } else {
            let k = members.len() as f64;
            let mx = members.iter().map(|p| p.0).sum::<f64>() / k;
            let my = members.iter().map(|p| p.1).sum::<f64>() / k;
            match kind {
                RegimeKind::Hmm => Regime::constant(my),
                RegimeKind::LinearAr => {
                    let sxx: f64 = members.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
                    let sxy: f64 = members.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                    if sxx > 1e-12 * k * (1.0 + mx * mx) {
                        let slope = sxy / sxx;
                        Regime::new(slope, my - slope * mx)
                    } else {
                        Regime::new(0.0, my)
                    }
                }
            }
        };
        rss += members
            .iter()
            .map(|&(x, y)| (y - regime.mean(x)).powi(2))
            .sum::<f64>();
        theta.push(regime);
    }
    let sigma2 = (rss / n as f64).max(variance_floor(var)).max(f64::MIN_POSITIVE);
    ModelSpec::new(kind, theta, sigma2, TransitionMatrix::uniform(m))
}

/// Random start: each regime passes through a randomly chosen data pair,
/// AR slopes drawn uniformly in (-0.9, 0.9), σ² the sample variance, and
/// transition rows mixing the identity with a flat Dirichlet draw.
pub fn random_from_prior<R: Rng + ?Sized>(
    series: &ObservationSeries,
    m: usize,
    kind: RegimeKind,
    rng: &mut R,
) -> Result<ModelSpec> {
    let y = series.values();
    let n = y.len();
    let (_, var) = mean_var(y);
    let theta = (0..m)
        .map(|_| {
            let k = rng.random_range(0..n);
            let (x, yk) = (series.prev(k), y[k]);
            match kind {
                RegimeKind::Hmm => Regime::constant(yk),
                RegimeKind::LinearAr => {
                    let slope = rng.random_range(-0.9..0.9);
                    Regime::new(slope, yk - slope * x)
                }
            }
        })
        .collect();
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        let row = &mut data[i * m..(i + 1) * m];
        let mut total = 0.0;
        for v in row.iter_mut() {
            // Exp(1) draws normalize to a flat Dirichlet
            *v = -(1.0 - rng.random::<f64>()).ln();
            total += *v;
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.5 * *v / total + if i == j { 0.5 } else { 0.0 };
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let sigma2 = var.max(variance_floor(var)).max(f64::MIN_POSITIVE);
    ModelSpec::new(kind, theta, sigma2, TransitionMatrix::from_row_major(m, data)?)
}
