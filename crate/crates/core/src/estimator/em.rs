use crate::error::Result;
use crate::likelihood::smooth;
use crate::model::{stationary_distribution, ModelSpec, ObservationSeries, TransitionMatrix};

use super::config::SaemConfig;
use super::init::initial_spec;
use super::mstep::{mstep, MStepOptions};
use super::saem::{finish, FitResult, TrajectoryPoint};
use super::stats::SufficientStats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_STEPS: usize = 60;

/// Transition part of the expected complete-data log-likelihood, including
/// the stationary initial law.
fn transition_objective(counts: &[f64], first: &[f64], a: &TransitionMatrix) -> f64 {
    let mut g = 0.0;
    for (&c, &p) in counts.iter().zip(a.as_slice()) {
        if c > 0.0 {
            g += c * p.ln();
        }
    }
    match stationary_distribution(a) {
        Ok(mu) => {
            for (&w, &p) in first.iter().zip(&mu) {
                if w > 0.0 {
                    g += w * p.max(f64::MIN_POSITIVE).ln();
                }
            }
            g
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

fn blend(old: &TransitionMatrix, new: &TransitionMatrix, lambda: f64) -> TransitionMatrix {
    let data = old
        .as_slice()
        .iter()
        .zip(new.as_slice())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    TransitionMatrix::from_row_major(old.dim(), data).expect("convex combination of stochastic rows")
}

/// Chooses a transition matrix on the segment from `old` to `proposed`
/// that does not decrease the transition objective. The count-ratio
/// estimate ignores the initial-law term, so it is only accepted outright
/// when it does not lose ground.
fn transition_step(
    counts: &[f64],
    first: &[f64],
    old: &TransitionMatrix,
    proposed: &TransitionMatrix,
) -> TransitionMatrix {
    let g = |l: f64| transition_objective(counts, first, &blend(old, proposed, l));
    let (g0, g1) = (g(0.0), g(1.0));
    if g1 >= g0 {
        return proposed.clone();
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..GOLDEN_STEPS {
        if gc >= gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - phi * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + phi * (hi - lo);
            gd = g(d);
        }
    }
    let (lambda, best) = if gc >= gd { (c, gc) } else { (d, gd) };
    if best > g0 {
        blend(old, proposed, lambda)
    } else {
        old.clone()
    }
}

/// Deterministic EM with exact smoothed moments. Iterates until the
/// log-likelihood gain drops below `cfg.em_tol` or `cfg.iterations` is
/// reached. The trajectory starts with the initial point (iteration 0)
/// and records every iterate, including a final non-improving one.
pub fn em_fit(series: &ObservationSeries, cfg: &SaemConfig) -> Result<FitResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut spec = initial_spec(series, cfg, &mut rng)?;
    let mut moments = smooth(&spec, series)?;
    let mut loglik = moments.loglik();
    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        gamma: 1.0,
        params: spec.flat_params(),
        loglik: Some(loglik),
    }];
    let mut converged = false;
    let mut iterations_run = 0;

    for t in 1..=cfg.iterations {
        iterations_run = t;
        let step = || -> Result<ModelSpec> {
            let stats = SufficientStats::from_moments(&moments);
            let out = mstep(
                &stats,
                series,
                cfg.kind,
                MStepOptions {
                    delta: cfg.delta_clamp,
                    fallback: Some(&spec),
                },
            )?;
            let transition = transition_step(stats.s3(), moments.gamma(0), spec.transition(), &out.transition);
            ModelSpec::new(cfg.kind, out.theta, out.sigma2, transition)
        };
        let next = step().map_err(|e| e.at_iteration(t))?;
        let next_moments = smooth(&next, series).map_err(|e| e.at_iteration(t))?;
        let gain = next_moments.loglik() - loglik;
        trajectory.push(TrajectoryPoint {
            iteration: t,
            gamma: 1.0,
            params: next.flat_params(),
            loglik: Some(next_moments.loglik()),
        });
        if gain < 0.0 {
            // a decrease can only come from rounding; keep the better iterate
            converged = gain > -1e-9 * loglik.abs().max(1.0);
            break;
        }
        spec = next;
        moments = next_moments;
        loglik = moments.loglik();
        if gain < cfg.em_tol {
            converged = true;
            break;
        }
    }
    finish(&spec, series, converged, iterations_run, trajectory)
}
