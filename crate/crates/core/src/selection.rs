//! BIC state-count selection and the slope likelihood-ratio test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{best_of, finish_fit, restart_config, Algorithm, FitResult, InitStrategy, SaemConfig};
use crate::model::{ObservationSeries, RegimeKind};
use crate::special::chi2_cdf;

/// How the free-parameter count is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimFormula {
    /// `m² + 1` for constant means, `m(m+1) + 1` for linear regimes.
    #[default]
    Stated,
    /// `m(m+1)` regardless of kind.
    Table2,
}

/// Number of free parameters of an `m`-state model.
pub fn model_dimension(m: usize, kind: RegimeKind) -> usize {
    match kind {
        RegimeKind::Hmm => m * m + 1,
        RegimeKind::LinearAr => m * (m + 1) + 1,
    }
}

fn dimension_with(m: usize, kind: RegimeKind, formula: DimFormula) -> usize {
    match formula {
        DimFormula::Stated => model_dimension(m, kind),
        DimFormula::Table2 => m * (m + 1),
    }
}

/// BIC penalty `(ln N)/2 · dim`.
pub fn penalty(n: usize, m: usize, kind: RegimeKind, formula: DimFormula) -> f64 {
    (n as f64).ln() / 2.0 * dimension_with(m, kind, formula) as f64
}

/// Smallest index attaining the minimum; NaN entries are skipped.
pub fn min_argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// One candidate state count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub m: usize,
    pub negloglik: f64,
    pub pen: f64,
    pub criterion: f64,
    /// `None` when every restart for this `m` failed.
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rows: Vec<SelectionRow>,
    pub m_hat: usize,
}

impl SelectionResult {
    /// Builds the table from `(m, −loglik)` pairs without fitting.
    pub fn from_negloglik(
        n: usize,
        kind: RegimeKind,
        formula: DimFormula,
        entries: &[(usize, f64)],
    ) -> Result<Self> {
        let rows = entries
            .iter()
            .map(|&(m, negloglik)| {
                let pen = penalty(n, m, kind, formula);
                SelectionRow {
                    m,
                    negloglik,
                    pen,
                    criterion: negloglik + pen,
                    fit: None,
                    error: None,
                }
            })
            .collect();
        Self::from_rows(rows)
    }

    fn from_rows(rows: Vec<SelectionRow>) -> Result<Self> {
        let crit: Vec<f64> = rows.iter().map(|r| r.criterion).collect();
        let idx = min_argmin(&crit).ok_or_else(|| {
            let msgs: Vec<String> = rows
                .iter()
                .map(|r| format!("m={}: {}", r.m, r.error.as_deref().unwrap_or("no value")))
                .collect();
            Error::numerical(0, format!("every candidate failed ({})", msgs.join("; ")))
        })?;
        let m_hat = rows[idx].m;
        Ok(Self { rows, m_hat })
    }

    pub fn chosen(&self) -> Option<&FitResult> {
        self.rows.iter().find(|r| r.m == self.m_hat)?.fit.as_ref()
    }
}

/// Fits m = 1..=m_max with `restarts` starts each and selects by BIC.
pub fn select_states(
    series: &ObservationSeries,
    m_max: usize,
    template: &SaemConfig,
    restarts: usize,
    formula: DimFormula,
) -> Result<SelectionResult> {
    select_states_with(series, m_max, template, restarts, formula, Algorithm::Saem)
}

pub fn select_states_with(
    series: &ObservationSeries,
    m_max: usize,
    template: &SaemConfig,
    restarts: usize,
    formula: DimFormula,
    algorithm: Algorithm,
) -> Result<SelectionResult> {
    if m_max == 0 {
        return Err(Error::invalid("m_max must be at least 1"));
    }
    let restarts = restarts.max(1);
    let jobs: Vec<(usize, usize)> = (1..=m_max)
        .flat_map(|m| (0..restarts).map(move |r| (m, r)))
        .collect();
    let mut results: Vec<Result<FitResult>> = jobs
        .par_iter()
        .map(|&(m, r)| {
            let mut cfg = template.clone();
            cfg.m = m;
            if matches!(cfg.init, InitStrategy::Provided(_)) {
                cfg.init = InitStrategy::KMeansLike;
            }
            algorithm.fit(series, &restart_config(&cfg, r))
        })
        .collect();

    let n = series.len();
    let mut rows = Vec::with_capacity(m_max);
    for m in (1..=m_max).rev() {
        let chunk: Vec<_> = results.split_off((m - 1) * restarts);
        let pen = penalty(n, m, template.kind, formula);
        let row = match best_of(chunk) {
            Ok(fit) => SelectionRow {
                m,
                negloglik: -fit.loglik_hat,
                pen,
                criterion: -fit.loglik_hat + pen,
                fit: Some(fit),
                error: None,
            },
            Err(e) => SelectionRow {
                m,
                negloglik: f64::NAN,
                pen,
                criterion: f64::NAN,
                fit: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows.reverse();
    SelectionResult::from_rows(rows)
}

/// Upper-tail critical value: `x` with `P(χ²_df ≤ x) = 1 − α`.
pub fn chi2_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("degrees of freedom must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = df as f64;
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (0.0, k.max(1.0));
    while chi2_cdf(k, hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(k, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrtResult {
    pub schema: u32,
    pub m: usize,
    /// `2 (l₁ − l₀)`.
    pub stat: f64,
    pub df: usize,
    pub alpha: f64,
    pub critical: f64,
    pub reject: bool,
    pub loglik_h0: f64,
    pub loglik_h1: f64,
}

impl LrtResult {
    pub fn from_logliks(m: usize, alpha: f64, loglik_h0: f64, loglik_h1: f64) -> Result<Self> {
        let critical = chi2_quantile(m, alpha)?;
        let stat = 2.0 * (loglik_h1 - loglik_h0);
        Ok(Self {
            schema: 1,
            m,
            stat,
            df: m,
            alpha,
            critical,
            reject: stat >= critical,
            loglik_h0,
            loglik_h1,
        })
    }
}

/// Full output of [`lrt_test`], including both fits.
#[derive(Debug, Clone)]
pub struct LrtOutcome {
    pub result: LrtResult,
    pub h0: FitResult,
    pub h1: FitResult,
}

/// Tests all slopes zero against linear regimes with `m` states. The
/// alternative is also fitted from the null estimate, so the alternative
/// log-likelihood is never below the null one.
pub fn lrt_test(
    series: &ObservationSeries,
    m: usize,
    alpha: f64,
    cfg: &SaemConfig,
    restarts: usize,
) -> Result<LrtOutcome> {
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    chi2_quantile(m, alpha)?;
    let mut base = cfg.clone();
    base.m = m;
    if matches!(base.init, InitStrategy::Provided(_)) {
        base.init = InitStrategy::KMeansLike;
    }
    let label = |side: &str, e: Error| Error::numerical(0, format!("{side} fit failed: {e}"));

    let mut h0_cfg = base.clone();
    h0_cfg.kind = RegimeKind::Hmm;
    let h0 = crate::estimator::fit_best(series, &h0_cfg, restarts, Algorithm::Saem)
        .map_err(|e| if e.is_input_error() { e } else { label("null", e) })?;

    let mut h1_cfg = base;
    h1_cfg.kind = RegimeKind::LinearAr;
    let embedded = h0.spec_hat.as_linear_ar();
    let embedded_fit = finish_fit(&embedded, series, true, 0, Vec::new())?;
    let from_null = Algorithm::Saem.fit(series, &h1_cfg.clone().with_init(InitStrategy::Provided(embedded)));
    let restarted = crate::estimator::fit_best(series, &h1_cfg, restarts, Algorithm::Saem);
    let h1 = best_of(vec![Ok(embedded_fit), from_null, restarted])
        .map_err(|e| if e.is_input_error() { e } else { label("alternative", e) })?;

    let result = LrtResult::from_logliks(m, alpha, h0.loglik_hat, h1.loglik_hat)?;
    Ok(LrtOutcome { result, h0, h1 })
}
