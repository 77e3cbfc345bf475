//! Conjugate-prior marginal likelihoods and the log-ratio bound of the
//! likelihood against the mixture marginal.
//!
//! Priors: `θ | σ² ~ N(0, σ² Σ)`, `σ² ~ IG(v₀/2, u₀/2)`, transition rows
//! `~ Dirichlet(e)`. Design columns come in per-state blocks, `(1)` for
//! constant means and `(1, y_{n-1})` (intercept, lag) for linear regimes.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::{check_enumeration_size, emission_logdensity, for_each_path, forward_filter_with};
use crate::model::{HiddenPath, InitialLaw, ModelSpec, ObservationSeries, RegimeKind};
use crate::special::{ln_gamma, LogSumExp};

/// Largest number of hidden paths enumerated by [`lemma1_bound`].
pub const BOUND_ENUMERATION_LIMIT: f64 = 1e5;

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    /// Covariance scale for θ, size `m·d`.
    pub sigma: DMatrix<f64>,
    pub u0: f64,
    pub v0: f64,
    /// Dirichlet parameters for each transition row, length `m`.
    pub e: Vec<f64>,
}

impl Priors {
    /// `Σ = 10·I`, `u₀ = v₀ = 1`, `e = (1/2, …, 1/2)`.
    pub fn default_for(m: usize, kind: RegimeKind) -> Self {
        Self::with_scale(m, kind, 10.0)
    }

    pub fn with_scale(m: usize, kind: RegimeKind, scale: f64) -> Self {
        let p = m * kind.coefficients_per_state();
        Self {
            sigma: DMatrix::identity(p, p) * scale,
            u0: 1.0,
            v0: 1.0,
            e: vec![0.5; m],
        }
    }

    fn validate(&self, m: usize, kind: RegimeKind) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let p = m * kind.coefficients_per_state();
        if self.sigma.nrows() != p || self.sigma.ncols() != p {
            return Err(Error::invalid(format!(
                "prior covariance is {}x{}, expected {p}x{p}",
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if !(self.u0 > 0.0 && self.v0 > 0.0) {
            return Err(Error::invalid("u0 and v0 must be positive"));
        }
        if self.e.len() != m || self.e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("Dirichlet parameters must be m positive values"));
        }
        let asym = (&self.sigma - self.sigma.transpose()).amax();
        if !(asym <= 1e-12 * self.sigma.amax().max(1.0)) {
            return Err(Error::invalid("prior covariance is not symmetric"));
        }
        self.sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("prior covariance is not positive definite"))
    }
}

/// Regression design of the stacked model `y = Zθ + ε` for a fixed path.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub z: DMatrix<f64>,
    pub kind: RegimeKind,
    pub m: usize,
}

impl DesignMatrix {
    /// Column of coefficient `(state, j)`, with j = 0 the intercept and
    /// j = 1 the lag.
    pub fn column(kind: RegimeKind, state: usize, j: usize) -> usize {
        state * kind.coefficients_per_state() + j
    }

    /// Coefficient vector laid out to match the columns.
    pub fn theta_vector(spec: &ModelSpec, kind: RegimeKind) -> DVector<f64> {
        let d = kind.coefficients_per_state();
        let mut v = DVector::zeros(spec.num_states() * d);
        for (i, r) in spec.theta().iter().enumerate() {
            v[i * d] = r.intercept;
            if d == 2 {
                v[i * d + 1] = r.slope;
            }
        }
        v
    }
}

pub fn build_design_matrix(
    path: &HiddenPath,
    series: &ObservationSeries,
    m: usize,
    kind: RegimeKind,
) -> Result<DesignMatrix> {
    if path.len() != series.len() {
        return Err(Error::invalid(format!(
            "path length {} differs from series length {}",
            path.len(),
            series.len()
        )));
    }
    if let Some(&bad) = path.states().iter().find(|&&x| x >= m) {
        return Err(Error::invalid(format!("state {} out of range", bad + 1)));
    }
    let d = kind.coefficients_per_state();
    let mut z = DMatrix::zeros(series.len(), m * d);
    for (n, &x) in path.states().iter().enumerate() {
        z[(n, x * d)] = 1.0;
        if d == 2 {
            z[(n, x * d + 1)] = series.prev(n);
        }
    }
    Ok(DesignMatrix { z, kind, m })
}

/// Path-dependent pieces of the conjugate marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateTerms {
    pub log_det_sigma: f64,
    /// `log det M` with `M⁻¹ = ZᵀZ + Σ⁻¹`.
    pub log_det_m: f64,
    /// `yᵀPy` with `P = I − Z M Zᵀ`.
    pub quad: f64,
}

fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn terms_with_factor(
    design: &DesignMatrix,
    series: &ObservationSeries,
    sigma_chol: &Cholesky<f64, nalgebra::Dyn>,
) -> Result<ConjugateTerms> {
    // Σ = LLᵀ, G = ZL, K = I + GᵀG: det M = det Σ / det K and
    // yᵀZMZᵀy = ‖R⁻¹Gᵀy‖² with K = RRᵀ.
    let l = sigma_chol.l();
    let g = &design.z * &l;
    let p = g.ncols();
    let k = DMatrix::identity(p, p) + g.transpose() * &g;
    let k_chol = k
        .cholesky()
        .ok_or_else(|| Error::numerical(0, "posterior precision is not positive definite"))?;
    let y = DVector::from_column_slice(series.values());
    let gty = g.transpose() * &y;
    let w = k_chol
        .l()
        .solve_lower_triangular(&gty)
        .ok_or_else(|| Error::numerical(0, "triangular solve failed"))?;
    let log_det_sigma = log_det_from_cholesky(&l);
    let log_det_k = log_det_from_cholesky(&k_chol.l());
    let quad = (y.dot(&y) - w.dot(&w)).max(0.0);
    Ok(ConjugateTerms {
        log_det_sigma,
        log_det_m: log_det_sigma - log_det_k,
        quad,
    })
}

pub fn conjugate_terms(
    series: &ObservationSeries,
    path: &HiddenPath,
    m: usize,
    priors: &Priors,
    kind: RegimeKind,
) -> Result<ConjugateTerms> {
    let chol = priors.validate(m, kind)?;
    let design = build_design_matrix(path, series, m, kind)?;
    terms_with_factor(&design, series, &chol)
}

fn log_marginal_from_terms(t: &ConjugateTerms, n: usize, u0: f64, v0: f64) -> f64 {
    let n = n as f64;
    0.5 * v0 * u0.ln() + 0.5 * t.log_det_m + ln_gamma(0.5 * (n + v0))
        - 0.5 * n * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * v0)
        - 0.5 * t.log_det_sigma
        - 0.5 * (n + v0) * (u0 + t.quad).ln()
}

/// `log Q(y | x_{1:N})`: the regression likelihood integrated against the
/// normal–inverse-gamma prior.
pub fn log_marginal_y_given_path(
    series: &ObservationSeries,
    path: &HiddenPath,
    m: usize,
    priors: &Priors,
    kind: RegimeKind,
) -> Result<f64> {
    let t = conjugate_terms(series, path, m, priors, kind)?;
    Ok(log_marginal_from_terms(&t, series.len(), priors.u0, priors.v0))
}

/// `log Q_m(x_{2:N} | x_1)`: transition probabilities integrated against
/// independent Dirichlet(e) rows.
pub fn log_marginal_path(path: &HiddenPath, m: usize, e: &[f64]) -> Result<f64> {
    if e.len() != m || e.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("Dirichlet parameters must be m positive values"));
    }
    if path.states().iter().any(|&x| x >= m) {
        return Err(Error::invalid("path state out of range"));
    }
    Ok(log_marginal_counts(&path.transition_counts(m), m, e))
}

fn log_marginal_counts(counts: &[f64], m: usize, e: &[f64]) -> f64 {
    let e_sum: f64 = e.iter().sum();
    let ln_e_sum = ln_gamma(e_sum);
    let ln_e: Vec<f64> = e.iter().map(|&v| ln_gamma(v)).collect();
    let mut total = 0.0;
    for i in 0..m {
        let row = &counts[i * m..(i + 1) * m];
        let n_i: f64 = row.iter().sum();
        total += ln_e_sum - ln_gamma(n_i + e_sum);
        for j in 0..m {
            if row[j] > 0.0 {
                total += ln_gamma(row[j] + e[j]) - ln_e[j];
            }
        }
    }
    total
}

/// `c_m(N) = −m (ln Γ(m/2)/Γ(1/2) − m(m−1)/(4N) + 1/(12N))`, for N ≥ 4.
pub fn c_m(n: usize, m: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::Domain(format!("c_m needs N >= 4, got {n}")));
    }
    let (n, m) = (n as f64, m as f64);
    let ratio = ln_gamma(m / 2.0) - ln_gamma(0.5);
    Ok(-m * (ratio - m * (m - 1.0) / (4.0 * n) + 1.0 / (12.0 * n)))
}

/// Exponent applied to `log(u₀ + yᵀPy)` on the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundExponent {
    /// `(N + v₀)/2`, as obtained by integrating out σ².
    #[default]
    NPlusV0,
    /// `(1 + v₀)/2`.
    OnePlusV0,
}

/// How the mixture over hidden paths enters the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundMode {
    /// Likelihood given `x₁` against `Q_m(y | x₁)`, both summed over all
    /// continuations; the right-hand side is the largest path-wise value.
    #[default]
    Marginal,
    /// Joint density of `(y, x_{2:N})` against `Q(y | x) Q_m(x_{2:N} | x₁)`
    /// for the given path.
    PathWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundOptions {
    pub mode: BoundMode,
    pub exponent: BoundExponent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundValue {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

fn bound_rhs(t: &ConjugateTerms, n: usize, m: usize, priors: &Priors, exponent: BoundExponent) -> Result<f64> {
    let nf = n as f64;
    let mf = m as f64;
    let power = match exponent {
        BoundExponent::NPlusV0 => 0.5 * (nf + priors.v0),
        BoundExponent::OnePlusV0 => 0.5 * (1.0 + priors.v0),
    };
    Ok(mf * (mf - 1.0) / 2.0 * nf.ln() + c_m(n, m)?
        + ln_gamma(0.5 * priors.u0)
        + 0.5 * t.log_det_sigma
        + power * (priors.u0 + t.quad).ln()
        - nf / 2.0
        - 0.5 * t.log_det_m
        - ln_gamma(0.5 * (nf + priors.v0)))
}

/// Evaluates both sides of the bound on `log p(y | y₀, x₁, ψ) / Q_m(y | x₁)`.
/// In [`BoundMode::Marginal`] only the first state of `path` is used.
pub fn lemma1_bound(
    series: &ObservationSeries,
    path: &HiddenPath,
    priors: &Priors,
    spec: &ModelSpec,
    kind: RegimeKind,
    opts: BoundOptions,
) -> Result<BoundValue> {
    let m = spec.num_states();
    let n = series.len();
    if kind == RegimeKind::Hmm && spec.kind() == RegimeKind::LinearAr {
        return Err(Error::invalid("constant-mean design cannot carry a model with slopes"));
    }
    if path.len() != n {
        return Err(Error::invalid("path and series lengths differ"));
    }
    if path.states().iter().any(|&x| x >= m) {
        return Err(Error::invalid("path state out of range"));
    }
    let chol = priors.validate(m, kind)?;
    c_m(n, m)?;

    match opts.mode {
        BoundMode::PathWise => {
            let design = build_design_matrix(path, series, m, kind)?;
            let t = terms_with_factor(&design, series, &chol)?;
            let x = path.states();
            let mut log_joint = 0.0;
            for k in 0..n {
                if k > 0 {
                    log_joint += spec.transition().get(x[k - 1], x[k]).ln();
                }
                log_joint += emission_logdensity(spec, x[k], series.prev(k), series.values()[k]);
            }
            let log_q = log_marginal_from_terms(&t, n, priors.u0, priors.v0)
                + log_marginal_path(path, m, &priors.e)?;
            Ok(BoundValue {
                lhs: log_joint - log_q,
                rhs: bound_rhs(&t, n, m, priors, opts.exponent)?,
            })
        }
        BoundMode::Marginal => {
            check_enumeration_size(m, n - 1, BOUND_ENUMERATION_LIMIT)?;
            let x1 = path.states()[0];
            let log_p = forward_filter_with(spec, series, InitialLaw::Fixed(x1))?.loglik();
            let mut acc = LogSumExp::default();
            let mut rhs = f64::NEG_INFINITY;
            let mut failure = None;
            let mut full = vec![x1; n];
            for_each_path(m, n - 1, |tail| {
                if failure.is_some() {
                    return;
                }
                full[1..].copy_from_slice(tail);
                let candidate = HiddenPath(full.clone());
                let step = || -> Result<(f64, f64)> {
                    let design = build_design_matrix(&candidate, series, m, kind)?;
                    let t = terms_with_factor(&design, series, &chol)?;
                    let q = log_marginal_from_terms(&t, n, priors.u0, priors.v0)
                        + log_marginal_counts(&candidate.transition_counts(m), m, &priors.e);
                    Ok((q, bound_rhs(&t, n, m, priors, opts.exponent)?))
                };
                match step() {
                    Ok((q, r)) => {
                        acc.push(q);
                        rhs = rhs.max(r);
                    }
                    Err(e) => failure = Some(e),
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(BoundValue {
                lhs: log_p - acc.value(),
                rhs,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransitionMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(vals: &[f64]) -> ObservationSeries {
        ObservationSeries::new(0.3, vals.to_vec()).unwrap()
    }

    #[test]
    fn design_blocks() {
        let s = series(&[1.0, 2.0, 3.0]);
        let z = build_design_matrix(&HiddenPath(vec![0, 0, 0]), &s, 1, RegimeKind::LinearAr).unwrap().z;
        assert_eq!(z.column(0).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(z.column(1).as_slice(), &[0.3, 1.0, 2.0]);
        let z = build_design_matrix(&HiddenPath(vec![1, 0, 1]), &s, 2, RegimeKind::Hmm).unwrap().z;
        for r in 0..3 {
            assert_eq!(z.row(r).sum(), 1.0);
        }
        assert_eq!(z[(0, 1)], 1.0);
    }

    #[test]
    fn design_reproduces_regime_means() {
        let spec = ModelSpec::linear_ar(
            &[(0.4, -1.0), (-0.3, 2.0), (0.9, 0.1)],
            1.0,
            TransitionMatrix::uniform(3),
        )
        .unwrap();
        let s = series(&[0.5, -1.2, 3.3, 0.0, 2.2]);
        let path = HiddenPath(vec![2, 0, 1, 1, 0]);
        let dm = build_design_matrix(&path, &s, 3, RegimeKind::LinearAr).unwrap();
        let fitted = &dm.z * DesignMatrix::theta_vector(&spec, RegimeKind::LinearAr);
        for n in 0..5 {
            let want = spec.theta()[path.states()[n]].mean(s.prev(n));
            assert!((fitted[n] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn design_length_mismatch() {
        let s = series(&[1.0, 2.0]);
        assert!(build_design_matrix(&HiddenPath(vec![0]), &s, 1, RegimeKind::Hmm).is_err());
    }

    #[test]
    fn quadratic_form_matches_explicit_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let vals: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = series(&vals);
            let path = HiddenPath((0..6).map(|_| rng.random_range(0..2)).collect());
            let priors = Priors::default_for(2, RegimeKind::LinearAr);
            let t = conjugate_terms(&s, &path, 2, &priors, RegimeKind::LinearAr).unwrap();
            let z = build_design_matrix(&path, &s, 2, RegimeKind::LinearAr).unwrap().z;
            // explicit inverse is fine in a test oracle
            let minv = z.transpose() * &z + priors.sigma.clone().try_inverse().unwrap();
            let mm = minv.clone().try_inverse().unwrap();
            let p = DMatrix::identity(6, 6) - &z * &mm * z.transpose();
            let y = DVector::from_column_slice(&vals);
            assert!((t.quad - (y.transpose() * &p * &y)[0]).abs() < 1e-9 * (1.0 + t.quad));
            assert!((t.log_det_m - mm.determinant().ln()).abs() < 1e-9);
            let eig = p.clone().symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|&v| v > -1e-10));
        }
    }

    #[test]
    fn dirichlet_hand_value() {
        let v = log_marginal_path(&HiddenPath(vec![0, 0]), 2, &[0.5, 0.5]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_marginal_normalizes() {
        for e in [vec![0.5, 0.5], vec![1.0, 2.5], vec![0.3, 0.7]] {
            for n in 2..=6 {
                let mut total = 0.0;
                for_each_path(2, n - 1, |tail| {
                    let mut p = vec![1];
                    p.extend_from_slice(tail);
                    total += log_marginal_path(&HiddenPath(p), 2, &e).unwrap().exp();
                });
                assert!((total - 1.0).abs() < 1e-10, "e={e:?} n={n}: {total}");
            }
        }
    }

    #[test]
    fn c_m_values() {
        assert!((c_m(100, 1).unwrap() + 1.0 / 1200.0).abs() < 1e-15);
        assert!((c_m(500, 2).unwrap() - 1.1465).abs() < 1e-3);
        assert!((c_m(500, 2).unwrap() - 1.1463965525160668).abs() < 1e-12);
        assert!(matches!(c_m(3, 2), Err(Error::Domain(_))));
        let limit = -3.0 * (ln_gamma(1.5) - ln_gamma(0.5));
        let far = c_m(1_000_000, 3).unwrap();
        assert!((far - limit).abs() < 1e-5);
        assert!(c_m(100, 3).unwrap() > c_m(1000, 3).unwrap());
    }

    #[test]
    fn rejects_bad_priors() {
        let s = series(&[1.0, 2.0]);
        let path = HiddenPath(vec![0, 0]);
        let mut p = Priors::default_for(1, RegimeKind::Hmm);
        p.sigma[(0, 0)] = -1.0;
        assert!(matches!(log_marginal_y_given_path(&s, &path, 1, &p, RegimeKind::Hmm), Err(Error::InvalidInput(_))));
        let p = Priors::default_for(2, RegimeKind::Hmm);
        assert!(log_marginal_y_given_path(&s, &path, 1, &p, RegimeKind::Hmm).is_err());
    }

    #[test]
    fn single_state_has_no_log_n_term() {
        let s = series(&[0.1, 2.0, -1.0, 0.7, 1.1]);
        let spec = ModelSpec::hmm(&[0.5], 1.3, TransitionMatrix::uniform(1)).unwrap();
        let priors = Priors::default_for(1, RegimeKind::Hmm);
        let path = HiddenPath(vec![0; 5]);
        let t = conjugate_terms(&s, &path, 1, &priors, RegimeKind::Hmm).unwrap();
        let b = lemma1_bound(&s, &path, &priors, &spec, RegimeKind::Hmm, BoundOptions::default()).unwrap();
        let expected = c_m(5, 1).unwrap() + ln_gamma(0.5) + 0.5 * t.log_det_sigma + 3.0 * (1.0 + t.quad).ln()
            - 2.5
            - 0.5 * t.log_det_m
            - ln_gamma(3.0);
        assert!((b.rhs - expected).abs() < 1e-12);
        // with one state the two modes coincide
        let pw = BoundOptions {
            mode: BoundMode::PathWise,
            ..Default::default()
        };
        let b2 = lemma1_bound(&s, &path, &priors, &spec, RegimeKind::Hmm, pw).unwrap();
        assert!((b.lhs - b2.lhs).abs() < 1e-10 && (b.rhs - b2.rhs).abs() < 1e-12);
    }
}
