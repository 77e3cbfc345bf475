//! Model representation for autoregressive processes with Markov regime.
//!
//! The observation equation is `y_n = slope[x_n] * y_{n-1} + intercept[x_n] + σ ε_n`
//! with `x_n` a finite Markov chain. A hidden Markov model is the special
//! case with every slope fixed at zero.
//!
//! States are indexed from 0 inside the library. External formats (CSV path
//! columns, reports) use 1-based labels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default lower bound δ used by the positivity check on transitions.
pub const DEFAULT_DELTA: f64 = 1e-6;

/// Regime family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Constant regime means (all slopes zero).
    #[serde(alias = "HMM")]
    Hmm,
    /// Regime-specific linear autoregression.
    #[serde(rename = "ar", alias = "linear_ar", alias = "AR")]
    LinearAr,
}

impl RegimeKind {
    /// Number of regression coefficients per state.
    pub fn coefficients_per_state(self) -> usize {
        match self {
            RegimeKind::Hmm => 1,
            RegimeKind::LinearAr => 2,
        }
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegimeKind::Hmm => f.write_str("hmm"),
            RegimeKind::LinearAr => f.write_str("ar"),
        }
    }
}

/// Per-state regression pair. Serialized as `[slope, intercept]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Regime {
    pub slope: f64,
    pub intercept: f64,
}

impl Regime {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    pub fn constant(intercept: f64) -> Self {
        Self::new(0.0, intercept)
    }

    /// Conditional mean of the next observation given the previous one.
    #[inline]
    pub fn mean(&self, y_prev: f64) -> f64 {
        self.slope * y_prev + self.intercept
    }
}

impl From<[f64; 2]> for Regime {
    fn from(v: [f64; 2]) -> Self {
        Regime::new(v[0], v[1])
    }
}

impl From<Regime> for [f64; 2] {
    fn from(r: Regime) -> Self {
        [r.slope, r.intercept]
    }
}

/// Square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    m: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds a matrix from rows, checking shape, non-negativity and row sums.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::invalid("transition matrix has no rows"));
        }
        let mut data = Vec::with_capacity(m * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::invalid(format!(
                    "transition row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(m, data)
    }

    pub fn from_row_major(m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || data.len() != m * m {
            return Err(Error::invalid("transition matrix shape mismatch"));
        }
        let tm = Self { m, data };
        tm.validate()?;
        Ok(tm)
    }

    /// Uniform transitions 1/m.
    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            data: vec![1.0 / m as f64; m * m],
        }
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.m {
            let row = self.row(i);
            if row.iter().any(|&a| !a.is_finite() || a < 0.0) {
                return Err(Error::invalid(format!(
                    "transition row {} has a negative or non-finite entry",
                    i + 1
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "transition row {} sums to {s}, not 1",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Raises every entry to at least `delta` and renormalizes each row.
    pub fn clamped(&self, delta: f64) -> Self {
        let mut data = self.data.clone();
        clamp_rows(self.m, &mut data, delta);
        Self { m: self.m, data }
    }

    /// Same matrix with rows and columns relabeled: new index `perm[old]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                data[perm[i] * m + perm[j]] = self.get(i, j);
            }
        }
        Self { m, data }
    }
}

/// Applies max(a, δ) then row renormalization in place.
pub(crate) fn clamp_rows(m: usize, data: &mut [f64], delta: f64) {
    if delta * m as f64 >= 1.0 {
        data.fill(1.0 / m as f64);
        return;
    }
    for row in data.chunks_mut(m) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|a| *a /= s);
        // pin small entries at delta and rescale the rest onto the remaining mass
        let mut pinned = vec![false; m];
        loop {
            let k = pinned.iter().filter(|&&p| p).count();
            let free: f64 = row.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(a, _)| a).sum();
            let scale = (1.0 - k as f64 * delta) / free;
            let mut changed = false;
            for (a, p) in row.iter_mut().zip(pinned.iter_mut()) {
                if !*p && *a * scale < delta {
                    *p = true;
                    changed = true;
                }
            }
            if !changed {
                for (a, &p) in row.iter_mut().zip(&pinned) {
                    *a = if p { delta } else { *a * scale };
                }
                break;
            }
        }
    }
}

/// Law of the first hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    /// Invariant distribution of the transition matrix.
    #[default]
    Stationary,
    /// Degenerate law on a given (0-based) state.
    Fixed(usize),
}

/// Full parameter set ψ = (A, θ, σ²) for a given number of states.
///
/// Serialized as a [`ModelDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct ModelSpec {
    kind: RegimeKind,
    theta: Vec<Regime>,
    sigma2: f64,
    transition: TransitionMatrix,
}

impl ModelSpec {
    pub fn new(
        kind: RegimeKind,
        theta: Vec<Regime>,
        sigma2: f64,
        transition: TransitionMatrix,
    ) -> Result<Self> {
        let m = theta.len();
        if m == 0 {
            return Err(Error::invalid("model needs at least one state"));
        }
        if transition.dim() != m {
            return Err(Error::invalid(format!(
                "transition matrix is {0}x{0} but there are {m} regimes",
                transition.dim()
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        for (i, r) in theta.iter().enumerate() {
            if !r.slope.is_finite() || !r.intercept.is_finite() {
                return Err(Error::invalid(format!("regime {} is not finite", i + 1)));
            }
            if kind == RegimeKind::Hmm && r.slope != 0.0 {
                return Err(Error::invalid(format!(
                    "hmm regime {} has non-zero slope {}",
                    i + 1,
                    r.slope
                )));
            }
        }
        Ok(Self {
            kind,
            theta,
            sigma2,
            transition,
        })
    }

    /// Hidden Markov model with constant regime means.
    pub fn hmm(means: &[f64], sigma2: f64, transition: TransitionMatrix) -> Result<Self> {
        let theta = means.iter().map(|&c| Regime::constant(c)).collect();
        Self::new(RegimeKind::Hmm, theta, sigma2, transition)
    }

    /// Linear AR model with `(slope, intercept)` per state.
    pub fn linear_ar(pairs: &[(f64, f64)], sigma2: f64, transition: TransitionMatrix) -> Result<Self> {
        let theta = pairs.iter().map(|&(s, c)| Regime::new(s, c)).collect();
        Self::new(RegimeKind::LinearAr, theta, sigma2, transition)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.theta.len()
    }

    #[inline]
    pub fn kind(&self) -> RegimeKind {
        self.kind
    }

    #[inline]
    pub fn theta(&self) -> &[Regime] {
        &self.theta
    }

    #[inline]
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    #[inline]
    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    /// The same parameters viewed as a linear AR model (slopes unchanged).
    pub fn as_linear_ar(&self) -> Self {
        Self {
            kind: RegimeKind::LinearAr,
            ..self.clone()
        }
    }

    /// Flattened parameter vector: slope/intercept per state, σ², then A row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.num_states() + 1 + self.transition.as_slice().len());
        for r in &self.theta {
            v.push(r.slope);
            v.push(r.intercept);
        }
        v.push(self.sigma2);
        v.extend_from_slice(self.transition.as_slice());
        v
    }

    /// Column names matching [`ModelSpec::flat_params`].
    pub fn flat_param_names(m: usize) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=m {
            names.push(format!("slope_{i}"));
            names.push(format!("intercept_{i}"));
        }
        names.push("sigma2".to_string());
        for i in 1..=m {
            for j in 1..=m {
                names.push(format!("a_{i}_{j}"));
            }
        }
        names
    }
}

/// JSON layout of a model: `theta` holds `[slope, intercept]` per state and
/// `A` the transition matrix row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub m: usize,
    pub kind: RegimeKind,
    pub theta: Vec<Regime>,
    pub sigma2: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

fn schema_version() -> u32 {
    1
}

impl TryFrom<ModelDocument> for ModelSpec {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.schema != 1 {
            return Err(Error::Format(format!("unsupported model schema {}", doc.schema)));
        }
        if doc.theta.len() != doc.m || doc.a.len() != doc.m {
            return Err(Error::Format(format!(
                "model declares m = {} but has {} regimes and {} transition rows",
                doc.m,
                doc.theta.len(),
                doc.a.len()
            )));
        }
        let transition = TransitionMatrix::from_rows(&doc.a)?;
        ModelSpec::new(doc.kind, doc.theta, doc.sigma2, transition)
    }
}

impl From<ModelSpec> for ModelDocument {
    fn from(spec: ModelSpec) -> Self {
        ModelDocument {
            schema: 1,
            m: spec.num_states(),
            kind: spec.kind,
            a: spec.transition.rows(),
            theta: spec.theta,
            sigma2: spec.sigma2,
        }
    }
}

/// Observed series with its conditioning initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    y0: f64,
    y: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(y0: f64, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("series must contain at least one observation"));
        }
        if !y0.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series contains non-finite values"));
        }
        Ok(Self { y0, y })
    }

    #[inline]
    pub fn y0(&self) -> f64 {
        self.y0
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Previous observation for 0-based step `n` (y0 for n = 0).
    #[inline]
    pub fn prev(&self, n: usize) -> f64 {
        if n == 0 {
            self.y0
        } else {
            self.y[n - 1]
        }
    }

    /// Iterator over `(y_{n-1}, y_n)` pairs.
    pub fn lagged_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        std::iter::once(self.y0)
            .chain(self.y.iter().copied())
            .zip(self.y.iter().copied())
    }

    /// First `n` observations (same y0).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.y0, self.y[..n.min(self.y.len())].to_vec())
    }
}

/// A hidden state sequence with 0-based labels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HiddenPath(pub Vec<usize>);

impl HiddenPath {
    pub fn new(states: Vec<usize>, m: usize) -> Result<Self> {
        if let Some(&bad) = states.iter().find(|&&s| s >= m) {
            return Err(Error::invalid(format!(
                "path state {} out of range 1..={m}",
                bad + 1
            )));
        }
        Ok(Self(states))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn states(&self) -> &[usize] {
        &self.0
    }

    /// Transition counts `N_ij` over n = 1..N-1.
    pub fn transition_counts(&self, m: usize) -> Vec<f64> {
        let mut counts = vec![0.0; m * m];
        for w in self.0.windows(2) {
            counts[w[0] * m + w[1]] += 1.0;
        }
        counts
    }
}

/// Outcome of the positivity (C1) and stability (C2) checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub c1_holds: bool,
    pub min_transition: f64,
    pub c2_value: f64,
    pub c2_holds: bool,
    pub mu: Vec<f64>,
}

/// Invariant law μ of a row-stochastic matrix, solving μA = μ, Σμ = 1.
pub fn stationary_distribution(transition: &TransitionMatrix) -> Result<Vec<f64>> {
    transition.validate()?;
    let m = transition.dim();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    // (Aᵀ - I) μ = 0 with the last equation replaced by Σμ = 1.
    let mut lhs = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            lhs[(i, j)] = transition.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        lhs[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let mu = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical(0, "stationarity system is singular"))?;
    let mu: Vec<f64> = mu.iter().copied().collect();
    if mu.iter().any(|&p| !p.is_finite() || p <= 0.0) {
        return Err(Error::numerical(
            0,
            "transition matrix has no strictly positive invariant law",
        ));
    }
    let residual = (0..m)
        .map(|j| ((0..m).map(|i| mu[i] * transition.get(i, j)).sum::<f64>() - mu[j]).abs())
        .fold(0.0, f64::max);
    if residual > 1e-8 {
        return Err(Error::numerical(0, format!("stationarity residual {residual:e}")));
    }
    Ok(mu)
}

/// Evaluates the positivity and stability conditions.
///
/// `log|0|` counts as `-inf`, so any weight on a zero slope drives the
/// stability sum to `-inf`.
pub fn check_conditions(spec: &ModelSpec, delta: f64) -> ConditionReport {
    let min_transition = spec.transition().min_entry();
    let mu = stationary_distribution(spec.transition()).unwrap_or_default();
    let c2_value = if mu.is_empty() {
        f64::NAN
    } else {
        spec.theta()
            .iter()
            .zip(&mu)
            .map(|(r, &w)| {
                if r.slope == 0.0 {
                    if w > 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                } else {
                    w * r.slope.abs().ln()
                }
            })
            .sum()
    };
    ConditionReport {
        c1_holds: min_transition >= delta,
        min_transition,
        c2_value,
        c2_holds: c2_value < 0.0,
        mu,
    }
}

/// Draws a state from a discrete law by inverse CDF.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u == total up to rounding: last state with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Simulates `(X_{1:N}, Y_{1:N})` from the model.
pub fn simulate<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    y0: f64,
    x1_law: InitialLaw,
    rng: &mut R,
) -> Result<(HiddenPath, ObservationSeries)> {
    if n == 0 {
        return Err(Error::invalid("simulation length must be at least 1"));
    }
    let m = spec.num_states();
    let mut state = match x1_law {
        InitialLaw::Stationary => {
            let mu = stationary_distribution(spec.transition())?;
            sample_categorical(&mu, rng)
        }
        InitialLaw::Fixed(i) if i < m => i,
        InitialLaw::Fixed(i) => {
            return Err(Error::invalid(format!("initial state {} out of range", i + 1)))
        }
    };
    let sigma = spec.sigma2().sqrt();
    let mut states = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut y_prev = y0;
    for step in 0..n {
        if step > 0 {
            state = sample_categorical(spec.transition().row(state), rng);
        }
        let eps: f64 = rng.sample(StandardNormal);
        let y = spec.theta()[state].mean(y_prev) + sigma * eps;
        if !y.is_finite() {
            return Err(Error::numerical(step + 1, "simulated value is not finite"));
        }
        states.push(state);
        ys.push(y);
        y_prev = y;
    }
    Ok((HiddenPath(states), ObservationSeries::new(y0, ys)?))
}

/// Relabels states into canonical order: ascending intercept, then slope,
/// then original index. Returns the permuted model and the old→new map.
pub fn canonicalize(spec: &ModelSpec) -> (ModelSpec, Vec<usize>) {
    let m = spec.num_states();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (spec.theta[a], spec.theta[b]);
        ra.intercept
            .total_cmp(&rb.intercept)
            .then(ra.slope.total_cmp(&rb.slope))
            .then(a.cmp(&b))
    });
    let mut perm = vec![0; m];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    let theta = order.iter().map(|&old| spec.theta[old]).collect();
    let permuted = ModelSpec {
        kind: spec.kind,
        theta,
        sigma2: spec.sigma2,
        transition: spec.transition.permuted(&perm),
    };
    (permuted, perm)
}
