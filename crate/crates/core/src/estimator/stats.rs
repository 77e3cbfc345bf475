use crate::error::{Error, Result};
use crate::likelihood::SmoothedMoments;
use crate::model::HiddenPath;

/// Running sufficient statistics of the hidden chain.
///
/// * `s1[n][i]`: state indicator (or posterior weight) at step n, n = 1..N
/// * `s2[i]`: visits of state i over n = 1..N-1
/// * `s3[i][j]`: transitions i → j over n = 1..N-1
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    n: usize,
    m: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
}

impl SufficientStats {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            s1: vec![0.0; n * m],
            s2: vec![0.0; m],
            s3: vec![0.0; m * m],
        }
    }

    /// Indicator and count statistics of a single path.
    pub fn from_path(path: &HiddenPath, m: usize) -> Result<Self> {
        let mut stats = Self::zeros(path.len(), m);
        stats.update(path, 1.0)?;
        Ok(stats)
    }

    /// Posterior expectations of the same statistics (exact E-step).
    pub fn from_moments(moments: &SmoothedMoments) -> Self {
        let m = moments.num_states();
        let n = moments.len();
        let s1 = moments.gamma_all().to_vec();
        let mut s2 = vec![0.0; m];
        let mut s3 = vec![0.0; m * m];
        for k in 0..n.saturating_sub(1) {
            for (acc, &x) in s3.iter_mut().zip(moments.xi(k)) {
                *acc += x;
            }
            for (acc, &g) in s2.iter_mut().zip(moments.gamma(k)) {
                *acc += g;
            }
        }
        Self { n, m, s1, s2, s3 }
    }

    /// Statistics from raw arrays: `s1` is N×m row-major, `s3` m×m
    /// row-major. Entries must be finite and non-negative.
    pub fn from_parts(n: usize, m: usize, s1: Vec<f64>, s2: Vec<f64>, s3: Vec<f64>) -> Result<Self> {
        if s1.len() != n * m || s2.len() != m || s3.len() != m * m {
            return Err(Error::invalid("statistic arrays have inconsistent sizes"));
        }
        if s1.iter().chain(&s2).chain(&s3).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("statistics must be finite and non-negative"));
        }
        Ok(Self { n, m, s1, s2, s3 })
    }

    /// Robbins-Monro step `s ← s + γ (S(x) − s)`.
    pub fn update(&mut self, path: &HiddenPath, gamma: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("step size {gamma} outside [0, 1]")));
        }
        if path.len() != self.n {
            return Err(Error::invalid(format!(
                "path length {} does not match statistics length {}",
                path.len(),
                self.n
            )));
        }
        let m = self.m;
        if let Some(&bad) = path.states().iter().find(|&&s| s >= m) {
            return Err(Error::invalid(format!("path state {} out of range", bad + 1)));
        }
        let keep = 1.0 - gamma;
        self.s1.iter_mut().for_each(|v| *v *= keep);
        self.s2.iter_mut().for_each(|v| *v *= keep);
        self.s3.iter_mut().for_each(|v| *v *= keep);
        let states = path.states();
        for (k, &x) in states.iter().enumerate() {
            self.s1[k * m + x] += gamma;
            if k + 1 < self.n {
                self.s2[x] += gamma;
                self.s3[x * m + states[k + 1]] += gamma;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.m
    }

    /// Weights of step `n` (0-based) across states.
    #[inline]
    pub fn s1(&self, n: usize) -> &[f64] {
        &self.s1[n * self.m..(n + 1) * self.m]
    }

    #[inline]
    pub fn s2(&self) -> &[f64] {
        &self.s2
    }

    /// Row-major m×m transition statistics.
    #[inline]
    pub fn s3(&self) -> &[f64] {
        &self.s3
    }

    /// Total emission weight of state `i` over n = 1..N.
    pub fn occupancy(&self, i: usize) -> f64 {
        (0..self.n).map(|k| self.s1[k * self.m + i]).sum()
    }
}

/// Functional form of [`SufficientStats::update`].
pub fn update_stats(stats: &SufficientStats, path: &HiddenPath, gamma: f64) -> Result<SufficientStats> {
    let mut next = stats.clone();
    next.update(path, gamma)?;
    Ok(next)
}
