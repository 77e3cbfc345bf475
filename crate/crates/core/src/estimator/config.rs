use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, RegimeKind, DEFAULT_DELTA};

/// Step-size sequence for the stochastic approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSchedule {
    /// γ_t = 1/t.
    PaperOneOverT,
    /// γ_t = 1 during burn-in, then 1/(t − T₀).
    BurnInThenDecay,
}

impl GammaSchedule {
    /// Step size at 1-based iteration `t`.
    pub fn gamma(self, t: usize, burn_in: usize) -> f64 {
        let t = t.max(1);
        match self {
            GammaSchedule::PaperOneOverT => 1.0 / t as f64,
            GammaSchedule::BurnInThenDecay => {
                if t <= burn_in {
                    1.0
                } else {
                    1.0 / (t - burn_in) as f64
                }
            }
        }
    }
}

/// Starting point of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Quantile partition of the observations with per-group fits.
    KMeansLike,
    /// Random draw scaled to the data.
    RandomFromPrior,
    /// Explicit starting model.
    Provided(ModelSpec),
}

/// Configuration shared by the SAEM and exact-EM fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaemConfig {
    pub schema: u32,
    /// Number of iterations T (maximum for EM).
    pub iterations: usize,
    /// Burn-in length T₀ for [`GammaSchedule::BurnInThenDecay`].
    pub burn_in: usize,
    pub gamma_schedule: GammaSchedule,
    pub m: usize,
    pub kind: RegimeKind,
    pub init: InitStrategy,
    pub delta_clamp: f64,
    pub seed: u64,
    /// Convergence is declared when every per-iteration parameter change in
    /// the last `convergence_window` iterations is below this.
    pub tol_param: f64,
    pub convergence_window: usize,
    /// Exact log-likelihood is recorded in the trajectory every K iterations.
    pub loglik_every: usize,
    /// EM stops once the log-likelihood gain falls below this.
    pub em_tol: f64,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self {
            schema: 1,
            iterations: 1000,
            burn_in: 500,
            gamma_schedule: GammaSchedule::BurnInThenDecay,
            m: 2,
            kind: RegimeKind::Hmm,
            init: InitStrategy::KMeansLike,
            delta_clamp: DEFAULT_DELTA,
            seed: 0,
            tol_param: 1e-3,
            convergence_window: 50,
            loglik_every: 10,
            em_tol: 1e-8,
        }
    }
}

impl SaemConfig {
    pub fn new(m: usize, kind: RegimeKind) -> Self {
        Self {
            m,
            kind,
            ..Self::default()
        }
    }

    /// Sets T and T₀ = T/2.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = iterations / 2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitStrategy) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::invalid(format!("unsupported config schema {}", self.schema)));
        }
        if self.m == 0 {
            return Err(Error::invalid("number of states must be at least 1"));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "need 0 <= burn_in < iterations, got burn_in={} iterations={}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.delta_clamp > 0.0 && self.delta_clamp * self.m as f64 <= 1.0) {
            return Err(Error::invalid(format!("delta_clamp {} out of range", self.delta_clamp)));
        }
        if !(self.tol_param > 0.0) || !(self.em_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.loglik_every == 0 || self.convergence_window == 0 {
            return Err(Error::invalid("loglik_every and convergence_window must be positive"));
        }
        if let InitStrategy::Provided(spec) = &self.init {
            if spec.num_states() != self.m {
                return Err(Error::invalid("provided start has a different state count"));
            }
        }
        Ok(())
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma_schedule.gamma(t, self.burn_in)
    }
}

/// Step size at iteration `t` under `cfg`.
pub fn gamma_schedule(t: usize, cfg: &SaemConfig) -> f64 {
    cfg.gamma(t)
}
