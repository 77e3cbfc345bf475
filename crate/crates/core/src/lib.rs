//! Estimation, testing and state-count selection for autoregressive models
//! with Markov regime.
//!
//! The observation process follows `y_n = θ₁(x_n) y_{n-1} + θ₀(x_n) + σ ε_n`
//! with a hidden finite-state Markov chain `x_n`. Constant-mean hidden
//! Markov models are the special case with all slopes zero.

pub mod bayes;
pub mod error;
pub mod estimator;
pub mod ffbs;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod selection;
pub mod special;

pub use error::{Error, Result};
pub use estimator::{em_fit, fit_best, saem_fit, Algorithm, FitResult, SaemConfig};
pub use likelihood::{forward_filter, smooth};
pub use model::{
    canonicalize, simulate, HiddenPath, InitialLaw, ModelSpec, ObservationSeries, Regime, RegimeKind,
    TransitionMatrix,
};
