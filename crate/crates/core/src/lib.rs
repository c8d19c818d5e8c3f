//! Exploratory continuous-time mean-variance portfolio selection.
//!
//! The crate is organised bottom-up:
//!
//! - [`market_sim`]: multi-asset GBM market, the controlled wealth equation and
//!   its exploratory (distribution-controlled) counterpart.
//! - [`closed_form`]: analytic optimal value/policy of the exploratory and the
//!   classical problems, plus finite-difference HJB verification.
//! - [`gaussian_policy`]: state-affine Gaussian feedback policies, their exact
//!   value functions and the policy-improvement operator.
//! - [`emv`]: the EMV learner (Bellman-error critic, policy update, Lagrange
//!   multiplier stochastic approximation) and its checkpoint format.
//! - [`backtest`]: historical price ingestion, seeds, leverage, plug-in
//!   Markowitz baseline, backtest engine and metrics.
//!
//! Wealth is always the *discounted* wealth, and actions are discounted dollar
//! amounts held in each risky asset.

pub mod backtest;
pub mod closed_form;
pub mod emv;
pub mod error;
pub mod gaussian_policy;
pub mod kv;
pub mod linalg;
pub mod market_sim;

pub use error::{EmvError, Result};
