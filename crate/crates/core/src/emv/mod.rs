//! The EMV learning algorithm: a quadratic value function and a Gaussian
//! policy trained from sampled episodes by minimizing the discretized
//! continuous-time Bellman error, with a stochastic-approximation update of
//! the Lagrange multiplier every `N` episodes.
//!
//! The entropy term of the Bellman error carries no information about the
//! policy mean, so `phi1` is learned separately. The default
//! [`MeanUpdate::Hamiltonian`] regresses wealth increments and their squares
//! on the executed actions, which identifies `sigma' rho` and `sigma' sigma`,
//! and then takes the Gibbs improvement step against `V^theta`.
//! [`MeanUpdate::ScoreFunction`] is a likelihood-ratio alternative.

pub mod bellman;
pub mod checkpoint;
pub mod learner;
pub mod params;

pub use bellman::{
    bellman_errors, cost, gradient_relative_error, gradients, numerical_gradients, CostGradient,
};
pub use learner::{
    improve_policy, train, update_lagrange, EmvLearner, Environment, HamiltonianEstimate,
    LearningPoint, SimulatedMarketEnv,
};
pub use params::{EmvConfig, MeanUpdate, PolicyFeedback, PolicyParams, Trajectory, ValueParams};
