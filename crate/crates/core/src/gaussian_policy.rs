//! Affine-mean Gaussian feedback policies
//! `pi(. | t, x) = N(alpha (x - w), Sigma e^{beta (T - t)})`, their value
//! functions, and the policy-improvement map.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};

use crate::closed_form::ProblemSpec;
use crate::error::{EmvError, Result};
use crate::linalg;
use crate::market_sim::ExploratoryPolicy;

/// Below this `|k|` the free term uses its `k -> 0` limit.
const DEGENERATE_RATE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianPolicy {
    alpha: DVector<f64>,
    base_cov: DMatrix<f64>,
    base_chol: DMatrix<f64>,
    beta: f64,
}

impl AffineGaussianPolicy {
    pub fn new(alpha: DVector<f64>, base_cov: DMatrix<f64>, beta: f64) -> Result<Self> {
        if base_cov.nrows() != alpha.len() {
            return Err(EmvError::invalid("alpha and Sigma dimensions differ"));
        }
        if !beta.is_finite() || alpha.iter().any(|v| !v.is_finite()) {
            return Err(EmvError::invalid("policy parameters must be finite"));
        }
        let base_chol = linalg::cholesky_lower(&base_cov, "policy Sigma")?;
        Ok(Self {
            alpha,
            base_cov,
            base_chol,
            beta,
        })
    }

    /// The optimal exploratory policy: `alpha = -sigma^{-1} rho`,
    /// `Sigma = (sigma' sigma)^{-1} lambda / 2`, `beta = rho' rho`.
    pub fn optimal(spec: &ProblemSpec) -> Result<Self> {
        if !(spec.lambda > 0.0) {
            return Err(EmvError::invalid("the optimal Gaussian policy needs lambda > 0"));
        }
        let alpha = -spec.market.sigma_inv_rho()?;
        let sigma = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")? * (0.5 * spec.lambda);
        Self::new(alpha, sigma, spec.market.rho_sq())
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn base_covariance(&self) -> &DMatrix<f64> {
        &self.base_cov
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self, x: f64, w: f64) -> DVector<f64> {
        &self.alpha * (x - w)
    }

    pub fn covariance(&self, t: f64, horizon: f64) -> DMatrix<f64> {
        &self.base_cov * (self.beta * (horizon - t)).exp()
    }

    /// `(d/2) ln(2 pi e) + (1/2) ln|Sigma| + (d/2) beta (T - t)`.
    pub fn entropy(&self, t: f64, horizon: f64) -> f64 {
        let d = self.dim() as f64;
        0.5 * d * (2.0 * PI * E).ln()
            + 0.5 * linalg::log_det_lower(&self.base_chol)
            + 0.5 * d * self.beta * (horizon - t)
    }

    /// The policy as a simulatable feedback law for a fixed horizon and `w`.
    pub fn feedback(&self, horizon: f64, w: f64) -> AffineFeedback<'_> {
        AffineFeedback {
            policy: self,
            horizon,
            w,
        }
    }

    /// Largest entrywise distance in `(alpha, Sigma, beta)`.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.alpha - &other.alpha)
            .amax()
            .max((&self.base_cov - &other.base_cov).amax())
            .max((self.beta - other.beta).abs())
    }
}

/// Entropy of the policy's action law at time `t`.
pub fn entropy(policy: &AffineGaussianPolicy, t: f64, horizon: f64) -> f64 {
    policy.entropy(t, horizon)
}

pub struct AffineFeedback<'a> {
    policy: &'a AffineGaussianPolicy,
    horizon: f64,
    w: f64,
}

impl ExploratoryPolicy for AffineFeedback<'_> {
    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn mean_into(&self, _t: f64, x: f64, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(self.policy.alpha.iter()) {
            *o = a * (x - self.w);
        }
    }

    fn covariance_factor(&self, t: f64, _x: f64) -> Result<DMatrix<f64>> {
        Ok(&self.policy.base_chol * (0.5 * self.policy.beta * (self.horizon - t)).exp())
    }
}

/// `V(t, x) = (x - w)^2 e^{k' tau} + F(tau) - (w - z)^2`, `tau = T - t`, with
/// `F(tau) = S (e^{k tau} - 1) / k - (lambda / 2)(c0 tau + d beta tau^2 / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub horizon: f64,
    pub w: f64,
    pub target: f64,
    pub lambda: f64,
    /// `k' = 2 rho' sigma alpha + |sigma alpha|^2`.
    pub quad_rate: f64,
    /// `S = tr(sigma Sigma sigma')`.
    pub trace_term: f64,
    /// `k = beta + k'`.
    pub free_rate: f64,
    /// `c0 = d ln(2 pi e) + ln|Sigma|`.
    pub entropy_level: f64,
    pub beta: f64,
    pub dim: usize,
}

impl QuadraticValue {
    pub fn uses_degenerate_branch(&self) -> bool {
        self.free_rate.abs() < DEGENERATE_RATE
    }

    fn tau(&self, t: f64) -> f64 {
        self.horizon - t
    }

    pub fn quad_coef(&self, t: f64) -> f64 {
        (self.quad_rate * self.tau(t)).exp()
    }

    pub fn free_term(&self, t: f64) -> f64 {
        let tau = self.tau(t);
        let growth = if self.uses_degenerate_branch() {
            tau
        } else {
            (self.free_rate * tau).exp_m1() / self.free_rate
        };
        let d = self.dim as f64;
        self.trace_term * growth
            - 0.5 * self.lambda * (self.entropy_level * tau + 0.5 * d * self.beta * tau * tau)
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        (x - self.w).powi(2) * self.quad_coef(t) + self.free_term(t) - (self.w - self.target).powi(2)
    }

    pub fn v_x(&self, t: f64, x: f64) -> f64 {
        2.0 * (x - self.w) * self.quad_coef(t)
    }

    pub fn v_xx(&self, t: f64) -> f64 {
        2.0 * self.quad_coef(t)
    }

    pub fn v_t(&self, t: f64, x: f64) -> f64 {
        let tau = self.tau(t);
        let d = self.dim as f64;
        let growth = if self.uses_degenerate_branch() {
            1.0
        } else {
            (self.free_rate * tau).exp()
        };
        -((x - self.w).powi(2) * self.quad_rate * self.quad_coef(t) + self.trace_term * growth
            - 0.5 * self.lambda * (self.entropy_level + d * self.beta * tau))
    }
}

/// Value of following `policy` from `(t, x)` under the entropy-regularized
/// objective, with multiplier `w`.
pub fn value_of_policy(policy: &AffineGaussianPolicy, spec: &ProblemSpec, w: f64) -> Result<QuadraticValue> {
    let d = spec.dim();
    if policy.dim() != d {
        return Err(EmvError::invalid("policy dimension does not match the market"));
    }
    let sigma = spec.market.sigma();
    let sa = sigma * &policy.alpha;
    let quad_rate = 2.0 * spec.market.rho().dot(&sa) + sa.norm_squared();
    let trace_term = (sigma * &policy.base_cov * sigma.transpose()).trace();
    let entropy_level = d as f64 * (2.0 * PI * E).ln() + linalg::log_det_lower(&policy.base_chol);
    Ok(QuadraticValue {
        horizon: spec.horizon,
        w,
        target: spec.target,
        lambda: spec.lambda,
        quad_rate,
        trace_term,
        free_rate: policy.beta + quad_rate,
        entropy_level,
        beta: policy.beta,
        dim: d,
    })
}

/// Gibbs (soft-greedy) policy with respect to a quadratic value:
/// `alpha = -sigma^{-1} rho`, `Sigma = (sigma' sigma)^{-1} lambda / 2`,
/// `beta = -k'`.
pub fn improve(value: &QuadraticValue, spec: &ProblemSpec) -> Result<AffineGaussianPolicy> {
    if !(spec.lambda > 0.0) {
        return Err(EmvError::invalid("policy improvement needs lambda > 0"));
    }
    let alpha = -spec.market.sigma_inv_rho()?;
    let sigma = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")? * (0.5 * spec.lambda);
    AffineGaussianPolicy::new(alpha, sigma, -value.quad_rate)
}

/// `[(pi_0, V^{pi_0}), (pi_1, V^{pi_1}), ...]` with `steps` improvements.
pub fn improvement_sequence(
    initial: AffineGaussianPolicy,
    spec: &ProblemSpec,
    w: f64,
    steps: usize,
) -> Result<Vec<(AffineGaussianPolicy, QuadraticValue)>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut policy = initial;
    for _ in 0..=steps {
        let value = value_of_policy(&policy, spec, w)?;
        let next = improve(&value, spec)?;
        out.push((policy, value));
        policy = next;
    }
    Ok(out)
}
