use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};

use crate::closed_form::ProblemSpec;
use crate::error::{EmvError, Result};
use crate::linalg;
use crate::market_sim::ExploratoryPolicy;

/// `V(t, x) = (x - w)^2 e^{-theta3 (T - t)} + theta2 t^2 + theta1 t + theta0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueParams {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl ValueParams {
    pub fn new(theta0: f64, theta1: f64, theta2: f64, theta3: f64) -> Result<Self> {
        let p = Self {
            theta0,
            theta1,
            theta2,
            theta3,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.theta0, self.theta1, self.theta2, self.theta3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EmvError::invalid("value parameters must be finite"));
        }
        if self.theta3 < 0.0 {
            return Err(EmvError::invalid("theta3 must be >= 0"));
        }
        Ok(())
    }

    /// Coefficients of the optimal value for `spec` and multiplier `w`.
    pub fn optimal(spec: &ProblemSpec, w: f64) -> Self {
        let d = spec.dim() as f64;
        let a = spec.market.rho_sq();
        let big_t = spec.horizon;
        let lambda = spec.lambda;
        let level = if lambda > 0.0 {
            a * big_t - spec.log_det_gram() / d + (PI * lambda).ln()
        } else {
            0.0
        };
        Self {
            theta0: 0.25 * lambda * d * a * big_t * big_t
                - 0.5 * lambda * d * level * big_t
                - (w - spec.target).powi(2),
            theta1: 0.5 * lambda * d * level,
            theta2: -0.25 * lambda * d * a,
            theta3: a,
        }
    }

    pub fn value(&self, t: f64, x: f64, w: f64, horizon: f64) -> f64 {
        (x - w).powi(2) * (-self.theta3 * (horizon - t)).exp()
            + self.theta2 * t * t
            + self.theta1 * t
            + self.theta0
    }

    /// `dV / d theta3`.
    pub fn d_theta3(&self, t: f64, x: f64, w: f64, horizon: f64) -> f64 {
        let tau = horizon - t;
        -tau * (x - w).powi(2) * (-self.theta3 * tau).exp()
    }

    /// Chooses `theta0` so that `V(T, x) = (x - w)^2 - (w - z)^2`.
    pub fn anchor_terminal(&mut self, w: f64, z: f64, horizon: f64) {
        self.theta0 = -self.theta2 * horizon * horizon - self.theta1 * horizon - (w - z).powi(2);
    }
}

/// Gaussian policy `N(-phi1 (x - w), L L' e^{phi3 (T - t)})` with
/// `L = phi2_chol` lower triangular with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub phi1: DVector<f64>,
    phi2_chol: DMatrix<f64>,
    pub phi3: f64,
}

impl PolicyParams {
    pub fn new(phi1: DVector<f64>, phi2_chol: DMatrix<f64>, phi3: f64) -> Result<Self> {
        let d = phi1.len();
        if d == 0 || phi2_chol.nrows() != d || phi2_chol.ncols() != d {
            return Err(EmvError::invalid("phi1 and phi2_chol dimensions differ"));
        }
        if !phi3.is_finite() || phi1.iter().any(|v| !v.is_finite()) {
            return Err(EmvError::invalid("policy parameters must be finite"));
        }
        check_factor(&phi2_chol)?;
        Ok(Self {
            phi1,
            phi2_chol,
            phi3,
        })
    }

    /// Zero mean gain and isotropic covariance `std^2 I`.
    pub fn initial(dim: usize, std: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(dim),
            DMatrix::from_diagonal_element(dim, dim, std),
            0.0,
        )
    }

    pub fn optimal(spec: &ProblemSpec) -> Result<Self> {
        let sigma = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")? * (0.5 * spec.lambda);
        let chol = linalg::cholesky_lower(&sigma, "optimal base covariance")?;
        Self::new(spec.market.sigma_inv_rho()?, chol, spec.market.rho_sq())
    }

    pub fn dim(&self) -> usize {
        self.phi1.len()
    }

    pub fn phi2_chol(&self) -> &DMatrix<f64> {
        &self.phi2_chol
    }

    pub fn set_phi2_chol(&mut self, chol: DMatrix<f64>) -> Result<()> {
        if chol.nrows() != self.dim() || chol.ncols() != self.dim() {
            return Err(EmvError::invalid("phi2_chol has the wrong shape"));
        }
        check_factor(&chol)?;
        self.phi2_chol = chol;
        Ok(())
    }

    pub fn mean_into(&self, x: f64, w: f64, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(self.phi1.iter()) {
            *o = -p * (x - w);
        }
    }

    pub fn base_covariance(&self) -> DMatrix<f64> {
        &self.phi2_chol * self.phi2_chol.transpose()
    }

    pub fn covariance(&self, t: f64, horizon: f64) -> DMatrix<f64> {
        self.base_covariance() * (self.phi3 * (horizon - t)).exp()
    }

    /// Lower Cholesky factor of `covariance(t, horizon)`.
    pub fn factor(&self, t: f64, horizon: f64) -> DMatrix<f64> {
        &self.phi2_chol * (0.5 * self.phi3 * (horizon - t)).exp()
    }

    /// `(d/2) ln(2 pi e) + sum_j ln L_jj + (d/2) phi3 (T - t)`.
    pub fn entropy(&self, t: f64, horizon: f64) -> f64 {
        let d = self.dim() as f64;
        0.5 * d * (2.0 * PI * E).ln()
            + self.phi2_chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
            + 0.5 * d * self.phi3 * (horizon - t)
    }

    pub fn feedback(&self, horizon: f64, w: f64) -> PolicyFeedback<'_> {
        PolicyFeedback {
            params: self,
            horizon,
            w,
        }
    }
}

fn check_factor(l: &DMatrix<f64>) -> Result<()> {
    let d = l.nrows();
    for i in 0..d {
        if !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite() {
            return Err(EmvError::NotPositiveDefinite(
                "phi2_chol needs a positive diagonal".into(),
            ));
        }
        for j in 0..d {
            if j > i && l[(i, j)] != 0.0 {
                return Err(EmvError::invalid("phi2_chol must be lower triangular"));
            }
            if !l[(i, j)].is_finite() {
                return Err(EmvError::invalid("phi2_chol has non-finite entries"));
            }
        }
    }
    Ok(())
}

pub struct PolicyFeedback<'a> {
    params: &'a PolicyParams,
    horizon: f64,
    w: f64,
}

impl ExploratoryPolicy for PolicyFeedback<'_> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn mean_into(&self, _t: f64, x: f64, out: &mut [f64]) {
        self.params.mean_into(x, self.w, out);
    }

    fn covariance_factor(&self, t: f64, _x: f64) -> Result<DMatrix<f64>> {
        Ok(self.params.factor(t, self.horizon))
    }
}

/// One episode sampled on the uniform grid `t_i = i dt`, `i = 0..=n`, with
/// `n dt = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: f64,
    dt: f64,
    wealth: Vec<f64>,
    actions: Vec<Vec<f64>>,
}

impl Trajectory {
    /// `actions` is either empty or has one entry per transition.
    pub fn new(horizon: f64, dt: f64, wealth: Vec<f64>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(EmvError::invalid("trajectory needs dt > 0 and T > 0"));
        }
        if wealth.len() < 2 {
            return Err(EmvError::invalid("trajectory needs at least one transition"));
        }
        let steps = wealth.len() - 1;
        if ((steps as f64 * dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(EmvError::invalid(format!(
                "{steps} steps of {dt} do not span the horizon {horizon}"
            )));
        }
        if !actions.is_empty() && actions.len() != steps {
            return Err(EmvError::invalid("one action per transition expected"));
        }
        Ok(Self {
            horizon,
            dt,
            wealth,
            actions,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.wealth.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn terminal(&self) -> f64 {
        self.wealth[self.wealth.len() - 1]
    }
}

/// How the learner updates the policy mean `phi1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanUpdate {
    /// Regress wealth increments on the sampled actions to estimate the
    /// Hamiltonian coefficients `sigma' rho` and `sigma' sigma`, then apply the
    /// Gibbs improvement with respect to the learned value.
    Hamiltonian,
    /// Likelihood-ratio policy gradient with the temporal-difference advantage
    /// `V(t_{i+1}, x_{i+1}) - V(t_i, x_i) - lambda H_i dt`.
    ScoreFunction,
}

impl MeanUpdate {
    pub fn name(self) -> &'static str {
        match self {
            MeanUpdate::Hamiltonian => "hamiltonian",
            MeanUpdate::ScoreFunction => "score",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hamiltonian" => Ok(MeanUpdate::Hamiltonian),
            "score" => Ok(MeanUpdate::ScoreFunction),
            other => Err(EmvError::invalid(format!(
                "unknown mean update `{other}` (expected hamiltonian or score)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmvConfig {
    pub lambda: f64,
    pub z: f64,
    pub horizon: f64,
    pub dt: f64,
    pub episodes: u64,
    /// Lagrange update period `N`.
    pub lagrange_period: u64,
    pub eta_theta: f64,
    /// Step size of the policy update: the relaxation rate of the improvement
    /// step for [`MeanUpdate::Hamiltonian`], the gradient step otherwise.
    pub eta_phi: f64,
    pub alpha_w: f64,
    pub leverage: Option<f64>,
    pub seed: u64,
    pub mean_update: MeanUpdate,
    pub tie_phi3: bool,
    /// `|x|` bound triggering a divergence abort; default `1e3 max(1, |z|)`.
    pub divergence_bound: Option<f64>,
    /// Initial multiplier; default `z`.
    pub w0: Option<f64>,
    pub init_std: f64,
    /// Episodes of data collected before the first improvement step.
    pub warmup: u64,
}

impl Default for EmvConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            z: 1.4,
            horizon: 1.0,
            dt: 1.0 / 252.0,
            episodes: 20_000,
            lagrange_period: 10,
            eta_theta: 1e-4,
            eta_phi: 0.05,
            alpha_w: 0.05,
            leverage: None,
            seed: 0,
            mean_update: MeanUpdate::Hamiltonian,
            tie_phi3: true,
            divergence_bound: None,
            w0: None,
            init_std: 1.0,
            warmup: 20,
        }
    }
}

impl EmvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("horizon", self.horizon),
            ("dt", self.dt),
            ("eta_theta", self.eta_theta),
            ("eta_phi", self.eta_phi),
            ("alpha_w", self.alpha_w),
            ("init_std", self.init_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EmvError::invalid(format!("{name} must be positive")));
            }
        }
        if !self.z.is_finite() {
            return Err(EmvError::invalid("z must be finite"));
        }
        if self.episodes == 0 || self.lagrange_period == 0 {
            return Err(EmvError::invalid("episodes and lagrange_period must be positive"));
        }
        if self.lagrange_period > self.episodes {
            return Err(EmvError::invalid("lagrange_period must not exceed episodes"));
        }
        if let Some(l) = self.leverage {
            if !(l > 0.0) {
                return Err(EmvError::invalid("leverage limit must be positive"));
            }
        }
        if let Some(b) = self.divergence_bound {
            if !(b > 0.0) {
                return Err(EmvError::invalid("divergence bound must be positive"));
            }
        }
        self.steps()?;
        Ok(())
    }

    /// Number of steps `T / dt`, which must be an integer.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.horizon / self.dt).round();
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(EmvError::invalid("horizon must be a whole number of dt steps"));
        }
        Ok(n as usize)
    }

    pub fn bound(&self) -> f64 {
        self.divergence_bound
            .unwrap_or(1e3 * self.z.abs().max(1.0))
    }
}
