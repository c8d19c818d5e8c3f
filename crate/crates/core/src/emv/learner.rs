use nalgebra::{DMatrix, DVector};

use super::bellman::{bellman_errors, cost, gradients};
use super::params::{EmvConfig, MeanUpdate, PolicyParams, Trajectory, ValueParams};
use crate::backtest::project_leverage;
use crate::error::{EmvError, Result};
use crate::linalg;
use crate::market_sim::{standard_normals, stream_rng, wealth_step, MarketParams, StreamRng};

/// A source of episodes: the learner proposes actions, the environment
/// returns the next wealth.
pub trait Environment {
    fn dim(&self) -> usize;

    /// Starts episode `episode` and returns its initial wealth.
    fn reset(&mut self, episode: u64, rng: &mut StreamRng) -> Result<f64>;

    /// Wealth after holding `u` over step `step` of length `dt`.
    fn step(&mut self, step: usize, x: f64, u: &[f64], dt: f64, rng: &mut StreamRng) -> Result<f64>;
}

/// Episodes drawn from the simulated market.
#[derive(Debug, Clone)]
pub struct SimulatedMarketEnv {
    params: MarketParams,
    x0: f64,
    dw: Vec<f64>,
}

impl SimulatedMarketEnv {
    pub fn new(params: MarketParams, x0: f64) -> Self {
        let d = params.dim();
        Self {
            params,
            x0,
            dw: vec![0.0; d],
        }
    }
}

impl Environment for SimulatedMarketEnv {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn reset(&mut self, _episode: u64, _rng: &mut StreamRng) -> Result<f64> {
        Ok(self.x0)
    }

    fn step(&mut self, _step: usize, x: f64, u: &[f64], dt: f64, rng: &mut StreamRng) -> Result<f64> {
        standard_normals(rng, &mut self.dw);
        let s = dt.sqrt();
        for v in self.dw.iter_mut() {
            *v *= s;
        }
        wealth_step(x, u, dt, &self.dw, &self.params)
    }
}

/// `w - alpha_w (mean(recent) - z)`.
pub fn update_lagrange(w: f64, recent: &[f64], alpha_w: f64, z: f64) -> Result<f64> {
    if recent.is_empty() {
        return Err(EmvError::invalid("Lagrange update needs terminal wealths"));
    }
    let mean = recent.iter().sum::<f64>() / recent.len() as f64;
    Ok(w - alpha_w * (mean - z))
}

/// Running weighted least-squares estimates of the Hamiltonian coefficients
/// `a = sigma' rho` (from `dx ~ u' a dt`) and `B = sigma' sigma`
/// (from `dx^2 ~ u' B u dt`).
///
/// The conditional variances of `dx` and `dx^2` scale with `u' B u` and
/// `(u' B u)^2`; samples are weighted by their inverses, evaluated at a
/// reference matrix fixed before the sample is drawn (the previous estimate,
/// initially the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianEstimate {
    dim: usize,
    pub(crate) suu: Vec<f64>,
    pub(crate) sux: Vec<f64>,
    pub(crate) sff: Vec<f64>,
    pub(crate) sfy: Vec<f64>,
    pub(crate) reference: Vec<f64>,
    pub(crate) count: u64,
    feat: Vec<f64>,
}

impl HamiltonianEstimate {
    pub fn new(dim: usize) -> Self {
        let m = dim * (dim + 1) / 2;
        Self {
            dim,
            suu: vec![0.0; dim * dim],
            sux: vec![0.0; dim],
            sff: vec![0.0; m * m],
            sfy: vec![0.0; m],
            reference: DMatrix::<f64>::identity(dim, dim).as_slice().to_vec(),
            count: 0,
            feat: vec![0.0; m],
        }
    }

    pub(crate) fn from_parts(
        dim: usize,
        suu: Vec<f64>,
        sux: Vec<f64>,
        sff: Vec<f64>,
        sfy: Vec<f64>,
        reference: Vec<f64>,
        count: u64,
    ) -> Result<Self> {
        let m = dim * (dim + 1) / 2;
        if suu.len() != dim * dim
            || sux.len() != dim
            || sff.len() != m * m
            || sfy.len() != m
            || reference.len() != dim * dim
        {
            return Err(EmvError::Format("Hamiltonian statistics have the wrong size".into()));
        }
        Ok(Self {
            dim,
            suu,
            sux,
            sff,
            sfy,
            reference,
            count,
            feat: vec![0.0; m],
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `u' R u` for the reference matrix `R`.
    fn reference_form(&self, u: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for j in 0..d {
            for k in 0..d {
                q += u[j] * self.reference[j + k * d] * u[k];
            }
        }
        q
    }

    pub fn observe(&mut self, u: &[f64], dx: f64, dt: f64) {
        let d = self.dim;
        let q = self.reference_form(u);
        if !(q > 0.0) || !q.is_finite() {
            return;
        }
        let wa = 1.0 / q;
        let wb = wa * wa;
        for j in 0..d {
            self.sux[j] += wa * u[j] * dx * dt;
            for k in 0..d {
                self.suu[j * d + k] += wa * u[j] * u[k] * dt * dt;
            }
        }
        let mut p = 0;
        for j in 0..d {
            for k in j..d {
                let c = if j == k { 1.0 } else { 2.0 };
                self.feat[p] = c * u[j] * u[k] * dt;
                p += 1;
            }
        }
        let m = self.feat.len();
        let y = dx * dx;
        for p in 0..m {
            self.sfy[p] += wb * self.feat[p] * y;
            for q in 0..m {
                self.sff[p * m + q] += wb * self.feat[p] * self.feat[q];
            }
        }
        self.count += 1;
    }

    /// `(a, B)`, or `None` while the normal equations are singular or `B`
    /// is not positive definite.
    pub fn solve(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim;
        let m = self.sfy.len();
        let a = DMatrix::from_row_slice(d, d, &self.suu)
            .cholesky()?
            .solve(&DVector::from_row_slice(&self.sux));
        let coef = DMatrix::from_row_slice(m, m, &self.sff)
            .cholesky()?
            .solve(&DVector::from_row_slice(&self.sfy));
        let mut b = DMatrix::zeros(d, d);
        let mut p = 0;
        for j in 0..d {
            for k in j..d {
                b[(j, k)] = coef[p];
                b[(k, j)] = coef[p];
                p += 1;
            }
        }
        b.clone().cholesky()?;
        Some((a, b))
    }

    /// Uses `b` for the weights of subsequent samples.
    pub fn set_reference(&mut self, b: &DMatrix<f64>) {
        self.reference = b.as_slice().to_vec();
    }
}

/// Gibbs improvement with respect to `V^theta`: `phi3 <- theta3` and, when
/// Hamiltonian estimates `(a, B)` are given, `phi1 <- B^{-1} a` and base
/// covariance `<- (lambda / 2) B^{-1}`.
pub fn improve_policy(
    theta: &ValueParams,
    phi: &PolicyParams,
    estimate: Option<(&DVector<f64>, &DMatrix<f64>)>,
    lambda: f64,
) -> Result<PolicyParams> {
    let mut next = phi.clone();
    next.phi3 = theta.theta3;
    if let Some((a, b)) = estimate {
        let b_inv = linalg::inverse_spd(b, "estimated sigma' sigma")?;
        next.phi1 = &b_inv * a;
        next.set_phi2_chol(linalg::cholesky_lower(
            &(b_inv * (0.5 * lambda)),
            "improved base covariance",
        )?)?;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningPoint {
    pub episode: u64,
    pub cost: f64,
    pub terminal_wealth: f64,
    pub w: f64,
}

/// Learner state; every field needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmvLearner {
    pub config: EmvConfig,
    pub theta: ValueParams,
    pub phi: PolicyParams,
    pub w: f64,
    pub episode: u64,
    pub(crate) recent: Vec<f64>,
    pub(crate) estimate: HamiltonianEstimate,
}

struct Episode {
    traj: Trajectory,
    noises: Vec<Vec<f64>>,
}

impl EmvLearner {
    pub fn new(config: EmvConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let w = config.w0.unwrap_or(config.z);
        let mut theta = ValueParams::new(0.0, 0.0, 0.0, 0.0)?;
        theta.anchor_terminal(w, config.z, config.horizon);
        let phi = PolicyParams::initial(dim, config.init_std)?;
        Ok(Self {
            config,
            theta,
            phi,
            w,
            episode: 0,
            recent: Vec::new(),
            estimate: HamiltonianEstimate::new(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn estimate(&self) -> &HamiltonianEstimate {
        &self.estimate
    }

    /// Terminal wealths collected since the last Lagrange update.
    pub fn pending_terminals(&self) -> &[f64] {
        &self.recent
    }

    fn rollout(&self, env: &mut dyn Environment) -> Result<Episode> {
        let cfg = &self.config;
        let n = cfg.steps()?;
        let d = self.dim();
        let big_t = cfg.horizon;
        let bound = cfg.bound();
        let mut rng = stream_rng(cfg.seed, self.episode);
        let mut x = env.reset(self.episode, &mut rng)?;
        let mut wealth = Vec::with_capacity(n + 1);
        let mut actions = Vec::with_capacity(n);
        let mut noises = Vec::with_capacity(n);
        wealth.push(x);
        let l = self.phi.phi2_chol();
        let mut mean = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut u = vec![0.0; d];
        for i in 0..n {
            let t = i as f64 * cfg.dt;
            let scale = (0.5 * self.phi.phi3 * (big_t - t)).exp();
            self.phi.mean_into(x, self.w, &mut mean);
            standard_normals(&mut rng, &mut z);
            linalg::lower_mul_into(l, &z, &mut u);
            for (uj, mj) in u.iter_mut().zip(&mean) {
                *uj = mj + scale * *uj;
            }
            if let Some(limit) = cfg.leverage {
                project_leverage(&mut u, x, limit);
            }
            x = env.step(i, x, &u, cfg.dt, &mut rng)?;
            if !(x.abs() <= bound) {
                return Err(EmvError::Divergence {
                    episode: self.episode,
                    step: i,
                    wealth: x,
                    bound,
                });
            }
            wealth.push(x);
            actions.push(u.clone());
            noises.push(z.clone());
        }
        Ok(Episode {
            traj: Trajectory::new(big_t, cfg.dt, wealth, actions)?,
            noises,
        })
    }

    /// Rolls out one episode and applies every update.
    pub fn run_episode(&mut self, env: &mut dyn Environment) -> Result<LearningPoint> {
        if env.dim() != self.dim() {
            return Err(EmvError::invalid("environment dimension does not match the policy"));
        }
        let episode = self.rollout(env)?;
        let traj = &episode.traj;
        let cfg = self.config.clone();
        let batch = std::slice::from_ref(traj);
        let episode_cost = cost(&self.theta, &self.phi, batch, cfg.lambda, self.w)?;
        let deltas = bellman_errors(&self.theta, &self.phi, traj, cfg.lambda, self.w);
        let grad = gradients(&self.theta, &self.phi, batch, cfg.lambda, self.w)?;

        match cfg.mean_update {
            MeanUpdate::Hamiltonian => self.hamiltonian_step(traj)?,
            MeanUpdate::ScoreFunction => self.score_step(&episode, &deltas)?,
        }

        // critic: gradient steps on theta1, theta2; semi-gradient on theta3
        let x = traj.wealth();
        let mut td = 0.0;
        for (i, delta) in deltas.iter().enumerate() {
            td += delta * self.theta.d_theta3(traj.time(i), x[i], self.w, cfg.horizon) * cfg.dt;
        }
        self.theta.theta1 -= cfg.eta_theta * grad.theta[1];
        self.theta.theta2 -= cfg.eta_theta * grad.theta[2];
        self.theta.theta3 = (self.theta.theta3 + cfg.eta_theta * td).max(0.0);

        if cfg.tie_phi3 {
            self.phi.phi3 = self.theta.theta3;
        } else {
            self.phi.phi3 -= cfg.eta_phi * grad.phi3;
        }

        let terminal = traj.terminal();
        self.recent.push(terminal);
        if self.recent.len() as u64 >= cfg.lagrange_period {
            self.w = update_lagrange(self.w, &self.recent, cfg.alpha_w, cfg.z)?;
            self.recent.clear();
        }
        self.theta.anchor_terminal(self.w, cfg.z, cfg.horizon);
        self.theta.validate()?;

        let point = LearningPoint {
            episode: self.episode,
            cost: episode_cost,
            terminal_wealth: terminal,
            w: self.w,
        };
        self.episode += 1;
        Ok(point)
    }

    fn hamiltonian_step(&mut self, traj: &Trajectory) -> Result<()> {
        let x = traj.wealth();
        for (i, u) in traj.actions().iter().enumerate() {
            self.estimate.observe(u, x[i + 1] - x[i], traj.dt());
        }
        if self.episode + 1 < self.config.warmup {
            return Ok(());
        }
        let Some((a, b)) = self.estimate.solve() else {
            return Ok(());
        };
        self.estimate.set_reference(&b);
        let target = improve_policy(&self.theta, &self.phi, Some((&a, &b)), self.config.lambda)?;
        let eta = self.config.eta_phi.min(1.0);
        let phi1 = &self.phi.phi1 + (&target.phi1 - &self.phi.phi1) * eta;
        let cov = self.phi.base_covariance() * (1.0 - eta) + target.base_covariance() * eta;
        self.phi.phi1 = phi1;
        self.phi
            .set_phi2_chol(linalg::cholesky_lower(&linalg::symmetrize(&cov), "base covariance")?)?;
        Ok(())
    }

    fn score_step(&mut self, episode: &Episode, deltas: &[f64]) -> Result<()> {
        let cfg = &self.config;
        let traj = &episode.traj;
        let d = self.dim();
        let l = self.phi.phi2_chol().clone();
        let l_t = l.transpose();
        let x = traj.wealth();
        let mut g_phi1 = DVector::zeros(d);
        let mut g_l = DMatrix::zeros(d, d);
        for (i, z) in episode.noises.iter().enumerate() {
            let t = traj.time(i);
            let scale = (0.5 * self.phi.phi3 * (cfg.horizon - t)).exp();
            let advantage = deltas[i] * cfg.dt;
            let zv = DVector::from_column_slice(z);
            let lz = l_t
                .solve_upper_triangular(&zv)
                .ok_or_else(|| EmvError::NotPositiveDefinite("phi2_chol".into()))?;
            // C^{-1}(u - m) = (s L)^{-T} z
            g_phi1 -= &lz * ((x[i] - self.w) * advantage / scale);
            let mut score_l = lz * zv.transpose();
            for j in 0..d {
                score_l[(j, j)] -= 1.0 / l[(j, j)];
            }
            g_l += score_l * advantage;
        }
        for j in 0..d {
            g_l[(j, j)] -= cfg.lambda * cfg.horizon / l[(j, j)];
        }
        self.phi.phi1 -= g_phi1 * cfg.eta_phi;
        let mut next = l.clone();
        for i in 0..d {
            for j in 0..i {
                next[(i, j)] -= cfg.eta_phi * g_l[(i, j)];
            }
            next[(i, i)] = (l[(i, i)].ln() - cfg.eta_phi * l[(i, i)] * g_l[(i, i)]).exp();
        }
        self.phi.set_phi2_chol(next)?;
        Ok(())
    }

    /// Runs `episodes` further episodes, calling `observer` after each.
    pub fn train_with(
        &mut self,
        env: &mut dyn Environment,
        episodes: u64,
        observer: &mut dyn FnMut(&LearningPoint, &EmvLearner),
    ) -> Result<Vec<LearningPoint>> {
        let mut curve = Vec::with_capacity(episodes as usize);
        for _ in 0..episodes {
            let point = self.run_episode(env)?;
            observer(&point, self);
            curve.push(point);
        }
        Ok(curve)
    }
}

/// Trains a fresh learner for `config.episodes` episodes.
pub fn train(config: EmvConfig, env: &mut dyn Environment) -> Result<(EmvLearner, Vec<LearningPoint>)> {
    let mut learner = EmvLearner::new(config, env.dim())?;
    let episodes = learner.config.episodes;
    let curve = learner.train_with(env, episodes, &mut |_, _| {})?;
    Ok((learner, curve))
}
