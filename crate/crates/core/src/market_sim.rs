//! Multi-asset geometric Brownian motion market and the wealth equations it
//! induces.
//!
//! Conventions: `sigma` is `d x d` and its `i`-th **column** is the volatility
//! loading vector of asset `i`, so that `dS_i = S_i (mu_i dt + sigma_i . dW)`
//! and the market price of risk solves `sigma' rho = mu - r 1`. Wealth is
//! discounted wealth and actions are discounted dollar allocations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{EmvError, Result};
use crate::linalg;

/// Counter-based generator; one stream per path or episode.
pub type StreamRng = ChaCha8Rng;

/// Independent, reproducible stream `stream` of the generator family `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normals(rng: &mut impl Rng, out: &mut [f64]) {
    for z in out.iter_mut() {
        *z = rng.sample(StandardNormal);
    }
}

/// Drift vector, volatility matrix and riskless rate of the market, together
/// with the derived market price of risk.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    r: f64,
    rho: DVector<f64>,
}

impl MarketParams {
    pub const DEFAULT_CONDITION_BOUND: f64 = 1e10;

    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, r: f64) -> Result<Self> {
        Self::with_condition_bound(mu, sigma, r, Self::DEFAULT_CONDITION_BOUND)
    }

    pub fn with_condition_bound(
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        r: f64,
        condition_bound: f64,
    ) -> Result<Self> {
        let d = linalg::check_square(&sigma, "sigma")?;
        if mu.len() != d {
            return Err(EmvError::invalid(format!(
                "mu has length {} but sigma is {d}x{d}",
                mu.len()
            )));
        }
        if !r.is_finite() || mu.iter().any(|v| !v.is_finite()) {
            return Err(EmvError::invalid("mu and r must be finite"));
        }
        let cond = linalg::condition_number(&sigma);
        if !(cond <= condition_bound) {
            return Err(EmvError::DegenerateMarket(format!(
                "sigma condition number {cond:e} exceeds bound {condition_bound:e}"
            )));
        }
        let excess = &mu - DVector::from_element(d, r);
        let rho = sigma
            .transpose()
            .lu()
            .solve(&excess)
            .ok_or_else(|| EmvError::DegenerateMarket("sigma is singular".into()))?;
        Ok(Self { mu, sigma, r, rho })
    }

    /// Market whose drift is `sigma' rho + r 1`; convenient when the market
    /// price of risk is the natural input.
    pub fn from_rho(sigma: DMatrix<f64>, rho: DVector<f64>, r: f64) -> Result<Self> {
        let d = linalg::check_square(&sigma, "sigma")?;
        if rho.len() != d {
            return Err(EmvError::invalid("rho length does not match sigma"));
        }
        let mu = sigma.transpose() * &rho + DVector::from_element(d, r);
        Self::new(mu, sigma, r)
    }

    /// One-asset market.
    pub fn scalar(mu: f64, sigma: f64, r: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, sigma),
            r,
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    /// `rho' rho`.
    pub fn rho_sq(&self) -> f64 {
        self.rho.norm_squared()
    }

    /// `sigma' sigma`, the instantaneous covariance of asset returns.
    pub fn gram(&self) -> DMatrix<f64> {
        self.sigma.transpose() * &self.sigma
    }

    /// `sigma^{-1} rho`, the classical allocation per unit of `(w - x)`.
    pub fn sigma_inv_rho(&self) -> Result<DVector<f64>> {
        self.sigma
            .clone()
            .lu()
            .solve(&self.rho)
            .ok_or_else(|| EmvError::DegenerateMarket("sigma is singular".into()))
    }

    pub fn gbm(&self) -> GbmModel {
        GbmModel {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// Market price of risk `rho` solving `sigma' rho = mu - r 1`.
pub fn market_price_of_risk(params: &MarketParams) -> DVector<f64> {
    params.rho.clone()
}

/// Random market for property checks: `sigma = 0.2 (I + E)` with entries of
/// `E` uniform in `+-0.3 / sqrt(d)`, redrawn until its condition number is
/// at most `max_condition`, and `rho` uniform in `[-0.5, 0.5]^d` with norm at
/// least 0.1.
pub fn random_market(rng: &mut impl Rng, d: usize, max_condition: f64, r: f64) -> Result<MarketParams> {
    if d == 0 || !(max_condition > 1.0) {
        return Err(EmvError::invalid("random market needs d > 0 and a condition bound above 1"));
    }
    let spread = 0.3 / (d as f64).sqrt();
    loop {
        let sigma = DMatrix::from_fn(d, d, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            0.2 * (base + spread * rng.random_range(-1.0..1.0))
        });
        if linalg::condition_number(&sigma) > max_condition {
            continue;
        }
        let rho = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        if rho.norm() < 0.1 {
            continue;
        }
        return MarketParams::from_rho(sigma, rho, r);
    }
}

/// Price dynamics only. Unlike [`MarketParams`] the volatility may be singular
/// (including zero), since price simulation never inverts it.
#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl GbmModel {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = linalg::check_square(&sigma, "sigma")?;
        if mu.len() != d || mu.iter().any(|v| !v.is_finite()) {
            return Err(EmvError::invalid("mu must be finite with one entry per asset"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Uniform time grid `t0, t0 + dt, ..., t0 + n_steps dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl PathGrid {
    /// Grid that must end no later than `horizon` (within 1e-12).
    pub fn new(t0: f64, dt: f64, n_steps: usize, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(EmvError::invalid("grid needs finite t0 and dt > 0"));
        }
        if n_steps == 0 {
            return Err(EmvError::invalid("grid needs at least one step"));
        }
        if t0 + n_steps as f64 * dt > horizon + 1e-12 {
            return Err(EmvError::invalid(format!(
                "grid ends at {} beyond horizon {horizon}",
                t0 + n_steps as f64 * dt
            )));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// `[0, horizon]` split into `n_steps` equal steps.
    pub fn covering(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(EmvError::invalid("horizon must be positive"));
        }
        Self::new(0.0, horizon / n_steps.max(1) as f64, n_steps, horizon)
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }
}

/// Discounted wealth sampled on a grid, with the executed allocations when
/// the path was generated in sampled-action mode.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    pub actions: Option<Vec<Vec<f64>>>,
}

impl WealthPath {
    pub fn terminal(&self) -> f64 {
        *self.wealth.last().expect("wealth path is never empty")
    }
}

/// One price path, `(n_steps + 1) x d`, by exact log-space stepping.
pub fn simulate_prices(
    model: &GbmModel,
    s0: &[f64],
    grid: &PathGrid,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if s0.len() != d {
        return Err(EmvError::invalid("s0 length does not match the market"));
    }
    if s0.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(EmvError::invalid("initial prices must be strictly positive"));
    }
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let log_drift: Vec<f64> = (0..d)
        .map(|i| (model.mu[i] - 0.5 * model.sigma.column(i).norm_squared()) * dt)
        .collect();

    let mut out = DMatrix::zeros(grid.n_steps + 1, d);
    let mut log_s: Vec<f64> = s0.iter().map(|s| s.ln()).collect();
    for (i, s) in s0.iter().enumerate() {
        out[(0, i)] = *s;
    }
    let mut dw = vec![0.0; d];
    for step in 1..=grid.n_steps {
        standard_normals(rng, &mut dw);
        for i in 0..d {
            let shock: f64 = (0..d).map(|k| model.sigma[(k, i)] * dw[k]).sum::<f64>() * sqrt_dt;
            log_s[i] += log_drift[i] + shock;
            out[(step, i)] = log_s[i].exp();
        }
    }
    Ok(out)
}

/// `n_paths` price paths; path `p` uses stream `p` of `seed`, so the result
/// does not depend on the number of worker threads.
pub fn simulate_price_paths(
    model: &GbmModel,
    s0: &[f64],
    grid: &PathGrid,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<DMatrix<f64>>> {
    (0..n_paths)
        .into_par_iter()
        .map(|p| simulate_prices(model, s0, grid, &mut stream_rng(seed, p as u64)))
        .collect()
}

/// One step of the classical wealth equation: `x + (sigma u) . (rho dt + dW)`.
pub fn wealth_step(x: f64, u: &[f64], dt: f64, dw: &[f64], params: &MarketParams) -> Result<f64> {
    let d = params.dim();
    debug_assert_eq!(u.len(), d);
    debug_assert_eq!(dw.len(), d);
    let mut next = x;
    for k in 0..d {
        let su: f64 = (0..d).map(|j| params.sigma[(k, j)] * u[j]).sum();
        next += su * (params.rho[k] * dt + dw[k]);
    }
    if next.is_finite() {
        Ok(next)
    } else {
        Err(EmvError::invalid(format!("wealth step produced {next}")))
    }
}

/// Drift and squared diffusion of the exploratory wealth equation when the
/// action is drawn from `N(mean, cov)`:
/// `drift = rho' sigma m`, `diffusion^2 = m' sigma' sigma m + tr(sigma' sigma C)`.
pub fn policy_moments(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &MarketParams,
) -> Result<(f64, f64)> {
    let d = params.dim();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(EmvError::invalid("policy dimensions do not match the market"));
    }
    if !linalg::is_psd(cov) {
        return Err(EmvError::NotPositiveDefinite(
            "policy covariance is not positive semidefinite".into(),
        ));
    }
    let sm = &params.sigma * mean;
    let drift = params.rho.dot(&sm);
    let trace = (&params.sigma * cov * params.sigma.transpose()).trace();
    Ok((drift, sm.norm_squared() + trace))
}

/// A Gaussian feedback policy `(t, x) -> N(mean(t, x), L L')`.
pub trait ExploratoryPolicy: Sync {
    fn dim(&self) -> usize;

    fn mean_into(&self, t: f64, x: f64, out: &mut [f64]);

    /// Lower Cholesky factor of the action covariance at `(t, x)`.
    fn covariance_factor(&self, t: f64, x: f64) -> Result<DMatrix<f64>>;

    /// Drift and squared diffusion of the aggregate exploratory dynamics.
    fn aggregate_moments(&self, t: f64, x: f64, params: &MarketParams) -> Result<(f64, f64)> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        self.mean_into(t, x, &mut m);
        let l = self.covariance_factor(t, x)?;
        let sm = &params.sigma * DVector::from_vec(m);
        let sl = &params.sigma * l;
        Ok((params.rho.dot(&sm), sm.norm_squared() + sl.norm_squared()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationMode {
    /// Euler-Maruyama on the one-dimensional aggregate (relaxed) dynamics.
    Aggregate,
    /// Draw `u ~ pi_t` each step and apply the classical wealth step.
    SampledAction,
}

pub fn simulate_exploratory_wealth(
    policy: &dyn ExploratoryPolicy,
    params: &MarketParams,
    grid: &PathGrid,
    x0: f64,
    rng: &mut impl Rng,
    mode: SimulationMode,
) -> Result<WealthPath> {
    let d = params.dim();
    if policy.dim() != d {
        return Err(EmvError::invalid("policy dimension does not match the market"));
    }
    let sqrt_dt = grid.dt.sqrt();
    let mut wealth = Vec::with_capacity(grid.n_steps + 1);
    wealth.push(x0);
    let mut actions = match mode {
        SimulationMode::SampledAction => Some(Vec::with_capacity(grid.n_steps)),
        SimulationMode::Aggregate => None,
    };
    let mut x = x0;
    let mut mean = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for step in 0..grid.n_steps {
        let t = grid.time(step);
        let fail = |reason: String| EmvError::Simulation { step, reason };
        x = match mode {
            SimulationMode::Aggregate => {
                let (drift, diff2) = policy
                    .aggregate_moments(t, x, params)
                    .map_err(|e| fail(e.to_string()))?;
                let noise: f64 = rng.sample(StandardNormal);
                x + drift * grid.dt + diff2.max(0.0).sqrt() * sqrt_dt * noise
            }
            SimulationMode::SampledAction => {
                policy.mean_into(t, x, &mut mean);
                let l = policy
                    .covariance_factor(t, x)
                    .map_err(|e| fail(e.to_string()))?;
                standard_normals(rng, &mut z);
                linalg::lower_mul_into(&l, &z, &mut u);
                for (ui, mi) in u.iter_mut().zip(&mean) {
                    *ui += mi;
                }
                standard_normals(rng, &mut dw);
                for w in dw.iter_mut() {
                    *w *= sqrt_dt;
                }
                let next = wealth_step(x, &u, grid.dt, &dw, params).map_err(|e| fail(e.to_string()))?;
                if let Some(a) = actions.as_mut() {
                    a.push(u.clone());
                }
                next
            }
        };
        if !x.is_finite() {
            return Err(EmvError::Simulation {
                step,
                reason: "wealth became non-finite".into(),
            });
        }
        wealth.push(x);
    }
    Ok(WealthPath {
        times: grid.times(),
        wealth,
        actions,
    })
}

/// Terminal wealth of `n_paths` independent paths (stream `p` for path `p`).
pub fn simulate_terminal_wealth(
    policy: &dyn ExploratoryPolicy,
    params: &MarketParams,
    grid: &PathGrid,
    x0: f64,
    seed: u64,
    n_paths: usize,
    mode: SimulationMode,
) -> Result<Vec<f64>> {
    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            simulate_exploratory_wealth(policy, params, grid, x0, &mut rng, mode).map(|w| w.terminal())
        })
        .collect()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
