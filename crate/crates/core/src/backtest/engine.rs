use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::metrics::{path_metrics, summarize, PathMetrics, Summary};
use super::prices::PriceTable;
use super::seeds::SeedSet;
use crate::closed_form::{classical_control, lagrange_w_for, ProblemSpec};
use crate::emv::{EmvConfig, EmvLearner, Environment, PolicyParams};
use crate::error::{EmvError, Result};
use crate::market_sim::{MarketParams, StreamRng};

/// `x + sum_j u_j ((S_{j,i+1} / S_{j,i}) e^{-r dt} - 1)`.
pub fn historical_step(x: f64, u: &[f64], p0: &[f64], p1: &[f64], r: f64, dt: f64) -> f64 {
    let disc = (-r * dt).exp();
    x + u
        .iter()
        .zip(p0.iter().zip(p1))
        .map(|(uj, (a, b))| uj * (b / a * disc - 1.0))
        .sum::<f64>()
}

/// Scales `u` so that `sum |u_j| <= limit |x|`.
pub fn apply_leverage(u: &[f64], x: f64, limit: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    project_leverage(&mut out, x, limit);
    out
}

/// In-place form of [`apply_leverage`].
pub fn project_leverage(u: &mut [f64], x: f64, limit: f64) {
    let gross: f64 = u.iter().map(|v| v.abs()).sum();
    let cap = limit * x.abs();
    if gross > cap {
        let scale = if cap > 0.0 { cap / gross } else { 0.0 };
        for v in u.iter_mut() {
            *v *= scale;
        }
    }
}

/// Gross exposure `sum |u_j| / |x|` (zero at zero wealth).
pub fn gross_exposure(u: &[f64], x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    u.iter().map(|v| v.abs()).sum::<f64>() / x.abs()
}

/// Classical control at current wealth `x` for a market, re-solving the
/// multiplier for the remaining horizon.
pub fn markowitz_from_params(params: &MarketParams, x: f64, z: f64, t_remaining: f64) -> Result<DVector<f64>> {
    let w = lagrange_w_for(x, z, params.rho_sq(), t_remaining)?;
    let spec = ProblemSpec::new(t_remaining, z, x, 0.0, params.clone())?;
    classical_control(0.0, x, w, &spec)
}

/// Plug-in estimates from a window of simple returns (rows are periods):
/// annualized mean and covariance give `mu`, `sigma = chol(cov)'`.
pub fn estimate_market(returns: &DMatrix<f64>, r: f64, dt: f64) -> Result<MarketParams> {
    let (n, d) = returns.shape();
    if n < d + 1 {
        return Err(EmvError::invalid(format!(
            "window of {n} returns is too short for {d} assets"
        )));
    }
    let mean = returns.row_mean().transpose();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let c = returns.row(i).transpose() - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    let mu = mean / dt;
    let cov = cov / dt;
    let chol = match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eps = 1e-6 * cov.trace() / d as f64;
            log::warn!("singular sample covariance, adding ridge {eps:e}");
            let ridged = &cov + DMatrix::identity(d, d) * eps;
            ridged
                .cholesky()
                .ok_or_else(|| EmvError::NotPositiveDefinite("ridged sample covariance".into()))?
                .l()
        }
    };
    MarketParams::new(mu, chol.transpose(), r)
}

/// Rolling plug-in Markowitz allocation.
pub fn markowitz_baseline(
    returns: &DMatrix<f64>,
    x: f64,
    z: f64,
    t_remaining: f64,
    r: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    let params = estimate_market(returns, r, dt)?;
    markowitz_from_params(&params, x, z, t_remaining)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Monthly,
    Daily,
}

impl Frequency {
    pub fn periods_per_year(self) -> f64 {
        match self {
            Frequency::Monthly => 12.0,
            Frequency::Daily => 252.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Train one learner per seed on that seed's tickers.
    Batch,
    /// Train one learner, drawing a random seed for every episode.
    Universal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub d: usize,
    pub frequency: Frequency,
    pub z: f64,
    pub x0: f64,
    pub leverage: Option<f64>,
    /// Row ranges of the price table; `end` is exclusive.
    pub train: Range<usize>,
    pub test: Range<usize>,
    pub mode: TrainingMode,
    pub r: f64,
    /// Draw actions from the learned policy instead of using its mean.
    pub sample_actions: bool,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.frequency.periods_per_year()
    }

    pub fn validate(&self, table: &PriceTable) -> Result<()> {
        if self.d == 0 || self.d > table.tickers().len() {
            return Err(EmvError::invalid("d does not fit the table's tickers"));
        }
        if self.test.end > table.rows() || self.train.end > table.rows() {
            return Err(EmvError::invalid("train/test range exceeds the table"));
        }
        if self.test.len() < 2 {
            return Err(EmvError::invalid("test range needs at least two rows"));
        }
        if !self.train.is_empty() && self.train.end > self.test.start {
            return Err(EmvError::invalid("train range must precede and not overlap the test range"));
        }
        if !(self.x0 > 0.0) {
            return Err(EmvError::invalid("initial wealth must be positive"));
        }
        if let Some(l) = self.leverage {
            if !(l > 0.0) {
                return Err(EmvError::invalid("leverage limit must be positive"));
            }
        }
        Ok(())
    }
}

/// Historical episodes for training: each episode picks a seed (fixed or
/// random) and a random start row inside the training range.
pub struct HistoricalEnv<'a> {
    table: &'a PriceTable,
    subsets: Vec<Vec<usize>>,
    rows: Range<usize>,
    steps: usize,
    r: f64,
    x0: f64,
    current: usize,
    start: usize,
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl<'a> HistoricalEnv<'a> {
    /// With a single subset every episode uses it; otherwise one is drawn per
    /// episode.
    pub fn new(
        table: &'a PriceTable,
        subsets: Vec<Vec<usize>>,
        rows: Range<usize>,
        steps: usize,
        r: f64,
        x0: f64,
    ) -> Result<Self> {
        if subsets.is_empty() {
            return Err(EmvError::invalid("historical environment needs a seed"));
        }
        let d = subsets[0].len();
        if subsets.iter().any(|s| s.len() != d) {
            return Err(EmvError::invalid("seeds must have a common size"));
        }
        if rows.end > table.rows() || rows.len() < steps + 1 {
            return Err(EmvError::invalid(format!(
                "training range of {} rows cannot hold an episode of {steps} steps",
                rows.len()
            )));
        }
        Ok(Self {
            table,
            subsets,
            rows,
            steps,
            r,
            x0,
            current: 0,
            start: 0,
            p0: vec![0.0; d],
            p1: vec![0.0; d],
        })
    }
}

impl Environment for HistoricalEnv<'_> {
    fn dim(&self) -> usize {
        self.subsets[0].len()
    }

    fn reset(&mut self, _episode: u64, rng: &mut StreamRng) -> Result<f64> {
        self.current = if self.subsets.len() == 1 {
            0
        } else {
            rng.random_range(0..self.subsets.len())
        };
        let slack = self.rows.len() - (self.steps + 1);
        self.start = self.rows.start + rng.random_range(0..=slack);
        Ok(self.x0)
    }

    fn step(&mut self, step: usize, x: f64, u: &[f64], dt: f64, _rng: &mut StreamRng) -> Result<f64> {
        let row = self.start + step;
        for (k, &col) in self.subsets[self.current].iter().enumerate() {
            self.p0[k] = self.table.price(row, col);
            self.p1[k] = self.table.price(row + 1, col);
        }
        Ok(historical_step(x, u, &self.p0, &self.p1, self.r, dt))
    }
}

/// What drives the allocations in the test range.
#[derive(Debug, Clone)]
pub enum PolicySource {
    Zero,
    /// Plug-in Markowitz on a rolling window of `window` returns ending at
    /// the current row.
    Markowitz { window: usize },
    /// Train on the training range (batch or universal), then test.
    EmvTrain(EmvConfig),
    /// A learned policy and multiplier used for every seed.
    EmvPolicy { phi: PolicyParams, w: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: usize,
    pub tickers: Vec<usize>,
    pub wealth: Vec<f64>,
    /// Gross exposure per test step (after leverage projection).
    pub exposures: Vec<f64>,
    pub metrics: PathMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub outcomes: Vec<SeedOutcome>,
    pub summary: Summary,
}

enum Allocator {
    Zero,
    Markowitz(usize),
    Emv { phi: PolicyParams, w: f64, horizon: f64 },
}

fn train_learner(
    cfg: &BacktestConfig,
    table: &PriceTable,
    emv: &EmvConfig,
    subsets: Vec<Vec<usize>>,
    seed_offset: u64,
) -> Result<EmvLearner> {
    let steps = emv.steps()?;
    let mut env = HistoricalEnv::new(table, subsets, cfg.train.clone(), steps, cfg.r, cfg.x0)?;
    let mut config = emv.clone();
    config.seed = emv.seed.wrapping_add(seed_offset);
    let mut learner = EmvLearner::new(config, cfg.d)?;
    let episodes = learner.config.episodes;
    learner.train_with(&mut env, episodes, &mut |_, _| {})?;
    Ok(learner)
}

fn simulate_seed(
    cfg: &BacktestConfig,
    table: &PriceTable,
    seed: usize,
    tickers: &[usize],
    alloc: &Allocator,
) -> Result<SeedOutcome> {
    let d = tickers.len();
    let dt = cfg.dt();
    let steps = cfg.test.len() - 1;
    let horizon = steps as f64 * dt;
    let mut rng = crate::market_sim::stream_rng(cfg.seed, seed as u64);
    let mut x = cfg.x0;
    let mut wealth = Vec::with_capacity(steps + 1);
    let mut exposures = Vec::with_capacity(steps);
    wealth.push(x);
    let mut p0 = vec![0.0; d];
    let mut p1 = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut z = vec![0.0; d];
    for i in 0..steps {
        let row = cfg.test.start + i;
        match alloc {
            Allocator::Zero => u.iter_mut().for_each(|v| *v = 0.0),
            Allocator::Markowitz(window) => {
                if row < *window {
                    return Err(EmvError::invalid(format!(
                        "test row {row} has fewer than {window} returns of history"
                    )));
                }
                let returns = DMatrix::from_fn(*window, d, |k, j| {
                    let r = row - window + k;
                    table.price(r + 1, tickers[j]) / table.price(r, tickers[j]) - 1.0
                });
                let t_remaining = horizon - i as f64 * dt;
                let a = markowitz_baseline(&returns, x, cfg.z, t_remaining, cfg.r, dt)?;
                u.copy_from_slice(a.as_slice());
            }
            Allocator::Emv { phi, w, horizon: big_t } => {
                phi.mean_into(x, *w, &mut u);
                if cfg.sample_actions {
                    let t = (i as f64 * dt).min(*big_t);
                    let l = phi.factor(t, *big_t);
                    crate::market_sim::standard_normals(&mut rng, &mut z);
                    for a in 0..d {
                        u[a] += (0..=a).map(|b| l[(a, b)] * z[b]).sum::<f64>();
                    }
                }
            }
        }
        if let Some(limit) = cfg.leverage {
            project_leverage(&mut u, x, limit);
        }
        exposures.push(gross_exposure(&u, x));
        for (k, &col) in tickers.iter().enumerate() {
            p0[k] = table.price(row, col);
            p1[k] = table.price(row + 1, col);
        }
        x = historical_step(x, &u, &p0, &p1, cfg.r, dt);
        if !x.is_finite() {
            return Err(EmvError::Simulation {
                step: i,
                reason: format!("wealth became non-finite for seed {seed}"),
            });
        }
        wealth.push(x);
    }
    // discounted wealth: periodic returns are already excess returns
    let metrics = path_metrics(&wealth, cfg.frequency.periods_per_year(), 0.0)?;
    Ok(SeedOutcome {
        seed,
        tickers: tickers.to_vec(),
        wealth,
        exposures,
        metrics,
    })
}

/// Runs the test range for every seed. Seeds are processed in parallel and
/// reported in order; each owns its random stream.
pub fn run_backtest(
    cfg: &BacktestConfig,
    table: &PriceTable,
    seeds: &SeedSet,
    source: &PolicySource,
) -> Result<BacktestResult> {
    cfg.validate(table)?;
    if seeds.is_empty() || seeds.subsets.iter().any(|s| s.len() != cfg.d) {
        return Err(EmvError::invalid("seed subsets do not match d"));
    }
    if seeds
        .subsets
        .iter()
        .flatten()
        .any(|&c| c >= table.tickers().len())
    {
        return Err(EmvError::invalid("seed refers to a missing ticker"));
    }
    let shared = match source {
        PolicySource::Zero => Some(Allocator::Zero),
        PolicySource::Markowitz { window } => {
            if *window < cfg.d + 1 {
                return Err(EmvError::invalid("Markowitz window must exceed d"));
            }
            Some(Allocator::Markowitz(*window))
        }
        PolicySource::EmvPolicy { phi, w } => {
            if phi.dim() != cfg.d {
                return Err(EmvError::invalid("policy dimension does not match d"));
            }
            let steps = cfg.test.len() - 1;
            Some(Allocator::Emv {
                phi: phi.clone(),
                w: *w,
                horizon: steps as f64 * cfg.dt(),
            })
        }
        PolicySource::EmvTrain(emv) => match cfg.mode {
            TrainingMode::Universal => {
                let learner = train_learner(cfg, table, emv, seeds.subsets.clone(), 0)?;
                Some(Allocator::Emv {
                    phi: learner.phi,
                    w: learner.w,
                    horizon: emv.horizon,
                })
            }
            TrainingMode::Batch => None,
        },
    };
    let outcomes = seeds
        .subsets
        .par_iter()
        .enumerate()
        .map(|(k, tickers)| match (&shared, source) {
            (Some(alloc), _) => simulate_seed(cfg, table, k, tickers, alloc),
            (None, PolicySource::EmvTrain(emv)) => {
                let learner = train_learner(cfg, table, emv, vec![tickers.clone()], k as u64)?;
                let alloc = Allocator::Emv {
                    phi: learner.phi,
                    w: learner.w,
                    horizon: emv.horizon,
                };
                simulate_seed(cfg, table, k, tickers, &alloc)
            }
            (None, _) => unreachable!("only batch training defers the allocator"),
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<PathMetrics> = outcomes.iter().map(|o| o.metrics).collect();
    Ok(BacktestResult {
        summary: summarize(&metrics)?,
        outcomes,
    })
}
