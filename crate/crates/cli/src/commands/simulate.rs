//! `emv simulate`: GBM price paths and wealth under the optimal exploratory
//! policy for the configured market.
//!
//! Outputs: `prices.csv` (path 0 as a dated price table that `backtest` can
//! read), `price_paths.csv` and `wealth_paths.csv` (the first `dump_paths`
//! paths), `summary.csv` and the config echo.

use std::fmt::Write as _;

use chrono::NaiveDate;
use emv_core::backtest::{period_dates, PriceTable};
use emv_core::closed_form::{lagrange_w, OptimalFeedback, ProblemSpec};
use emv_core::kv::fmt_f64;
use emv_core::market_sim::{
    mean_and_stderr, simulate_exploratory_wealth, simulate_prices, simulate_terminal_wealth,
    stream_rng, GbmModel, MarketParams, PathGrid, SimulationMode,
};
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{frequency, prepare_out, write};
use crate::config::{config, key, Key, RunConfig, MARKET_KEYS};
use crate::error::CliError;
use crate::Context;

/// Wealth paths use their own generator family so they are independent of
/// the price paths.
const WEALTH_SALT: u64 = 0x5745_414c_5448;

pub fn schema() -> Vec<Key> {
    let mut keys: Vec<Key> = MARKET_KEYS.into_iter().collect();
    keys.extend([
        key("frequency", "daily", "period length: daily (1/252) or monthly (1/12)"),
        key("steps", "252", "periods per path"),
        key("paths", "1000", "number of simulated paths"),
        key("dump_paths", "10", "paths written in full"),
        key("s0", "100", "initial prices, one value or one per asset"),
        key("start_date", "2000-01-03", "date of the first row of prices.csv"),
        key("x0", "1", "initial discounted wealth"),
        key("z", "1.4", "target expected terminal wealth"),
        key("lambda", "0.1", "exploration temperature (0: classical policy)"),
        key("mode", "aggregate", "wealth dynamics: aggregate or sampled"),
        key("seed", "0", "random seed"),
    ]);
    keys
}

struct Settings {
    model: GbmModel,
    mu: Vec<f64>,
    market: Option<MarketParams>,
    grid: PathGrid,
    paths: usize,
    dump: usize,
    s0: Vec<f64>,
    start: NaiveDate,
    seed: u64,
}

fn settings(cfg: &RunConfig) -> Result<Settings, CliError> {
    let (mu, sigma) = cfg.market_inputs()?;
    let d = mu.len();
    let mu_vec: Vec<f64> = mu.iter().copied().collect();
    let model = GbmModel::new(mu.clone(), sigma.clone()).map_err(config)?;
    let market = match MarketParams::new(mu, sigma, cfg.f64("r")?) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("wealth paths skipped: {e}");
            None
        }
    };
    let dt = 1.0 / frequency(cfg)?.periods_per_year();
    let steps = cfg.usize("steps")?;
    let grid = PathGrid::new(0.0, dt, steps, steps as f64 * dt).map_err(config)?;
    let paths = cfg.usize("paths")?;
    if paths == 0 {
        return Err(CliError::Config("`paths` must be positive".into()));
    }
    let s0 = cfg.f64s("s0")?;
    let s0 = match s0.len() {
        1 => vec![s0[0]; d],
        n if n == d => s0,
        n => return Err(CliError::Config(format!("`s0` has {n} entries for {d} assets"))),
    };
    if s0.iter().any(|s| !(*s > 0.0)) {
        return Err(CliError::Config("`s0` must be positive".into()));
    }
    let start = cfg
        .opt_date("start_date")?
        .ok_or_else(|| CliError::Config("`start_date` is required".into()))?;
    Ok(Settings {
        mu: mu_vec,
        model,
        market,
        grid,
        paths,
        dump: cfg.usize("dump_paths")?.min(paths),
        s0,
        start,
        seed: cfg.u64("seed")?,
    })
}

fn path_rows(out: &mut String, p: usize, grid: &PathGrid, row: impl Fn(usize) -> String) {
    for step in 0..=grid.n_steps {
        let _ = writeln!(out, "{p},{step},{},{}", fmt_f64(grid.time(step)), row(step));
    }
}

pub fn run(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let s = settings(cfg)?;
    let d = s.model.dim();
    let mode = match cfg.choice("mode", &["aggregate", "sampled"])? {
        "aggregate" => SimulationMode::Aggregate,
        _ => SimulationMode::SampledAction,
    };
    let spec = match &s.market {
        Some(m) => Some(
            ProblemSpec::new(
                s.grid.n_steps as f64 * s.grid.dt,
                cfg.f64("z")?,
                cfg.f64("x0")?,
                cfg.f64("lambda")?,
                m.clone(),
            )
            .map_err(config)?,
        ),
        None => None,
    };
    let dates = period_dates(s.start, s.grid.n_steps + 1, frequency(cfg)?).map_err(config)?;
    prepare_out(ctx, cfg, "simulate")?;

    // prices: keep terminal rows for every path and full paths for the dump
    let price_runs: Vec<(Vec<f64>, Option<DMatrix<f64>>)> = (0..s.paths)
        .into_par_iter()
        .map(|p| {
            let path = simulate_prices(&s.model, &s.s0, &s.grid, &mut stream_rng(s.seed, p as u64))?;
            let last = path.row(s.grid.n_steps).iter().copied().collect();
            Ok((last, (p < s.dump.max(1)).then_some(path)))
        })
        .collect::<emv_core::Result<_>>()?;
    let tickers: Vec<String> = (0..d).map(|i| format!("T{i}")).collect();
    let first = price_runs[0].1.clone().expect("path 0 is always kept");
    PriceTable::new(dates, tickers.clone(), first)?.write_csv(&ctx.out.join("prices.csv"))?;
    let mut dump = format!("path,step,time,{}\n", tickers.join(","));
    for (p, (_, path)) in price_runs.iter().enumerate().take(s.dump) {
        let path = path.as_ref().expect("dumped paths are kept");
        path_rows(&mut dump, p, &s.grid, |step| {
            path.row(step).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
        });
    }
    write(&ctx.out.join("price_paths.csv"), &dump)?;

    let horizon = s.grid.n_steps as f64 * s.grid.dt;
    let mut summary = String::from("metric,value\n");
    let _ = writeln!(summary, "paths,{}", s.paths);
    let _ = writeln!(summary, "steps,{}", s.grid.n_steps);
    let _ = writeln!(summary, "dt,{}", fmt_f64(s.grid.dt));
    for i in 0..d {
        let terminal: Vec<f64> = price_runs.iter().map(|(last, _)| last[i]).collect();
        let (mean, se) = mean_and_stderr(&terminal);
        let expected = s.s0[i] * (s.mu[i] * horizon).exp();
        let _ = writeln!(summary, "mean_terminal_price_{},{}", tickers[i], fmt_f64(mean));
        let _ = writeln!(summary, "stderr_terminal_price_{},{}", tickers[i], fmt_f64(se));
        let _ = writeln!(summary, "expected_terminal_price_{},{}", tickers[i], fmt_f64(expected));
    }

    if let (Some(spec), Some(market)) = (&spec, &s.market) {
        let w = lagrange_w(spec)?;
        let policy = OptimalFeedback::new(spec, w)?;
        let wealth_seed = s.seed ^ WEALTH_SALT;
        let terminal = simulate_terminal_wealth(&policy, market, &s.grid, spec.x0, wealth_seed, s.paths, mode)?;
        let mut dump = String::from("path,step,time,wealth\n");
        for p in 0..s.dump {
            let mut rng = stream_rng(wealth_seed, p as u64);
            let path = simulate_exploratory_wealth(&policy, market, &s.grid, spec.x0, &mut rng, mode)?;
            path_rows(&mut dump, p, &s.grid, |step| fmt_f64(path.wealth[step]));
        }
        write(&ctx.out.join("wealth_paths.csv"), &dump)?;
        let (mean, se) = mean_and_stderr(&terminal);
        let std = se * (s.paths as f64).sqrt();
        let _ = writeln!(summary, "lagrange_w,{}", fmt_f64(w));
        let _ = writeln!(summary, "target_z,{}", fmt_f64(spec.target));
        let _ = writeln!(summary, "mean_terminal_wealth,{}", fmt_f64(mean));
        let _ = writeln!(summary, "stderr_terminal_wealth,{}", fmt_f64(se));
        let _ = writeln!(summary, "std_terminal_wealth,{}", fmt_f64(std));
    }
    write(&ctx.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}
