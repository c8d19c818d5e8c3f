pub mod backtest;
pub mod report;
pub mod simulate;
pub mod train;
pub mod verify;

use std::ops::Range;
use std::path::Path;

use anyhow::Context as _;
use chrono::NaiveDate;
use emv_core::backtest::{make_seeds, Calendar, Frequency, PriceTable, SeedSet};
use emv_core::market_sim::stream_rng;
use emv_core::emv::{EmvConfig, MeanUpdate};

use crate::config::{config, key, Key, RunConfig};
use crate::error::CliError;
use crate::Context;

pub const CONFIG_ECHO: &str = "config.txt";

/// Creates the output directory and writes the effective config into it.
pub fn prepare_out(ctx: &Context, cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(&ctx.out)
        .with_context(|| format!("creating {}", ctx.out.display()))?;
    let text = format!("# effective config of `emv {command}`\n{}", cfg.render());
    write(&ctx.out.join(CONFIG_ECHO), &text)
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn frequency(cfg: &RunConfig) -> Result<Frequency, CliError> {
    Ok(match cfg.choice("frequency", &["daily", "monthly"])? {
        "daily" => Frequency::Daily,
        _ => Frequency::Monthly,
    })
}

pub fn calendar(cfg: &RunConfig) -> Result<Calendar, CliError> {
    Ok(match cfg.choice("calendar", &["as_is", "month_end"])? {
        "as_is" => Calendar::AsIs,
        _ => Calendar::MonthEnd,
    })
}

pub fn load_table(cfg: &RunConfig) -> Result<PriceTable, CliError> {
    if cfg.is_none("prices")? {
        return Err(CliError::Config("`prices` must name a price file".into()));
    }
    let path = Path::new(cfg.str("prices")?);
    emv_core::backtest::load_prices(path, calendar(cfg)?)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(CliError::from)
}

/// Learner keys shared by `train` and `backtest` (everything except `dt`).
pub fn emv_keys() -> Vec<Key> {
    vec![
        key("lambda", "0.1", "exploration temperature"),
        key("z", "1.4", "target expected terminal wealth"),
        key("horizon", "1", "episode horizon in years"),
        key("episodes", "20000", "training episodes"),
        key("lagrange_period", "10", "episodes between multiplier updates"),
        key("eta_theta", "0.0001", "critic learning rate"),
        key("eta_phi", "0.05", "policy learning rate"),
        key("alpha_w", "0.05", "multiplier learning rate"),
        key("mean_update", "hamiltonian", "policy-mean update: hamiltonian or score"),
        key("tie_phi3", "true", "keep phi3 equal to theta3"),
        key("divergence_bound", "none", "abort when |wealth| exceeds this (none: 1000 max(1, |z|))"),
        key("w0", "none", "initial multiplier (none: z)"),
        key("init_std", "1", "initial action standard deviation"),
        key("warmup", "20", "episodes before the policy mean moves"),
    ]
}

pub fn emv_config(cfg: &RunConfig, dt: f64, leverage: Option<f64>) -> Result<EmvConfig, CliError> {
    let c = EmvConfig {
        lambda: cfg.f64("lambda")?,
        z: cfg.f64("z")?,
        horizon: cfg.f64("horizon")?,
        dt,
        episodes: cfg.u64("episodes")?,
        lagrange_period: cfg.u64("lagrange_period")?,
        eta_theta: cfg.f64("eta_theta")?,
        eta_phi: cfg.f64("eta_phi")?,
        alpha_w: cfg.f64("alpha_w")?,
        leverage,
        seed: cfg.u64("seed")?,
        mean_update: MeanUpdate::parse(cfg.str("mean_update")?).map_err(config)?,
        tie_phi3: cfg.bool("tie_phi3")?,
        divergence_bound: cfg.opt_f64("divergence_bound")?,
        w0: cfg.opt_f64("w0")?,
        init_std: cfg.f64("init_std")?,
        warmup: cfg.u64("warmup")?,
    };
    c.validate().map_err(config)?;
    c.steps().map_err(config)?;
    Ok(c)
}

/// Generator stream reserved for drawing ticker subsets.
const SEED_SUBSET_STREAM: u64 = u64::MAX;

/// Ticker subsets for `n` seeds; `train` and `backtest` draw identical sets
/// from the same table, `d`, `n` and `seed`.
pub fn draw_seeds(table: &PriceTable, d: usize, n: usize, seed: u64) -> Result<SeedSet, CliError> {
    if n == 0 {
        return Err(CliError::Config("`seeds` must be positive".into()));
    }
    let mut rng = stream_rng(seed, SEED_SUBSET_STREAM);
    make_seeds(table, d, n, &mut rng).map_err(config)
}

pub fn render_seeds(table: &PriceTable, seeds: &SeedSet) -> String {
    let mut out = String::from("seed,tickers\n");
    for (k, s) in seeds.subsets.iter().enumerate() {
        let names: Vec<&str> = s.iter().map(|&c| table.tickers()[c].as_str()).collect();
        out.push_str(&format!("{k},{}\n", names.join(";")));
    }
    out
}

/// Rows dated within `[from, to]` (either end open when `none`).
pub fn date_rows(
    table: &PriceTable,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Range<usize> {
    let start = from.map_or(0, |d| table.row_at_or_after(d));
    let end = to.map_or(table.rows(), |d| table.dates().partition_point(|x| *x <= d));
    start..end.max(start)
}
