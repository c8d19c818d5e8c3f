//! `emv train`: runs the EMV learner on the simulated market or on historical
//! episodes drawn from a price table.
//!
//! Outputs: `checkpoint.txt` and `curve.csv` (`episode,cost,terminal_wealth,w`),
//! or one pair per seed (`checkpoint_seed_<k>.txt`, `curve_seed_<k>.csv`) in
//! batch mode, plus `seeds.csv` for historical runs and the config echo.

use std::fmt::Write as _;
use std::path::Path;

use emv_core::backtest::HistoricalEnv;
use emv_core::emv::checkpoint;
use emv_core::emv::{EmvConfig, EmvLearner, Environment, LearningPoint, SimulatedMarketEnv};
use emv_core::kv::fmt_f64;
use rayon::prelude::*;

use super::{date_rows, draw_seeds, emv_config, emv_keys, frequency, load_table, prepare_out, render_seeds, write};
use crate::config::{config, key, Key, RunConfig, MARKET_KEYS};
use crate::error::CliError;
use crate::Context;

pub fn schema() -> Vec<Key> {
    let mut keys = vec![key("env", "simulated", "episode source: simulated or historical")];
    keys.extend(MARKET_KEYS);
    keys.push(key("x0", "1", "initial discounted wealth"));
    keys.push(key("dt", "auto", "step in years (auto: 1/252, or the table frequency)"));
    keys.extend(emv_keys());
    keys.extend([
        key("leverage", "none", "gross leverage cap applied to executed actions"),
        key("progress_every", "1000", "episodes between progress lines (0: silent)"),
        key("resume", "none", "checkpoint to continue from (simulated env only)"),
        key("prices", "none", "price file for the historical env"),
        key("calendar", "as_is", "row selection: as_is or month_end"),
        key("frequency", "daily", "row spacing of the price file: daily or monthly"),
        key("d", "5", "tickers per seed (historical env)"),
        key("seeds", "100", "number of ticker subsets (historical env)"),
        key("mode", "universal", "historical training: universal or batch"),
        key("train_start", "none", "first training date (none: first row)"),
        key("train_end", "none", "last training date (none: last row)"),
        key("seed", "0", "random seed"),
    ]);
    keys
}

fn render_curve(curve: &[LearningPoint]) -> String {
    let mut out = String::from("episode,cost,terminal_wealth,w\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.episode,
            fmt_f64(p.cost),
            fmt_f64(p.terminal_wealth),
            fmt_f64(p.w)
        );
    }
    out
}

/// Trains `learner` up to `target` total episodes, printing a progress line
/// every `every` episodes.
fn train_to(
    learner: &mut EmvLearner,
    env: &mut dyn Environment,
    target: u64,
    every: u64,
    label: &str,
) -> Result<Vec<LearningPoint>, CliError> {
    let remaining = target.saturating_sub(learner.episode);
    let mut window: Vec<(f64, f64)> = Vec::new();
    let mut observer = |p: &LearningPoint, l: &EmvLearner| {
        if every == 0 {
            return;
        }
        window.push((p.terminal_wealth, p.cost));
        if (p.episode + 1).is_multiple_of(every) {
            let n = window.len() as f64;
            let mean_x = window.iter().map(|v| v.0).sum::<f64>() / n;
            let mean_cost = window.iter().map(|v| v.1).sum::<f64>() / n;
            println!(
                "{label}episode {} w={:.6} mean_x_T={:.6} cost={:.6e} phi1={}",
                p.episode + 1,
                l.w,
                mean_x,
                mean_cost,
                l.phi.phi1.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
            );
            window.clear();
        }
    };
    learner
        .train_with(env, remaining, &mut observer)
        .map_err(CliError::from)
}

fn save(learner: &EmvLearner, curve: &[LearningPoint], dir: &Path, suffix: &str) -> Result<(), CliError> {
    checkpoint::save(learner, &dir.join(format!("checkpoint{suffix}.txt")))?;
    write(&dir.join(format!("curve{suffix}.csv")), &render_curve(curve))
}

fn summarize(learner: &EmvLearner, curve: &[LearningPoint], label: &str) {
    let tail = curve.len().min(1000);
    if tail > 0 {
        let mean = curve[curve.len() - tail..].iter().map(|p| p.terminal_wealth).sum::<f64>() / tail as f64;
        println!(
            "{label}done: episodes={} w={} mean_x_T(last {tail})={} phi1={}",
            learner.episode,
            fmt_f64(learner.w),
            fmt_f64(mean),
            learner.phi.phi1.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
        );
    }
}

pub fn run(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let every = cfg.u64("progress_every")?;
    let leverage = cfg.opt_f64("leverage")?;
    match cfg.choice("env", &["simulated", "historical"])? {
        "simulated" => {
            let market = cfg.market()?;
            let dt = match cfg.str("dt")? {
                "auto" => 1.0 / 252.0,
                _ => cfg.f64("dt")?,
            };
            let emv = emv_config(cfg, dt, leverage)?;
            let mut env = SimulatedMarketEnv::new(market.clone(), cfg.f64("x0")?);
            let mut learner = if cfg.is_none("resume")? {
                EmvLearner::new(emv.clone(), market.dim()).map_err(config)?
            } else {
                let mut l = checkpoint::load(Path::new(cfg.str("resume")?)).map_err(config)?;
                if l.dim() != market.dim() {
                    return Err(CliError::Config("checkpoint dimension does not match the market".into()));
                }
                l.config.episodes = emv.episodes;
                l
            };
            prepare_out(ctx, cfg, "train")?;
            let target = learner.config.episodes;
            let curve = train_to(&mut learner, &mut env, target, every, "")?;
            save(&learner, &curve, &ctx.out, "")?;
            summarize(&learner, &curve, "");
            Ok(())
        }
        _ => historical(cfg, ctx, every, leverage),
    }
}

fn historical(cfg: &RunConfig, ctx: &Context, every: u64, leverage: Option<f64>) -> Result<(), CliError> {
    if !cfg.is_none("resume")? {
        return Err(CliError::Config("`resume` is only supported for the simulated env".into()));
    }
    let table = load_table(cfg)?;
    let dt = 1.0 / frequency(cfg)?.periods_per_year();
    if cfg.str("dt")? != "auto" && (cfg.f64("dt")? - dt).abs() > 1e-12 {
        return Err(CliError::Config("`dt` must match the table frequency".into()));
    }
    let emv = emv_config(cfg, dt, leverage)?;
    let d = cfg.usize("d")?;
    let seeds = draw_seeds(&table, d, cfg.usize("seeds")?, cfg.u64("seed")?)?;
    let rows = date_rows(&table, cfg.opt_date("train_start")?, cfg.opt_date("train_end")?);
    let steps = emv.steps().map_err(config)?;
    let (r, x0) = (cfg.f64("r")?, cfg.f64("x0")?);
    let env_for = |subsets: Vec<Vec<usize>>| {
        HistoricalEnv::new(&table, subsets, rows.clone(), steps, r, x0).map_err(config)
    };
    // validate before writing anything
    env_for(seeds.subsets.clone())?;
    prepare_out(ctx, cfg, "train")?;
    write(&ctx.out.join("seeds.csv"), &render_seeds(&table, &seeds))?;
    match cfg.choice("mode", &["universal", "batch"])? {
        "universal" => {
            let mut env = env_for(seeds.subsets.clone())?;
            let mut learner = EmvLearner::new(emv.clone(), d).map_err(config)?;
            let curve = train_to(&mut learner, &mut env, emv.episodes, every, "")?;
            save(&learner, &curve, &ctx.out, "")?;
            summarize(&learner, &curve, "");
        }
        _ => {
            let trained: Vec<(EmvLearner, Vec<LearningPoint>)> = seeds
                .subsets
                .par_iter()
                .enumerate()
                .map(|(k, subset)| {
                    let mut env = env_for(vec![subset.clone()])?;
                    let seeded = EmvConfig {
                        seed: emv.seed.wrapping_add(k as u64),
                        ..emv.clone()
                    };
                    let mut learner = EmvLearner::new(seeded, d).map_err(config)?;
                    let curve = train_to(&mut learner, &mut env, emv.episodes, every, &format!("seed {k}: "))?;
                    Ok((learner, curve))
                })
                .collect::<Result<_, CliError>>()?;
            for (k, (learner, curve)) in trained.iter().enumerate() {
                save(learner, curve, &ctx.out, &format!("_seed_{k}"))?;
                summarize(learner, curve, &format!("seed {k}: "));
            }
        }
    }
    Ok(())
}
