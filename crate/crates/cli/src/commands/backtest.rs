//! `emv backtest`: allocations from a trained or freshly trained EMV policy,
//! the rolling plug-in Markowitz rule or the zero policy, over the test range
//! of a price table.
//!
//! Outputs: `metrics.csv`, `summary.csv`, `wealth/seed_<k>.csv`, `seeds.csv`
//! and the config echo.

use std::path::Path;

use emv_core::backtest::report::write_report;
use emv_core::backtest::{run_backtest, BacktestConfig, PolicySource, TrainingMode};
use emv_core::emv::checkpoint;
use emv_core::kv::fmt_f64;

use super::{date_rows, draw_seeds, emv_config, emv_keys, frequency, load_table, prepare_out, render_seeds, write};
use crate::config::{config, key, Key, RunConfig};
use crate::error::CliError;
use crate::Context;

pub fn schema() -> Vec<Key> {
    let mut keys = vec![
        key("prices", "none", "price file: date column, then one column per ticker"),
        key("calendar", "as_is", "row selection: as_is or month_end"),
        key("frequency", "monthly", "row spacing: daily or monthly"),
        key("policy", "emv", "allocation rule: emv, checkpoint, markowitz or zero"),
        key("checkpoint", "none", "learner checkpoint for policy = checkpoint"),
        key("window", "24", "Markowitz estimation window in periods"),
        key("d", "5", "tickers per seed"),
        key("seeds", "100", "number of ticker subsets"),
        key("x0", "1", "initial discounted wealth"),
        key("r", "0", "riskless rate used to discount prices"),
        key("leverage", "none", "gross leverage cap, e.g. 2 for 200%"),
        key("mode", "universal", "EMV training: universal or batch"),
        key("sample_actions", "false", "execute sampled EMV actions instead of the mean"),
        key("train_start", "none", "first training date (none: first row)"),
        key("train_end", "none", "last training date (none: middle of the table)"),
        key("test_start", "none", "first test date (none: row after the training range)"),
        key("test_end", "none", "last test date (none: last row)"),
    ];
    keys.extend(emv_keys());
    keys.push(key("seed", "0", "random seed"));
    keys
}

pub fn run(cfg: &RunConfig, ctx: &Context) -> Result<(), CliError> {
    let table = load_table(cfg)?;
    let freq = frequency(cfg)?;
    let dt = 1.0 / freq.periods_per_year();
    let leverage = cfg.opt_f64("leverage")?;
    let seed = cfg.u64("seed")?;

    let default_split = table.rows() / 2;
    let train_end = cfg.opt_date("train_end")?.or(Some(table.dates()[default_split.saturating_sub(1)]));
    let train = date_rows(&table, cfg.opt_date("train_start")?, train_end);
    let test_start = cfg
        .opt_date("test_start")?
        .or_else(|| table.dates().get(train.end).copied());
    let test = match test_start {
        Some(start) => date_rows(&table, Some(start), cfg.opt_date("test_end")?),
        None => table.rows()..table.rows(),
    };
    let mode = match cfg.choice("mode", &["universal", "batch"])? {
        "universal" => TrainingMode::Universal,
        _ => TrainingMode::Batch,
    };
    let bt = BacktestConfig {
        d: cfg.usize("d")?,
        frequency: freq,
        z: cfg.f64("z")?,
        x0: cfg.f64("x0")?,
        leverage,
        train,
        test,
        mode,
        r: cfg.f64("r")?,
        sample_actions: cfg.bool("sample_actions")?,
        seed,
    };
    bt.validate(&table).map_err(config)?;
    let source = match cfg.choice("policy", &["emv", "checkpoint", "markowitz", "zero"])? {
        "zero" => PolicySource::Zero,
        "markowitz" => PolicySource::Markowitz {
            window: cfg.usize("window")?,
        },
        "checkpoint" => {
            if cfg.is_none("checkpoint")? {
                return Err(CliError::Config("policy = checkpoint needs `checkpoint`".into()));
            }
            let learner = checkpoint::load(Path::new(cfg.str("checkpoint")?)).map_err(config)?;
            if learner.dim() != bt.d {
                return Err(CliError::Config(format!(
                    "checkpoint has {} assets but d = {}",
                    learner.dim(),
                    bt.d
                )));
            }
            PolicySource::EmvPolicy {
                phi: learner.phi,
                w: learner.w,
            }
        }
        _ => PolicySource::EmvTrain(emv_config(cfg, dt, leverage)?),
    };
    let seeds = draw_seeds(&table, bt.d, cfg.usize("seeds")?, seed)?;
    prepare_out(ctx, cfg, "backtest")?;
    write(&ctx.out.join("seeds.csv"), &render_seeds(&table, &seeds))?;
    let result = run_backtest(&bt, &table, &seeds, &source)?;
    write_report(&ctx.out, &bt, &table, &result)?;
    let s = &result.summary;
    println!(
        "seeds={} mean_annualized_return={} mean_sharpe={} mean_terminal_wealth={} var_terminal_wealth={}",
        s.seeds,
        fmt_f64(s.mean_annualized_return),
        s.mean_sharpe.map(fmt_f64).unwrap_or_else(|| "undefined".into()),
        fmt_f64(s.mean_terminal_wealth),
        fmt_f64(s.var_terminal_wealth)
    );
    Ok(())
}
