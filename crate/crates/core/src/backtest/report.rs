//! Plain-text backtest reports.
//!
//! `metrics.csv`: `seed,annualized_return,sharpe,terminal_wealth`, one row per
//! seed, after `#` header comments stating the conventions. An undefined
//! Sharpe ratio is written as `undefined`.
//!
//! `summary.csv`: `metric,value` rows with cross-seed aggregates.
//!
//! `wealth/seed_<k>.csv`: `step,date,time,wealth,gross_exposure`; the last row
//! has an empty exposure.

use std::fmt::Write as _;
use std::path::Path;

use super::engine::{BacktestConfig, BacktestResult};
use super::prices::PriceTable;
use crate::error::Result;
use crate::kv::fmt_f64;

pub const UNDEFINED: &str = "undefined";

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| UNDEFINED.into())
}

pub fn render_metrics(cfg: &BacktestConfig, result: &BacktestResult) -> String {
    let mut out = String::new();
    let ppy = cfg.frequency.periods_per_year();
    let _ = writeln!(out, "# wealth is discounted at r = {}", fmt_f64(cfg.r));
    let _ = writeln!(out, "# annualized_return = (x_T / x_0)^(1 / years) - 1, years = steps / {ppy}");
    let _ = writeln!(
        out,
        "# sharpe = mean(periodic return of discounted wealth) / sample std (n-1) * sqrt({ppy})"
    );
    let _ = writeln!(out, "seed,annualized_return,sharpe,terminal_wealth");
    for o in &result.outcomes {
        let m = &o.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            o.seed,
            fmt_f64(m.annualized_return),
            opt(m.sharpe),
            fmt_f64(m.terminal_wealth)
        );
    }
    out
}

pub fn render_summary(result: &BacktestResult) -> String {
    let s = &result.summary;
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "seeds,{}", s.seeds);
    let _ = writeln!(out, "mean_annualized_return,{}", fmt_f64(s.mean_annualized_return));
    let _ = writeln!(out, "mean_sharpe,{}", opt(s.mean_sharpe));
    let _ = writeln!(out, "mean_terminal_wealth,{}", fmt_f64(s.mean_terminal_wealth));
    let _ = writeln!(out, "var_terminal_wealth,{}", fmt_f64(s.var_terminal_wealth));
    out
}

pub fn render_wealth(cfg: &BacktestConfig, table: &PriceTable, wealth: &[f64], exposures: &[f64]) -> String {
    let mut out = String::from("step,date,time,wealth,gross_exposure\n");
    let dt = cfg.dt();
    for (i, x) in wealth.iter().enumerate() {
        let date = table.dates()[cfg.test.start + i].format("%Y-%m-%d");
        let exposure = exposures.get(i).map(|e| fmt_f64(*e)).unwrap_or_default();
        let _ = writeln!(out, "{i},{date},{},{},{exposure}", fmt_f64(i as f64 * dt), fmt_f64(*x));
    }
    out
}

/// Writes `metrics.csv`, `summary.csv` and `wealth/seed_<k>.csv` under `dir`.
pub fn write_report(dir: &Path, cfg: &BacktestConfig, table: &PriceTable, result: &BacktestResult) -> Result<()> {
    std::fs::create_dir_all(dir.join("wealth"))?;
    std::fs::write(dir.join("metrics.csv"), render_metrics(cfg, result))?;
    std::fs::write(dir.join("summary.csv"), render_summary(result))?;
    for o in &result.outcomes {
        std::fs::write(
            dir.join("wealth").join(format!("seed_{}.csv", o.seed)),
            render_wealth(cfg, table, &o.wealth, &o.exposures),
        )?;
    }
    Ok(())
}
