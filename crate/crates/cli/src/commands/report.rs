//! `emv report`: side-by-side aggregates of backtest output directories,
//! recomputed from their `metrics.csv`. With `--out`, also writes
//! `report.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use emv_core::backtest::report::UNDEFINED;
use emv_core::backtest::{summarize, PathMetrics, Summary};
use emv_core::kv::{fmt_f64, parse_f64};

use super::write;
use crate::error::CliError;
use crate::Context;

fn read_metrics(dir: &Path) -> anyhow::Result<Vec<PathMetrics>> {
    let path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
    if header != "seed,annualized_return,sharpe,terminal_wealth" {
        return Err(anyhow!("{}: unexpected header `{header}`", path.display()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(anyhow!("{}: row {} has {} cells", path.display(), i + 1, cells.len()));
            }
            let num = |s: &str| parse_f64(s, "metrics").map_err(|e| anyhow!("{}: {e}", path.display()));
            Ok(PathMetrics {
                annualized_return: num(cells[1])?,
                sharpe: if cells[2] == UNDEFINED { None } else { Some(num(cells[2])?) },
                terminal_wealth: num(cells[3])?,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| UNDEFINED.into())
}

pub fn run(inputs: &[PathBuf], ctx: Option<&Context>) -> Result<(), CliError> {
    let rows: Vec<(String, Summary)> = inputs
        .iter()
        .map(|dir| {
            let metrics = read_metrics(dir)?;
            let summary = summarize(&metrics).map_err(anyhow::Error::from)?;
            Ok((dir.display().to_string(), summary))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut csv = String::from("input,seeds,mean_annualized_return,mean_sharpe,mean_terminal_wealth,var_terminal_wealth\n");
    println!(
        "{:<32} {:>6} {:>14} {:>12} {:>14} {:>14}",
        "input", "seeds", "ann_return", "sharpe", "mean_x_T", "var_x_T"
    );
    for (name, s) in &rows {
        println!(
            "{:<32} {:>6} {:>14.6} {:>12} {:>14.6} {:>14.6}",
            name,
            s.seeds,
            s.mean_annualized_return,
            s.mean_sharpe.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.6}")),
            s.mean_terminal_wealth,
            s.var_terminal_wealth
        );
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{}",
            s.seeds,
            fmt_f64(s.mean_annualized_return),
            opt(s.mean_sharpe),
            fmt_f64(s.mean_terminal_wealth),
            fmt_f64(s.var_terminal_wealth)
        );
    }
    if let Some(ctx) = ctx {
        std::fs::create_dir_all(&ctx.out)?;
        write(&ctx.out.join("report.csv"), &csv)?;
    }
    Ok(())
}
