use crate::error::{EmvError, Result};

/// Standard deviations below this are treated as zero.
const ZERO_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathMetrics {
    pub annualized_return: f64,
    /// `None` when the return series has zero dispersion.
    pub sharpe: Option<f64>,
    pub terminal_wealth: f64,
}

/// Annualized return `(x_T / x_0)^{1 / years} - 1` (`-1` after total loss)
/// and Sharpe ratio `mean(R - r_p) / std(R) sqrt(periods_per_year)` with the
/// `n - 1` sample standard deviation.
pub fn path_metrics(path: &[f64], periods_per_year: f64, riskless_per_period: f64) -> Result<PathMetrics> {
    if path.len() < 2 {
        return Err(EmvError::invalid("metrics need at least two wealth points"));
    }
    if !(periods_per_year > 0.0) {
        return Err(EmvError::invalid("periods per year must be positive"));
    }
    let x0 = path[0];
    let xt = path[path.len() - 1];
    if !(x0 > 0.0) {
        return Err(EmvError::invalid("initial wealth must be positive"));
    }
    let years = (path.len() - 1) as f64 / periods_per_year;
    let annualized_return = if xt > 0.0 {
        (xt / x0).powf(1.0 / years) - 1.0
    } else {
        -1.0
    };
    let returns: Vec<f64> = path
        .windows(2)
        .map(|p| if p[0] != 0.0 { p[1] / p[0] - 1.0 } else { 0.0 })
        .collect();
    let sharpe = if returns.len() < 2 {
        None
    } else {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        (std > ZERO_STD).then(|| (mean - riskless_per_period) / std * periods_per_year.sqrt())
    };
    Ok(PathMetrics {
        annualized_return,
        sharpe,
        terminal_wealth: xt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub seeds: usize,
    pub mean_annualized_return: f64,
    /// Mean over the seeds with a defined Sharpe ratio.
    pub mean_sharpe: Option<f64>,
    pub mean_terminal_wealth: f64,
    /// Cross-seed sample variance of terminal wealth.
    pub var_terminal_wealth: f64,
}

pub fn summarize(metrics: &[PathMetrics]) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(EmvError::invalid("no seeds to summarize"));
    }
    let n = metrics.len() as f64;
    let mean = |f: &dyn Fn(&PathMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let mean_terminal_wealth = mean(&|m| m.terminal_wealth);
    let var_terminal_wealth = if metrics.len() > 1 {
        metrics
            .iter()
            .map(|m| (m.terminal_wealth - mean_terminal_wealth).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let sharpes: Vec<f64> = metrics.iter().filter_map(|m| m.sharpe).collect();
    Ok(Summary {
        seeds: metrics.len(),
        mean_annualized_return: mean(&|m| m.annualized_return),
        mean_sharpe: (!sharpes.is_empty()).then(|| sharpes.iter().sum::<f64>() / sharpes.len() as f64),
        mean_terminal_wealth,
        var_terminal_wealth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_year_growth() {
        let m = path_metrics(&[1.0, 1.1, 1.21], 1.0, 0.0).unwrap();
        assert!((m.annualized_return - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_path_has_undefined_sharpe() {
        let m = path_metrics(&[2.0; 5], 12.0, 0.0).unwrap();
        assert_eq!(m.annualized_return, 0.0);
        assert_eq!(m.sharpe, None);
        let steady = path_metrics(&[1.0, 1.01, 1.0201], 12.0, 0.0).unwrap();
        assert_eq!(steady.sharpe, None);
    }

    #[test]
    fn sharpe_hand_case() {
        // returns 0.1 and -0.05: mean 0.025, sample std 0.106066
        let m = path_metrics(&[1.0, 1.1, 1.045], 1.0, 0.0).unwrap();
        assert!((m.sharpe.unwrap() - 0.025 / 0.075_f64.hypot(0.075)).abs() < 1e-12);
    }

    #[test]
    fn total_loss() {
        let m = path_metrics(&[1.0, 0.5, -0.1], 12.0, 0.0).unwrap();
        assert_eq!(m.annualized_return, -1.0);
    }
}
