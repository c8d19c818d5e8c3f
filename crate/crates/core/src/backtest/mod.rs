//! Historical backtesting: price ingestion, seed composition, leverage
//! constraints, a rolling plug-in Markowitz baseline, EMV training on
//! historical episodes, and performance metrics.

pub mod engine;
pub mod metrics;
pub mod prices;
pub mod report;
pub mod seeds;

pub use engine::{
    apply_leverage, estimate_market, gross_exposure, historical_step, markowitz_baseline,
    markowitz_from_params, project_leverage, run_backtest, BacktestConfig, BacktestResult,
    Frequency, HistoricalEnv, PolicySource, SeedOutcome, TrainingMode,
};
pub use metrics::{path_metrics, summarize, PathMetrics, Summary};
pub use prices::{
    load_prices, parse_prices, period_dates, simulate_table, Calendar, DroppedRow, PriceTable,
};
pub use seeds::{make_seeds, SeedSet};
