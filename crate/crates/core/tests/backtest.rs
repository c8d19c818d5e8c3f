use chrono::NaiveDate;
use emv_core::backtest::report::{render_metrics, write_report};
use emv_core::backtest::*;
use emv_core::closed_form::{lagrange_w, ProblemSpec};
use emv_core::emv::{EmvConfig, PolicyParams};
use emv_core::market_sim::{stream_rng, MarketParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2001, 1, 2).unwrap()
}

/// `n` independent tickers with volatility 0.2 and market price of risk 0.4.
fn iid_market(n: usize) -> MarketParams {
    MarketParams::from_rho(
        DMatrix::from_diagonal_element(n, n, 0.2),
        DVector::from_element(n, 0.4),
        0.02,
    )
    .unwrap()
}

fn config(d: usize, train: std::ops::Range<usize>, test: std::ops::Range<usize>) -> BacktestConfig {
    BacktestConfig {
        d,
        frequency: Frequency::Daily,
        z: 1.4,
        x0: 1.0,
        leverage: None,
        train,
        test,
        mode: TrainingMode::Universal,
        r: 0.02,
        sample_actions: false,
        seed: 1,
    }
}

#[test]
fn plug_in_estimate_recovers_window_moments_exactly() {
    // alternating returns m dt +- s sqrt(dt (n - 1) / n) have sample mean m dt
    // and sample variance s^2 dt
    let (n, dt) = (24, 1.0 / 12.0);
    let (m, s) = (0.1, 0.2);
    let spread = s * (dt * (n - 1) as f64 / n as f64).sqrt();
    let returns = DMatrix::from_fn(n, 1, |k, _| m * dt + if k % 2 == 0 { spread } else { -spread });
    let est = estimate_market(&returns, 0.02, dt).unwrap();
    assert!((est.mu()[0] - 0.1).abs() < 1e-12);
    assert!((est.sigma()[(0, 0)] - 0.2).abs() < 1e-12);
    assert!((est.rho()[0] - 0.4).abs() < 1e-12);
    let u = markowitz_baseline(&returns, 1.0, 1.4, 1.0, 0.02, dt).unwrap();
    assert!((u[0] - 5.41066).abs() < 1e-5, "{}", u[0]);
}

#[test]
fn plug_in_estimate_converges_on_simulated_prices() {
    let market = MarketParams::new(
        DVector::from_vec(vec![0.10, 0.06]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.08, 0.0, 0.25]),
        0.02,
    )
    .unwrap();
    let rows = 252 * 40 + 1;
    let table = simulate_table(&market.gbm(), rows, Frequency::Daily, start(), &mut stream_rng(3, 0)).unwrap();
    let dt = 1.0 / 252.0;
    let returns = DMatrix::from_fn(rows - 1, 2, |k, j| table.price(k + 1, j) / table.price(k, j) - 1.0);
    let est = estimate_market(&returns, 0.02, dt).unwrap();
    let cov_err = (est.gram() - market.gram()).amax() / market.gram().amax();
    assert!(cov_err < 0.05, "covariance error {cov_err}");
    // mean of simple returns: se of the annualized mean is vol / sqrt(40 years)
    for i in 0..2 {
        let vol = market.sigma().column(i).norm();
        assert!((est.mu()[i] - market.mu()[i]).abs() < 4.0 * vol / 40f64.sqrt());
    }
}

#[test]
fn singular_window_falls_back_to_a_ridge() {
    let returns = DMatrix::from_fn(10, 2, |k, _| 0.01 * (k as f64 - 4.5));
    let est = estimate_market(&returns, 0.0, 1.0 / 12.0).unwrap();
    assert!(est.sigma().iter().all(|v| v.is_finite()));
    assert!(estimate_market(&DMatrix::from_element(2, 2, 0.01), 0.0, 1.0).is_err());
}

#[test]
fn zero_policy_keeps_discounted_wealth_flat() {
    let table = simulate_table(&iid_market(4).gbm(), 40, Frequency::Monthly, start(), &mut stream_rng(4, 0)).unwrap();
    let seeds = make_seeds(&table, 2, 5, &mut stream_rng(4, 1)).unwrap();
    let mut cfg = config(2, 0..0, 10..40);
    cfg.frequency = Frequency::Monthly;
    let result = run_backtest(&cfg, &table, &seeds, &PolicySource::Zero).unwrap();
    for o in &result.outcomes {
        assert!(o.wealth.iter().all(|x| *x == 1.0));
        assert_eq!(o.metrics.annualized_return, 0.0);
        assert_eq!(o.metrics.sharpe, None);
    }
    assert_eq!(result.summary.mean_sharpe, None);
    assert!(render_metrics(&cfg, &result).lines().any(|l| l.ends_with(",undefined,1.0")));
}

#[test]
fn optimal_policy_reaches_the_target_on_historical_paths() {
    let universe = 500;
    let market = iid_market(universe);
    let table = simulate_table(&market.gbm(), 253, Frequency::Daily, start(), &mut stream_rng(5, 0)).unwrap();
    let seeds = make_seeds(&table, 5, 100, &mut stream_rng(5, 1)).unwrap();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, iid_market(5)).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let phi = PolicyParams::optimal(&spec).unwrap();
    let cfg = config(5, 0..0, 0..253);
    let result = run_backtest(&cfg, &table, &seeds, &PolicySource::EmvPolicy { phi, w }).unwrap();
    let mean = result.summary.mean_terminal_wealth;
    assert!((mean - 1.4).abs() < 0.1 * 1.4, "mean terminal wealth {mean}");
}

#[test]
fn leverage_cap_is_respected_in_the_test_range() {
    let table = simulate_table(&iid_market(20).gbm(), 253, Frequency::Daily, start(), &mut stream_rng(6, 0)).unwrap();
    let seeds = make_seeds(&table, 3, 10, &mut stream_rng(6, 1)).unwrap();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, iid_market(3)).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let phi = PolicyParams::optimal(&spec).unwrap();
    let mut cfg = config(3, 0..0, 0..253);
    cfg.leverage = Some(2.0);
    let result = run_backtest(&cfg, &table, &seeds, &PolicySource::EmvPolicy { phi, w }).unwrap();
    for o in &result.outcomes {
        assert!(o.exposures.iter().all(|e| *e <= 2.0 + 1e-12));
        assert!(o.exposures.iter().any(|e| (*e - 2.0).abs() < 1e-12));
    }
}

#[test]
fn backtests_are_deterministic_across_thread_counts() {
    let table = simulate_table(&iid_market(12).gbm(), 300, Frequency::Daily, start(), &mut stream_rng(7, 0)).unwrap();
    let seeds = make_seeds(&table, 2, 6, &mut stream_rng(7, 1)).unwrap();
    let emv = EmvConfig {
        horizon: 40.0 / 252.0,
        episodes: 60,
        ..EmvConfig::default()
    };
    let run = |threads: usize, mode: TrainingMode| {
        let mut cfg = config(2, 0..150, 150..300);
        cfg.mode = mode;
        cfg.leverage = Some(2.0);
        cfg.sample_actions = true;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_backtest(&cfg, &table, &seeds, &PolicySource::EmvTrain(emv.clone())).unwrap())
    };
    for mode in [TrainingMode::Universal, TrainingMode::Batch] {
        assert_eq!(run(1, mode), run(3, mode));
    }
}

#[test]
fn markowitz_needs_enough_history() {
    let table = simulate_table(&iid_market(3).gbm(), 60, Frequency::Monthly, start(), &mut stream_rng(8, 0)).unwrap();
    let seeds = make_seeds(&table, 2, 3, &mut stream_rng(8, 1)).unwrap();
    let mut cfg = config(2, 0..0, 24..60);
    cfg.frequency = Frequency::Monthly;
    assert!(run_backtest(&cfg, &table, &seeds, &PolicySource::Markowitz { window: 24 }).is_ok());
    assert!(run_backtest(&cfg, &table, &seeds, &PolicySource::Markowitz { window: 30 }).is_err());
    assert!(run_backtest(&cfg, &table, &seeds, &PolicySource::Markowitz { window: 2 }).is_err());
}

#[test]
fn report_files_are_complete() {
    let table = simulate_table(&iid_market(6).gbm(), 50, Frequency::Monthly, start(), &mut stream_rng(9, 0)).unwrap();
    let seeds = make_seeds(&table, 2, 4, &mut stream_rng(9, 1)).unwrap();
    let mut cfg = config(2, 0..0, 20..50);
    cfg.frequency = Frequency::Monthly;
    let result = run_backtest(&cfg, &table, &seeds, &PolicySource::Markowitz { window: 12 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &cfg, &table, &result).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 5);
    for k in 0..4 {
        let wealth = std::fs::read_to_string(dir.path().join(format!("wealth/seed_{k}.csv"))).unwrap();
        assert_eq!(wealth.lines().count(), 31);
    }
    assert!(std::fs::read_to_string(dir.path().join("summary.csv")).unwrap().contains("seeds,4"));
}

#[test]
fn simulated_table_round_trips_through_csv() {
    let table = simulate_table(&iid_market(3).gbm(), 30, Frequency::Daily, start(), &mut stream_rng(10, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    table.write_csv(&path).unwrap();
    assert_eq!(load_prices(&path, Calendar::AsIs).unwrap(), table);
    let weekdays = period_dates(start(), 10, Frequency::Daily).unwrap();
    assert!(weekdays.iter().all(|d| chrono::Datelike::weekday(d).num_days_from_monday() < 5));
    let ends = period_dates(start(), 3, Frequency::Monthly).unwrap();
    assert_eq!(ends[1], NaiveDate::from_ymd_opt(2001, 2, 28).unwrap());
}

proptest! {
    #[test]
    fn leverage_projection_caps_and_preserves_direction(
        u in proptest::collection::vec(-10.0f64..10.0, 1..6),
        x in -3.0f64..3.0,
        limit in 0.1f64..4.0,
    ) {
        let v = apply_leverage(&u, x, limit);
        let gross: f64 = v.iter().map(|a| a.abs()).sum();
        prop_assert!(gross <= limit * x.abs() * (1.0 + 1e-12) + 1e-15);
        let before: f64 = u.iter().map(|a| a.abs()).sum();
        if before <= limit * x.abs() {
            prop_assert_eq!(&v, &u);
        }
        for (a, b) in u.iter().zip(&v) {
            prop_assert!(a * b >= 0.0);
        }
    }
}
