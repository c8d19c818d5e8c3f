mod common;

use emv_core::closed_form::{classical_control, lagrange_w, OptimalFeedback, ProblemSpec};
use emv_core::market_sim::*;
use nalgebra::{DMatrix, DVector};

#[test]
fn gbm_mean_price_grows_at_mu() {
    let market = MarketParams::new(
        DVector::from_vec(vec![0.10, 0.05]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.0, 0.3]),
        0.02,
    )
    .unwrap();
    let grid = PathGrid::covering(1.0, 12).unwrap();
    let paths = simulate_price_paths(&market.gbm(), &[100.0, 50.0], &grid, 3, 20_000).unwrap();
    for (i, s0) in [100.0, 50.0].iter().enumerate() {
        let terminal: Vec<f64> = paths.iter().map(|p| p[(12, i)]).collect();
        let (mean, se) = mean_and_stderr(&terminal);
        let exact = s0 * (market.mu()[i]).exp();
        assert!((mean - exact).abs() < 4.0 * se, "asset {i}: {mean} vs {exact}");
    }
    assert!(paths.iter().all(|p| p.iter().all(|v| *v > 0.0)));
}

#[test]
fn optimal_wealth_hits_the_target_on_average() {
    let market = MarketParams::scalar(0.10, 0.20, 0.02).unwrap();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let policy = OptimalFeedback::new(&spec, w).unwrap();
    let grid = PathGrid::covering(1.0, 252).unwrap();
    let xt = simulate_terminal_wealth(&policy, &spec.market, &grid, 1.0, 5, 20_000, SimulationMode::Aggregate)
        .unwrap();
    let (mean, se) = mean_and_stderr(&xt);
    assert!((mean - 1.4).abs() < 3.0 * se + 5e-4, "{mean} (se {se})");
}

#[test]
fn sampled_actions_reproduce_aggregate_moments() {
    let market = common::five_asset_market();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let policy = OptimalFeedback::new(&spec, w).unwrap();
    let grid = PathGrid::covering(1.0, 100).unwrap();
    let run = |mode| simulate_terminal_wealth(&policy, &spec.market, &grid, 1.0, 6, 20_000, mode).unwrap();
    let (agg, sam) = (run(SimulationMode::Aggregate), run(SimulationMode::SampledAction));
    let (m1, s1) = mean_and_stderr(&agg);
    let (m2, s2) = mean_and_stderr(&sam);
    assert!((m1 - m2).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt());
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    let (v1, v2) = (var(&agg, m1), var(&sam, m2));
    assert!((v1 - v2).abs() < 0.1 * v1, "{v1} vs {v2}");
}

#[test]
fn zero_temperature_feedback_is_the_classical_control() {
    let market = common::five_asset_market();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.0, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let policy = OptimalFeedback::new(&spec, w).unwrap();
    let mut mean = vec![0.0; 5];
    policy.mean_into(0.3, 1.1, &mut mean);
    let classical = classical_control(0.3, 1.1, w, &spec).unwrap();
    assert!((DVector::from_vec(mean) - classical).amax() < 1e-14);
    assert_eq!(policy.covariance_factor(0.3, 1.1).unwrap().amax(), 0.0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let market = common::five_asset_market();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let policy = OptimalFeedback::new(&spec, w).unwrap();
    let grid = PathGrid::covering(1.0, 20).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                simulate_terminal_wealth(&policy, &spec.market, &grid, 1.0, 9, 500, SimulationMode::SampledAction)
                    .unwrap()
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn historical_step_is_self_financing_for_buy_and_hold() {
    let market = MarketParams::new(
        DVector::from_vec(vec![0.10, 0.07]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.0, 0.25]),
        0.0,
    )
    .unwrap();
    let n = 252;
    let grid = PathGrid::covering(1.0, n).unwrap();
    let mut rng = stream_rng(10, 0);
    let prices = simulate_prices(&market.gbm(), &[1.0, 1.0], &grid, &mut rng).unwrap();
    // hold a fixed number of shares: wealth follows the price path exactly
    let shares = [0.3, 0.5];
    let mut x = 0.3 + 0.5;
    let dt = grid.dt;
    for i in 0..n {
        let u = [shares[0] * prices[(i, 0)], shares[1] * prices[(i, 1)]];
        let p0 = [prices[(i, 0)], prices[(i, 1)]];
        let p1 = [prices[(i + 1, 0)], prices[(i + 1, 1)]];
        x = emv_core::backtest::historical_step(x, &u, &p0, &p1, 0.0, dt);
    }
    let held = shares[0] * prices[(n, 0)] + shares[1] * prices[(n, 1)];
    assert!((x - held).abs() < 1e-10);
}
