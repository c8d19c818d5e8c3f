mod common;

use std::f64::consts::PI;

use emv_core::closed_form::*;
use emv_core::market_sim::{stream_rng, MarketParams};
use nalgebra::DMatrix;

fn grid() -> HjbGrid {
    HjbGrid::uniform((0.0, 1.0), 20, (-1.0, 4.0), 20)
}

#[test]
fn closed_form_value_solves_hjb_on_random_markets() {
    let mut rng = stream_rng(11, 0);
    for d in [1, 2, 5] {
        for _ in 0..3 {
            let market = common::random_market(&mut rng, d);
            let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
            let w = lagrange_w(&spec).unwrap();
            let v = |t: f64, x: f64| optimal_value(t, x, w, &spec).unwrap();
            let pol = |t: f64, x: f64| {
                let law = optimal_policy(t, x, w, &spec)?;
                Ok((law.mean().clone(), law.covariance().clone()))
            };
            let report = verify_hjb(&v, Some(&pol), &spec, &grid(), HjbOptions::default()).unwrap();
            assert_eq!(report.points, 400);
            assert!(report.max_residual < 1e-6, "d={d}: residual {} at {:?}", report.max_residual, report.worst_point);
            assert!(report.max_policy_mismatch.unwrap() < 1e-5);
        }
    }
}

#[test]
fn dimension_free_entropy_constant_leaves_a_residual() {
    // replacing the d ln(pi lambda) drift by ln(pi lambda) shifts v_t by a constant
    let mut rng = stream_rng(12, 0);
    let market = common::random_market(&mut rng, 3);
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let shift = 0.5 * spec.lambda * 2.0 * (PI * spec.lambda).ln();
    let v = |t: f64, x: f64| optimal_value(t, x, w, &spec).unwrap() + shift * (spec.horizon - t);
    let report = verify_hjb(&v, None, &spec, &grid(), HjbOptions::default()).unwrap();
    assert!((report.max_residual - shift.abs()).abs() < 1e-6);
    assert!(report.max_residual > 0.1);
}

#[test]
fn classical_value_solves_classical_hjb() {
    let mut rng = stream_rng(13, 0);
    let market = common::random_market(&mut rng, 2);
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.0, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let v = |t: f64, x: f64| classical_value(t, x, w, &spec).unwrap();
    let report = verify_hjb(&v, None, &spec, &grid(), HjbOptions::default()).unwrap();
    assert!(report.max_residual < 1e-6);
}

#[test]
fn value_outside_the_horizon_is_a_domain_error() {
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, MarketParams::scalar(0.1, 0.2, 0.02).unwrap()).unwrap();
    assert!(optimal_value(1.5, 1.0, 2.0, &spec).is_err());
    assert!(optimal_value(-0.1, 1.0, 2.0, &spec).is_err());
    assert!(optimal_value(1.0, 1.0, 2.0, &spec).is_ok());
}

#[test]
fn value_gap_vanishes_with_temperature() {
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, MarketParams::scalar(0.1, 0.2, 0.02).unwrap()).unwrap();
    let gap = |l: f64| value_gap(0.0, &spec.with_lambda(l).unwrap()).unwrap();
    assert!(gap(1e-8).abs() < 1e-6);
    assert!(gap(1e-8).abs() < gap(1e-4).abs());
}

#[test]
fn value_gap_is_monotone_for_a_unit_volatility_market() {
    // monotone in lambda while lambda <= exp(-c - 1), here about 0.108
    let market = MarketParams::scalar(0.42, 1.0, 0.02).unwrap();
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let gaps: Vec<f64> = (1..=8)
        .map(|k| value_gap(0.0, &spec.with_lambda(10f64.powi(-k)).unwrap()).unwrap())
        .collect();
    assert!(gaps.windows(2).all(|p| p[1].abs() < p[0].abs()));
    assert!(gaps.iter().all(|g| *g > 0.0));
    assert!(gaps[7] < 1e-6);
}

#[test]
fn policy_concentrates_on_the_classical_control() {
    let mut rng = stream_rng(14, 0);
    let market = common::random_market(&mut rng, 3);
    let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
    let w = lagrange_w(&spec).unwrap();
    let lambdas: Vec<f64> = (1..=8).map(|k| 10f64.powi(-k)).collect();
    let report = dirac_convergence_check(0.3, 1.2, w, &spec, &lambdas).unwrap();
    assert!(report.max_mean_deviation < 1e-12);
    assert!(report.slope_relative_spread < 1e-10);
    let rows = &report.rows;
    assert!(rows.windows(2).all(|p| p[1].max_eigenvalue < p[0].max_eigenvalue));
    assert!(dirac_convergence_check(0.3, 1.2, w, &spec, &[1e-2, 1e-1]).is_err());
}

#[test]
fn gaussian_entropy_matches_simpson_quadrature() {
    for var in [0.01, 0.5, 3.0] {
        let law = GaussianLaw::new(
            nalgebra::DVector::from_element(1, 0.3),
            DMatrix::from_element(1, 1, var),
        )
        .unwrap();
        let s = f64::sqrt(var);
        let n = 4000;
        let (lo, hi) = (0.3 - 12.0 * s, 0.3 + 12.0 * s);
        let h = (hi - lo) / n as f64;
        let f = |u: f64| {
            let p = (-(u - 0.3).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        };
        let mut sum = f(lo) + f(hi);
        for i in 1..n {
            sum += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let numeric = sum * h / 3.0;
        assert!((numeric - law.entropy()).abs() < 1e-8, "var {var}");
    }
}

#[test]
fn degenerate_market_is_rejected() {
    let sigma = DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.2, 0.2]);
    let mu = nalgebra::DVector::from_vec(vec![0.1, 0.1]);
    let market = MarketParams::new(mu, sigma, 0.02);
    assert!(market.is_err() || ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market.unwrap()).is_err());
}
