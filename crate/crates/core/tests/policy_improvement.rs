mod common;

use emv_core::closed_form::{lagrange_w, optimal_value, ProblemSpec};
use emv_core::gaussian_policy::*;
use emv_core::market_sim::{
    mean_and_stderr, simulate_terminal_wealth, stream_rng, PathGrid, SimulationMode, StreamRng,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn random_policy(rng: &mut StreamRng, d: usize) -> AffineGaussianPolicy {
    let alpha = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.01;
    AffineGaussianPolicy::new(alpha, cov, rng.random_range(-1.0..1.0)).unwrap()
}

fn random_spec(rng: &mut StreamRng) -> ProblemSpec {
    let d = rng.random_range(1..=5);
    let market = common::random_market(rng, d);
    let lambda = rng.random_range(0.01..1.0);
    ProblemSpec::new(1.0, 1.4, 1.0, lambda, market).unwrap()
}

#[test]
fn second_iterate_is_the_closed_form_optimum() {
    let mut rng = stream_rng(21, 0);
    for _ in 0..20 {
        let spec = random_spec(&mut rng);
        let w = lagrange_w(&spec).unwrap();
        let start = random_policy(&mut rng, spec.dim());
        let seq = improvement_sequence(start, &spec, w, 2).unwrap();
        let optimal = AffineGaussianPolicy::optimal(&spec).unwrap();
        assert!(seq[2].0.distance(&optimal) < 1e-10);
        for &(t, x) in &[(0.0, 1.0), (0.5, -0.3), (0.9, 2.5)] {
            let exact = optimal_value(t, x, w, &spec).unwrap();
            let v = seq[2].1.value(t, x);
            assert!((v - exact).abs() < 1e-10 * exact.abs().max(1.0), "{v} vs {exact}");
        }
    }
}

#[test]
fn values_never_increase_along_the_sequence() {
    let mut rng = stream_rng(22, 0);
    for _ in 0..20 {
        let spec = random_spec(&mut rng);
        let w = lagrange_w(&spec).unwrap();
        let start = random_policy(&mut rng, spec.dim());
        let seq = improvement_sequence(start, &spec, w, 3).unwrap();
        for _ in 0..25 {
            let t = rng.random_range(0.0..1.0);
            let x = rng.random_range(-2.0..4.0);
            for pair in seq.windows(2) {
                let (before, after) = (pair[0].1.value(t, x), pair[1].1.value(t, x));
                assert!(after <= before + 1e-12 * before.abs().max(1.0));
            }
        }
    }
}

#[test]
fn improvement_of_the_optimum_is_the_optimum() {
    let mut rng = stream_rng(23, 0);
    let spec = random_spec(&mut rng);
    let w = lagrange_w(&spec).unwrap();
    let optimal = AffineGaussianPolicy::optimal(&spec).unwrap();
    let again = improve(&value_of_policy(&optimal, &spec, w).unwrap(), &spec).unwrap();
    assert!(again.distance(&optimal) < 1e-12);
}

#[test]
fn degenerate_rate_branch_is_continuous() {
    let mut rng = stream_rng(24, 0);
    let spec = random_spec(&mut rng);
    let w = lagrange_w(&spec).unwrap();
    let probe = random_policy(&mut rng, spec.dim());
    let k_prime = value_of_policy(&probe, &spec, w).unwrap().quad_rate;
    let with_beta = |beta: f64| {
        let p = AffineGaussianPolicy::new(probe.alpha().clone(), probe.base_covariance().clone(), beta).unwrap();
        value_of_policy(&p, &spec, w).unwrap()
    };
    let exact = with_beta(-k_prime);
    assert!(exact.uses_degenerate_branch());
    let near = with_beta(-k_prime + 1e-6);
    assert!(!near.uses_degenerate_branch());
    for t in [0.0, 0.4, 1.0] {
        assert!((exact.value(t, 1.3) - near.value(t, 1.3)).abs() < 1e-5);
    }
}

#[test]
fn feynman_kac_matches_policy_value() {
    let mut rng = stream_rng(25, 0);
    for instance in 0..3u64 {
        let spec = random_spec(&mut rng);
        let w = lagrange_w(&spec).unwrap();
        let policy = random_policy(&mut rng, spec.dim());
        let value = value_of_policy(&policy, &spec, w).unwrap();
        let grid = PathGrid::covering(1.0, 400).unwrap();
        let terminals = simulate_terminal_wealth(
            &policy.feedback(1.0, w),
            &spec.market,
            &grid,
            spec.x0,
            100 + instance,
            20_000,
            SimulationMode::Aggregate,
        )
        .unwrap();
        let losses: Vec<f64> = terminals.iter().map(|x| (x - w).powi(2)).collect();
        let (mean, se) = mean_and_stderr(&losses);
        // the entropy integral is deterministic for a state-independent covariance
        let d = spec.dim() as f64;
        let h0 = policy.entropy(0.0, 1.0);
        let integral = h0 - 0.25 * d * policy.beta();
        let estimate = mean - spec.lambda * integral - (w - spec.target).powi(2);
        let exact = value.value(0.0, spec.x0);
        assert!((estimate - exact).abs() < 4.0 * se + 1e-3 * exact.abs().max(1.0),
            "instance {instance}: {estimate} vs {exact} (se {se})");
    }
}
