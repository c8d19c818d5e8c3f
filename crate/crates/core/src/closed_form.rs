//! Analytic solutions of the classical and the entropy-regularized
//! (exploratory) mean-variance problems, and residual-based verification.
//!
//! Notation: `a = rho' rho`, `tau = T - t`, `|.|` is a determinant.
//!
//! Note on the logarithm `ln(|sigma' sigma| / (pi lambda)^d)` that appears in
//! the optimal value: `pi` there is the circle constant, not a policy.
//!
//! The optimal value implemented here is
//!
//! ```text
//! V(t, x; w) = (x - w)^2 e^{-a tau} + (lambda d / 4) a (T^2 - t^2)
//!              - (lambda d / 2) (a T - (1/d) ln|sigma' sigma| + ln(pi lambda)) tau
//!              - (w - z)^2
//! ```
//!
//! which solves the reduced HJB equation exactly for every `d`. For `d = 1`
//! it coincides with the frequently quoted form `... - (1/d) ln(|sigma'sigma| / (pi lambda))`;
//! for `d > 1` that form leaves a residual of `(lambda / 2)(1 - d) ln(pi lambda)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{EmvError, Result};
use crate::linalg;
use crate::market_sim::{ExploratoryPolicy, MarketParams};

/// Horizon, target, initial wealth, temperature and market of one MV problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub target: f64,
    pub x0: f64,
    pub lambda: f64,
    pub market: MarketParams,
    log_det_gram: f64,
}

impl ProblemSpec {
    pub fn new(horizon: f64, target: f64, x0: f64, lambda: f64, market: MarketParams) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(EmvError::invalid("horizon T must be positive"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(EmvError::invalid("temperature lambda must be >= 0"));
        }
        if !target.is_finite() || !x0.is_finite() {
            return Err(EmvError::invalid("target and initial wealth must be finite"));
        }
        let log_det_gram = linalg::log_det_spd(&market.gram(), "sigma' sigma")
            .map_err(|_| EmvError::DegenerateMarket("sigma' sigma is not positive definite".into()))?;
        Ok(Self {
            horizon,
            target,
            x0,
            lambda,
            market,
            log_det_gram,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.horizon, self.target, self.x0, lambda, self.market.clone())
    }

    pub fn dim(&self) -> usize {
        self.market.dim()
    }

    /// `ln|sigma' sigma|`.
    pub fn log_det_gram(&self) -> f64 {
        self.log_det_gram
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(EmvError::Domain {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    fn require_exploration(&self) -> Result<()> {
        if self.lambda > 0.0 {
            Ok(())
        } else {
            Err(EmvError::invalid("exploratory formulas need lambda > 0"))
        }
    }
}

/// Multivariate normal law with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(EmvError::invalid("mean and covariance dimensions differ"));
        }
        let chol = linalg::cholesky_lower(&covariance, "gaussian covariance")?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Differential entropy `(d/2) ln(2 pi e) + (1/2) ln|C|`.
    pub fn entropy(&self) -> f64 {
        let d = self.mean.len() as f64;
        0.5 * d * (2.0 * PI * std::f64::consts::E).ln() + 0.5 * linalg::log_det_lower(&self.chol)
    }
}

/// Lagrange multiplier making the optimal terminal mean equal the target:
/// `w = (z e^{aT} - x0) / (e^{aT} - 1)`.
pub fn lagrange_w(spec: &ProblemSpec) -> Result<f64> {
    lagrange_w_for(spec.x0, spec.target, spec.market.rho_sq(), spec.horizon)
}

/// Same formula for explicit `(x0, z, rho'rho, T)`.
pub fn lagrange_w_for(x0: f64, target: f64, rho_sq: f64, horizon: f64) -> Result<f64> {
    let growth = (rho_sq * horizon).exp_m1();
    if !(growth > 0.0) {
        return Err(EmvError::DegenerateMarket(
            "zero market price of risk: the target is unreachable".into(),
        ));
    }
    // z + (z - x0) / (e^{aT} - 1), stable for both small and large aT
    Ok(target + (target - x0) / growth)
}

/// Optimal exploratory value; `lambda = 0` falls back to the classical value.
pub fn optimal_value(t: f64, x: f64, w: f64, spec: &ProblemSpec) -> Result<f64> {
    spec.check_time(t)?;
    if spec.lambda == 0.0 {
        return classical_value(t, x, w, spec);
    }
    Ok(classical_value(t, x, w, spec)? + gap_unchecked(t, spec))
}

/// Optimal Gaussian feedback law at `(t, x)`:
/// `N(-sigma^{-1} rho (x - w), (sigma' sigma)^{-1} (lambda / 2) e^{a (T - t)})`.
pub fn optimal_policy(t: f64, x: f64, w: f64, spec: &ProblemSpec) -> Result<GaussianLaw> {
    spec.check_time(t)?;
    spec.require_exploration()?;
    let mean = classical_control(t, x, w, spec)?;
    let scale = 0.5 * spec.lambda * (spec.market.rho_sq() * (spec.horizon - t)).exp();
    let cov = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")? * scale;
    GaussianLaw::new(mean, cov)
}

/// Classical value `(x - w)^2 e^{-a (T - t)} - (w - z)^2`.
pub fn classical_value(t: f64, x: f64, w: f64, spec: &ProblemSpec) -> Result<f64> {
    spec.check_time(t)?;
    let a = spec.market.rho_sq();
    Ok((x - w).powi(2) * (-a * (spec.horizon - t)).exp() - (w - spec.target).powi(2))
}

/// Classical optimal allocation `-sigma^{-1} rho (x - w)`.
pub fn classical_control(t: f64, x: f64, w: f64, spec: &ProblemSpec) -> Result<DVector<f64>> {
    spec.check_time(t)?;
    Ok(spec.market.sigma_inv_rho()? * (-(x - w)))
}

/// Exploratory minus classical optimal value; depends on `t` only.
pub fn value_gap(t: f64, spec: &ProblemSpec) -> Result<f64> {
    spec.check_time(t)?;
    spec.require_exploration()?;
    Ok(gap_unchecked(t, spec))
}

fn gap_unchecked(t: f64, spec: &ProblemSpec) -> f64 {
    let d = spec.dim() as f64;
    let a = spec.market.rho_sq();
    let big_t = spec.horizon;
    let lambda = spec.lambda;
    let level = a * big_t - spec.log_det_gram / d + (PI * lambda).ln();
    0.25 * lambda * d * a * (big_t * big_t - t * t) - 0.5 * lambda * d * level * (big_t - t)
}

/// The optimal feedback policy as a simulatable object. With `lambda = 0` the
/// covariance factor is zero and the policy is the classical one.
#[derive(Debug, Clone)]
pub struct OptimalFeedback {
    horizon: f64,
    w: f64,
    rho_sq: f64,
    gain: DVector<f64>,
    base_factor: DMatrix<f64>,
}

impl OptimalFeedback {
    pub fn new(spec: &ProblemSpec, w: f64) -> Result<Self> {
        let d = spec.dim();
        let base_factor = if spec.lambda > 0.0 {
            let cov = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")? * (0.5 * spec.lambda);
            linalg::cholesky_lower(&cov, "optimal base covariance")?
        } else {
            DMatrix::zeros(d, d)
        };
        Ok(Self {
            horizon: spec.horizon,
            w,
            rho_sq: spec.market.rho_sq(),
            gain: spec.market.sigma_inv_rho()?,
            base_factor,
        })
    }
}

impl ExploratoryPolicy for OptimalFeedback {
    fn dim(&self) -> usize {
        self.gain.len()
    }

    fn mean_into(&self, _t: f64, x: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(self.gain.iter()) {
            *o = -g * (x - self.w);
        }
    }

    fn covariance_factor(&self, t: f64, _x: f64) -> Result<DMatrix<f64>> {
        Ok(&self.base_factor * (0.5 * self.rho_sq * (self.horizon - t)).exp())
    }
}

/// Points at which an HJB residual is evaluated.
#[derive(Debug, Clone)]
pub struct HjbGrid {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
}

impl HjbGrid {
    pub fn uniform(t_range: (f64, f64), nt: usize, x_range: (f64, f64), nx: usize) -> Self {
        let lin = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
            if n <= 1 {
                return vec![lo];
            }
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Self {
            times: lin(t_range, nt),
            wealth: lin(x_range, nx),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HjbOptions {
    /// Step in `t`.
    pub h_t: f64,
    /// Step in `x`. Three-point formulas are exact for quadratics, so a wide
    /// step only trades truncation for less cancellation.
    pub h_x: f64,
    pub richardson: bool,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            h_t: 1e-3,
            h_x: 1e-2,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HjbReport {
    pub max_residual: f64,
    pub worst_point: (f64, f64),
    /// Largest entrywise distance between the supplied policy and the Gibbs
    /// policy implied by the finite-difference derivatives.
    pub max_policy_mismatch: Option<f64>,
    pub points: usize,
}

/// A candidate Gaussian policy `(t, x) -> (mean, covariance)`.
pub type PolicyFn<'a> = &'a dyn Fn(f64, f64) -> Result<(DVector<f64>, DMatrix<f64>)>;

#[derive(Debug, Clone, Copy)]
struct Derivatives {
    vt: f64,
    vx: f64,
    vxx: f64,
}

// three-point formulas on the floating-point offsets actually realised
fn three_point(f: &dyn Fn(f64) -> f64, c: f64, h: f64) -> (f64, f64) {
    let (p, m) = (c + h, c - h);
    let (hp, hm) = (p - c, c - m);
    let (fp, f0, fm) = (f(p), f(c), f(m));
    let denom = hp * hm * (hp + hm);
    let first = (hm * hm * fp - hp * hp * fm + (hp * hp - hm * hm) * f0) / denom;
    let second = 2.0 * (hm * fp - (hp + hm) * f0 + hp * fm) / denom;
    (first, second)
}

// first derivative at `c` from the nodes `c`, `c + h1`, `c + h2`
fn one_sided(f: &dyn Fn(f64) -> f64, c: f64, h1: f64, h2: f64) -> f64 {
    let (p1, p2) = (c + h1, c + h2);
    let (h1, h2) = (p1 - c, p2 - c);
    let (f0, f1, f2) = (f(c), f(p1), f(p2));
    -(1.0 / h1 + 1.0 / h2) * f0 - h2 / (h1 * (h1 - h2)) * f1 - h1 / (h2 * (h2 - h1)) * f2
}

// central in t where the stencil fits inside [0, horizon], one-sided otherwise
fn time_derivative(f: &dyn Fn(f64) -> f64, t: f64, h: f64, horizon: f64) -> f64 {
    if t - h >= 0.0 && t + h <= horizon {
        three_point(f, t, h).0
    } else if t + 2.0 * h <= horizon {
        one_sided(f, t, h, 2.0 * h)
    } else {
        one_sided(f, t, -h, -2.0 * h)
    }
}

fn derivatives(v: &dyn Fn(f64, f64) -> f64, t: f64, x: f64, horizon: f64, opts: HjbOptions) -> Derivatives {
    let at = |scale: f64| {
        let vt = time_derivative(&|s| v(s, x), t, scale * opts.h_t, horizon);
        let (vx, vxx) = three_point(&|y| v(t, y), x, scale * opts.h_x);
        Derivatives { vt, vx, vxx }
    };
    let coarse = at(1.0);
    if !opts.richardson {
        return coarse;
    }
    let fine = at(0.5);
    let ex = |f: f64, c: f64| (4.0 * f - c) / 3.0;
    Derivatives {
        vt: ex(fine.vt, coarse.vt),
        vx: ex(fine.vx, coarse.vx),
        vxx: ex(fine.vxx, coarse.vxx),
    }
}

/// Maximum absolute residual of the reduced HJB equation
/// `v_t - (a/2) v_x^2 / v_xx + (lambda/2)(d - d ln(2 pi e lambda / v_xx) + ln|sigma' sigma|)`
/// over the grid, with derivatives from three-point differences (one-sided
/// in `t` at the ends of the horizon). With
/// `lambda = 0` the classical equation `v_t - (a/2) v_x^2 / v_xx` is used.
pub fn verify_hjb(
    value_fn: &dyn Fn(f64, f64) -> f64,
    policy_fn: Option<PolicyFn<'_>>,
    spec: &ProblemSpec,
    grid: &HjbGrid,
    opts: HjbOptions,
) -> Result<HjbReport> {
    if !(opts.h_t > 0.0) || !(opts.h_x > 0.0) {
        return Err(EmvError::invalid("finite-difference step must be positive"));
    }
    let d = spec.dim() as f64;
    let a = spec.market.rho_sq();
    let lambda = spec.lambda;
    let gram_inv = linalg::inverse_spd(&spec.market.gram(), "sigma' sigma")?;
    let gain = spec.market.sigma_inv_rho()?;

    let mut report = HjbReport {
        max_residual: 0.0,
        worst_point: (f64::NAN, f64::NAN),
        max_policy_mismatch: policy_fn.map(|_| 0.0),
        points: 0,
    };
    if let Some(&t) = grid.times.iter().find(|&&t| !(0.0..=spec.horizon).contains(&t)) {
        return Err(EmvError::Domain { t, horizon: spec.horizon });
    }
    if 2.0 * opts.h_t > spec.horizon {
        return Err(EmvError::invalid("finite-difference step too large for the horizon"));
    }
    for &t in &grid.times {
        for &x in &grid.wealth {
            let der = derivatives(value_fn, t, x, spec.horizon, opts);
            if !(der.vxx > 0.0) {
                return Err(EmvError::Convexity { t, x, vxx: der.vxx });
            }
            let mut residual = der.vt - 0.5 * a * der.vx * der.vx / der.vxx;
            if lambda > 0.0 {
                residual += 0.5
                    * lambda
                    * (d - d * (2.0 * PI * std::f64::consts::E * lambda / der.vxx).ln()
                        + spec.log_det_gram());
            }
            let residual = residual.abs();
            if !(residual <= report.max_residual) {
                report.max_residual = residual;
                report.worst_point = (t, x);
            }
            if let Some(policy) = policy_fn {
                let (mean, cov) = policy(t, x)?;
                let implied_mean = &gain * (-der.vx / der.vxx);
                let mut gap = (mean - implied_mean).amax();
                if lambda > 0.0 {
                    let implied_cov = &gram_inv * (lambda / der.vxx);
                    gap = gap.max((cov - implied_cov).amax());
                }
                let worst = report.max_policy_mismatch.get_or_insert(0.0);
                *worst = worst.max(gap);
            }
            report.points += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DiracRow {
    pub lambda: f64,
    pub mean: DVector<f64>,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct DiracReport {
    pub rows: Vec<DiracRow>,
    /// Largest distance between any policy mean and the classical control.
    pub max_mean_deviation: f64,
    /// Relative spread of `max_eigenvalue / lambda` across the sequence.
    pub slope_relative_spread: f64,
    pub slope: f64,
}

/// Policy mean and largest covariance eigenvalue along a decreasing
/// temperature sequence.
pub fn dirac_convergence_check(
    t: f64,
    x: f64,
    w: f64,
    spec: &ProblemSpec,
    lambdas: &[f64],
) -> Result<DiracReport> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(EmvError::invalid("lambda sequence must be non-empty and positive"));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(EmvError::invalid("lambda sequence must be strictly decreasing"));
    }
    let u_star = classical_control(t, x, w, spec)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let law = optimal_policy(t, x, w, &spec.with_lambda(lambda)?)?;
        rows.push(DiracRow {
            lambda,
            mean: law.mean().clone(),
            max_eigenvalue: linalg::max_eigenvalue(law.covariance()),
        });
    }
    let max_mean_deviation = rows
        .iter()
        .map(|r| (&r.mean - &u_star).amax())
        .fold(0.0, f64::max);
    let slopes: Vec<f64> = rows.iter().map(|r| r.max_eigenvalue / r.lambda).collect();
    let slope = slopes[0];
    let slope_relative_spread = slopes
        .iter()
        .map(|s| ((s - slope) / slope).abs())
        .fold(0.0, f64::max);
    Ok(DiracReport {
        rows,
        max_mean_deviation,
        slope_relative_spread,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec(lambda: f64) -> ProblemSpec {
        // sigma = 0.2, rho = 0.4
        let market = MarketParams::scalar(0.10, 0.20, 0.02).unwrap();
        ProblemSpec::new(1.0, 1.4, 1.0, lambda, market).unwrap()
    }

    #[test]
    fn lagrange_hand_cases() {
        assert!((lagrange_w_for(1.0, 1.4, 0.25, 1.0).unwrap() - 2.80833).abs() < 1e-5);
        assert_eq!(lagrange_w_for(1.3, 1.3, 0.25, 1.0).unwrap(), 1.3);
        assert!((lagrange_w_for(1.0, 1.4, 800.0, 1.0).unwrap() - 1.4).abs() < 1e-12);
        assert!((lagrange_w(&scalar_spec(0.1)).unwrap() - 3.70533).abs() < 1e-5);
    }

    #[test]
    fn lagrange_rejects_zero_risk_premium() {
        let market = MarketParams::scalar(0.02, 0.2, 0.02).unwrap();
        let spec = ProblemSpec::new(1.0, 1.4, 1.0, 0.1, market).unwrap();
        assert!(matches!(lagrange_w(&spec), Err(EmvError::DegenerateMarket(_))));
    }

    #[test]
    fn terminal_values() {
        let spec = scalar_spec(0.1);
        let v = optimal_value(1.0, 2.0, 3.0, &spec).unwrap();
        assert!((v - (-1.56)).abs() < 1e-12);
        let vc = classical_value(1.0, 2.0, 3.0, &spec).unwrap();
        assert!((vc - (-1.56)).abs() < 1e-12);
        for lambda in [1e-3, 0.1, 5.0] {
            assert_eq!(value_gap(1.0, &spec.with_lambda(lambda).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn optimal_value_term_by_term() {
        let spec = scalar_spec(0.1);
        let (t, x, w, z) = (0.0, 1.0, 3.70533, 1.4);
        let (lambda, a, big_t, s2) = (0.1_f64, 0.16_f64, 1.0_f64, 0.04_f64);
        let expected = (x - w) * (x - w) * (-a * (big_t - t)).exp()
            + lambda / 4.0 * a * (big_t * big_t - t * t)
            - lambda / 2.0 * (a * big_t - (s2 / (PI * lambda)).ln()) * (big_t - t)
            - (w - z) * (w - z);
        let got = optimal_value(t, x, w, &spec).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn optimal_policy_hand_case() {
        let spec = scalar_spec(0.1);
        let law = optimal_policy(0.0, 1.0, 3.70533, &spec).unwrap();
        assert!((law.mean()[0] - 5.41066).abs() < 1e-9);
        assert!((law.covariance()[(0, 0)] - 1.25 * 0.16_f64.exp()).abs() < 1e-12);
        assert!((law.covariance()[(0, 0)] - 1.4669).abs() < 1e-4);
        let at_w = optimal_policy(0.3, 2.0, 2.0, &spec).unwrap();
        assert_eq!(at_w.mean()[0], 0.0);
        let terminal = optimal_policy(1.0, 2.0, 2.0, &spec).unwrap();
        assert!((terminal.covariance()[(0, 0)] - 0.05 / 0.04).abs() < 1e-12);
    }

    #[test]
    fn classical_control_is_policy_mean() {
        let spec = scalar_spec(0.3);
        for &(t, x) in &[(0.0, 1.0), (0.5, -2.0), (0.9, 4.0)] {
            let u = classical_control(t, x, 2.5, &spec).unwrap();
            let law = optimal_policy(t, x, 2.5, &spec).unwrap();
            assert!((u - law.mean()).amax() < 1e-15);
        }
        assert_eq!(classical_control(0.2, 2.5, 2.5, &spec).unwrap()[0], 0.0);
        assert!((classical_value(0.2, 2.5, 2.5, &spec).unwrap() + 1.1 * 1.1).abs() < 1e-12);
    }

    #[test]
    fn time_outside_horizon_is_domain_error() {
        let spec = scalar_spec(0.1);
        assert!(matches!(optimal_value(1.5, 0.0, 0.0, &spec), Err(EmvError::Domain { .. })));
        assert!(matches!(optimal_policy(-0.1, 0.0, 0.0, &spec), Err(EmvError::Domain { .. })));
    }

    #[test]
    fn zero_lambda_routes_to_classical() {
        let spec = scalar_spec(0.0);
        assert_eq!(
            optimal_value(0.3, 1.0, 2.0, &spec).unwrap(),
            classical_value(0.3, 1.0, 2.0, &spec).unwrap()
        );
        assert!(optimal_policy(0.3, 1.0, 2.0, &spec).is_err());
    }

    #[test]
    fn hjb_residual_vanishes_for_closed_form() {
        let spec = scalar_spec(0.1);
        let w = lagrange_w(&spec).unwrap();
        let grid = HjbGrid::uniform((0.01, 0.99), 20, (w - 2.0, w + 2.0), 20);
        let v = |t: f64, x: f64| optimal_value(t, x, w, &spec).unwrap();
        let p = |t: f64, x: f64| {
            let law = optimal_policy(t, x, w, &spec)?;
            Ok((law.mean().clone(), law.covariance().clone()))
        };
        let report = verify_hjb(&v, Some(&p), &spec, &grid, HjbOptions::default()).unwrap();
        assert!(report.max_residual < 1e-6, "{report:?}");
        assert!(report.max_policy_mismatch.unwrap() < 1e-6);
    }

    #[test]
    fn hjb_detects_perturbation_and_concavity() {
        let spec = scalar_spec(0.1);
        let w = 3.0;
        let grid = HjbGrid::uniform((0.1, 0.9), 5, (0.0, 2.0), 5);
        let v = |t: f64, x: f64| optimal_value(t, x, w, &spec).unwrap() + 0.1 * t;
        let report = verify_hjb(&v, None, &spec, &grid, HjbOptions::default()).unwrap();
        assert!(report.max_residual > 0.05);
        let concave = |_t: f64, x: f64| -(x * x);
        assert!(matches!(
            verify_hjb(&concave, None, &spec, &grid, HjbOptions::default()),
            Err(EmvError::Convexity { .. })
        ));
    }

    #[test]
    fn richardson_keeps_residual_small() {
        let spec = scalar_spec(0.2);
        let grid = HjbGrid::uniform((0.1, 0.9), 6, (-1.0, 3.0), 6);
        let v = |t: f64, x: f64| optimal_value(t, x, 2.0, &spec).unwrap();
        let opts = HjbOptions {
            h_t: 1e-3,
            h_x: 1e-3,
            richardson: true,
        };
        assert!(verify_hjb(&v, None, &spec, &grid, opts).unwrap().max_residual < 1e-6);
    }

    #[test]
    fn dirac_report_linear_covariance() {
        let spec = scalar_spec(0.1);
        let lambdas = [0.1, 0.05, 0.025];
        let report = dirac_convergence_check(0.2, 1.0, 3.0, &spec, &lambdas).unwrap();
        assert!(report.max_mean_deviation == 0.0);
        let r = &report.rows;
        assert!((r[1].max_eigenvalue / r[0].max_eigenvalue - 0.5).abs() < 1e-14);
        assert!(dirac_convergence_check(0.2, 1.0, 3.0, &spec, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn gaussian_law_entropy_scalar() {
        let law = GaussianLaw::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!((law.entropy() - 1.418_938_533_204_672_7).abs() < 1e-14);
    }
}
