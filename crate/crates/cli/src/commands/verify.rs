//! `emv verify`: analytic and Monte-Carlo self-checks. Each check prints one
//! machine-readable line `CHECK <name> PASS|FAIL|SKIP <details>`; the lines
//! are also written to `verify.txt`. The exit code is the number of failed
//! checks.

use std::f64::consts::PI;
use std::fmt::Write as _;

use emv_core::closed_form::{
    classical_value, dirac_convergence_check, lagrange_w, optimal_value, value_gap, verify_hjb,
    GaussianLaw, HjbGrid, HjbOptions, OptimalFeedback, ProblemSpec,
};
use emv_core::emv::{gradient_relative_error, gradients, numerical_gradients, PolicyParams, Trajectory, ValueParams};
use emv_core::gaussian_policy::{improvement_sequence, AffineGaussianPolicy};
use emv_core::market_sim::{
    mean_and_stderr, random_market, simulate_terminal_wealth, standard_normals, stream_rng, MarketParams,
    PathGrid, SimulationMode, StreamRng,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{prepare_out, write};
use crate::config::{config, key, Key, RunConfig, MARKET_KEYS};
use crate::error::CliError;
use crate::Context;

pub const CHECKS: [(&str, &str); 6] = [
    ("hjb", "HJB residual"),
    ("improvement", "policy-improvement fixed point"),
    ("lambda_limit", "zero-temperature limit"),
    ("entropy", "Gaussian entropy"),
    ("gradients", "Bellman-cost gradient"),
    ("mc_mean", "Monte-Carlo terminal mean"),
];

pub fn schema() -> Vec<Key> {
    let mut keys: Vec<Key> = MARKET_KEYS.into_iter().collect();
    keys.extend([
        key("horizon", "1", "investment horizon in years"),
        key("z", "1.4", "target expected terminal wealth"),
        key("x0", "1", "initial discounted wealth"),
        key("lambda", "0.1", "exploration temperature (0 skips temperature checks)"),
        key("grid_t", "50", "HJB grid points in t"),
        key("grid_x", "50", "HJB grid points in x"),
        key("x_lo", "-1", "lowest wealth on the HJB grid"),
        key("x_hi", "4", "highest wealth on the HJB grid"),
        key("tol_hjb", "1e-6", "HJB residual tolerance"),
        key("random_markets", "3", "random markets per dimension 1, 2 and 5 in the HJB check"),
        key("improvement_starts", "100", "random starting policies"),
        key("tol_improvement", "1e-10", "fixed-point tolerance"),
        key("gradient_points", "50", "random points for the gradient check"),
        key("tol_gradient", "1e-5", "relative gradient tolerance"),
        key("tol_entropy", "1e-3", "entropy tolerance"),
        key("mc_paths", "100000", "Monte-Carlo paths"),
        key("mc_steps", "252", "Monte-Carlo time steps"),
        key("inject_fault", "none", "testing aid: none or value_sign (flips the quadratic term)"),
        key("seed", "0", "random seed"),
    ]);
    keys
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Setup {
    spec: ProblemSpec,
    seed: u64,
    fault: bool,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let market = cfg.market()?;
    let spec = ProblemSpec::new(
        cfg.f64("horizon")?,
        cfg.f64("z")?,
        cfg.f64("x0")?,
        cfg.f64("lambda")?,
        market,
    )
    .map_err(config)?;
    Ok(Setup {
        spec,
        seed: cfg.u64("seed")?,
        fault: cfg.choice("inject_fault", &["none", "value_sign"])? == "value_sign",
    })
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn hjb(cfg: &RunConfig, s: &Setup) -> emv_core::Result<Outcome> {
    if s.spec.lambda == 0.0 {
        return Ok(Outcome::Skip("lambda = 0".into()));
    }
    let tol = parse(cfg, "tol_hjb");
    let grid = HjbGrid::uniform(
        (0.0, s.spec.horizon),
        usize_key(cfg, "grid_t"),
        (parse(cfg, "x_lo"), parse(cfg, "x_hi")),
        usize_key(cfg, "grid_x"),
    );
    let mut specs = vec![s.spec.clone()];
    let mut rng = stream_rng(s.seed, 1);
    for d in [1, 2, 5] {
        for _ in 0..usize_key(cfg, "random_markets") {
            let market = random_market(&mut rng, d, 10.0, s.spec.market.r())?;
            specs.push(ProblemSpec::new(s.spec.horizon, s.spec.target, s.spec.x0, s.spec.lambda, market)?);
        }
    }
    let mut worst = 0.0f64;
    for spec in &specs {
        let w = lagrange_w(spec)?;
        let a = spec.market.rho_sq();
        let v = |t: f64, x: f64| {
            let v = optimal_value(t, x, w, spec).unwrap_or(f64::NAN);
            if s.fault {
                v - 2.0 * (x - w).powi(2) * (-a * (spec.horizon - t)).exp()
            } else {
                v
            }
        };
        match verify_hjb(&v, None, spec, &grid, HjbOptions::default()) {
            Ok(report) => worst = worst.max(report.max_residual),
            Err(e) => return Ok(Outcome::Fail(format!("d={} {e}", spec.dim()))),
        }
    }
    Ok(verdict(
        worst <= tol,
        format!("max_residual={} tol={} markets={}", sci(worst), sci(tol), specs.len()),
    ))
}

fn random_policy(rng: &mut StreamRng, d: usize) -> emv_core::Result<AffineGaussianPolicy> {
    let alpha = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.01;
    AffineGaussianPolicy::new(alpha, cov, rng.random_range(-1.0..1.0))
}

fn improvement(cfg: &RunConfig, s: &Setup) -> emv_core::Result<Outcome> {
    if s.spec.lambda == 0.0 {
        return Ok(Outcome::Skip("lambda = 0".into()));
    }
    let tol = parse(cfg, "tol_improvement");
    let mut rng = stream_rng(s.seed, 2);
    let (mut policy_gap, mut value_gap_max, mut increases) = (0.0f64, 0.0f64, 0usize);
    let n = usize_key(cfg, "improvement_starts");
    for i in 0..n {
        let spec = if i == 0 {
            s.spec.clone()
        } else {
            let d = rng.random_range(1..=5);
            let market = random_market(&mut rng, d, 10.0, s.spec.market.r())?;
            ProblemSpec::new(s.spec.horizon, s.spec.target, s.spec.x0, s.spec.lambda, market)?
        };
        let w = lagrange_w(&spec)?;
        let start = random_policy(&mut rng, spec.dim())?;
        let seq = improvement_sequence(start, &spec, w, 2)?;
        policy_gap = policy_gap.max(seq[2].0.distance(&AffineGaussianPolicy::optimal(&spec)?));
        for _ in 0..10 {
            let t = rng.random_range(0.0..spec.horizon);
            let x = rng.random_range(-1.0..4.0);
            let exact = optimal_value(t, x, w, &spec)?;
            value_gap_max = value_gap_max.max((seq[2].1.value(t, x) - exact).abs() / exact.abs().max(1.0));
            for pair in seq.windows(2) {
                let (before, after) = (pair[0].1.value(t, x), pair[1].1.value(t, x));
                if after > before + 1e-12 * before.abs().max(1.0) {
                    increases += 1;
                }
            }
        }
    }
    Ok(verdict(
        policy_gap <= tol && value_gap_max <= tol && increases == 0,
        format!(
            "starts={n} policy_gap={} value_gap={} increases={increases} tol={}",
            sci(policy_gap),
            sci(value_gap_max),
            sci(tol)
        ),
    ))
}

fn lambda_limit(s: &Setup) -> emv_core::Result<Outcome> {
    if s.spec.lambda == 0.0 {
        return Ok(Outcome::Skip("lambda = 0".into()));
    }
    let spec = &s.spec;
    let t = 0.0;
    let lambdas: Vec<f64> = (1..=8).map(|k| 10f64.powi(-k)).collect();
    let w = lagrange_w(spec)?;
    let dirac = dirac_convergence_check(t, spec.x0, w, spec, &lambdas)?;
    // |gap| is increasing in lambda below exp(-c - 1)
    let d = spec.dim() as f64;
    let tau = spec.horizon - t;
    let c = spec.market.rho_sq() * tau / 2.0 - spec.log_det_gram() / d + PI.ln();
    let monotone_below = (-c - 1.0).exp();
    let gaps: Vec<f64> = lambdas
        .iter()
        .map(|&l| value_gap(t, &spec.with_lambda(l)?).map(f64::abs))
        .collect::<emv_core::Result<_>>()?;
    let tail: Vec<f64> = lambdas
        .iter()
        .zip(&gaps)
        .filter(|(l, _)| **l <= monotone_below)
        .map(|(_, g)| *g)
        .collect();
    let monotone = tail.windows(2).all(|p| p[1] < p[0]);
    let vanishes = gaps[gaps.len() - 1] <= 1e-6;
    // the gap is the same at every (x, w)
    let mut rng = stream_rng(s.seed, 3);
    let mut spread = 0.0f64;
    for &l in &lambdas[..3] {
        let sl = spec.with_lambda(l)?;
        let gap = value_gap(t, &sl)?;
        for _ in 0..5 {
            let (x, w) = (rng.random_range(-1.0..3.0), rng.random_range(1.0..4.0));
            let direct = optimal_value(t, x, w, &sl)? - classical_value(t, x, w, &sl)?;
            spread = spread.max((direct - gap).abs() / gap.abs().max(1.0));
        }
    }
    let ok = dirac.max_mean_deviation <= 1e-12
        && dirac.slope_relative_spread <= 1e-10
        && monotone
        && vanishes
        && spread <= 1e-10;
    Ok(verdict(
        ok,
        format!(
            "mean_dev={} slope_spread={} gap_at_1e-8={} monotone_below={} state_free={}",
            sci(dirac.max_mean_deviation),
            sci(dirac.slope_relative_spread),
            sci(gaps[gaps.len() - 1]),
            sci(monotone_below),
            sci(spread)
        ),
    ))
}

fn entropy(cfg: &RunConfig, s: &Setup) -> emv_core::Result<Outcome> {
    let tol = parse(cfg, "tol_entropy");
    let mut rng = stream_rng(s.seed, 4);
    let mut worst = 0.0f64;
    // d = 1 by Simpson's rule on +-12 standard deviations
    let var = rng.random_range(0.01..2.0);
    let law = GaussianLaw::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, var))?;
    let sd = var.sqrt();
    let n = 4000;
    let h = 24.0 * sd / n as f64;
    let f = |u: f64| {
        let p = (-u * u / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let mut sum = f(-12.0 * sd) + f(12.0 * sd);
    for i in 1..n {
        sum += f(-12.0 * sd + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    worst = worst.max((sum * h / 3.0 - law.entropy()).abs());
    // d = 2, 3 by Monte Carlo of -ln p, with the density evaluated through
    // an LU inverse and determinant
    for d in [2, 3] {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let law = GaussianLaw::new(DVector::zeros(d), cov.clone())?;
        let (estimate, _) = mc_entropy(&cov, s.seed ^ d as u64, ENTROPY_SAMPLES);
        worst = worst.max((estimate - law.entropy()).abs());
    }
    Ok(verdict(worst <= tol, format!("max_error={} tol={}", sci(worst), sci(tol))))
}

const ENTROPY_SAMPLES: usize = 1 << 24;
const ENTROPY_CHUNKS: usize = 64;

/// Mean and standard error of `-ln p(u)` over `n` draws `u ~ N(m, cov)`,
/// with the density evaluated through an LU inverse and determinant. The
/// estimate depends on `u - m` only, so the draws are centred.
fn mc_entropy(cov: &DMatrix<f64>, seed: u64, n: usize) -> (f64, f64) {
    let d = cov.nrows();
    let chol = cov.clone().cholesky().expect("covariance is positive definite").l();
    let lu = cov.clone().lu();
    let norm = 0.5 * (d as f64 * (2.0 * PI).ln() + lu.determinant().ln());
    let inv = lu.try_inverse().expect("covariance is invertible");
    let per_chunk = n / ENTROPY_CHUNKS;
    let sums: Vec<(f64, f64)> = (0..ENTROPY_CHUNKS)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut z = vec![0.0; d];
            let mut c = vec![0.0; d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..per_chunk {
                standard_normals(&mut rng, &mut z);
                for i in 0..d {
                    c[i] = (0..=i).map(|j| chol[(i, j)] * z[j]).sum();
                }
                let mut q = 0.0;
                for i in 0..d {
                    q += c[i] * (0..d).map(|j| inv[(i, j)] * c[j]).sum::<f64>();
                }
                let v = norm + 0.5 * q;
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let total = (per_chunk * ENTROPY_CHUNKS) as f64;
    let s1: f64 = sums.iter().map(|p| p.0).sum();
    let s2: f64 = sums.iter().map(|p| p.1).sum();
    let mean = s1 / total;
    let var = (s2 / total - mean * mean).max(0.0);
    (mean, (var / total).sqrt())
}

fn gradients_check(cfg: &RunConfig, s: &Setup) -> emv_core::Result<Outcome> {
    let tol = parse(cfg, "tol_gradient");
    let mut rng = stream_rng(s.seed, 5);
    let n = usize_key(cfg, "gradient_points");
    let mut worst = 0.0f64;
    for _ in 0..n {
        let d = rng.random_range(1..=3);
        let theta = ValueParams::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.0),
        )?;
        let mut l = DMatrix::zeros(d, d);
        for i in 0..d {
            l[(i, i)] = rng.random_range(0.3..2.0);
            for j in 0..i {
                l[(i, j)] = rng.random_range(-0.5..0.5);
            }
        }
        let phi1 = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let phi = PolicyParams::new(phi1, l, rng.random_range(-0.5..0.5))?;
        let mut batch = Vec::new();
        for _ in 0..2 {
            let mut x = vec![s.spec.x0];
            for _ in 0..20 {
                let last = x[x.len() - 1];
                x.push(last + rng.random_range(-0.2..0.2));
            }
            batch.push(Trajectory::new(1.0, 0.05, x, vec![])?);
        }
        let lambda = if s.spec.lambda > 0.0 { s.spec.lambda } else { rng.random_range(0.01..1.0) };
        let w = rng.random_range(0.5..3.0);
        let analytic = gradients(&theta, &phi, &batch, lambda, w)?;
        let numeric = numerical_gradients(&theta, &phi, &batch, lambda, w, 1e-5)?;
        worst = worst.max(gradient_relative_error(&analytic, &numeric));
    }
    Ok(verdict(worst <= tol, format!("points={n} max_rel_error={} tol={}", sci(worst), sci(tol))))
}

/// Keeps the per-path streams of the Monte-Carlo check apart from the
/// streams the other checks draw from.
const MC_SALT: u64 = 0x6d63_5f6d_6561_6e00;

fn mc_mean(cfg: &RunConfig, s: &Setup) -> emv_core::Result<Outcome> {
    let spec = &s.spec;
    let w = lagrange_w(spec)?;
    let policy = OptimalFeedback::new(spec, w)?;
    let grid = PathGrid::covering(spec.horizon, usize_key(cfg, "mc_steps"))?;
    let market: &MarketParams = &spec.market;
    let terminal = simulate_terminal_wealth(
        &policy,
        market,
        &grid,
        spec.x0,
        s.seed ^ MC_SALT,
        usize_key(cfg, "mc_paths"),
        SimulationMode::Aggregate,
    )?;
    let (mean, se) = mean_and_stderr(&terminal);
    let z_score = (mean - spec.target) / se;
    Ok(verdict(
        z_score.abs() <= 3.0,
        format!("mean={mean:.6} z={} stderr={} z_score={z_score:.3}", spec.target, sci(se)),
    ))
}

fn parse(cfg: &RunConfig, key: &str) -> f64 {
    cfg.f64(key).expect("validated before the checks run")
}

fn usize_key(cfg: &RunConfig, key: &str) -> usize {
    cfg.usize(key).expect("validated before the checks run")
}

fn validate_numbers(cfg: &RunConfig) -> Result<(), CliError> {
    for k in ["tol_hjb", "tol_improvement", "tol_gradient", "tol_entropy", "x_lo", "x_hi"] {
        cfg.f64(k)?;
    }
    for k in ["grid_t", "grid_x", "random_markets", "improvement_starts", "gradient_points"] {
        cfg.usize(k)?;
    }
    for k in ["mc_paths", "mc_steps"] {
        if cfg.usize(k)? < 2 {
            return Err(CliError::Config(format!("`{k}` must be at least 2")));
        }
    }
    if cfg.f64("x_lo")? >= cfg.f64("x_hi")? {
        return Err(CliError::Config("`x_lo` must be below `x_hi`".into()));
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, ctx: &Context, selected: &[&str]) -> Result<(), CliError> {
    let s = setup(cfg)?;
    validate_numbers(cfg)?;
    prepare_out(ctx, cfg, "verify")?;
    let mut report = String::new();
    let mut failures = 0;
    for (name, _) in CHECKS {
        if !selected.is_empty() && !selected.contains(&name) {
            continue;
        }
        let outcome = match name {
            "hjb" => hjb(cfg, &s),
            "improvement" => improvement(cfg, &s),
            "lambda_limit" => lambda_limit(&s),
            "entropy" => entropy(cfg, &s),
            "gradients" => gradients_check(cfg, &s),
            _ => mc_mean(cfg, &s),
        }
        .unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let line = match outcome {
            Outcome::Pass(d) => format!("CHECK {name} PASS {d}"),
            Outcome::Fail(d) => {
                failures += 1;
                format!("CHECK {name} FAIL {d}")
            }
            Outcome::Skip(d) => format!("CHECK {name} SKIP {d}"),
        };
        println!("{line}");
        let _ = writeln!(report, "{line}");
    }
    write(&ctx.out.join("verify.txt"), &report)?;
    if failures > 0 {
        Err(CliError::FailedChecks(failures))
    } else {
        Ok(())
    }
}
