use nalgebra::{DMatrix, DVector};

use super::params::{PolicyParams, Trajectory, ValueParams};
use crate::error::{EmvError, Result};

/// `delta_i = (V(t_{i+1}, x_{i+1}) - V(t_i, x_i)) / dt - lambda H(pi, t_i)`.
pub fn bellman_errors(
    theta: &ValueParams,
    phi: &PolicyParams,
    traj: &Trajectory,
    lambda: f64,
    w: f64,
) -> Vec<f64> {
    let big_t = traj.horizon();
    let dt = traj.dt();
    let x = traj.wealth();
    let mut v_prev = theta.value(0.0, x[0], w, big_t);
    (0..traj.steps())
        .map(|i| {
            let t = traj.time(i);
            let v_next = theta.value(traj.time(i + 1), x[i + 1], w, big_t);
            let delta = (v_next - v_prev) / dt - lambda * phi.entropy(t, big_t);
            v_prev = v_next;
            delta
        })
        .collect()
}

/// `C = (1/2) sum_i delta_i^2 dt` over every transition of the batch.
pub fn cost(
    theta: &ValueParams,
    phi: &PolicyParams,
    batch: &[Trajectory],
    lambda: f64,
    w: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(EmvError::invalid("cost needs a non-empty batch"));
    }
    Ok(batch
        .iter()
        .map(|traj| {
            let dt = traj.dt();
            bellman_errors(theta, phi, traj, lambda, w)
                .iter()
                .map(|d| 0.5 * d * d * dt)
                .sum::<f64>()
        })
        .sum())
}

/// Partial derivatives of `C`. `phi1` and `theta0` receive none by
/// construction; they are kept for a uniform parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient {
    pub theta: [f64; 4],
    pub phi1: DVector<f64>,
    pub phi2_chol: DMatrix<f64>,
    pub phi3: f64,
}

pub fn gradients(
    theta: &ValueParams,
    phi: &PolicyParams,
    batch: &[Trajectory],
    lambda: f64,
    w: f64,
) -> Result<CostGradient> {
    if batch.is_empty() {
        return Err(EmvError::invalid("gradients need a non-empty batch"));
    }
    let d = phi.dim();
    let mut g = CostGradient {
        theta: [0.0; 4],
        phi1: DVector::zeros(d),
        phi2_chol: DMatrix::zeros(d, d),
        phi3: 0.0,
    };
    let mut diag_sum = 0.0;
    for traj in batch {
        let big_t = traj.horizon();
        let dt = traj.dt();
        let x = traj.wealth();
        let deltas = bellman_errors(theta, phi, traj, lambda, w);
        let mut dv3_prev = theta.d_theta3(0.0, x[0], w, big_t);
        for (i, delta) in deltas.iter().enumerate() {
            let (t0, t1) = (traj.time(i), traj.time(i + 1));
            let dv3_next = theta.d_theta3(t1, x[i + 1], w, big_t);
            let weight = delta * dt;
            g.theta[1] += weight * (t1 - t0) / dt;
            g.theta[2] += weight * (t1 * t1 - t0 * t0) / dt;
            g.theta[3] += weight * (dv3_next - dv3_prev) / dt;
            g.phi3 += weight * (-lambda * 0.5 * d as f64 * (big_t - t0));
            diag_sum += weight;
            dv3_prev = dv3_next;
        }
    }
    // d delta_i / d L_jj = -lambda / L_jj for every transition
    let l = phi.phi2_chol();
    for j in 0..d {
        g.phi2_chol[(j, j)] = -lambda / l[(j, j)] * diag_sum;
    }
    Ok(g)
}

impl CostGradient {
    /// Flat layout: `theta0..theta3`, `phi1`, lower triangle of `phi2_chol`
    /// row by row, `phi3`.
    pub fn to_vec(&self) -> Vec<f64> {
        let d = self.phi1.len();
        let mut out = self.theta.to_vec();
        out.extend(self.phi1.iter());
        for i in 0..d {
            for j in 0..=i {
                out.push(self.phi2_chol[(i, j)]);
            }
        }
        out.push(self.phi3);
        out
    }
}

/// Central finite differences of [`cost`] with step `h`, in the layout of
/// [`CostGradient`].
pub fn numerical_gradients(
    theta: &ValueParams,
    phi: &PolicyParams,
    batch: &[Trajectory],
    lambda: f64,
    w: f64,
    h: f64,
) -> Result<CostGradient> {
    let d = phi.dim();
    let c = |th: &ValueParams, ph: &PolicyParams| cost(th, ph, batch, lambda, w);
    let central = |plus: f64, minus: f64| (plus - minus) / (2.0 * h);
    let mut g = CostGradient {
        theta: [0.0; 4],
        phi1: DVector::zeros(d),
        phi2_chol: DMatrix::zeros(d, d),
        phi3: 0.0,
    };
    for k in 0..4 {
        let shifted = |s: f64| {
            let mut th = *theta;
            match k {
                0 => th.theta0 += s,
                1 => th.theta1 += s,
                2 => th.theta2 += s,
                _ => th.theta3 += s,
            }
            th
        };
        g.theta[k] = central(c(&shifted(h), phi)?, c(&shifted(-h), phi)?);
    }
    for j in 0..d {
        let shifted = |s: f64| {
            let mut ph = phi.clone();
            ph.phi1[j] += s;
            ph
        };
        g.phi1[j] = central(c(theta, &shifted(h))?, c(theta, &shifted(-h))?);
    }
    for i in 0..d {
        for j in 0..=i {
            let shifted = |s: f64| -> Result<PolicyParams> {
                let mut ph = phi.clone();
                let mut l = ph.phi2_chol().clone();
                l[(i, j)] += s;
                ph.set_phi2_chol(l)?;
                Ok(ph)
            };
            g.phi2_chol[(i, j)] = central(c(theta, &shifted(h)?)?, c(theta, &shifted(-h)?)?);
        }
    }
    let shifted = |s: f64| {
        let mut ph = phi.clone();
        ph.phi3 += s;
        ph
    };
    g.phi3 = central(c(theta, &shifted(h))?, c(theta, &shifted(-h))?);
    Ok(g)
}

/// `max |a - b| / max(max |a|, max |b|)` over the flattened gradients.
pub fn gradient_relative_error(a: &CostGradient, b: &CostGradient) -> f64 {
    let (a, b) = (a.to_vec(), b.to_vec());
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(&b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
