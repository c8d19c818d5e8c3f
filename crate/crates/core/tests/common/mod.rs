#![allow(dead_code)]

use emv_core::market_sim::MarketParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_market(rng: &mut impl Rng, d: usize) -> MarketParams {
    emv_core::market_sim::random_market(rng, d, 10.0, 0.02).unwrap()
}

/// Five correlated assets with volatility 0.2 each and `rho = 0.4 * 1`.
pub fn five_asset_market() -> MarketParams {
    let mut s = DMatrix::from_diagonal_element(5, 5, 1.0);
    for i in 0..5 {
        for j in 0..5 {
            if i != j {
                s[(i, j)] = 0.15 * (((i * 3 + j * 7) % 5) as f64 - 2.0) / 2.0;
            }
        }
    }
    for j in 0..5 {
        let n = s.column(j).norm();
        for i in 0..5 {
            s[(i, j)] *= 0.2 / n;
        }
    }
    MarketParams::from_rho(s, DVector::from_element(5, 0.4), 0.02).unwrap()
}
