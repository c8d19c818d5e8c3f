use rand::seq::index::sample;
use rand::Rng;

use super::prices::PriceTable;
use crate::error::{EmvError, Result};

/// Ticker subsets, each a sorted list of `d` distinct column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet {
    pub subsets: Vec<Vec<usize>>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }
}

/// `n_seeds` uniformly random `d`-subsets of the table's tickers.
pub fn make_seeds(table: &PriceTable, d: usize, n_seeds: usize, rng: &mut impl Rng) -> Result<SeedSet> {
    let n = table.tickers().len();
    if d == 0 || d > n {
        return Err(EmvError::invalid(format!(
            "cannot draw {d} tickers from a universe of {n}"
        )));
    }
    let subsets = (0..n_seeds)
        .map(|_| {
            let mut s = sample(rng, n, d).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(SeedSet { subsets })
}
