//! Linear-time evaluation of the criss-cross aggregation.
//!
//! Every row and every column is an independent chain. Each chain gets one
//! aggregation sweep and one update sweep, so a full `H x W` map costs
//! `2·H·(W−1) + 2·W·(H−1) = 4WH − 2(W+H)` edge evaluations.

mod chain;
mod filter;

use std::sync::atomic::{AtomicU64, Ordering};

pub use chain::{
    aggregate_pass, build_chain, chain_filter_fast, chain_filter_fast_counted, update_pass,
    ChainTree, EdgeWeights,
};
pub use filter::{
    analytic_edge_evals, normalizer, semi_global_filter, semi_global_filter_with, Direction,
    Execution, FilterOptions, FilterWorkspace, RootChoice,
};

pub(crate) use chain::{aggregate_in_place, update_in_place};
pub(crate) use filter::{filter_recorded, scatter_add, to_nodes, DirectionalPass};

/// Number of edge evaluations (one weighted multiply-accumulate across one
/// edge, for all channels at once). Safe to share between threads.
#[derive(Debug, Default)]
pub struct EvalCounter {
    edge_evals: AtomicU64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&self, n: u64) {
        self.edge_evals.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.edge_evals.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.edge_evals.store(0, Ordering::Relaxed);
    }
}
