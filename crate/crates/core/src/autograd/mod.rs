//! Hand-derived reverse-mode gradients of the block, and a central
//! finite-difference harness to check them.

mod block;
mod chain;
mod check;

pub use block::{backward_block, record_block, BlockTape};
pub use chain::{backward_chain_filter, record_chain_filter, ChainGrad, ChainTape, ZERO_DISTANCE};
pub use check::{finite_diff_check, CheckPoint, CheckedOp, GradComponent};

use crate::tensor::{Matrix, Tensor3};

/// Gradients of a scalar loss w.r.t. every input of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub d_input: Tensor3<T>,
    pub d_alpha: T,
    pub d_beta: T,
    pub d_lambda: Matrix<T>,
    pub d_psi: Matrix<T>,
}
