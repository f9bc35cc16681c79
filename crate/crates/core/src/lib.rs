//! Shape-aware semi-global feature aggregation.
//!
//! Every position of a `C x H x W` feature map gathers the features of its
//! row and its column, weighted by `exp(-D / scale)` where `D` is the summed
//! feature distance along the straight path between the two positions. The
//! weights therefore fall off with both dissimilarity and spatial distance.
//!
//! * [`oracle`] evaluates this pair by pair (`O(N·(H+W))`).
//! * [`fastpath`] evaluates it with two linear sweeps per row and column
//!   (`O(N)`, exactly `4WH − 2(W+H)` edge evaluations).
//! * [`block`] wraps the filter with 1x1 projections and a residual
//!   connection, and stacks blocks for full-image support.
//! * [`autograd`] differentiates a block w.r.t. its input and parameters.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below are the default precision.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod bench;
pub mod block;
mod error;
pub mod fastpath;
pub mod io;
pub mod oracle;
mod scalar;
pub mod selftest;
pub mod tensor;
pub mod weights;

pub use autograd::{backward_block, record_block, BlockTape, GradBundle};
pub use block::{
    attention_slice, effective_attention, hierarchical_apply, pointwise_transform,
    semi_global_block, BlockParams, HierarchyConfig,
};
pub use error::{Error, Result};
pub use fastpath::{analytic_edge_evals, normalizer, semi_global_filter, EvalCounter};
pub use scalar::Real;
pub use tensor::{gather_cross, make_tensor, random_tensor, Matrix, Position, Tensor3};
pub use weights::Scale;

pub type TensorF64 = Tensor3<f64>;
pub type TensorF32 = Tensor3<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type ScaleF64 = Scale<f64>;
pub type BlockParamsF64 = BlockParams<f64>;
pub type GradBundleF64 = GradBundle<f64>;
