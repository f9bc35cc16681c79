//! One row or column treated as a rooted chain, and the two linear sweeps
//! over it.
//!
//! The aggregation sweep accumulates weighted subtree sums from the leaves
//! up to the root:
//!
//! ```text
//! A(u) = I(u) + Σ_{children v} ω(u, v) · A(v)
//! ```
//!
//! The update sweep pushes the result back down:
//!
//! ```text
//! U(root) = A(root)
//! U(u)    = ω(p, u) · U(p) + (1 − ω(p, u)²) · A(u)      p = parent(u)
//! ```
//!
//! after which `U(u) = Σ_v Ω(u, v) · I(v)` over the whole chain. Both sweeps
//! are loops, so chain length is not limited by stack depth.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix;
use crate::weights::{check_scale, euclid_distance};

use super::EvalCounter;

/// A chain of `len` nodes rooted at `root`. Node `i < root` has parent
/// `i + 1`; node `i > root` has parent `i - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainTree {
    len: usize,
    root: usize,
}

impl ChainTree {
    pub fn new(len: usize, root: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Dimension("chain length must be at least 1".into()));
        }
        if root >= len {
            return Err(Error::Domain(format!(
                "root {root} outside chain of length {len}"
            )));
        }
        Ok(Self { len, root })
    }

    /// Rooted at `len / 2`.
    pub fn midpoint(len: usize) -> Result<Self> {
        Self::new(len, len / 2)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match i.cmp(&self.root) {
            Less => Some(i + 1),
            Greater => Some(i - 1),
            Equal => None,
        }
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        if i > 0 && i <= self.root {
            out.push(i - 1);
        }
        if i + 1 < self.len && i >= self.root {
            out.push(i + 1);
        }
        out
    }

    /// Nodes without children, in increasing order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len)
            .filter(|&i| self.children(i).is_empty())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.len - 1
    }
}

/// `build_chain`.
pub fn build_chain(len: usize, root: usize) -> Result<ChainTree> {
    ChainTree::new(len, root)
}

/// Edge weights along a chain: `w[i]` joins nodes `i` and `i + 1`. Alongside
/// each weight the update factor `1 − w²` is kept, computed without
/// cancellation when the weight comes from a distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights<T> {
    w: Vec<T>,
    q: Vec<T>,
}

impl<T: Real> EdgeWeights<T> {
    /// Raw weights, each in `(0, 1]`.
    pub fn from_weights(w: Vec<T>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|&&x| !(x > T::zero() && x <= T::one())) {
            return Err(Error::Domain(format!("edge weight {bad} outside (0, 1]")));
        }
        let q = w.iter().map(|&x| (T::one() - x) * (T::one() + x)).collect();
        Ok(Self { w, q })
    }

    /// `w = exp(-d / scale)` for each edge distance.
    pub fn from_distances(d: &[T], scale: T) -> Result<Self> {
        check_scale(scale)?;
        if let Some(bad) = d.iter().find(|&&x| !(x >= T::zero())) {
            return Err(Error::Domain(format!("distance {bad} is negative")));
        }
        let mut w = vec![T::zero(); d.len()];
        let mut q = vec![T::zero(); d.len()];
        fill_weights(d, scale, &mut w, &mut q);
        Ok(Self { w, q })
    }

    /// Distances between neighbouring guide rows.
    pub fn from_guide(guide: &Matrix<T>, scale: T) -> Result<Self> {
        let d = (1..guide.rows())
            .map(|i| euclid_distance(guide.row(i - 1), guide.row(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_distances(&d, scale)
    }

    pub fn weights(&self) -> &[T] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub(crate) fn update_factors(&self) -> &[T] {
        &self.q
    }
}

#[inline]
pub(crate) fn fill_weights<T: Real>(d: &[T], scale: T, w: &mut [T], q: &mut [T]) {
    let two = T::lit(2.0);
    for ((&d, w), q) in d.iter().zip(w.iter_mut()).zip(q.iter_mut()) {
        let t = -d / scale;
        *w = t.exp();
        *q = -(two * t).exp_m1();
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Leaf-to-root sweep in place: `buf` holds the node values on entry and the
/// subtree sums on exit. Nodes are contiguous runs of `channels` scalars.
pub(crate) fn aggregate_in_place<T: Real>(root: usize, w: &[T], buf: &mut [T], channels: usize) {
    let len = buf.len() / channels;
    for i in 1..=root {
        let (done, rest) = buf.split_at_mut(i * channels);
        axpy(&mut rest[..channels], w[i - 1], &done[(i - 1) * channels..]);
    }
    for i in (root..len.saturating_sub(1)).rev() {
        let (head, tail) = buf.split_at_mut((i + 1) * channels);
        axpy(&mut head[i * channels..], w[i], &tail[..channels]);
    }
}

/// Root-to-leaf sweep in place: `buf` holds subtree sums on entry and the
/// fully filtered values on exit.
pub(crate) fn update_in_place<T: Real>(
    root: usize,
    w: &[T],
    q: &[T],
    buf: &mut [T],
    channels: usize,
) {
    let len = buf.len() / channels;
    for i in root + 1..len {
        let (done, rest) = buf.split_at_mut(i * channels);
        let parent = &done[(i - 1) * channels..];
        for (cur, &p) in rest[..channels].iter_mut().zip(parent) {
            *cur = w[i - 1] * p + q[i - 1] * *cur;
        }
    }
    for i in (0..root).rev() {
        let (head, tail) = buf.split_at_mut((i + 1) * channels);
        let parent = &tail[..channels];
        for (cur, &p) in head[i * channels..].iter_mut().zip(parent) {
            *cur = w[i] * p + q[i] * *cur;
        }
    }
}

fn check_chain<T: Real>(tree: &ChainTree, w: &EdgeWeights<T>, rows: usize) -> Result<()> {
    if rows != tree.len() || w.len() != tree.edge_count() {
        return Err(Error::Shape(format!(
            "chain of {} nodes needs {} rows and {} edge weights, got {} and {}",
            tree.len(),
            tree.len(),
            tree.edge_count(),
            rows,
            w.len()
        )));
    }
    Ok(())
}

/// Subtree sums `A(u)` for every node. Adds `L - 1` edge evaluations.
pub fn aggregate_pass<T: Real>(
    tree: &ChainTree,
    w: &EdgeWeights<T>,
    values: &Matrix<T>,
    counter: &EvalCounter,
) -> Result<Matrix<T>> {
    check_chain(tree, w, values.rows())?;
    let mut out = values.clone();
    aggregate_in_place(tree.root(), w.weights(), out.as_mut_slice(), values.cols());
    counter.add(tree.edge_count() as u64);
    Ok(out)
}

/// Filtered values `U(u)` from the subtree sums of [`aggregate_pass`]. Adds
/// `L - 1` edge evaluations.
pub fn update_pass<T: Real>(
    tree: &ChainTree,
    w: &EdgeWeights<T>,
    aggregated: &Matrix<T>,
    counter: &EvalCounter,
) -> Result<Matrix<T>> {
    check_chain(tree, w, aggregated.rows())?;
    let mut out = aggregated.clone();
    update_in_place(
        tree.root(),
        w.weights(),
        w.update_factors(),
        out.as_mut_slice(),
        aggregated.cols(),
    );
    counter.add(tree.edge_count() as u64);
    Ok(out)
}

/// Linear-time equivalent of the brute-force chain filter: weights from the
/// guide, then both sweeps around `root`.
pub fn chain_filter_fast<T: Real>(
    guide: &Matrix<T>,
    values: &Matrix<T>,
    scale: T,
    root: usize,
) -> Result<Matrix<T>> {
    chain_filter_fast_counted(guide, values, scale, root, &EvalCounter::new())
}

pub fn chain_filter_fast_counted<T: Real>(
    guide: &Matrix<T>,
    values: &Matrix<T>,
    scale: T,
    root: usize,
    counter: &EvalCounter,
) -> Result<Matrix<T>> {
    if guide.rows() != values.rows() {
        return Err(Error::Shape(format!(
            "guide has {} nodes, values have {}",
            guide.rows(),
            values.rows()
        )));
    }
    let tree = ChainTree::new(values.rows(), root)?;
    let w = EdgeWeights::from_guide(guide, scale)?;
    let a = aggregate_pass(&tree, &w, values, counter)?;
    update_pass(&tree, &w, &a, counter)
}
