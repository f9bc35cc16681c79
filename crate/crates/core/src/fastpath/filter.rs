//! Whole-map filtering: gather every row and column into contiguous chains,
//! run the two sweeps on each, and scatter the results back.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;
use crate::weights::{check_scale, Scale};

use super::chain::{aggregate_in_place, fill_weights, update_in_place};
use super::EvalCounter;

/// Orientation of a set of chains. Horizontal chains are rows (scale
/// `alpha`), vertical chains are columns (scale `beta`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
}

impl Direction {
    /// `(number of chains, chain length)` for an `H x W` map.
    pub fn layout(self, height: usize, width: usize) -> (usize, usize) {
        match self {
            Direction::Horizontal => (height, width),
            Direction::Vertical => (width, height),
        }
    }

    pub fn scale<T: Copy>(self, s: &Scale<T>) -> T {
        match self {
            Direction::Horizontal => s.alpha,
            Direction::Vertical => s.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// One chain at a time on the calling thread.
    Sequential,
    /// Chains distributed over the rayon pool. Results are bitwise identical
    /// to `Sequential`: every chain runs the same arithmetic on its own
    /// output slice.
    #[default]
    Parallel,
}

/// Root used for every chain. The filtered values do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootChoice {
    #[default]
    Midpoint,
    Start,
    End,
}

impl RootChoice {
    fn root(self, len: usize) -> usize {
        match self {
            RootChoice::Midpoint => len / 2,
            RootChoice::Start => 0,
            RootChoice::End => len - 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterOptions {
    pub execution: Execution,
    pub root: RootChoice,
    /// Debug only: halves the first horizontal edge weight of row 0 after it
    /// is computed. Exists so the self-test can prove it detects a wrong
    /// weight.
    pub inject_fault: bool,
}

/// `4WH − 2(W+H)`: edge evaluations of one full filter call.
pub fn analytic_edge_evals(height: usize, width: usize) -> u64 {
    let (h, w) = (height as u64, width as u64);
    4 * w * h - 2 * (w + h)
}

const TILE: usize = 32;

/// Node-major copy of `t` for `dir`: chain `k`, node `i`, channel `c` lives at
/// `(k * len + i) * C + c`.
pub(crate) fn to_nodes<T: Real>(t: &Tensor3<T>, dir: Direction) -> Vec<T> {
    let mut out = Vec::new();
    to_nodes_into(t, dir, &mut out);
    out
}

fn to_nodes_into<T: Real>(t: &Tensor3<T>, dir: Direction, out: &mut Vec<T>) {
    let (channels, height, width) = t.shape();
    let plane = height * width;
    let src = t.as_slice();
    reset(out, src.len());
    visit_nodes(dir, height, width, |p, n| {
        let dst = &mut out[n * channels..(n + 1) * channels];
        for (c, d) in dst.iter_mut().enumerate() {
            *d = src[c * plane + p];
        }
    });
}

/// Resizes `v` to `n` zeros, keeping its allocation.
fn reset<T: Real>(v: &mut Vec<T>, n: usize) {
    v.clear();
    v.resize(n, T::zero());
}

/// Channel-major copy of node-major `nodes`; the inverse of [`to_nodes`].
fn from_nodes_into<T: Real>(
    nodes: &[T],
    dir: Direction,
    shape: (usize, usize, usize),
    out: &mut Vec<T>,
) {
    reset(out, nodes.len());
    write_nodes(nodes, dir, shape, out, |o, v| *o = v);
}

/// `out += nodes` with `out` in channel-major layout.
pub(crate) fn scatter_add<T: Real>(
    nodes: &[T],
    dir: Direction,
    shape: (usize, usize, usize),
    out: &mut [T],
) {
    write_nodes(nodes, dir, shape, out, |o, v| *o += v);
}

fn write_nodes<T: Real, F: Fn(&mut T, T)>(
    nodes: &[T],
    dir: Direction,
    shape: (usize, usize, usize),
    out: &mut [T],
    f: F,
) {
    let (channels, height, width) = shape;
    let plane = height * width;
    visit_nodes(dir, height, width, |p, n| {
        for (c, &v) in nodes[n * channels..(n + 1) * channels].iter().enumerate() {
            f(&mut out[c * plane + p], v);
        }
    });
}

/// Calls `f(plane_index, node_index)` for every position, in an order that
/// keeps both sides cache-local.
#[inline]
fn visit_nodes<F: FnMut(usize, usize)>(dir: Direction, height: usize, width: usize, mut f: F) {
    match dir {
        Direction::Horizontal => (0..height * width).for_each(|p| f(p, p)),
        Direction::Vertical => {
            for_each_tile(height, width, |y, x| f(y * width + x, x * height + y))
        }
    }
}

#[inline]
fn for_each_tile<F: FnMut(usize, usize)>(height: usize, width: usize, mut f: F) {
    for y0 in (0..height).step_by(TILE) {
        for x0 in (0..width).step_by(TILE) {
            for y in y0..(y0 + TILE).min(height) {
                for x in x0..(x0 + TILE).min(width) {
                    f(y, x);
                }
            }
        }
    }
}

/// Everything one direction of the filter computed. The per-edge arrays are
/// indexed `k * (len - 1) + i` for the edge between nodes `i` and `i + 1` of
/// chain `k`; node arrays use the node-major layout of [`to_nodes`].
#[derive(Debug, Clone)]
pub(crate) struct DirectionalPass<T> {
    pub dir: Direction,
    pub chains: usize,
    pub len: usize,
    pub root: usize,
    pub scale: T,
    pub dist: Vec<T>,
    pub w: Vec<T>,
    pub q: Vec<T>,
    /// Subtree sums; empty unless the pass was recorded.
    pub agg: Vec<T>,
    pub out: Vec<T>,
}

struct ChainWork<'a, T> {
    index: usize,
    guide: &'a [T],
    buf: &'a mut [T],
    dist: &'a mut [T],
    w: &'a mut [T],
    q: &'a mut [T],
    agg: Option<&'a mut [T]>,
}

impl<T: Real> DirectionalPass<T> {
    fn empty(dir: Direction) -> Self {
        Self {
            dir,
            chains: 0,
            len: 0,
            root: 0,
            scale: T::one(),
            dist: Vec::new(),
            w: Vec::new(),
            q: Vec::new(),
            agg: Vec::new(),
            out: Vec::new(),
        }
    }
}

/// Refills `pass` (reusing its buffers) with one direction of the filter.
#[allow(clippy::too_many_arguments)]
fn run_direction<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: T,
    opts: &FilterOptions,
    counter: &EvalCounter,
    record: bool,
    guide_nodes: &mut Vec<T>,
    pass: &mut DirectionalPass<T>,
) {
    let dir = pass.dir;
    let (chains, len) = dir.layout(values.height(), values.width());
    let channels = values.channels();
    let guide_channels = guide.channels();
    let root = opts.root.root(len);
    let edges = len - 1;
    pass.chains = chains;
    pass.len = len;
    pass.root = root;
    pass.scale = scale;

    to_nodes_into(guide, dir, guide_nodes);
    to_nodes_into(values, dir, &mut pass.out);
    reset(&mut pass.dist, chains * edges);
    reset(&mut pass.w, chains * edges);
    reset(&mut pass.q, chains * edges);
    reset(&mut pass.agg, if record { pass.out.len() } else { 0 });
    let DirectionalPass {
        dist,
        w,
        q,
        agg,
        out,
        ..
    } = pass;

    if edges > 0 {
        let node_block = len * channels;
        let aggs: Vec<Option<&mut [T]>> = if record {
            agg.chunks_mut(node_block).map(Some).collect()
        } else {
            (0..chains).map(|_| None).collect()
        };
        let mut work: Vec<ChainWork<'_, T>> = guide_nodes
            .chunks(len * guide_channels)
            .zip(out.chunks_mut(node_block))
            .zip(dist.chunks_mut(edges))
            .zip(w.chunks_mut(edges))
            .zip(q.chunks_mut(edges))
            .zip(aggs)
            .enumerate()
            .map(|(index, (((((guide, buf), dist), w), q), agg))| ChainWork {
                index,
                guide,
                buf,
                dist,
                w,
                q,
                agg,
            })
            .collect();

        let fault = opts.inject_fault && dir == Direction::Horizontal;
        let run = |job: &mut ChainWork<'_, T>| {
            for (i, d) in job.dist.iter_mut().enumerate() {
                let a = &job.guide[i * guide_channels..(i + 1) * guide_channels];
                let b = &job.guide[(i + 1) * guide_channels..(i + 2) * guide_channels];
                *d = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<T>()
                    .sqrt();
            }
            fill_weights(job.dist, scale, job.w, job.q);
            if fault && job.index == 0 {
                job.w[0] *= T::lit(0.5);
            }
            aggregate_in_place(root, job.w, job.buf, channels);
            if let Some(a) = job.agg.as_deref_mut() {
                a.copy_from_slice(job.buf);
            }
            update_in_place(root, job.w, job.q, job.buf, channels);
            counter.add(2 * edges as u64);
        };
        match opts.execution {
            Execution::Sequential => work.iter_mut().for_each(run),
            Execution::Parallel => work.par_iter_mut().for_each(run),
        }
    } else if record {
        agg.copy_from_slice(out);
    }
}

fn validate<T: Real>(guide: &Tensor3<T>, values: &Tensor3<T>, scale: &Scale<T>) -> Result<()> {
    if !guide.same_spatial(values) {
        return Err(Error::Shape(format!(
            "guide {:?} and values {:?} differ spatially",
            guide.shape(),
            values.shape()
        )));
    }
    check_scale(scale.alpha)?;
    check_scale(scale.beta)
}

pub(crate) fn filter_recorded<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
    opts: &FilterOptions,
    counter: &EvalCounter,
    record: bool,
) -> Result<(Tensor3<T>, [DirectionalPass<T>; 2])> {
    let mut ws = FilterWorkspace::new();
    ws.run(guide, values, scale, opts, counter, record)?;
    let out = ws.out.take().expect("filled by run");
    Ok((out, ws.passes))
}

/// Scratch buffers for repeated filter calls. Calls on maps of the same size
/// reuse every allocation; results are identical to [`semi_global_filter_with`].
#[derive(Debug, Clone)]
pub struct FilterWorkspace<T> {
    passes: [DirectionalPass<T>; 2],
    guide_nodes: Vec<T>,
    out: Option<Tensor3<T>>,
}

impl<T: Real> Default for FilterWorkspace<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> FilterWorkspace<T> {
    pub fn new() -> Self {
        Self {
            passes: [
                DirectionalPass::empty(Direction::Horizontal),
                DirectionalPass::empty(Direction::Vertical),
            ],
            guide_nodes: Vec::new(),
            out: None,
        }
    }

    pub fn filter(
        &mut self,
        guide: &Tensor3<T>,
        values: &Tensor3<T>,
        scale: Scale<T>,
        counter: &EvalCounter,
        opts: &FilterOptions,
    ) -> Result<&Tensor3<T>> {
        self.run(guide, values, scale, opts, counter, false)?;
        Ok(self.out.as_ref().expect("filled by run"))
    }

    fn run(
        &mut self,
        guide: &Tensor3<T>,
        values: &Tensor3<T>,
        scale: Scale<T>,
        opts: &FilterOptions,
        counter: &EvalCounter,
        record: bool,
    ) -> Result<()> {
        validate(guide, values, &scale)?;
        let shape = values.shape();
        let [rows, cols] = &mut self.passes;
        run_direction(
            guide,
            values,
            scale.alpha,
            opts,
            counter,
            record,
            &mut self.guide_nodes,
            rows,
        );
        run_direction(
            guide,
            values,
            scale.beta,
            opts,
            counter,
            record,
            &mut self.guide_nodes,
            cols,
        );
        let mut acc = self.out.take().map(Tensor3::into_vec).unwrap_or_default();
        from_nodes_into(&rows.out, Direction::Horizontal, shape, &mut acc);
        scatter_add(&cols.out, Direction::Vertical, shape, &mut acc);
        self.out = Some(Tensor3::from_parts(shape.0, shape.1, shape.2, acc));
        Ok(())
    }
}

/// Sum of the filtered rows (scale `alpha`) and filtered columns (scale
/// `beta`) of `values`, with weights taken from `guide`. No residual term.
///
/// Chains are fully independent, so each one runs its aggregation sweep and
/// then its update sweep without waiting on any other chain.
pub fn semi_global_filter<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
    counter: &EvalCounter,
) -> Result<Tensor3<T>> {
    semi_global_filter_with(guide, values, scale, counter, &FilterOptions::default())
}

pub fn semi_global_filter_with<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
    counter: &EvalCounter,
    opts: &FilterOptions,
) -> Result<Tensor3<T>> {
    filter_recorded(guide, values, scale, opts, counter, false).map(|(out, _)| out)
}

/// Total weight `S_u` each position receives (center counted once per
/// direction): the filter applied to a single all-ones channel.
pub fn normalizer<T: Real>(guide: &Tensor3<T>, scale: Scale<T>) -> Result<Tensor3<T>> {
    let ones = Tensor3::filled(1, guide.height(), guide.width(), T::one())?;
    semi_global_filter(guide, &ones, scale, &EvalCounter::new())
}
