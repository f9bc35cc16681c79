use crate::block::{block_forward, BlockForward, BlockParams};
use crate::error::{Error, Result};
use crate::fastpath::{scatter_add, to_nodes, EvalCounter, FilterOptions};
use crate::scalar::Real;
use crate::tensor::{Matrix, Tensor3};

use super::chain::{chain_backward, distance_adjoint, edge_adjoint};
use super::GradBundle;

/// Forward state of one recorded block evaluation. Owned by a single caller;
/// backward borrows it immutably.
pub struct BlockTape<T> {
    input: Tensor3<T>,
    params: BlockParams<T>,
    forward: BlockForward<T>,
}

impl<T: Real> BlockTape<T> {
    pub fn output(&self) -> &Tensor3<T> {
        &self.forward.output
    }

    pub fn params(&self) -> &BlockParams<T> {
        &self.params
    }
}

/// Evaluates the block like `semi_global_block`, saving per-edge distances
/// and weights and per-node subtree sums for [`backward_block`].
pub fn record_block<T: Real>(
    input: &Tensor3<T>,
    params: &BlockParams<T>,
    counter: &EvalCounter,
) -> Result<BlockTape<T>> {
    let forward = block_forward(input, params, counter, &FilterOptions::default(), true)?;
    Ok(BlockTape {
        input: input.clone(),
        params: params.clone(),
        forward,
    })
}

/// `g_x = mᵀ·g_out` per position and `g_m = Σ_p g_out(p) ⊗ x(p)`.
pub(crate) fn pointwise_backward<T: Real>(
    x: &Tensor3<T>,
    m: &Matrix<T>,
    g_out: &Tensor3<T>,
    g_x: &mut [T],
) -> Result<Matrix<T>> {
    let plane = x.plane();
    let mut g_m = vec![T::zero(); m.rows() * m.cols()];
    for r in 0..m.rows() {
        let go = g_out.channel(r);
        for c in 0..m.cols() {
            let xc = x.channel(c);
            g_m[r * m.cols() + c] = go.iter().zip(xc).map(|(&a, &b)| a * b).sum();
            let k = m.get(r, c);
            for (g, &o) in g_x[c * plane..(c + 1) * plane].iter_mut().zip(go) {
                *g += k * o;
            }
        }
    }
    Matrix::from_vec(m.rows(), m.cols(), g_m)
}

/// Gradients of `Σ upstream ⊙ output` for a recorded block, through both the
/// value pathway and the guide pathway.
///
/// `params` must be the parameters the tape was recorded with; a different
/// normalization mode is reported as [`Error::Mode`].
pub fn backward_block<T: Real>(
    tape: &BlockTape<T>,
    params: &BlockParams<T>,
    upstream: &Tensor3<T>,
) -> Result<GradBundle<T>> {
    if params.normalized != tape.params.normalized {
        return Err(Error::Mode(format!(
            "forward ran with normalized={}, backward requested normalized={}",
            tape.params.normalized, params.normalized
        )));
    }
    if *params != tape.params {
        return Err(Error::Mode(
            "parameters differ from the recorded forward pass".into(),
        ));
    }
    let input = &tape.input;
    if upstream.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "upstream {:?} does not match output {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let f = &tape.forward;
    let passes = f
        .passes
        .as_ref()
        .expect("recorded forward keeps its passes");
    let (channels, height, width) = input.shape();
    let plane = height * width;
    let g = upstream.as_slice();

    // through the optional normalization to the filter output
    let filtered = f.filtered.as_slice();
    let fc = f.filtered.channels();
    let mut g_filtered = vec![T::zero(); fc * plane];
    if params.normalized {
        let s = &filtered[channels * plane..];
        for p in 0..plane {
            let mut gs = T::zero();
            for c in 0..channels {
                let i = c * plane + p;
                g_filtered[i] = g[i] / s[p];
                gs -= g[i] * filtered[i] / (s[p] * s[p]);
            }
            g_filtered[channels * plane + p] = gs;
        }
    } else {
        g_filtered.copy_from_slice(g);
    }
    let g_filtered = Tensor3::from_parts(fc, height, width, g_filtered);

    let guide = &f.guide;
    let gcn = guide.channels();
    let mut g_values = vec![T::zero(); fc * plane];
    let mut g_guide = vec![T::zero(); gcn * plane];
    let mut g_scale = [T::zero(); 2];

    for (k, pass) in passes.iter().enumerate() {
        let up = to_nodes(&g_filtered, pass.dir);
        let guide_nodes = to_nodes(guide, pass.dir);
        let len = pass.len;
        let edges = len - 1;
        let block = len * fc;
        let mut gv_nodes = vec![T::zero(); up.len()];
        let mut gg_nodes = vec![T::zero(); guide_nodes.len()];
        let mut g_w = vec![T::zero(); edges];
        let mut g_q = vec![T::zero(); edges];
        let mut g_d = vec![T::zero(); edges];
        for chain in 0..pass.chains {
            let nodes = chain * block..(chain + 1) * block;
            let e = chain * edges..(chain + 1) * edges;
            g_w.fill(T::zero());
            g_q.fill(T::zero());
            chain_backward(
                pass.root,
                &pass.w[e.clone()],
                &pass.q[e.clone()],
                &pass.agg[nodes.clone()],
                &pass.out[nodes.clone()],
                &up[nodes.clone()],
                fc,
                &mut gv_nodes[nodes],
                &mut g_w,
                &mut g_q,
            );
            g_scale[k] += edge_adjoint(
                &pass.dist[e.clone()],
                &pass.w[e.clone()],
                &g_w,
                &g_q,
                pass.scale,
                &mut g_d,
            );
            let gbase = chain * len * gcn;
            for (i, &gd) in g_d.iter().enumerate() {
                let a = gbase + i * gcn;
                let b = a + gcn;
                let (head, tail) = gg_nodes.split_at_mut(b);
                distance_adjoint(
                    &guide_nodes[a..b],
                    &guide_nodes[b..b + gcn],
                    pass.dist[e.start + i],
                    gd,
                    &mut head[a..],
                    &mut tail[..gcn],
                );
            }
        }
        scatter_add(&gv_nodes, pass.dir, (fc, height, width), &mut g_values);
        scatter_add(&gg_nodes, pass.dir, (gcn, height, width), &mut g_guide);
    }

    // the ones channel of normalized mode has no upstream parameters
    g_values.truncate(channels * plane);
    let g_psi_out = Tensor3::from_parts(channels, height, width, g_values);
    let g_guide = Tensor3::from_parts(gcn, height, width, g_guide);

    let mut d_input = g.to_vec();
    let d_psi = pointwise_backward(input, &params.psi, &g_psi_out, &mut d_input)?;
    let d_lambda = pointwise_backward(input, &params.lambda, &g_guide, &mut d_input)?;
    Ok(GradBundle {
        d_input: Tensor3::from_parts(channels, height, width, d_input),
        d_alpha: g_scale[0],
        d_beta: g_scale[1],
        d_lambda,
        d_psi,
    })
}
