//! Reverse accumulation through the two chain sweeps.

use crate::error::{Error, Result};
use crate::fastpath::{aggregate_in_place, update_in_place, ChainTree, EdgeWeights};
use crate::scalar::Real;
use crate::tensor::Matrix;
use crate::weights::{check_scale, euclid_distance};

/// Distances below this are treated as exactly zero when differentiating the
/// Euclidean norm; its gradient there is taken to be 0.
pub const ZERO_DISTANCE: f64 = 1e-12;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Adjoint of one chain's aggregation + update sweeps.
///
/// `agg` and `out` are the saved subtree sums and filtered values; `upstream`
/// is the gradient w.r.t. `out`. Writes the gradient w.r.t. the node values
/// into `g_values` and accumulates the gradients w.r.t. each edge's `w` and
/// `q = 1 − w²` into `g_w` / `g_q`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn chain_backward<T: Real>(
    root: usize,
    w: &[T],
    q: &[T],
    agg: &[T],
    out: &[T],
    upstream: &[T],
    channels: usize,
    g_values: &mut [T],
    g_w: &mut [T],
    g_q: &mut [T],
) {
    let len = out.len() / channels;
    let node = |i: usize| i * channels..(i + 1) * channels;
    let mut gu = upstream.to_vec();
    let ga = g_values;
    ga.fill(T::zero());

    // update sweep, leaves back to root
    for i in (root + 1..len).rev() {
        let (p, e) = (i - 1, i - 1);
        let (head, tail) = gu.split_at_mut(i * channels);
        let gi = &tail[..channels];
        axpy(&mut ga[node(i)], q[e], gi);
        g_w[e] += dot(gi, &out[node(p)]);
        g_q[e] += dot(gi, &agg[node(i)]);
        axpy(&mut head[node(p)], w[e], gi);
    }
    for i in 0..root {
        let (p, e) = (i + 1, i);
        let (head, tail) = gu.split_at_mut(p * channels);
        let gi = &head[node(i)];
        axpy(&mut ga[node(i)], q[e], gi);
        g_w[e] += dot(gi, &out[node(p)]);
        g_q[e] += dot(gi, &agg[node(i)]);
        axpy(&mut tail[..channels], w[e], gi);
    }
    axpy(&mut ga[node(root)], T::one(), &gu[node(root)]);

    // aggregation sweep, root back to leaves
    for i in root..len.saturating_sub(1) {
        let (head, tail) = ga.split_at_mut((i + 1) * channels);
        let gi = &head[node(i)];
        g_w[i] += dot(gi, &agg[node(i + 1)]);
        axpy(&mut tail[..channels], w[i], gi);
    }
    for i in (1..=root).rev() {
        let (head, tail) = ga.split_at_mut(i * channels);
        let gi = &tail[..channels];
        g_w[i - 1] += dot(gi, &agg[node(i - 1)]);
        axpy(&mut head[node(i - 1)], w[i - 1], gi);
    }
}

/// Folds `(g_w, g_q)` of edges with `w = exp(-d/s)`, `q = 1 − w²` into
/// gradients w.r.t. `d` (written to `g_d`) and `s` (returned).
pub(crate) fn edge_adjoint<T: Real>(
    dist: &[T],
    w: &[T],
    g_w: &[T],
    g_q: &[T],
    scale: T,
    g_d: &mut [T],
) -> T {
    let two = T::lit(2.0);
    let mut g_s = T::zero();
    for i in 0..dist.len() {
        let gw_total = g_w[i] - two * w[i] * g_q[i];
        let dw_dd = -w[i] / scale;
        g_d[i] = gw_total * dw_dd;
        g_s += gw_total * w[i] * dist[i] / (scale * scale);
    }
    g_s
}

/// Adds the gradient of `d = ‖a − b‖` into `g_a` and `g_b`.
#[inline]
pub(crate) fn distance_adjoint<T: Real>(
    a: &[T],
    b: &[T],
    d: T,
    g_d: T,
    g_a: &mut [T],
    g_b: &mut [T],
) {
    if d < T::lit(ZERO_DISTANCE) {
        return;
    }
    let k = g_d / d;
    for j in 0..a.len() {
        let t = k * (a[j] - b[j]);
        g_a[j] += t;
        g_b[j] -= t;
    }
}

/// Forward state of a single chain filter call.
#[derive(Debug, Clone)]
pub struct ChainTape<T> {
    guide: Matrix<T>,
    values: Matrix<T>,
    scale: T,
    tree: ChainTree,
    dist: Vec<T>,
    weights: EdgeWeights<T>,
    agg: Vec<T>,
    out: Matrix<T>,
}

impl<T: Real> ChainTape<T> {
    pub fn output(&self) -> &Matrix<T> {
        &self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrad<T> {
    pub d_guide: Matrix<T>,
    pub d_values: Matrix<T>,
    pub d_scale: T,
}

/// Runs the fast chain filter and keeps what the backward pass needs.
pub fn record_chain_filter<T: Real>(
    guide: &Matrix<T>,
    values: &Matrix<T>,
    scale: T,
    root: usize,
) -> Result<ChainTape<T>> {
    if guide.rows() != values.rows() {
        return Err(Error::Shape(format!(
            "guide has {} nodes, values have {}",
            guide.rows(),
            values.rows()
        )));
    }
    check_scale(scale)?;
    let tree = ChainTree::new(values.rows(), root)?;
    let dist = (1..guide.rows())
        .map(|i| euclid_distance(guide.row(i - 1), guide.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let weights = EdgeWeights::from_distances(&dist, scale)?;
    let channels = values.cols();
    let mut buf = values.as_slice().to_vec();
    aggregate_in_place(root, weights.weights(), &mut buf, channels);
    let agg = buf.clone();
    update_in_place(
        root,
        weights.weights(),
        weights.update_factors(),
        &mut buf,
        channels,
    );
    let out = Matrix::from_vec(values.rows(), channels, buf)?;
    Ok(ChainTape {
        guide: guide.clone(),
        values: values.clone(),
        scale,
        tree,
        dist,
        weights,
        agg,
        out,
    })
}

/// Gradients of `Σ upstream ⊙ output` w.r.t. the guide, the values and the
/// scale of a recorded chain filter.
pub fn backward_chain_filter<T: Real>(
    tape: &ChainTape<T>,
    upstream: &Matrix<T>,
) -> Result<ChainGrad<T>> {
    if upstream.rows() != tape.out.rows() || upstream.cols() != tape.out.cols() {
        return Err(Error::Shape(format!(
            "upstream is {}x{}, output was {}x{}",
            upstream.rows(),
            upstream.cols(),
            tape.out.rows(),
            tape.out.cols()
        )));
    }
    let len = tape.tree.len();
    let channels = tape.values.cols();
    let edges = len - 1;
    let mut g_values = vec![T::zero(); len * channels];
    let mut g_w = vec![T::zero(); edges];
    let mut g_q = vec![T::zero(); edges];
    chain_backward(
        tape.tree.root(),
        tape.weights.weights(),
        tape.weights.update_factors(),
        &tape.agg,
        tape.out.as_slice(),
        upstream.as_slice(),
        channels,
        &mut g_values,
        &mut g_w,
        &mut g_q,
    );
    let mut g_d = vec![T::zero(); edges];
    let d_scale = edge_adjoint(
        &tape.dist,
        tape.weights.weights(),
        &g_w,
        &g_q,
        tape.scale,
        &mut g_d,
    );

    let gc = tape.guide.cols();
    let mut g_guide = vec![T::zero(); len * gc];
    for (i, &gd) in g_d.iter().enumerate() {
        let (head, tail) = g_guide.split_at_mut((i + 1) * gc);
        distance_adjoint(
            tape.guide.row(i),
            tape.guide.row(i + 1),
            tape.dist[i],
            gd,
            &mut head[i * gc..],
            &mut tail[..gc],
        );
    }
    Ok(ChainGrad {
        d_guide: Matrix::from_vec(len, gc, g_guide)?,
        d_values: Matrix::from_vec(len, channels, g_values)?,
        d_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fastpath::chain_filter_fast;

    fn loss(guide: &Matrix<f64>, values: &Matrix<f64>, scale: f64, probe: &Matrix<f64>) -> f64 {
        let out = chain_filter_fast(guide, values, scale, guide.rows() / 2).unwrap();
        out.as_slice()
            .iter()
            .zip(probe.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    fn perturbed(m: &Matrix<f64>, i: usize, h: f64) -> Matrix<f64> {
        let mut v = m.as_slice().to_vec();
        v[i] += h;
        Matrix::from_vec(m.rows(), m.cols(), v).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let g = Matrix::random(6, 2, 1).unwrap();
        let v = Matrix::random(6, 3, 2).unwrap();
        let tape = record_chain_filter(&g, &v, 0.7, 2).unwrap();
        let grad = backward_chain_filter(&tape, &Matrix::zeros(6, 3).unwrap()).unwrap();
        assert!(grad.d_guide.as_slice().iter().all(|&x| x == 0.0));
        assert!(grad.d_values.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(grad.d_scale, 0.0);
    }

    #[test]
    fn constant_guide_value_gradient_is_column_sum() {
        let g = Matrix::from_vec(5, 1, vec![0.4; 5]).unwrap();
        let v = Matrix::random(5, 2, 3).unwrap();
        let up = Matrix::random(5, 2, 4).unwrap();
        let tape = record_chain_filter(&g, &v, 1.0, 1).unwrap();
        let grad = backward_chain_filter(&tape, &up).unwrap();
        for c in 0..2 {
            let total: f64 = (0..5).map(|u| up.get(u, c)).sum();
            for v in 0..5 {
                assert!((grad.d_values.get(v, c) - total).abs() < 1e-14);
            }
        }
        assert!(grad.d_guide.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_central_differences_on_a_nine_node_chain() {
        let g = Matrix::random(9, 2, 11).unwrap();
        let v = Matrix::random(9, 3, 12).unwrap();
        let probe = Matrix::random(9, 3, 13).unwrap();
        let scale = 0.8;
        let h = 1e-5;
        let tape = record_chain_filter(&g, &v, scale, 4).unwrap();
        let grad = backward_chain_filter(&tape, &probe).unwrap();

        let mut worst = 0.0f64;
        for i in 0..v.as_slice().len() {
            let n = (loss(&g, &perturbed(&v, i, h), scale, &probe)
                - loss(&g, &perturbed(&v, i, -h), scale, &probe))
                / (2.0 * h);
            worst = worst.max(rel(grad.d_values.as_slice()[i], n));
        }
        for i in 0..g.as_slice().len() {
            let n = (loss(&perturbed(&g, i, h), &v, scale, &probe)
                - loss(&perturbed(&g, i, -h), &v, scale, &probe))
                / (2.0 * h);
            worst = worst.max(rel(grad.d_guide.as_slice()[i], n));
        }
        let n = (loss(&g, &v, scale + h, &probe) - loss(&g, &v, scale - h, &probe)) / (2.0 * h);
        worst = worst.max(rel(grad.d_scale, n));
        assert!(worst <= 1e-6, "max relative error {worst}");
    }

    #[test]
    fn backward_is_root_independent() {
        let g = Matrix::<f64>::random(7, 1, 5).unwrap();
        let v = Matrix::random(7, 2, 6).unwrap();
        let up = Matrix::random(7, 2, 7).unwrap();
        let base =
            backward_chain_filter(&record_chain_filter(&g, &v, 1.3, 0).unwrap(), &up).unwrap();
        for root in 1..7 {
            let other =
                backward_chain_filter(&record_chain_filter(&g, &v, 1.3, root).unwrap(), &up)
                    .unwrap();
            for (a, b) in base.d_guide.as_slice().iter().zip(other.d_guide.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((base.d_scale - other.d_scale).abs() < 1e-12);
        }
    }

    #[test]
    fn value_gradient_is_the_filter_applied_to_upstream() {
        // the path-weight matrix is symmetric
        let g = Matrix::<f64>::random(8, 2, 21).unwrap();
        let v = Matrix::random(8, 2, 22).unwrap();
        let up = Matrix::random(8, 2, 23).unwrap();
        let grad =
            backward_chain_filter(&record_chain_filter(&g, &v, 0.9, 3).unwrap(), &up).unwrap();
        let direct = chain_filter_fast(&g, &up, 0.9, 5).unwrap();
        for (a, b) in grad.d_values.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_chain() {
        let g = Matrix::from_vec(1, 1, vec![0.3]).unwrap();
        let v = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let up = Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap();
        let grad =
            backward_chain_filter(&record_chain_filter(&g, &v, 1.0, 0).unwrap(), &up).unwrap();
        assert_eq!(grad.d_values.as_slice(), up.as_slice());
        assert_eq!(grad.d_scale, 0.0);
        assert!(backward_chain_filter(
            &record_chain_filter(&g, &v, 1.0, 0).unwrap(),
            &Matrix::zeros(2, 2).unwrap()
        )
        .is_err());
    }
}
