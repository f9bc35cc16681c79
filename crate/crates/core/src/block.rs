//! The semi-global block: two 1x1 projections, the criss-cross filter, and
//! the residual connection, plus hierarchical stacking and attention maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fastpath::{
    filter_recorded, semi_global_filter_with, DirectionalPass, EdgeWeights, EvalCounter, Execution,
    FilterOptions,
};
use crate::scalar::Real;
use crate::tensor::{cross_positions, Matrix, Position, Tensor3};
use crate::weights::{euclid_distance, Scale};

/// Guide width for an input with `channels` channels: one eighth, at least 1.
pub fn reduced_channels(channels: usize) -> usize {
    (channels / 8).max(1)
}

/// Learnable state of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    /// `C' x C` projection producing the guide.
    pub lambda: Matrix<T>,
    /// `C x C` projection producing the aggregated values.
    pub psi: Matrix<T>,
    pub scale: Scale<T>,
    /// Divide the aggregated values by the total weight `S_u`.
    pub normalized: bool,
}

impl<T: Real> BlockParams<T> {
    pub fn new(
        lambda: Matrix<T>,
        psi: Matrix<T>,
        scale: Scale<T>,
        normalized: bool,
    ) -> Result<Self> {
        let p = Self {
            lambda,
            psi,
            scale,
            normalized,
        };
        p.validate()?;
        Ok(p)
    }

    /// Projections uniform in `[-1, 1] / sqrt(C)`, guide width
    /// [`reduced_channels`], both scales 1, unnormalized.
    pub fn seeded(channels: usize, seed: u64) -> Result<Self> {
        let lambda = Matrix::random(reduced_channels(channels), channels, seed)?;
        let psi = Matrix::random(channels, channels, seed.wrapping_add(1))?;
        Self::new(lambda, psi, Scale::default(), false)
    }

    pub fn channels(&self) -> usize {
        self.psi.cols()
    }

    pub fn guide_channels(&self) -> usize {
        self.lambda.rows()
    }

    pub fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.psi.cols();
        if self.psi.rows() != c {
            return Err(Error::Shape(format!(
                "psi must be square, got {}x{}",
                self.psi.rows(),
                c
            )));
        }
        if self.lambda.cols() != c {
            return Err(Error::Shape(format!(
                "lambda has {} columns, psi has {}",
                self.lambda.cols(),
                c
            )));
        }
        Scale::new(self.scale.alpha, self.scale.beta)?;
        Ok(())
    }

    pub(crate) fn check_input(&self, input: &Tensor3<T>) -> Result<()> {
        if input.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "input has {} channels, parameters expect {}",
                input.channels(),
                self.channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyConfig {
    pub levels: usize,
    /// One parameter set reused by every level.
    pub shared: bool,
}

impl HierarchyConfig {
    pub fn new(levels: usize, shared: bool) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Domain("hierarchy needs at least one level".into()));
        }
        Ok(Self { levels, shared })
    }

    pub fn expected_params(&self) -> usize {
        if self.shared {
            1
        } else {
            self.levels
        }
    }

    fn params_for<'a, T>(&self, params: &'a [BlockParams<T>], level: usize) -> &'a BlockParams<T> {
        if self.shared {
            &params[0]
        } else {
            &params[level]
        }
    }

    fn check<T>(&self, params: &[BlockParams<T>]) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Domain("hierarchy needs at least one level".into()));
        }
        if params.len() != self.expected_params() {
            return Err(Error::ParamCount {
                expected: self.expected_params(),
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Applies `m` (`C_out x C_in`) to the channel vector at every position.
pub fn pointwise_transform<T: Real>(x: &Tensor3<T>, m: &Matrix<T>) -> Result<Tensor3<T>> {
    let (c_in, height, width) = x.shape();
    if m.cols() != c_in {
        return Err(Error::Shape(format!(
            "{}x{} matrix applied to {c_in} channels",
            m.rows(),
            m.cols()
        )));
    }
    let plane = height * width;
    let mut out = vec![T::zero(); m.rows() * plane];
    for (r, dst) in out.chunks_mut(plane).enumerate() {
        for c in 0..c_in {
            let k = m.get(r, c);
            if k == T::zero() {
                continue;
            }
            for (d, &s) in dst.iter_mut().zip(x.channel(c)) {
                *d += k * s;
            }
        }
    }
    Ok(Tensor3::from_parts(m.rows(), height, width, out))
}

/// Intermediate results of one block evaluation.
pub(crate) struct BlockForward<T> {
    pub guide: Tensor3<T>,
    /// Filter output over `Ψ`, plus an `S_u` channel when normalized.
    pub filtered: Tensor3<T>,
    pub passes: Option<[DirectionalPass<T>; 2]>,
    pub output: Tensor3<T>,
}

fn append_ones<T: Real>(t: &Tensor3<T>) -> Tensor3<T> {
    let (c, h, w) = t.shape();
    let mut v = t.as_slice().to_vec();
    v.extend(std::iter::repeat_n(T::one(), h * w));
    Tensor3::from_parts(c + 1, h, w, v)
}

pub(crate) fn block_forward<T: Real>(
    input: &Tensor3<T>,
    p: &BlockParams<T>,
    counter: &EvalCounter,
    opts: &FilterOptions,
    record: bool,
) -> Result<BlockForward<T>> {
    p.validate()?;
    p.check_input(input)?;
    let guide = pointwise_transform(input, &p.lambda)?;
    let psi = pointwise_transform(input, &p.psi)?;
    let values = if p.normalized { append_ones(&psi) } else { psi };
    let (filtered, passes) = filter_recorded(&guide, &values, p.scale, opts, counter, record)?;

    let (channels, height, width) = input.shape();
    let plane = height * width;
    let g = filtered.as_slice();
    let x = input.as_slice();
    let out = if p.normalized {
        let s = &g[channels * plane..];
        (0..channels * plane)
            .map(|i| g[i] / s[i % plane] + x[i])
            .collect()
    } else {
        g.iter().zip(x).map(|(&a, &b)| a + b).collect()
    };
    Ok(BlockForward {
        guide,
        filtered,
        passes: record.then_some(passes),
        output: Tensor3::from_parts(channels, height, width, out),
    })
}

/// One block: `filter(λ·I, ψ·I) + I`, or `filter(λ·I, ψ·I) / S + I` in
/// normalized mode.
pub fn semi_global_block<T: Real>(
    input: &Tensor3<T>,
    p: &BlockParams<T>,
    counter: &EvalCounter,
) -> Result<Tensor3<T>> {
    semi_global_block_with(input, p, counter, &FilterOptions::default())
}

pub fn semi_global_block_with<T: Real>(
    input: &Tensor3<T>,
    p: &BlockParams<T>,
    counter: &EvalCounter,
    opts: &FilterOptions,
) -> Result<Tensor3<T>> {
    block_forward(input, p, counter, opts, false).map(|f| f.output)
}

/// Applies `cfg.levels` blocks in sequence. Each level computes its guide from
/// its own input.
pub fn hierarchical_apply<T: Real>(
    input: &Tensor3<T>,
    cfg: &HierarchyConfig,
    params: &[BlockParams<T>],
    counter: &EvalCounter,
) -> Result<Tensor3<T>> {
    hierarchical_apply_with(input, cfg, params, counter, &FilterOptions::default())
}

pub fn hierarchical_apply_with<T: Real>(
    input: &Tensor3<T>,
    cfg: &HierarchyConfig,
    params: &[BlockParams<T>],
    counter: &EvalCounter,
    opts: &FilterOptions,
) -> Result<Tensor3<T>> {
    cfg.check(params)?;
    let mut x = input.clone();
    for level in 0..cfg.levels {
        x = semi_global_block_with(&x, cfg.params_for(params, level), counter, opts)?;
    }
    Ok(x)
}

/// Criss-cross weights of `u` in `gather_cross` order, computed as running
/// products of edge weights outward from `u` on the guide `λ·I`.
pub fn attention_slice<T: Real>(
    input: &Tensor3<T>,
    p: &BlockParams<T>,
    u: Position,
) -> Result<Vec<T>> {
    p.check_input(input)?;
    input.check_position(u)?;
    let guide = pointwise_transform(input, &p.lambda)?;
    let column: Vec<Vec<T>> = (0..guide.height())
        .map(|y| guide.vector_at(Position::new(u.x, y)))
        .collect();
    let row: Vec<Vec<T>> = (0..guide.width())
        .map(|x| guide.vector_at(Position::new(x, u.y)))
        .collect();
    let wc = outward_products(&column, u.y, p.scale.beta)?;
    let wr = outward_products(&row, u.x, p.scale.alpha)?;
    Ok(cross_positions(guide.height(), guide.width(), u)
        .into_iter()
        .map(|q| if q.x == u.x { wc[q.y] } else { wr[q.x] })
        .collect())
}

fn outward_products<T: Real>(nodes: &[Vec<T>], from: usize, scale: T) -> Result<Vec<T>> {
    let d = nodes
        .windows(2)
        .map(|pair| euclid_distance(&pair[0], &pair[1]))
        .collect::<Result<Vec<_>>>()?;
    let e = EdgeWeights::from_distances(&d, scale)?;
    let w = e.weights();
    let mut out = vec![T::one(); nodes.len()];
    for v in (0..from).rev() {
        out[v] = out[v + 1] * w[v];
    }
    for v in from + 1..nodes.len() {
        out[v] = out[v - 1] * w[v - 1];
    }
    Ok(out)
}

/// Influence of every input position on the output at `u` after the whole
/// hierarchy, with each level's guide frozen at its unperturbed value.
///
/// Entry `(y, x)` is `‖Δout(u)‖₁ / (ε·C)` where the input's value pathway
/// gets `+ε` on every channel at `(y, x)`. With the guides frozen each level
/// is linear in its input, so the perturbation is carried through the levels
/// directly as a difference instead of subtracting two nearly equal outputs.
pub fn effective_attention<T: Real>(
    input: &Tensor3<T>,
    cfg: &HierarchyConfig,
    params: &[BlockParams<T>],
    u: Position,
    epsilon: T,
) -> Result<Matrix<T>> {
    cfg.check(params)?;
    input.check_position(u)?;
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (channels, height, width) = input.shape();

    // frozen guides (and normalizers) of the unperturbed run
    let mut frozen = Vec::with_capacity(cfg.levels);
    let mut x = input.clone();
    let counter = EvalCounter::new();
    for level in 0..cfg.levels {
        let p = cfg.params_for(params, level);
        let f = block_forward(&x, p, &counter, &FilterOptions::default(), false)?;
        let norm = p.normalized.then(|| f.filtered.channel(channels).to_vec());
        frozen.push((f.guide, norm));
        x = f.output;
    }

    let sequential = FilterOptions {
        execution: Execution::Sequential,
        ..Default::default()
    };
    let plane = height * width;
    let entries = (0..plane)
        .into_par_iter()
        .map(|src| -> Result<T> {
            let mut delta = vec![T::zero(); channels * plane];
            for c in 0..channels {
                delta[c * plane + src] = epsilon;
            }
            let mut delta = Tensor3::from_parts(channels, height, width, delta);
            for (level, (guide, norm)) in frozen.iter().enumerate() {
                let p = cfg.params_for(params, level);
                let dpsi = pointwise_transform(&delta, &p.psi)?;
                let g = semi_global_filter_with(
                    guide,
                    &dpsi,
                    p.scale,
                    &EvalCounter::new(),
                    &sequential,
                )?;
                let next: Vec<T> = match norm {
                    Some(s) => g
                        .as_slice()
                        .iter()
                        .zip(delta.as_slice())
                        .enumerate()
                        .map(|(i, (&a, &d))| a / s[i % plane] + d)
                        .collect(),
                    None => g
                        .as_slice()
                        .iter()
                        .zip(delta.as_slice())
                        .map(|(&a, &d)| a + d)
                        .collect(),
                };
                delta = Tensor3::from_parts(channels, height, width, next);
            }
            let l1: T = (0..channels).map(|c| delta.get(c, u.y, u.x).abs()).sum();
            Ok(l1 / (epsilon * T::lit(channels as f64)))
        })
        .collect::<Result<Vec<T>>>()?;
    Matrix::from_vec(height, width, entries)
}
