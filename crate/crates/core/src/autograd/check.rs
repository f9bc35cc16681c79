use crate::block::{pointwise_transform, semi_global_block, BlockParams};
use crate::error::{Error, Result};
use crate::fastpath::EvalCounter;
use crate::scalar::Real;
use crate::tensor::{Matrix, Tensor3};

use super::block::{backward_block, pointwise_backward, record_block};
use super::GradBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradComponent {
    Input,
    Alpha,
    Beta,
    Lambda,
    Psi,
}

impl GradComponent {
    pub const ALL: [GradComponent; 5] = [
        GradComponent::Input,
        GradComponent::Alpha,
        GradComponent::Beta,
        GradComponent::Lambda,
        GradComponent::Psi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradComponent::Input => "d_input",
            GradComponent::Alpha => "d_alpha",
            GradComponent::Beta => "d_beta",
            GradComponent::Lambda => "d_lambda",
            GradComponent::Psi => "d_psi",
        }
    }
}

/// Which function the probe loss wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedOp {
    /// The full block.
    Block,
    /// Only the value projection `ψ·I` (linear, so differences are exact up
    /// to rounding).
    ValueTransform,
}

/// Everything needed to evaluate the probe loss `Σ probe ⊙ op(input)`.
#[derive(Debug, Clone)]
pub struct CheckPoint<T> {
    pub input: Tensor3<T>,
    pub params: BlockParams<T>,
    pub probe: Tensor3<T>,
    pub op: CheckedOp,
}

impl<T: Real> CheckPoint<T> {
    /// Random input, seeded parameters and a random probe tensor.
    pub fn seeded(
        channels: usize,
        height: usize,
        width: usize,
        normalized: bool,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            input: Tensor3::random(channels, height, width, seed)?,
            params: BlockParams::seeded(channels, seed.wrapping_add(100))?
                .with_normalized(normalized),
            probe: Tensor3::random(channels, height, width, seed.wrapping_add(200))?,
            op: CheckedOp::Block,
        })
    }

    pub fn loss(&self) -> Result<T> {
        let out = match self.op {
            CheckedOp::Block => semi_global_block(&self.input, &self.params, &EvalCounter::new())?,
            CheckedOp::ValueTransform => pointwise_transform(&self.input, &self.params.psi)?,
        };
        self.probe.dot(&out)
    }

    pub fn analytic(&self) -> Result<GradBundle<T>> {
        match self.op {
            CheckedOp::Block => {
                let tape = record_block(&self.input, &self.params, &EvalCounter::new())?;
                backward_block(&tape, &self.params, &self.probe)
            }
            CheckedOp::ValueTransform => {
                let (c, h, w) = self.input.shape();
                let mut d_input = vec![T::zero(); c * h * w];
                let d_psi =
                    pointwise_backward(&self.input, &self.params.psi, &self.probe, &mut d_input)?;
                Ok(GradBundle {
                    d_input: Tensor3::from_vec(c, h, w, d_input)?,
                    d_alpha: T::zero(),
                    d_beta: T::zero(),
                    d_lambda: Matrix::zeros(self.params.lambda.rows(), self.params.lambda.cols())?,
                    d_psi,
                })
            }
        }
    }

    fn coordinates(&self, component: GradComponent) -> usize {
        match component {
            GradComponent::Input => self.input.as_slice().len(),
            GradComponent::Alpha | GradComponent::Beta => 1,
            GradComponent::Lambda => self.params.lambda.as_slice().len(),
            GradComponent::Psi => self.params.psi.as_slice().len(),
        }
    }

    fn shifted(&self, component: GradComponent, i: usize, delta: T) -> Self {
        let mut p = self.clone();
        match component {
            GradComponent::Input => p.input.values_mut()[i] += delta,
            GradComponent::Alpha => p.params.scale.alpha += delta,
            GradComponent::Beta => p.params.scale.beta += delta,
            GradComponent::Lambda => p.params.lambda.as_mut_slice()[i] += delta,
            GradComponent::Psi => p.params.psi.as_mut_slice()[i] += delta,
        }
        p
    }
}

fn analytic_entries<T: Real>(g: &GradBundle<T>, component: GradComponent) -> Vec<T> {
    match component {
        GradComponent::Input => g.d_input.as_slice().to_vec(),
        GradComponent::Alpha => vec![g.d_alpha],
        GradComponent::Beta => vec![g.d_beta],
        GradComponent::Lambda => g.d_lambda.as_slice().to_vec(),
        GradComponent::Psi => g.d_psi.as_slice().to_vec(),
    }
}

/// Largest relative disagreement between the analytic gradient of one
/// component and central differences `(f(x+h) − f(x−h)) / 2h`, using
/// `|a − n| / max(|a|, |n|, 1e-8)` per coordinate.
pub fn finite_diff_check<T: Real>(
    component: GradComponent,
    point: &CheckPoint<T>,
    h: T,
) -> Result<T> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let analytic = analytic_entries(&point.analytic()?, component);
    let floor = T::lit(1e-8);
    let two_h = h + h;
    let mut worst = T::zero();
    for (i, &a) in analytic
        .iter()
        .enumerate()
        .take(point.coordinates(component))
    {
        let plus = point.shifted(component, i, h).loss()?;
        let minus = point.shifted(component, i, -h).loss()?;
        let n = (plus - minus) / two_h;
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_step() {
        let p = CheckPoint::<f64>::seeded(2, 3, 3, false, 1).unwrap();
        assert!(finite_diff_check(GradComponent::Input, &p, 0.0).is_err());
        assert!(finite_diff_check(GradComponent::Input, &p, -1e-5).is_err());
    }

    #[test]
    fn linear_transform_is_exact() {
        let mut p = CheckPoint::<f64>::seeded(3, 4, 4, false, 2).unwrap();
        p.op = CheckedOp::ValueTransform;
        for comp in [GradComponent::Input, GradComponent::Psi] {
            let e = finite_diff_check(comp, &p, 1e-5).unwrap();
            assert!(e <= 1e-7, "{}: {e}", comp.name());
        }
    }

    #[test]
    fn small_block_gradients() {
        for normalized in [false, true] {
            let p = CheckPoint::<f64>::seeded(2, 4, 4, normalized, 3).unwrap();
            for comp in GradComponent::ALL {
                let e = finite_diff_check(comp, &p, 1e-5).unwrap();
                assert!(e <= 1e-5, "normalized={normalized} {}: {e}", comp.name());
            }
        }
    }

    #[test]
    fn coarse_step_is_worse() {
        let p = CheckPoint::<f64>::seeded(3, 6, 6, false, 4).unwrap();
        let fine = finite_diff_check(GradComponent::Lambda, &p, 1e-5).unwrap();
        let coarse = finite_diff_check(GradComponent::Lambda, &p, 1e-1).unwrap();
        assert!(coarse > 10.0 * fine, "coarse {coarse} fine {fine}");
    }
}
