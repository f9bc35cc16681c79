//! Feature distances and the exponential edge/path weights built on them.
//!
//! A path weight is the product of the edge weights along a row or column
//! path, which collapses to a single exponential of the summed distance.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Horizontal (`alpha`) and vertical (`beta`) distance scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> Scale<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        check_scale(alpha)?;
        check_scale(beta)?;
        Ok(Self { alpha, beta })
    }

    pub fn uniform(s: T) -> Result<Self> {
        Self::new(s, s)
    }
}

impl<T: Real> Default for Scale<T> {
    /// Both scales start at 1.
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }
}

pub(crate) fn check_scale<T: Real>(s: T) -> Result<()> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "scale must be positive and finite, got {s}"
        )));
    }
    Ok(())
}

/// Euclidean distance between two feature vectors.
pub fn euclid_distance<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt())
}

/// `exp(-d / scale)`.
pub fn edge_weight<T: Real>(d: T, scale: T) -> Result<T> {
    if !(d >= T::zero()) {
        return Err(Error::Domain(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    check_scale(scale)?;
    Ok((-d / scale).exp())
}

/// Weight of a path with per-edge distances `ds`: `exp(-(Σ ds) / scale)`.
/// The empty path (`u == v`) has weight 1.
pub fn path_weight<T: Real>(ds: &[T], scale: T) -> Result<T> {
    if let Some(d) = ds.iter().find(|d| !(**d >= T::zero())) {
        return Err(Error::Domain(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    check_scale(scale)?;
    let total: T = ds.iter().copied().sum();
    Ok((-total / scale).exp())
}
