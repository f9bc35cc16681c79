//! Dense channel-major feature maps and small dense matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A spatial location: `x` indexes columns, `y` indexes rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Dense `C x H x W` feature map stored channel-major then row-major:
/// element `(c, y, x)` lives at `c * H * W + y * W + x`.
///
/// Every element is finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "C={channels}, H={height}, W={width}; all must be at least 1"
        )));
    }
    Ok(())
}

impl<T: Real> Tensor3<T> {
    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        check_dims(channels, height, width)?;
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values supplied for a {channels}x{height}x{width} tensor ({expected} expected)",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Builds a tensor from already validated parts. Internal arithmetic keeps
    /// finiteness for finite inputs, so the element scan is skipped here.
    pub(crate) fn from_parts(channels: usize, height: usize, width: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            values,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, fill: T) -> Result<Self> {
        check_dims(channels, height, width)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite(0));
        }
        Ok(Self::from_parts(
            channels,
            height,
            width,
            vec![fill; channels * height * width],
        ))
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, T::zero())
    }

    /// Deterministic tensor with values uniform in `[-1, 1]`, drawn from a
    /// ChaCha8 stream seeded with `seed`.
    pub fn random(channels: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..channels * height * width)
            .map(|_| T::lit(rng.gen_range(-1.0..=1.0)))
            .collect();
        Ok(Self::from_parts(channels, height, width, values))
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        c * self.height * self.width + y * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.values[self.index(c, y, x)]
    }

    /// Writes one element. Non-finite values are rejected.
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite(self.index(c, y, x)));
        }
        let i = self.index(c, y, x);
        self.values[i] = v;
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn check_position(&self, u: Position) -> Result<()> {
        if u.x >= self.width || u.y >= self.height {
            return Err(Error::Bounds {
                x: u.x,
                y: u.y,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// The channel vector at `u`.
    pub fn vector_at(&self, u: Position) -> Vec<T> {
        let plane = self.plane();
        let base = u.y * self.width + u.x;
        (0..self.channels)
            .map(|c| self.values[c * plane + base])
            .collect()
    }

    pub fn same_spatial(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Element-wise sum; shapes must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self::from_parts(
            self.channels,
            self.height,
            self.width,
            values,
        ))
    }

    pub fn scaled(&self, k: T) -> Self {
        let values = self.values.iter().map(|&v| v * k).collect();
        Self::from_parts(self.channels, self.height, self.width, values)
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Self {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_parts(self.channels, self.height, self.width, values)
    }

    /// `Σ self ⊙ other`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot contract {:?} with {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Channel `c` as an `H x W` row-major slice.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.plane();
        &self.values[c * plane..(c + 1) * plane]
    }
}

/// `make_tensor`: a `C x H x W` tensor with every element equal to `fill`.
pub fn make_tensor<T: Real>(
    channels: usize,
    height: usize,
    width: usize,
    fill: T,
) -> Result<Tensor3<T>> {
    Tensor3::filled(channels, height, width, fill)
}

/// `random_tensor`: deterministic uniform `[-1, 1]` values for a given seed.
pub fn random_tensor<T: Real>(
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Tensor3<T>> {
    Tensor3::random(channels, height, width, seed)
}

/// Collects the feature vectors on the criss-cross region of `u` into a
/// `(H + W - 1) x C` matrix.
///
/// Row order: the `H` positions of `u`'s column from top to bottom, then the
/// `W - 1` positions of `u`'s row from left to right skipping `u`. The
/// attention slices use the same order.
pub fn gather_cross<T: Real>(t: &Tensor3<T>, u: Position) -> Result<Matrix<T>> {
    t.check_position(u)?;
    let rows = cross_positions(t.height(), t.width(), u);
    let mut data = Vec::with_capacity(rows.len() * t.channels());
    for p in &rows {
        data.extend(t.vector_at(*p));
    }
    Matrix::from_vec(rows.len(), t.channels(), data)
}

/// Positions of the criss-cross region of `u` in gather order.
pub fn cross_positions(height: usize, width: usize, u: Position) -> Vec<Position> {
    let column = (0..height).map(|y| Position::new(u.x, y));
    let row = (0..width)
        .filter(|&x| x != u.x)
        .map(|x| Position::new(x, u.y));
    column.chain(row).collect()
}

/// Normwise relative error `max|got − want| / max|want|` (0 when both are
/// all zeros). Used by every equivalence check in the crate.
pub fn max_relative_error<T: Real>(got: &[T], want: &[T]) -> T {
    assert_eq!(got.len(), want.len(), "compared slices differ in length");
    let diff = got
        .iter()
        .zip(want)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    let scale = want.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if diff == T::zero() {
        T::zero()
    } else if scale == T::zero() {
        T::infinity()
    } else {
        diff / scale
    }
}

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix; both dimensions must be at least 1"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        Ok(m)
    }

    /// Entries uniform in `[-1, 1] / sqrt(cols)`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("{rows}x{cols} matrix")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-1.0..=1.0) * k))
            .collect();
        Self::from_vec(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
