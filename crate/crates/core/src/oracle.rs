//! Brute-force reference implementations.
//!
//! Everything here evaluates weights pair by pair straight from the guide
//! features, with no recursion and no shared intermediate state. It is slow
//! on purpose: the fast path is tested against it.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{cross_positions, Matrix, Position, Tensor3};
use crate::weights::{edge_weight, euclid_distance, Scale};

/// Row and column sums at one position, each including the center with
/// weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAggregate<T> {
    pub center: Position,
    pub row_sum: Vec<T>,
    pub col_sum: Vec<T>,
}

impl<T: Real> CrossAggregate<T> {
    pub fn total(&self) -> Vec<T> {
        self.row_sum
            .iter()
            .zip(&self.col_sum)
            .map(|(&a, &b)| a + b)
            .collect()
    }
}

/// Weight of every node on a chain as seen from `u`, by walking outward and
/// accumulating edge distances.
fn chain_weights_from<T, F>(len: usize, u: usize, scale: T, feature: F) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(usize) -> Vec<T>,
{
    let mut out = vec![T::zero(); len];
    out[u] = edge_weight(T::zero(), scale)?;
    let mut d = T::zero();
    for v in (0..u).rev() {
        d += euclid_distance(&feature(v), &feature(v + 1))?;
        out[v] = edge_weight(d, scale)?;
    }
    d = T::zero();
    for (v, o) in out.iter_mut().enumerate().skip(u + 1) {
        d += euclid_distance(&feature(v - 1), &feature(v))?;
        *o = edge_weight(d, scale)?;
    }
    Ok(out)
}

/// `out_u = Σ_v Ω(u, v) · values_v` along one chain, where `Ω(u, v)` is the
/// exponential of the summed guide distances between `u` and `v`.
pub fn chain_filter_bruteforce<T: Real>(
    guide: &Matrix<T>,
    values: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>> {
    if guide.rows() != values.rows() {
        return Err(Error::Shape(format!(
            "guide has {} nodes, values have {}",
            guide.rows(),
            values.rows()
        )));
    }
    let len = values.rows();
    let channels = values.cols();
    let mut out = Vec::with_capacity(len * channels);
    for u in 0..len {
        let w = chain_weights_from(len, u, scale, |i| guide.row(i).to_vec())?;
        for c in 0..channels {
            out.push(
                w.iter()
                    .enumerate()
                    .map(|(v, &wv)| wv * values.get(v, c))
                    .sum(),
            );
        }
    }
    Matrix::from_vec(len, channels, out)
}

fn check_pair<T: Real>(guide: &Tensor3<T>, values: &Tensor3<T>) -> Result<()> {
    if !guide.same_spatial(values) {
        return Err(Error::Shape(format!(
            "guide {:?} and values {:?} differ spatially",
            guide.shape(),
            values.shape()
        )));
    }
    Ok(())
}

fn row_matrix<T: Real>(t: &Tensor3<T>, y: usize) -> Matrix<T> {
    let data = (0..t.width())
        .flat_map(|x| t.vector_at(Position::new(x, y)))
        .collect();
    Matrix::from_vec(t.width(), t.channels(), data).expect("row gather")
}

fn column_matrix<T: Real>(t: &Tensor3<T>, x: usize) -> Matrix<T> {
    let data = (0..t.height())
        .flat_map(|y| t.vector_at(Position::new(x, y)))
        .collect();
    Matrix::from_vec(t.height(), t.channels(), data).expect("column gather")
}

/// Sum of the brute-force row filter (scale `alpha`) and column filter
/// (scale `beta`) at every position, without any residual term. The center
/// contributes once through each direction.
pub fn crisscross_oracle<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
) -> Result<Tensor3<T>> {
    check_pair(guide, values)?;
    let (channels, height, width) = values.shape();
    let mut out = Tensor3::zeros(channels, height, width)?;
    let plane = height * width;
    let acc = out.values_mut();
    for y in 0..height {
        let f =
            chain_filter_bruteforce(&row_matrix(guide, y), &row_matrix(values, y), scale.alpha)?;
        for x in 0..width {
            for c in 0..channels {
                acc[c * plane + y * width + x] += f.get(x, c);
            }
        }
    }
    for x in 0..width {
        let f = chain_filter_bruteforce(
            &column_matrix(guide, x),
            &column_matrix(values, x),
            scale.beta,
        )?;
        for y in 0..height {
            for c in 0..channels {
                acc[c * plane + y * width + x] += f.get(y, c);
            }
        }
    }
    Ok(out)
}

/// Direct evaluation of both directional sums at a single position, reading
/// only that position's row and column.
pub fn cross_aggregate<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
    u: Position,
) -> Result<CrossAggregate<T>> {
    check_pair(guide, values)?;
    values.check_position(u)?;
    let channels = values.channels();
    let wr = chain_weights_from(values.width(), u.x, scale.alpha, |x| {
        guide.vector_at(Position::new(x, u.y))
    })?;
    let wc = chain_weights_from(values.height(), u.y, scale.beta, |y| {
        guide.vector_at(Position::new(u.x, y))
    })?;
    let mut row_sum = vec![T::zero(); channels];
    for (x, &w) in wr.iter().enumerate() {
        for (c, s) in row_sum.iter_mut().enumerate() {
            *s += w * values.get(c, u.y, x);
        }
    }
    let mut col_sum = vec![T::zero(); channels];
    for (y, &w) in wc.iter().enumerate() {
        for (c, s) in col_sum.iter_mut().enumerate() {
            *s += w * values.get(c, y, u.x);
        }
    }
    Ok(CrossAggregate {
        center: u,
        row_sum,
        col_sum,
    })
}

/// Criss-cross weights of `u` in `gather_cross` order (column first, then the
/// row without `u`). The entry for `u` itself is 1.
pub fn attention_slice_oracle<T: Real>(
    guide: &Tensor3<T>,
    u: Position,
    scale: Scale<T>,
) -> Result<Vec<T>> {
    guide.check_position(u)?;
    let wc = chain_weights_from(guide.height(), u.y, scale.beta, |y| {
        guide.vector_at(Position::new(u.x, y))
    })?;
    let wr = chain_weights_from(guide.width(), u.x, scale.alpha, |x| {
        guide.vector_at(Position::new(x, u.y))
    })?;
    Ok(cross_positions(guide.height(), guide.width(), u)
        .into_iter()
        .map(|p| if p.x == u.x { wc[p.y] } else { wr[p.x] })
        .collect())
}

/// `S_u`: the total weight both directional sums give at `u`, so the center
/// counts twice. Single-channel result.
pub fn weight_sum_oracle<T: Real>(guide: &Tensor3<T>, scale: Scale<T>) -> Result<Tensor3<T>> {
    let (_, height, width) = guide.shape();
    let mut values = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let slice = attention_slice_oracle(guide, Position::new(x, y), scale)?;
            // the slice holds the center once; the row sum counts it again
            values.push(slice.iter().copied().sum::<T>() + T::one());
        }
    }
    Tensor3::from_vec(1, height, width, values)
}

/// `crisscross_oracle / S_u`, per position.
pub fn normalized_aggregate_oracle<T: Real>(
    guide: &Tensor3<T>,
    values: &Tensor3<T>,
    scale: Scale<T>,
) -> Result<Tensor3<T>> {
    let num = crisscross_oracle(guide, values, scale)?;
    let den = weight_sum_oracle(guide, scale)?;
    let (channels, height, width) = num.shape();
    let plane = height * width;
    let d = den.as_slice();
    let out = num
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| v / d[i % plane])
        .collect();
    Tensor3::from_vec(channels, height, width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{max_relative_error, random_tensor};

    const LN2: f64 = std::f64::consts::LN_2;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn single_node_chain_is_identity() {
        let out = chain_filter_bruteforce(&col(&[0.3]), &col(&[2.5]), 1.0).unwrap();
        assert_eq!(out.as_slice(), &[2.5]);
    }

    #[test]
    fn hand_evaluated_chain() {
        // edge distances (ln 2, 0)
        let out =
            chain_filter_bruteforce(&col(&[0.0, LN2, LN2]), &col(&[1.0, 0.0, 0.0]), 1.0).unwrap();
        let expect = [1.0, 0.5, 0.5];
        for (a, b) in out.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_guide_sums_everything() {
        let out = chain_filter_bruteforce(&col(&[0.7; 6]), &col(&[1.25; 6]), 1.0).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 6.0 * 1.25));
    }

    #[test]
    fn chain_length_mismatch() {
        assert!(matches!(
            chain_filter_bruteforce(&col(&[0.0, 1.0]), &col(&[1.0]), 1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn chain_reversal() {
        let g = Matrix::<f64>::random(9, 2, 1).unwrap();
        let v = Matrix::<f64>::random(9, 3, 2).unwrap();
        let rev = |m: &Matrix<f64>| {
            let rows: Vec<Vec<f64>> = (0..m.rows()).rev().map(|r| m.row(r).to_vec()).collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let a = chain_filter_bruteforce(&g, &v, 0.8).unwrap();
        let b = chain_filter_bruteforce(&rev(&g), &rev(&v), 0.8).unwrap();
        // same terms, different summation order
        assert!(max_relative_error(rev(&a).as_slice(), b.as_slice()) <= 1e-14);
    }

    #[test]
    fn crisscross_degenerate_and_constant() {
        let g = Tensor3::from_vec(1, 1, 1, vec![0.4]).unwrap();
        let v = Tensor3::from_vec(2, 1, 1, vec![3.0, -1.0]).unwrap();
        let out = crisscross_oracle(&g, &v, Scale::default()).unwrap();
        assert_eq!(out.as_slice(), &[6.0, -2.0]);

        let g = Tensor3::filled(2, 4, 5, 0.3).unwrap();
        let v = Tensor3::filled(3, 4, 5, 0.5).unwrap();
        let out = crisscross_oracle(&g, &v, Scale::new(0.2, 7.0).unwrap()).unwrap();
        assert!(out.as_slice().iter().all(|&x| x == 9.0 * 0.5));
    }

    #[test]
    fn crisscross_matches_cross_aggregate() {
        let g = random_tensor::<f64>(2, 4, 6, 1).unwrap();
        let v = random_tensor::<f64>(3, 4, 6, 2).unwrap();
        let s = Scale::new(0.7, 1.3).unwrap();
        let full = crisscross_oracle(&g, &v, s).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                let agg = cross_aggregate(&g, &v, s, Position::new(x, y)).unwrap();
                for (c, t) in agg.total().into_iter().enumerate() {
                    assert!((t - full.get(c, y, x)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn crisscross_shape_mismatch() {
        let g = Tensor3::<f64>::zeros(1, 2, 2).unwrap();
        let v = Tensor3::<f64>::zeros(1, 2, 3).unwrap();
        assert!(matches!(
            crisscross_oracle(&g, &v, Scale::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn locality_is_bit_exact() {
        let g = random_tensor::<f64>(2, 5, 5, 9).unwrap();
        let v = random_tensor::<f64>(2, 5, 5, 10).unwrap();
        let s = Scale::new(0.9, 1.1).unwrap();
        let u = Position::new(1, 3);
        let base = cross_aggregate(&g, &v, s, u).unwrap();
        let mut g2 = g.clone();
        let mut v2 = v.clone();
        g2.set(0, 0, 4, 5.0).unwrap();
        v2.set(1, 2, 2, -3.0).unwrap();
        assert_eq!(base, cross_aggregate(&g2, &v2, s, u).unwrap());
        let full = crisscross_oracle(&g, &v, s).unwrap();
        let full2 = crisscross_oracle(&g2, &v2, s).unwrap();
        for c in 0..2 {
            assert_eq!(full.get(c, u.y, u.x), full2.get(c, u.y, u.x));
        }
    }

    #[test]
    fn attention_slice_examples() {
        let g = Tensor3::filled(2, 3, 4, 0.25).unwrap();
        let s = attention_slice_oracle(&g, Position::new(2, 1), Scale::default()).unwrap();
        assert_eq!(s.len(), 3 + 4 - 1);
        assert!(s.iter().all(|&w| w == 1.0));

        let g = Tensor3::from_vec(1, 1, 1, vec![3.0]).unwrap();
        assert_eq!(
            attention_slice_oracle(&g, Position::new(0, 0), Scale::default()).unwrap(),
            vec![1.0]
        );

        let g = Tensor3::from_vec(1, 1, 3, vec![0.0, LN2, LN2]).unwrap();
        let s = attention_slice_oracle(&g, Position::new(0, 0), Scale::default()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 0.5).abs() < 1e-15 && (s[2] - 0.5).abs() < 1e-15);

        assert!(matches!(
            attention_slice_oracle(&g, Position::new(0, 1), Scale::default()),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn normalized_examples() {
        let g = random_tensor::<f64>(2, 4, 3, 5).unwrap();
        let v = Tensor3::filled(2, 4, 3, -0.75).unwrap();
        let out = normalized_aggregate_oracle(&g, &v, Scale::new(0.5, 2.0).unwrap()).unwrap();
        assert!(out.as_slice().iter().all(|&x| (x + 0.75).abs() < 1e-15));

        let g = Tensor3::from_vec(1, 1, 1, vec![0.0]).unwrap();
        let v = Tensor3::from_vec(1, 1, 1, vec![1.7]).unwrap();
        let out = normalized_aggregate_oracle(&g, &v, Scale::default()).unwrap();
        assert_eq!(out.as_slice(), &[1.7]);
    }

    #[test]
    fn weight_sum_bounds() {
        let g = random_tensor::<f64>(1, 5, 7, 4).unwrap();
        let s = weight_sum_oracle(&g, Scale::default()).unwrap();
        assert!(s.as_slice().iter().all(|&x| x > 0.0 && x <= 12.0));
        // the center appears in both trees
        assert!(s.as_slice().iter().all(|&x| x >= 2.0));
    }
}
