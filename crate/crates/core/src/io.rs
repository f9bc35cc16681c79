//! Binary tensor files and 8-bit PGM export.
//!
//! Tensor file layout, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `SGST`                           |
//! | 4      | 4    | version, `u32` = 1                     |
//! | 8      | 4    | dtype, `u32`: 1 = `f64`, 2 = `f32`     |
//! | 12     | 12   | `C`, `H`, `W` as `u32`                 |
//! | 24     | ...  | `C·H·W` values, channel-major          |

use std::fs;
use std::path::Path;

use crate::block::BlockParams;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Matrix, Tensor3};
use crate::weights::Scale;

pub const MAGIC: [u8; 4] = *b"SGST";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F64 => 1,
            DType::F32 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F64),
            2 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor3<T>, dtype: DType) -> Result<Vec<u8>> {
    let (c, h, w) = t.shape();
    let dims = [c, h, w]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::Dimension(format!("{d} exceeds u32"))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(HEADER_LEN + t.as_slice().len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.as_slice() {
        match dtype {
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            DType::F32 => {
                let x = v.to_f32().expect("real to f32");
                out.extend_from_slice(&x.to_le_bytes())
            }
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(bytes.len(), "header truncated"))
}

/// Parses a tensor file image. The payload must be exactly `C·H·W` values.
pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<Tensor3<T>> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "header truncated"));
    }
    if bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let code = read_u32(bytes, 8)?;
    let dtype = DType::from_code(code)
        .ok_or_else(|| format_err(8, format!("unknown dtype code {code}")))?;
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let off = 12 + 4 * k;
        *d = read_u32(bytes, off)? as usize;
        if *d == 0 {
            return Err(format_err(off, "zero dimension"));
        }
    }
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| format_err(12, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    let width = dtype.width();
    let expected = count
        .checked_mul(width)
        .ok_or_else(|| format_err(12, "dimensions overflow"))?;
    if payload.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!(
                "payload truncated: {} of {count} values present",
                payload.len() / width
            ),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(
            HEADER_LEN + expected,
            "trailing bytes after payload",
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(width).enumerate() {
        let v = match dtype {
            DType::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
            DType::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
        };
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + i * width, "non-finite value"));
        }
        values.push(T::lit(v));
    }
    Tensor3::from_vec(dims[0], dims[1], dims[2], values)
}

pub fn save_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor3<T>, dtype: DType) -> Result<()> {
    fs::write(path, encode_tensor(t, dtype)?)?;
    Ok(())
}

pub fn load_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor3<T>> {
    decode_tensor(&fs::read(path)?)
}

/// Binary (P5) 8-bit PGM of a non-negative map, min-max stretched to
/// `0..=255`. A constant map encodes as all zeros.
pub fn encode_pgm<T: Real>(map: &Matrix<T>) -> Result<Vec<u8>> {
    let data = map.as_slice();
    if let Some(v) = data.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "map values must be finite and non-negative, got {v}"
        )));
    }
    let lo = data.iter().copied().fold(T::infinity(), T::min);
    let hi = data.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out = format!("P5\n{} {}\n255\n", map.cols(), map.rows()).into_bytes();
    if hi > lo {
        let span = (hi - lo).as_f64();
        out.extend(data.iter().map(|&v| {
            let t = (v - lo).as_f64() / span;
            (t * 255.0).round().clamp(0.0, 255.0) as u8
        }));
    } else {
        out.extend(std::iter::repeat_n(0u8, data.len()));
    }
    Ok(out)
}

pub fn export_pgm<T: Real>(map: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(map)?)?;
    Ok(())
}

/// Packs block parameters into a single-channel tensor of height `C' + C + 1`
/// and width `max(C, 2)`: rows `0..C'` hold `λ`, the next `C` rows hold `ψ`,
/// and the last row starts with `α, β`. Unused cells are zero.
pub fn params_to_tensor<T: Real>(p: &BlockParams<T>) -> Result<Tensor3<T>> {
    let c = p.channels();
    let cg = p.guide_channels();
    let width = c.max(2);
    let height = cg + c + 1;
    let mut v = vec![T::zero(); height * width];
    for r in 0..cg {
        v[r * width..r * width + c].copy_from_slice(p.lambda.row(r));
    }
    for r in 0..c {
        let o = (cg + r) * width;
        v[o..o + c].copy_from_slice(p.psi.row(r));
    }
    v[(height - 1) * width] = p.scale.alpha;
    v[(height - 1) * width + 1] = p.scale.beta;
    Tensor3::from_vec(1, height, width, v)
}

/// Inverse of [`params_to_tensor`] for inputs with `channels` channels.
pub fn params_from_tensor<T: Real>(
    t: &Tensor3<T>,
    channels: usize,
    normalized: bool,
) -> Result<BlockParams<T>> {
    let (tc, height, width) = t.shape();
    if tc != 1 || width != channels.max(2) || height < channels + 2 {
        return Err(Error::Shape(format!(
            "parameter bundle {:?} does not fit {channels}-channel input",
            t.shape()
        )));
    }
    let cg = height - channels - 1;
    let row = |r: usize| t.channel(0)[r * width..r * width + channels].to_vec();
    let lambda = Matrix::from_rows(&(0..cg).map(row).collect::<Vec<_>>())?;
    let psi = Matrix::from_rows(&(cg..cg + channels).map(row).collect::<Vec<_>>())?;
    let last = &t.channel(0)[(height - 1) * width..];
    BlockParams::new(lambda, psi, Scale::new(last[0], last[1])?, normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_tensor;
    use proptest::prelude::*;

    #[test]
    fn round_trip_both_dtypes() {
        let t = random_tensor::<f64>(3, 5, 7, 1).unwrap();
        let back: Tensor3<f64> = decode_tensor(&encode_tensor(&t, DType::F64).unwrap()).unwrap();
        assert_eq!(back, t);

        let t32 = random_tensor::<f32>(3, 5, 7, 1).unwrap();
        let back: Tensor3<f32> = decode_tensor(&encode_tensor(&t32, DType::F32).unwrap()).unwrap();
        assert_eq!(back, t32);
    }

    #[test]
    fn header_layout() {
        let t = Tensor3::from_vec(1, 1, 2, vec![1.0f64, -2.0]).unwrap();
        let b = encode_tensor(&t, DType::F64).unwrap();
        assert_eq!(&b[..4], b"SGST");
        assert_eq!(b[4..8], 1u32.to_le_bytes());
        assert_eq!(b[8..12], 1u32.to_le_bytes());
        assert_eq!(b[12..24], [1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(b[24..32], 1.0f64.to_le_bytes());
        assert_eq!(b.len(), 24 + 16);
    }

    #[test]
    fn rejects_malformed_files() {
        let t = random_tensor::<f64>(2, 2, 2, 3).unwrap();
        let good = encode_tensor(&t, DType::F64).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_tensor::<f64>(&bad),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_tensor::<f64>(&bad),
            Err(Error::Format { offset: 4, .. })
        ));

        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_tensor::<f64>(&bad),
            Err(Error::Format { offset: 8, .. })
        ));

        // header claims 2x2x2, payload holds 7 values
        let short = &good[..good.len() - 8];
        assert!(matches!(
            decode_tensor::<f64>(short),
            Err(Error::Format { .. })
        ));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_tensor::<f64>(&long),
            Err(Error::Format { .. })
        ));

        assert!(matches!(
            decode_tensor::<f64>(&good[..10]),
            Err(Error::Format { .. })
        ));

        let mut bad = good;
        bad[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_tensor::<f64>(&bad),
            Err(Error::Format { offset: 16, .. })
        ));
    }

    #[test]
    fn pgm_cases() {
        let one = Matrix::from_vec(1, 1, vec![3.0f64]).unwrap();
        assert_eq!(encode_pgm(&one).unwrap(), b"P5\n1 1\n255\n\x00".to_vec());

        let m = Matrix::from_vec(2, 3, vec![0.5, 1.0, 2.5, 0.5, 4.5, 1.0]).unwrap();
        let b = encode_pgm(&m).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        let px = &b[header.len()..];
        assert_eq!(px.len(), 6);
        assert_eq!(*px.iter().min().unwrap(), 0);
        assert_eq!(*px.iter().max().unwrap(), 255);
        assert_eq!(px[0], 0);
        assert_eq!(px[4], 255);

        let big = Matrix::from_vec(97, 97, (0..9409).map(|i| i as f64).collect()).unwrap();
        let header = b"P5\n97 97\n255\n";
        assert_eq!(encode_pgm(&big).unwrap().len(), header.len() + 9409);

        let neg = Matrix::from_vec(1, 2, vec![0.0, -1.0]).unwrap();
        assert!(encode_pgm(&neg).is_err());
    }

    #[test]
    fn params_bundle_round_trip() {
        for c in [1, 3, 16] {
            let mut p = BlockParams::<f64>::seeded(c, 4).unwrap();
            p.scale = Scale::new(0.75, 1.5).unwrap();
            let t = params_to_tensor(&p).unwrap();
            assert_eq!(params_from_tensor(&t, c, false).unwrap(), p);
            assert!(params_from_tensor(&t, c + 1, false).is_err());
        }
    }

    proptest! {
        #[test]
        fn any_f64_tensor_round_trips(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let t = random_tensor::<f64>(c, h, w, seed).unwrap();
            let back: Tensor3<f64> = decode_tensor(&encode_tensor(&t, DType::F64).unwrap()).unwrap();
            prop_assert_eq!(back.as_slice(), t.as_slice());
        }

        #[test]
        fn truncation_is_always_detected(cut in 1usize..40, seed in any::<u64>()) {
            let t = random_tensor::<f64>(1, 2, 3, seed).unwrap();
            let b = encode_tensor(&t, DType::F32).unwrap();
            let keep = b.len().saturating_sub(cut);
            prop_assert!(decode_tensor::<f64>(&b[..keep]).is_err());
        }
    }
}
