//! Dense BCHW tensors and the LCNT binary file format.
//!
//! LCNT layout (little-endian throughout):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `b"LCNT"`                |
//! | 4      | 1    | version, always 1              |
//! | 5      | 1    | dtype code (0 = f32, 1 = f64)  |
//! | 6      | 16   | B, C, H, W as `u32`            |
//! | 22     | ..   | payload, BCHW row-major        |

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{LcnError, Result};

pub const MAGIC: &[u8; 4] = b"LCNT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(LcnError::UnsupportedDtype(other)),
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Extents of a BCHW volume. All extents are at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(LcnError::Dim(format!(
                "all dims must be >= 1, got {b}x{c}x{h}x{w}"
            )));
        }
        Ok(Dims { b, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one (h, w) plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one sample.
    pub fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.c + c) * self.h + h) * self.w + w
    }

    /// Inverse of [`Dims::index`].
    pub fn coords(&self, flat: usize) -> (usize, usize, usize, usize) {
        let w = flat % self.w;
        let rest = flat / self.w;
        let h = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, h, w)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.b, self.c, self.h, self.w)
    }
}

impl std::str::FromStr for Dims {
    type Err = LcnError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        if parts.len() != 4 {
            return Err(LcnError::Dim(format!("expected BxCxHxW, got {s:?}")));
        }
        let mut v = [0usize; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .trim()
                .parse()
                .map_err(|_| LcnError::Dim(format!("bad extent {part:?} in {s:?}")))?;
        }
        Dims::new(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Dense 4-D feature volume in BCHW order, W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Storage,
}

impl Tensor4 {
    pub fn from_f64(dims: Dims, elems: Vec<f64>) -> Result<Self> {
        check_len(dims, elems.len())?;
        Ok(Tensor4 {
            dims,
            data: Storage::F64(elems),
        })
    }

    pub fn from_f32(dims: Dims, elems: Vec<f32>) -> Result<Self> {
        check_len(dims, elems.len())?;
        Ok(Tensor4 {
            dims,
            data: Storage::F32(elems),
        })
    }

    pub fn zeros(dims: Dims, dtype: DType) -> Self {
        Self::full(dims, dtype, 0.0)
    }

    pub fn full(dims: Dims, dtype: DType, value: f64) -> Self {
        let data = match dtype {
            DType::F32 => Storage::F32(vec![value as f32; dims.len()]),
            DType::F64 => Storage::F64(vec![value; dims.len()]),
        };
        Tensor4 { dims, data }
    }

    /// Builds a tensor of `dtype` from real64 values, rounding when narrowing.
    pub fn from_f64_as(dims: Dims, elems: Vec<f64>, dtype: DType) -> Result<Self> {
        match dtype {
            DType::F64 => Self::from_f64(dims, elems),
            DType::F32 => Self::from_f32(dims, elems.into_iter().map(|v| v as f32).collect()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, flat: usize) -> f64 {
        match &self.data {
            Storage::F32(v) => v[flat] as f64,
            Storage::F64(v) => v[flat],
        }
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.at(self.dims.index(b, c, h, w))
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            Storage::F64(v) => Some(v),
            Storage::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Storage::F32(v) => Some(v),
            Storage::F64(_) => None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    /// Values of sample `b` widened to real64.
    pub fn sample_f64(&self, b: usize) -> Vec<f64> {
        let n = self.dims.sample();
        let range = b * n..(b + 1) * n;
        match &self.data {
            Storage::F32(v) => v[range].iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v[range].to_vec(),
        }
    }

    pub fn cast(&self, dtype: DType) -> Tensor4 {
        if dtype == self.dtype() {
            return self.clone();
        }
        let data = match (&self.data, dtype) {
            (Storage::F64(v), DType::F32) => Storage::F32(v.iter().map(|&x| x as f32).collect()),
            (Storage::F32(v), DType::F64) => Storage::F64(v.iter().map(|&x| x as f64).collect()),
            _ => unreachable!(),
        };
        Tensor4 {
            dims: self.dims,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        let data = match &self.data {
            Storage::F32(v) => Storage::F32(v.iter().map(|&x| f(x as f64) as f32).collect()),
            Storage::F64(v) => Storage::F64(v.iter().map(|&x| f(x)).collect()),
        };
        Tensor4 {
            dims: self.dims,
            data,
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        match &self.data {
            Storage::F32(v) => v.iter().position(|x| !x.is_finite()),
            Storage::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some(i) => {
                let (b, c, h, w) = self.dims.coords(i);
                Err(LcnError::Data(format!(
                    "non-finite element {} at ({b}, {c}, {h}, {w})",
                    self.at(i)
                )))
            }
        }
    }

    /// Largest `|a - b| / max(1, |b|)` over all elements, with `other` as reference.
    pub fn max_rel_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "dims mismatch in comparison");
        (0..self.len())
            .map(|i| {
                let (a, b) = (self.at(i), other.at(i));
                (a - b).abs() / b.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "dims mismatch in comparison");
        (0..self.len())
            .map(|i| (self.at(i) - other.at(i)).abs())
            .fold(0.0, f64::max)
    }

    /// Bit-level equality of dims, dtype and elements.
    pub fn bit_eq(&self, other: &Tensor4) -> bool {
        if self.dims != other.dims {
            return false;
        }
        match (&self.data, &other.data) {
            (Storage::F32(a), Storage::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Storage::F64(a), Storage::F64(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * self.dtype().size_of());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        for d in [self.dims.b, self.dims.c, self.dims.h, self.dims.w] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            Storage::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Storage::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(LcnError::Format("bad magic, expected \"LCNT\"".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(LcnError::Truncation {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        if bytes[4] != VERSION {
            return Err(LcnError::Format(format!(
                "unsupported version {}",
                bytes[4]
            )));
        }
        let dtype = DType::from_code(bytes[5])?;
        let mut ext = [0usize; 4];
        for (i, slot) in ext.iter_mut().enumerate() {
            let off = 6 + 4 * i;
            *slot = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        }
        let dims = Dims::new(ext[0], ext[1], ext[2], ext[3])?;
        let payload = &bytes[HEADER_LEN..];
        let expected = dims.len() as u64 * dtype.size_of() as u64;
        if (payload.len() as u64) < expected {
            return Err(LcnError::Truncation {
                expected,
                found: payload.len() as u64,
            });
        }
        if payload.len() as u64 > expected {
            return Err(LcnError::Format(format!(
                "{} trailing bytes after payload",
                payload.len() as u64 - expected
            )));
        }
        let t = match dtype {
            DType::F32 => Tensor4::from_f32(
                dims,
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )?,
            DType::F64 => Tensor4::from_f64(
                dims,
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )?,
        };
        t.ensure_finite()?;
        Ok(t)
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    if dims.len() != len {
        return Err(LcnError::Shape(format!(
            "{} elements do not fill dims {dims}",
            len
        )));
    }
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LcnError::io(path, e))?;
    Tensor4::from_bytes(&bytes)
}

/// Writes `t` as an LCNT file. Non-finite tensors are rejected before the file is touched.
pub fn write_tensor(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    t.ensure_finite()?;
    let bytes = t.to_bytes();
    let mut f = fs::File::create(path).map_err(|e| LcnError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| LcnError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Uniform01,
    Normal01,
}

/// Seeded real64 test data.
///
/// The stream is xoshiro256++ seeded through splitmix64 (`seed_from_u64`), so a
/// given seed yields the same tensor on every platform.
pub fn fill_random(dims: [usize; 4], seed: u64, dist: Distribution) -> Result<Tensor4> {
    let dims = Dims::new(dims[0], dims[1], dims[2], dims[3])?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let elems: Vec<f64> = match dist {
        Distribution::Uniform01 => (0..dims.len()).map(|_| rng.random::<f64>()).collect(),
        Distribution::Normal01 => (0..dims.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    Tensor4::from_f64(dims, elems)
}
