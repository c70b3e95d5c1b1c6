//! Dense 2D arrays shared by every module: complex transmission images,
//! real maps, mask regions and the raw `PTYF` dump format.
//!
//! Storage is row-major with `index = y * width + x` everywhere.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::{Error, Result};

/// Magnitudes below this are treated as exact zeros by [`complex_sgn`].
pub const SGN_ZERO_THRESHOLD: f64 = 1e-300;

/// Row-major 2D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ComplexImage = Image<Complex64>;
pub type RealImage = Image<f64>;

/// Element types that can be checked for finiteness and dumped to disk.
pub trait Sample: Copy + Default + Send + Sync + 'static {
    const DTYPE: u32;
    const WORDS: usize;
    fn is_finite(&self) -> bool;
    fn to_words(&self, out: &mut Vec<f64>);
    fn from_words(words: &[f64]) -> Self;
}

impl Sample for f64 {
    const DTYPE: u32 = 1;
    const WORDS: usize = 1;
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn to_words(&self, out: &mut Vec<f64>) {
        out.push(*self);
    }
    fn from_words(words: &[f64]) -> Self {
        words[0]
    }
}

impl Sample for Complex64 {
    const DTYPE: u32 = 2;
    const WORDS: usize = 2;
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn to_words(&self, out: &mut Vec<f64>) {
        out.push(self.re);
        out.push(self.im);
    }
    fn from_words(words: &[f64]) -> Self {
        Complex64::new(words[0], words[1])
    }
}

impl<T: Sample> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::default())
    }

    /// Wraps `data`, rejecting length mismatches and non-finite entries.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image sample {i}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(Sample::is_finite)
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_dims<U>(&self, other: &Image<U>, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map<U: Sample>(&self, mut f: impl FnMut(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes the `PTYF` dump: magic, u32 width, u32 height, u32 dtype tag,
    /// then little-endian f64 samples (complex interleaved re/im).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; 16];
        header[0..4].copy_from_slice(DUMP_MAGIC);
        header[4..8].copy_from_slice(&dim_u32(self.width)?.to_le_bytes());
        header[8..12].copy_from_slice(&dim_u32(self.height)?.to_le_bytes());
        header[12..16].copy_from_slice(&T::DTYPE.to_le_bytes());
        w.write_all(&header)?;
        let mut words = Vec::with_capacity(self.data.len() * T::WORDS);
        for v in &self.data {
            v.to_words(&mut words);
        }
        let mut bytes = Vec::with_capacity(words.len() * 8);
        for word in words {
            bytes.extend_from_slice(&word.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != DUMP_MAGIC {
            return Err(Error::Format("missing PTYF magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (width, height, dtype) = (word(4) as usize, word(8) as usize, word(12));
        if dtype != T::DTYPE {
            return Err(Error::Format(format!("dtype tag {dtype}, expected {}", T::DTYPE)));
        }
        let n_words = width * height * T::WORDS;
        let mut bytes = vec![0u8; n_words * 8];
        r.read_exact(&mut bytes)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after dump payload".into()));
        }
        let words: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = words.chunks_exact(T::WORDS).map(T::from_words).collect();
        Self::from_vec(width, height, data)
    }
}

const DUMP_MAGIC: &[u8; 4] = b"PTYF";

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} exceeds u32")))
}

impl ComplexImage {
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Conjugate-linear in `self`: `sum conj(self_n) * other_n`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&mut self, c: Complex64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: Complex64, other: &ComplexImage) {
        debug_assert!(self.same_dims(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += c * b);
    }

    pub fn sub(&self, other: &ComplexImage) -> Self {
        debug_assert!(self.same_dims(other));
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn abs(&self) -> RealImage {
        self.map(|v| v.norm())
    }

    pub fn arg(&self) -> RealImage {
        self.map(|v| v.arg())
    }
}

impl RealImage {
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Rectangular pixel window `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRegion {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl MaskRegion {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn pixel_count(&self) -> usize {
        self.w * self.h
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::EmptyMask);
        }
        if self.x0 + self.w > width || self.y0 + self.h > height {
            return Err(Error::MaskOutOfBounds(format!(
                "{}x{}+{}+{} in {width}x{height}",
                self.w, self.h, self.x0, self.y0
            )));
        }
        Ok(())
    }

    /// Row-major pixel values of `img` under the mask.
    pub fn extract<T: Sample>(&self, img: &Image<T>) -> Result<Vec<T>> {
        self.check_inside(img.width(), img.height())?;
        let mut out = Vec::with_capacity(self.pixel_count());
        for y in self.y0..self.y0 + self.h {
            let row = y * img.width();
            out.extend_from_slice(&img.data()[row + self.x0..row + self.x0 + self.w]);
        }
        Ok(out)
    }
}

/// Entry-wise `a / |a|`, with `sgn(0) = 0`.
pub fn complex_sgn(a: &[Complex64]) -> Result<Vec<Complex64>> {
    if let Some(i) = a.iter().position(|v| !Sample::is_finite(v)) {
        return Err(Error::NonFinite(format!("sgn input entry {i}")));
    }
    Ok(a.iter().map(|&v| sgn(v)).collect())
}

/// Scalar signum used on hot paths; callers guarantee finiteness.
#[inline]
pub fn sgn(v: Complex64) -> Complex64 {
    let r = v.norm();
    if r < SGN_ZERO_THRESHOLD {
        Complex64::new(0.0, 0.0)
    } else {
        v / r
    }
}

/// l2 norm of `f` restricted to the mask window.
pub fn masked_norm(f: &ComplexImage, mask: &MaskRegion) -> Result<f64> {
    let vals = mask.extract(f)?;
    Ok(vals.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
}
