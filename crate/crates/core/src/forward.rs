//! The ptychographic measurement operator.
//!
//! For scan position `k` with top-left corner `r_k`, the operator crops a
//! `frame x frame` window of the object, multiplies it by the probe and
//! takes a 2D DFT. Stacking the K frames gives `A f`. With the unitary
//! normalization `F^H F = I`, so `A^H A` is the diagonal illumination map
//! `sum_k |p_k|^2` and its maximum is the Lipschitz-like constant whose
//! reciprocal is the fixed gradient step.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::image::{ComplexImage, RealImage, Sample};
use crate::metrics::FftCounter;
use crate::{Error, Result};

/// Default entry cap for [`PtychoOperator::dense_materialize`].
pub const DENSE_CAP: usize = 1 << 22;

/// Frame top-left offsets `(x, y)` in object pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPattern {
    pub positions: Vec<(usize, usize)>,
}

impl ScanPattern {
    pub fn new(positions: Vec<(usize, usize)>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// K square frames stored back to back, each row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack<T> {
    count: usize,
    frame: usize,
    data: Vec<T>,
}

/// Amplitudes `b` or intensities `d`.
pub type DiffractionStack = FrameStack<f64>;
/// Detector-plane fields `A f`.
pub type FieldStack = FrameStack<Complex64>;

impl<T: Sample> FrameStack<T> {
    pub fn zeros(count: usize, frame: usize) -> Self {
        Self {
            count,
            frame,
            data: vec![T::default(); count * frame * frame],
        }
    }

    pub fn from_vec(count: usize, frame: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != count * frame * frame {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for {count} frames of {frame}x{frame}",
                data.len()
            )));
        }
        Ok(Self { count, frame, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn frame_len(&self) -> usize {
        self.frame * self.frame
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

    pub fn frame_data(&self, k: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_data_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.frame_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.frame_len())
    }
}

impl DiffractionStack {
    pub fn check_nonnegative(&self) -> Result<()> {
        match self.data.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidArgument(format!(
                "diffraction sample {i} is {} (must be finite and >= 0)",
                self.data[i]
            ))),
        }
    }

    /// Frames stacked vertically as one `frame x (K * frame)` image.
    pub fn to_image(&self) -> RealImage {
        RealImage::from_vec(self.frame, self.count * self.frame, self.data.clone()).expect("stack length matches image")
    }

    pub fn from_image(img: &RealImage) -> Result<Self> {
        let frame = img.width();
        if frame == 0 || !img.height().is_multiple_of(frame) {
            return Err(Error::Format(format!(
                "{}x{} image is not a stack of square frames",
                img.width(),
                img.height()
            )));
        }
        Self::from_vec(img.height() / frame, frame, img.data().to_vec())
    }
}

impl FieldStack {
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &FieldStack) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn abs(&self) -> DiffractionStack {
        FrameStack {
            count: self.count,
            frame: self.frame,
            data: self.data.iter().map(|v| v.norm()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DftNormalization {
    /// `1/frame` on both directions; `F^H F = I`.
    #[default]
    Unitary,
    /// No scaling; `F^H F = frame^2 I`.
    Unnormalized,
}

/// The matrix `A`: probe, scan and frame geometry.
#[derive(Clone)]
pub struct PtychoOperator {
    probe: ComplexImage,
    scan: ScanPattern,
    object_width: usize,
    object_height: usize,
    frame: usize,
    normalization: DftNormalization,
    deterministic: bool,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for PtychoOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PtychoOperator")
            .field("object", &(self.object_width, self.object_height))
            .field("frame", &self.frame)
            .field("positions", &self.scan.len())
            .field("normalization", &self.normalization)
            .field("deterministic", &self.deterministic)
            .finish()
    }
}

impl PtychoOperator {
    /// Builds a unitary, deterministic operator. Frames that would leave
    /// the object are rejected.
    pub fn new(probe: ComplexImage, scan: ScanPattern, object_width: usize, object_height: usize) -> Result<Self> {
        Self::with_options(
            probe,
            scan,
            object_width,
            object_height,
            DftNormalization::Unitary,
            true,
        )
    }

    pub fn with_options(
        probe: ComplexImage,
        scan: ScanPattern,
        object_width: usize,
        object_height: usize,
        normalization: DftNormalization,
        deterministic: bool,
    ) -> Result<Self> {
        let frame = probe.width();
        if frame == 0 || probe.height() != frame {
            return Err(Error::DimensionMismatch(format!(
                "probe must be square and non-empty, got {}x{}",
                probe.width(),
                probe.height()
            )));
        }
        if !probe.is_finite() {
            return Err(Error::NonFinite("probe".into()));
        }
        if scan.is_empty() {
            return Err(Error::InvalidArgument("scan has no positions".into()));
        }
        for (k, &(x, y)) in scan.positions.iter().enumerate() {
            if x + frame > object_width || y + frame > object_height {
                return Err(Error::InvalidArgument(format!(
                    "frame {k} at ({x}, {y}) leaves the {object_width}x{object_height} object"
                )));
            }
        }
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft(frame, FftDirection::Forward);
        let fft_inverse = planner.plan_fft(frame, FftDirection::Inverse);
        Ok(Self {
            probe,
            scan,
            object_width,
            object_height,
            frame,
            normalization,
            deterministic,
            fft_forward,
            fft_inverse,
        })
    }

    /// Same geometry and FFT plans, different probe.
    pub fn with_probe(&self, probe: ComplexImage) -> Result<Self> {
        if probe.dims() != (self.frame, self.frame) {
            return Err(Error::DimensionMismatch(format!(
                "probe {}x{} for frame {}",
                probe.width(),
                probe.height(),
                self.frame
            )));
        }
        if !probe.is_finite() {
            return Err(Error::NonFinite("probe".into()));
        }
        Ok(Self { probe, ..self.clone() })
    }

    pub fn set_deterministic(&mut self, deterministic: bool) {
        self.deterministic = deterministic;
    }

    pub fn probe(&self) -> &ComplexImage {
        &self.probe
    }

    pub fn scan(&self) -> &ScanPattern {
        &self.scan
    }

    pub fn positions(&self) -> usize {
        self.scan.len()
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn object_dims(&self) -> (usize, usize) {
        (self.object_width, self.object_height)
    }

    /// Number of measurements `M = K * frame^2`.
    pub fn measurements(&self) -> usize {
        self.positions() * self.frame * self.frame
    }

    pub fn normalization(&self) -> DftNormalization {
        self.normalization
    }

    /// `F^H F = alpha I`.
    pub fn alpha(&self) -> f64 {
        match self.normalization {
            DftNormalization::Unitary => 1.0,
            DftNormalization::Unnormalized => (self.frame * self.frame) as f64,
        }
    }

    fn dft_scale(&self) -> f64 {
        match self.normalization {
            DftNormalization::Unitary => 1.0 / self.frame as f64,
            DftNormalization::Unnormalized => 1.0,
        }
    }

    pub fn check_object(&self, f: &ComplexImage) -> Result<()> {
        if f.dims() != (self.object_width, self.object_height) {
            return Err(Error::DimensionMismatch(format!(
                "object {}x{}, operator expects {}x{}",
                f.width(),
                f.height(),
                self.object_width,
                self.object_height
            )));
        }
        Ok(())
    }

    pub fn check_stack<T: Sample>(&self, g: &FrameStack<T>) -> Result<()> {
        if g.count() != self.positions() || g.frame() != self.frame {
            return Err(Error::DimensionMismatch(format!(
                "stack of {} frames of {}, operator has {} of {}",
                g.count(),
                g.frame(),
                self.positions(),
                self.frame
            )));
        }
        Ok(())
    }

    /// Writes `probe ⊙ crop(f, r_k)` into `out`.
    pub fn exit_wave(&self, f: &ComplexImage, k: usize, out: &mut [Complex64]) {
        exit_wave_with(&self.probe, self.scan.positions[k], f, out);
    }

    /// Window of `f` at position `k`, without the probe.
    pub fn crop(&self, f: &ComplexImage, k: usize, out: &mut [Complex64]) {
        let (x0, y0) = self.scan.positions[k];
        let (w, n) = (f.width(), self.frame);
        for y in 0..n {
            let row = (y0 + y) * w + x0;
            out[y * n..(y + 1) * n].copy_from_slice(&f.data()[row..row + n]);
        }
    }

    /// Adds `buf` (frame grid) into the object window at position `k`.
    pub fn add_to_window(&self, k: usize, buf: &[Complex64], obj: &mut ComplexImage) {
        let (x0, y0) = self.scan.positions[k];
        let (w, n) = (obj.width(), self.frame);
        let data = obj.data_mut();
        for y in 0..n {
            let row = (y0 + y) * w + x0;
            for (o, b) in data[row..row + n].iter_mut().zip(&buf[y * n..(y + 1) * n]) {
                *o += b;
            }
        }
    }

    /// Normalized forward 2D DFT of one frame in place; counts one transform.
    pub fn forward_frame(&self, buf: &mut [Complex64], counter: &FftCounter) {
        fft2_square(&*self.fft_forward, self.frame, buf);
        scale(buf, self.dft_scale());
        counter.add(1);
    }

    /// `F^H` of one frame in place; counts one transform.
    pub fn inverse_frame(&self, buf: &mut [Complex64], counter: &FftCounter) {
        fft2_square(&*self.fft_inverse, self.frame, buf);
        scale(buf, self.dft_scale());
        counter.add(1);
    }

    /// `A f`: K forward DFTs.
    pub fn apply(&self, f: &ComplexImage, counter: &FftCounter) -> Result<FieldStack> {
        self.check_object(f)?;
        let mut out = FieldStack::zeros(self.positions(), self.frame);
        let n = out.frame_len();
        let s = self.dft_scale();
        out.data.par_chunks_mut(n).enumerate().for_each(|(k, buf)| {
            self.exit_wave(f, k, buf);
            fft2_square(&*self.fft_forward, self.frame, buf);
            scale(buf, s);
        });
        counter.add(self.positions() as u64);
        Ok(out)
    }

    /// `A^H g`: K inverse DFTs, accumulated into the object grid. In
    /// deterministic mode the accumulation runs in scan order.
    pub fn adjoint(&self, g: &FieldStack, counter: &FftCounter) -> Result<ComplexImage> {
        self.check_stack(g)?;
        let n = g.frame_len();
        let s = self.dft_scale();
        let back = |k: usize| -> Vec<Complex64> {
            let mut buf = g.frame_data(k).to_vec();
            fft2_square(&*self.fft_inverse, self.frame, &mut buf);
            for (b, p) in buf.iter_mut().zip(self.probe.data()) {
                *b *= p.conj() * s;
            }
            buf
        };
        let (w, h) = (self.object_width, self.object_height);
        let out = if self.deterministic {
            let mut obj = ComplexImage::zeros(w, h);
            let chunk = (rayon::current_num_threads() * 4).max(1);
            let ks: Vec<usize> = (0..self.positions()).collect();
            for block in ks.chunks(chunk) {
                let frames: Vec<Vec<Complex64>> = block.par_iter().map(|&k| back(k)).collect();
                for (&k, buf) in block.iter().zip(&frames) {
                    self.add_to_window(k, buf, &mut obj);
                }
            }
            obj
        } else {
            (0..self.positions())
                .into_par_iter()
                .fold(
                    || ComplexImage::zeros(w, h),
                    |mut acc, k| {
                        let buf = back(k);
                        self.add_to_window(k, &buf, &mut acc);
                        acc
                    },
                )
                .reduce(
                    || ComplexImage::zeros(w, h),
                    |mut a, b| {
                        a.axpy(Complex64::new(1.0, 0.0), &b);
                        a
                    },
                )
        };
        debug_assert_eq!(n, self.frame * self.frame);
        counter.add(self.positions() as u64);
        Ok(out)
    }

    /// `alpha * sum_k |p_k|^2` on the object grid: the diagonal of `A^H A`.
    pub fn illumination_map(&self) -> RealImage {
        illumination_with(
            &self.probe,
            &self.scan,
            self.object_width,
            self.object_height,
            self.alpha(),
        )
    }

    /// `lambda_max(A^H A)`, the maximum of the illumination map.
    pub fn lipschitz_constant(&self) -> Result<f64> {
        let l = self.illumination_map().max();
        if l > 0.0 && l.is_finite() {
            Ok(l)
        } else {
            Err(Error::ZeroProbe)
        }
    }

    /// `1 / lambda_max(A^H A)`.
    pub fn fixed_step(&self) -> Result<f64> {
        Ok(1.0 / self.lipschitz_constant()?)
    }

    /// Explicit `M x N` matrix built entry by entry from DFT twiddles.
    /// Intended for test oracles on tiny instances.
    pub fn dense_materialize(&self, cap: usize) -> Result<DenseMatrix> {
        let n = self.frame;
        let rows = self.measurements();
        let cols = self.object_width * self.object_height;
        let entries = rows.saturating_mul(cols);
        if entries > cap {
            return Err(Error::DenseCapExceeded { entries, cap });
        }
        let mut data = vec![Complex64::new(0.0, 0.0); entries];
        let s = self.dft_scale();
        let tau = std::f64::consts::TAU;
        for (k, &(x0, y0)) in self.scan.positions.iter().enumerate() {
            for v in 0..n {
                for u in 0..n {
                    let row = k * n * n + v * n + u;
                    for yy in 0..n {
                        for xx in 0..n {
                            let p = self.probe.get(xx, yy);
                            if p == Complex64::new(0.0, 0.0) {
                                continue;
                            }
                            let phase = -tau * (((u * xx) % n) as f64 + ((v * yy) % n) as f64) / n as f64;
                            let col = (y0 + yy) * self.object_width + (x0 + xx);
                            data[row * cols + col] = p * Complex64::from_polar(s, phase);
                        }
                    }
                }
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

pub(crate) fn exit_wave_with(probe: &ComplexImage, (x0, y0): (usize, usize), f: &ComplexImage, out: &mut [Complex64]) {
    let n = probe.width();
    let w = f.width();
    for y in 0..n {
        let row = (y0 + y) * w + x0;
        let src = &f.data()[row..row + n];
        let pr = &probe.data()[y * n..(y + 1) * n];
        for ((o, a), p) in out[y * n..(y + 1) * n].iter_mut().zip(src).zip(pr) {
            *o = a * p;
        }
    }
}

pub(crate) fn illumination_with(
    probe: &ComplexImage,
    scan: &ScanPattern,
    width: usize,
    height: usize,
    alpha: f64,
) -> RealImage {
    let n = probe.width();
    let mut map = RealImage::zeros(width, height);
    let pw: Vec<f64> = probe.data().iter().map(|p| p.norm_sqr()).collect();
    let data = map.data_mut();
    for &(x0, y0) in &scan.positions {
        for y in 0..n {
            let row = (y0 + y) * width + x0;
            for (m, q) in data[row..row + n].iter_mut().zip(&pw[y * n..(y + 1) * n]) {
                *m += q;
            }
        }
    }
    data.iter_mut().for_each(|v| *v *= alpha);
    map
}

fn scale(buf: &mut [Complex64], s: f64) {
    if s != 1.0 {
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Unnormalized 2D transform of a square row-major buffer.
fn fft2_square(fft: &dyn Fft<f64>, n: usize, buf: &mut [Complex64]) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
    transpose_square(n, buf);
    fft.process_with_scratch(buf, &mut scratch);
    transpose_square(n, buf);
}

fn transpose_square(n: usize, buf: &mut [Complex64]) {
    for y in 0..n {
        for x in y + 1..n {
            buf.swap(y * n + x, x * n + y);
        }
    }
}

/// Centered 2D DFT of a square frame: `fftshift`s the input so the zero
/// frequency maps to the frame center. Uncounted; used for probe seeding.
pub fn centered_inverse_dft(frame: usize, data: &[Complex64]) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(frame, FftDirection::Inverse);
    let mut buf = data.to_vec();
    fft2_square(&*fft, frame, &mut buf);
    scale(&mut buf, 1.0 / frame as f64);
    fftshift_square(frame, &buf)
}

pub fn fftshift_square(n: usize, buf: &[Complex64]) -> Vec<Complex64> {
    let h = n / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for y in 0..n {
        for x in 0..n {
            out[((y + h) % n) * n + (x + h) % n] = buf[y * n + x];
        }
    }
    out
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^H v`
    pub fn adjoint_mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (row, &vi) in self.data.chunks_exact(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * vi;
            }
        }
        out
    }

    /// `A^H A` as an `N x N` row-major matrix.
    pub fn gram(&self) -> Vec<Complex64> {
        let n = self.cols;
        let mut g = vec![Complex64::new(0.0, 0.0); n * n];
        for row in self.data.chunks_exact(n) {
            for (i, a) in row.iter().enumerate() {
                if *a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let ac = a.conj();
                for (j, b) in row.iter().enumerate() {
                    g[i * n + j] += ac * b;
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ComplexImage {
        ComplexImage::from_fn(w, h, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_op(rng: &mut ChaCha8Rng, w: usize, h: usize, frame: usize, k: usize) -> PtychoOperator {
        let probe = random_image(rng, frame, frame);
        let positions = (0..k)
            .map(|_| (rng.random_range(0..=w - frame), rng.random_range(0..=h - frame)))
            .collect();
        PtychoOperator::new(probe, ScanPattern::new(positions), w, h).unwrap()
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }

    #[test]
    fn zero_object_gives_zero_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = random_op(&mut rng, 8, 8, 4, 3);
        let counter = FftCounter::new();
        let out = op.apply(&ComplexImage::zeros(8, 8), &counter).unwrap();
        assert!(out.data().iter().all(|v| *v == c(0.0, 0.0)));
        let back = op.adjoint(&FieldStack::zeros(3, 4), &counter).unwrap();
        assert!(back.data().iter().all(|v| *v == c(0.0, 0.0)));
        assert_eq!(counter.get(), 6);
    }

    #[test]
    fn delta_object_gives_flat_spectrum() {
        let n = 6;
        let probe = ComplexImage::filled(n, n, c(1.0, 0.0));
        let op = PtychoOperator::new(probe, ScanPattern::new(vec![(0, 0)]), n, n).unwrap();
        let mut f = ComplexImage::zeros(n, n);
        f.set(0, 0, c(1.0, 0.0));
        let out = op.apply(&f, &FftCounter::new()).unwrap();
        for v in out.data() {
            assert!((v - c(1.0 / n as f64, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn apply_and_adjoint_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = random_op(&mut rng, 8, 8, 4, 4);
        let a = op.dense_materialize(DENSE_CAP).unwrap();
        let f = random_image(&mut rng, 8, 8);
        let counter = FftCounter::new();
        let af = op.apply(&f, &counter).unwrap();
        assert!(rel(af.data(), &a.mul_vec(f.data())) <= 1e-12);
        let g = FieldStack::from_vec(
            4,
            4,
            (0..64)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap();
        let ahg = op.adjoint(&g, &counter).unwrap();
        assert!(rel(ahg.data(), &a.adjoint_mul_vec(g.data())) <= 1e-12);
    }

    #[test]
    fn dense_columns_are_basis_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_op(&mut rng, 6, 5, 3, 3);
        let a = op.dense_materialize(DENSE_CAP).unwrap();
        for col in 0..30 {
            let mut e = ComplexImage::zeros(6, 5);
            e.data_mut()[col] = c(1.0, 0.0);
            let ae = op.apply(&e, &FftCounter::new()).unwrap();
            for (r, v) in ae.data().iter().enumerate() {
                assert!((a.get(r, col) - v).norm() <= 1e-14, "entry ({r}, {col})");
            }
        }
    }

    #[test]
    fn dense_scalar_operator() {
        let probe = ComplexImage::filled(1, 1, c(1.0, 0.0));
        let op = PtychoOperator::new(probe, ScanPattern::new(vec![(0, 0)]), 1, 1).unwrap();
        let a = op.dense_materialize(DENSE_CAP).unwrap();
        assert_eq!((a.rows, a.cols), (1, 1));
        assert_eq!(a.get(0, 0), c(1.0, 0.0));
        assert!(matches!(op.dense_materialize(0), Err(Error::DenseCapExceeded { .. })));
    }

    #[test]
    fn adjoint_identity_and_diagonal_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let w = rng.random_range(4..=12);
            let h = rng.random_range(4..=12);
            let frame = rng.random_range(1..=w.min(h).min(6));
            let k = rng.random_range(1..=6);
            let op = random_op(&mut rng, w, h, frame, k);
            let f = random_image(&mut rng, w, h);
            let g = FieldStack::from_vec(
                k,
                frame,
                (0..k * frame * frame)
                    .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap();
            let counter = FftCounter::new();
            let lhs = op.apply(&f, &counter).unwrap().inner(&g);
            let rhs = f.inner(&op.adjoint(&g, &counter).unwrap());
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(rhs.norm()).max(1e-300));
            assert_eq!(counter.get(), 2 * k as u64);

            let aha = op.adjoint(&op.apply(&f, &counter).unwrap(), &counter).unwrap();
            let map = op.illumination_map();
            let expect: Vec<Complex64> = f.data().iter().zip(map.data()).map(|(v, m)| v * m).collect();
            assert!(rel(aha.data(), &expect) <= 1e-12);
        }
    }

    #[test]
    fn nondeterministic_adjoint_agrees_to_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut op = random_op(&mut rng, 12, 12, 5, 20);
        let g = op.apply(&random_image(&mut rng, 12, 12), &FftCounter::new()).unwrap();
        let det = op.adjoint(&g, &FftCounter::new()).unwrap();
        op.set_deterministic(false);
        let par = op.adjoint(&g, &FftCounter::new()).unwrap();
        assert!(rel(par.data(), det.data()) <= 1e-13);
    }

    #[test]
    fn illumination_examples() {
        let ones = ComplexImage::filled(4, 4, c(1.0, 0.0));
        let single = PtychoOperator::new(ones.clone(), ScanPattern::new(vec![(0, 0)]), 4, 4).unwrap();
        assert!(single.illumination_map().data().iter().all(|&v| v == 1.0));
        assert_eq!(single.lipschitz_constant().unwrap(), 1.0);

        let double = PtychoOperator::new(ones, ScanPattern::new(vec![(1, 1), (1, 1)]), 6, 6).unwrap();
        let map = double.illumination_map();
        for y in 0..6 {
            for x in 0..6 {
                let inside = (1..5).contains(&x) && (1..5).contains(&y);
                assert_eq!(map.get(x, y), if inside { 2.0 } else { 0.0 });
            }
        }
        assert_eq!(double.lipschitz_constant().unwrap(), 2.0);
    }

    #[test]
    fn illumination_matches_dense_gram_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let op = random_op(&mut rng, 7, 6, 3, 5);
        let gram = op.dense_materialize(DENSE_CAP).unwrap().gram();
        let map = op.illumination_map();
        let n = 42;
        for i in 0..n {
            assert!((gram[i * n + i].re - map.data()[i]).abs() <= 1e-12 * map.max());
            assert!(gram[i * n + i].im.abs() <= 1e-12);
        }
    }

    #[test]
    fn unnormalized_dft_scales_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probe = random_image(&mut rng, 4, 4);
        let scan = ScanPattern::new(vec![(0, 0), (2, 1)]);
        let unit = PtychoOperator::new(probe.clone(), scan.clone(), 6, 6).unwrap();
        let raw = PtychoOperator::with_options(probe, scan, 6, 6, DftNormalization::Unnormalized, true).unwrap();
        assert_eq!(raw.alpha(), 16.0);
        let l_unit = unit.lipschitz_constant().unwrap();
        let l_raw = raw.lipschitz_constant().unwrap();
        assert!((l_raw - 16.0 * l_unit).abs() <= 1e-12 * l_raw);
        let f = random_image(&mut rng, 6, 6);
        let counter = FftCounter::new();
        let aha = raw.adjoint(&raw.apply(&f, &counter).unwrap(), &counter).unwrap();
        let map = raw.illumination_map();
        let expect: Vec<Complex64> = f.data().iter().zip(map.data()).map(|(v, m)| v * m).collect();
        assert!(rel(aha.data(), &expect) <= 1e-12);
    }

    #[test]
    fn construction_errors() {
        let probe = ComplexImage::filled(4, 4, c(1.0, 0.0));
        assert!(PtychoOperator::new(probe.clone(), ScanPattern::new(vec![]), 8, 8).is_err());
        assert!(PtychoOperator::new(probe.clone(), ScanPattern::new(vec![(5, 0)]), 8, 8).is_err());
        assert!(PtychoOperator::new(ComplexImage::zeros(4, 3), ScanPattern::new(vec![(0, 0)]), 8, 8).is_err());
        let zero = PtychoOperator::new(ComplexImage::zeros(4, 4), ScanPattern::new(vec![(0, 0)]), 8, 8).unwrap();
        assert!(matches!(zero.lipschitz_constant(), Err(Error::ZeroProbe)));
        let op = PtychoOperator::new(probe, ScanPattern::new(vec![(0, 0)]), 8, 8).unwrap();
        assert!(op.apply(&ComplexImage::zeros(7, 8), &FftCounter::new()).is_err());
        assert!(op.adjoint(&FieldStack::zeros(2, 4), &FftCounter::new()).is_err());
    }
}
