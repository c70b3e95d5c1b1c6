//! Independent oracles shared by the integration suites: dense matrices,
//! Hermitian eigenvalues and finite differences. Nothing here calls the
//! gradient code it is used to check.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix};
use ptycho_core::forward::DenseMatrix;
use ptycho_core::{Complex64, ComplexImage, DiffractionStack, FftCounter, PtychoOperator, ScanPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ComplexImage {
    ComplexImage::from_fn(w, h, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub struct Tiny {
    pub op: PtychoOperator,
    pub truth: ComplexImage,
    pub amplitudes: DiffractionStack,
}

/// Random object up to 12x12, frame up to 6, 1 to 6 positions, complex
/// probe; amplitudes from a random ground truth.
pub fn random_tiny(rng: &mut ChaCha8Rng) -> Tiny {
    let frame = rng.random_range(1..=6);
    let w = rng.random_range(frame..=12);
    let h = rng.random_range(frame..=12);
    let k = rng.random_range(1..=6);
    let probe = random_image(rng, frame, frame);
    let positions = (0..k)
        .map(|_| (rng.random_range(0..=w - frame), rng.random_range(0..=h - frame)))
        .collect();
    let op = PtychoOperator::new(probe, ScanPattern::new(positions), w, h).unwrap();
    let truth = random_image(rng, w, h);
    let amplitudes = op.apply(&truth, &FftCounter::new()).unwrap().abs();
    Tiny { op, truth, amplitudes }
}

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Largest eigenvalue of a Hermitian `n x n` row-major matrix.
pub fn hermitian_max_eigenvalue(data: &[Complex64], n: usize) -> f64 {
    let m = DMatrix::from_fn(n, n, |r, c| {
        let v = data[r * n + c];
        Complex::new(v.re, v.im)
    });
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sum_m (sqrt(|(A f)_m|^2 + eps) - b_m)^2` through the dense matrix.
pub fn dense_loss(a: &DenseMatrix, b: &DiffractionStack, f: &ComplexImage, eps: f64) -> f64 {
    a.mul_vec(f.data())
        .iter()
        .zip(b.data())
        .map(|(z, bi)| ((z.norm_sqr() + eps).sqrt() - bi).powi(2))
        .sum()
}

/// Central differences of the dense `L_eps` along each real and imaginary axis,
/// packed as the Wirtinger gradient `(dL/dx + i dL/dy) / 2`.
pub fn fd_wirtinger_gradient(
    a: &DenseMatrix,
    b: &DiffractionStack,
    f: &ComplexImage,
    eps: f64,
    h: f64,
) -> ComplexImage {
    let mut g = ComplexImage::zeros(f.width(), f.height());
    let mut probe = f.clone();
    for i in 0..f.len() {
        let mut partial = [0.0; 2];
        for (axis, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
            probe.data_mut()[i] = f.data()[i] + dir;
            let up = dense_loss(a, b, &probe, eps);
            probe.data_mut()[i] = f.data()[i] - dir;
            let down = dense_loss(a, b, &probe, eps);
            probe.data_mut()[i] = f.data()[i];
            partial[axis] = (up - down) / (2.0 * h);
        }
        g.data_mut()[i] = Complex64::new(partial[0], partial[1]) * 0.5;
    }
    g
}

/// `(L(f + h u) - 2 L(f) + L(f - h u)) / h^2` for `L_eps`.
pub fn second_difference(
    a: &DenseMatrix,
    b: &DiffractionStack,
    f: &ComplexImage,
    u: &ComplexImage,
    eps: f64,
    h: f64,
) -> f64 {
    let mut plus = f.clone();
    plus.axpy(Complex64::new(h, 0.0), u);
    let mut minus = f.clone();
    minus.axpy(Complex64::new(-h, 0.0), u);
    (dense_loss(a, b, &plus, eps) - 2.0 * dense_loss(a, b, f, eps) + dense_loss(a, b, &minus, eps)) / (h * h)
}
