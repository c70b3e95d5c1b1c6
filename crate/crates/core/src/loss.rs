//! Amplitude loss `L(f) = || b - |A f| ||^2`, its generalized Wirtinger
//! gradient `A^H (A f - b ⊙ sgn(A f))`, and the smoothed family
//! `L_eps(f) = sum_m (sqrt(|a_m^H f|^2 + eps) - b_m)^2`.
//!
//! Gradients are Wirtinger derivatives with respect to `conj(f)`: the real
//! gradient over `(Re f, Im f)` is `2 (Re g, Im g)`.

use num_complex::Complex64;

use crate::forward::{DiffractionStack, FieldStack, PtychoOperator};
use crate::image::{sgn, ComplexImage};
use crate::metrics::FftCounter;
use crate::{Error, Result};

/// Loss value and gradient from one forward/adjoint pair.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub gradient: ComplexImage,
    pub ffts_used: u64,
}

fn check_inputs(op: &PtychoOperator, b: &DiffractionStack, f: &ComplexImage) -> Result<()> {
    op.check_object(f)?;
    op.check_stack(b)?;
    b.check_nonnegative()
}

/// Sum over frames in scan order of per-frame partial sums.
fn ordered_sum(z: &FieldStack, b: &DiffractionStack, term: impl Fn(Complex64, f64) -> f64) -> f64 {
    z.frames()
        .zip(b.frames())
        .map(|(zf, bf)| zf.iter().zip(bf).map(|(&zi, &bi)| term(zi, bi)).sum::<f64>())
        .sum()
}

/// `|| b - |z| ||^2` for an already-propagated field `z = A f`.
pub fn loss_from_field(z: &FieldStack, b: &DiffractionStack) -> f64 {
    ordered_sum(z, b, |zi, bi| {
        let d = zi.norm() - bi;
        d * d
    })
}

/// `z - b ⊙ sgn(z)`, in place.
pub fn amplitude_residual(z: &mut FieldStack, b: &DiffractionStack) {
    for (zi, &bi) in z.data_mut().iter_mut().zip(b.data()) {
        *zi -= sgn(*zi) * bi;
    }
}

pub fn amplitude_loss(
    op: &PtychoOperator,
    b: &DiffractionStack,
    f: &ComplexImage,
    counter: &FftCounter,
) -> Result<f64> {
    check_inputs(op, b, f)?;
    let z = op.apply(f, counter)?;
    Ok(loss_from_field(&z, b))
}

/// Loss and gradient sharing one forward pass: exactly 2K transforms.
pub fn wirtinger_gradient(
    op: &PtychoOperator,
    b: &DiffractionStack,
    f: &ComplexImage,
    counter: &FftCounter,
) -> Result<LossEval> {
    check_inputs(op, b, f)?;
    let start = counter.get();
    let mut z = op.apply(f, counter)?;
    let value = loss_from_field(&z, b);
    amplitude_residual(&mut z, b);
    let gradient = op.adjoint(&z, counter)?;
    Ok(LossEval {
        value,
        gradient,
        ffts_used: counter.get() - start,
    })
}

fn smoothed_modulus(z: Complex64, eps: f64) -> f64 {
    if eps == 0.0 {
        z.norm()
    } else {
        (z.norm_sqr() + eps).sqrt()
    }
}

pub fn smoothed_loss(
    op: &PtychoOperator,
    b: &DiffractionStack,
    f: &ComplexImage,
    eps: f64,
    counter: &FftCounter,
) -> Result<f64> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be >= 0")));
    }
    check_inputs(op, b, f)?;
    let z = op.apply(f, counter)?;
    Ok(ordered_sum(&z, b, |zi, bi| {
        let d = smoothed_modulus(zi, eps) - bi;
        d * d
    }))
}

/// `sum_m ((rho_m - b_m) / rho_m) a_m a_m^H f` with
/// `rho_m = sqrt(|a_m^H f|^2 + eps)`, via one apply and one adjoint.
pub fn smoothed_gradient(
    op: &PtychoOperator,
    b: &DiffractionStack,
    f: &ComplexImage,
    eps: f64,
    counter: &FftCounter,
) -> Result<ComplexImage> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be > 0")));
    }
    check_inputs(op, b, f)?;
    let mut z = op.apply(f, counter)?;
    for (zi, &bi) in z.data_mut().iter_mut().zip(b.data()) {
        let rho = (zi.norm_sqr() + eps).sqrt();
        *zi *= (rho - bi) / rho;
    }
    op.adjoint(&z, counter)
}
