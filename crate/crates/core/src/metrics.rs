//! Reconstruction error metrics, FFT accounting and run logs.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::image::{ComplexImage, MaskRegion};
use crate::solvers::IterationRecord;
use crate::{Error, Result};

/// Cumulative number of 2D DFTs (forward and inverse). Only the forward
/// module increments it.
#[derive(Debug, Default)]
pub struct FftCounter(AtomicU64);

impl FftCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub(crate) fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

/// Centered half-size window covering `N/4` pixels.
pub fn central_mask(width: usize, height: usize) -> Result<MaskRegion> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "central mask needs even, nonzero dims; got {width}x{height}"
        )));
    }
    Ok(MaskRegion::new(width / 4, height / 4, width / 2, height / 2))
}

fn masked_pair(
    est: &ComplexImage,
    truth: &ComplexImage,
    mask: &MaskRegion,
) -> Result<(Vec<Complex64>, Vec<Complex64>, f64)> {
    est.ensure_dims(truth, "estimate vs truth")?;
    let e = mask.extract(est)?;
    let t = mask.extract(truth)?;
    let t_norm = t.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if t_norm == 0.0 {
        return Err(Error::InvalidArgument(
            "ground truth has zero norm under the mask".into(),
        ));
    }
    Ok((e, t, t_norm))
}

fn residual_norm(c: Complex64, e: &[Complex64], t: &[Complex64]) -> f64 {
    e.iter().zip(t).map(|(a, b)| (c * a - b).norm_sqr()).sum::<f64>().sqrt()
}

/// Relative error after the best global phase: returns `(rre, phi*)` with
/// `phi* = -arg(sum est_n conj(truth_n))`, which maximizes
/// `Re(e^{i phi} <truth, est>)`.
pub fn rre_phase(est: &ComplexImage, truth: &ComplexImage, mask: &MaskRegion) -> Result<(f64, f64)> {
    let (e, t, t_norm) = masked_pair(est, truth, mask)?;
    let s: Complex64 = e.iter().zip(&t).map(|(a, b)| a * b.conj()).sum();
    let phi = if s.norm() == 0.0 { 0.0 } else { -s.arg() };
    let rre = residual_norm(Complex64::from_polar(1.0, phi), &e, &t) / t_norm;
    Ok((rre, phi))
}

/// Relative error after the best complex scale:
/// `c* = <M est, M truth> / ||M est||^2`.
pub fn rre_scale(est: &ComplexImage, truth: &ComplexImage, mask: &MaskRegion) -> Result<(f64, Complex64)> {
    let (e, t, t_norm) = masked_pair(est, truth, mask)?;
    let e_norm_sqr: f64 = e.iter().map(|v| v.norm_sqr()).sum();
    if e_norm_sqr == 0.0 {
        return Err(Error::InvalidArgument("estimate has zero norm under the mask".into()));
    }
    let c: Complex64 = e.iter().zip(&t).map(|(a, b)| a.conj() * b).sum::<Complex64>() / e_norm_sqr;
    Ok((residual_norm(c, &e, &t) / t_norm, c))
}

pub const CSV_HEADER: &str = "iter,cum_ffts,cost,grad_norm,rre";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Writes one run log: header then one row per record. Floats use the
/// shortest round-trip scientific form; missing values are empty fields.
pub fn write_csv<W: Write>(mut w: W, records: &[IterationRecord]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iter,
            r.cum_ffts,
            opt(r.cost),
            opt(r.grad_norm),
            opt(r.rre)
        )?;
    }
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!("unexpected csv header {other:?}")));
        }
    }
    let field = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("bad number {s:?}")))
        }
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Format(format!("expected 5 columns: {line:?}")));
            }
            Ok(IterationRecord {
                iter: cols[0]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad iter {:?}", cols[0])))?,
                cum_ffts: cols[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad fft count {:?}", cols[1])))?,
                cost: field(cols[2])?,
                grad_norm: field(cols[3])?,
                rre: field(cols[4])?,
            })
        })
        .collect()
}

/// Cumulative FFTs at the first record whose RRE is at most `threshold`.
pub fn ffts_to_reach(records: &[IterationRecord], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.rre.is_some_and(|e| e <= threshold))
        .map(|r| r.cum_ffts)
}
