//! Image and table output.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use ptycho_core::{ComplexImage, RealImage};

const PGM_MAX: f64 = 65535.0;

/// Binary 16-bit PGM. Values are clamped to `[lo, hi]` and mapped linearly
/// to `[0, 65535]`; the range goes in a header comment.
pub fn encode_pgm(img: &RealImage, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n# range {lo:e} {hi:e}\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    let span = hi - lo;
    for &v in img.data() {
        let t = if span > 0.0 && v.is_finite() {
            ((v - lo) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.extend_from_slice(&((t * PGM_MAX).round() as u16).to_be_bytes());
    }
    out
}

/// `<stem>_magnitude.pgm` over `[0, max]` and `<stem>_phase.pgm` over
/// `[-pi, pi]`.
pub fn write_complex_pgms(dir: &Path, stem: &str, img: &ComplexImage) -> Result<()> {
    let mag = img.abs();
    let max = mag.max();
    write_file(&dir.join(format!("{stem}_magnitude.pgm")), &encode_pgm(&mag, 0.0, max))?;
    write_file(&dir.join(format!("{stem}_phase.pgm")), &encode_pgm(&img.arg(), -PI, PI))
}

pub fn write_dump(path: &Path, img: &ComplexImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_dump(&mut bytes)?;
    write_file(path, &bytes)
}

pub fn read_complex(path: &Path) -> Result<ComplexImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ComplexImage::read_dump(bytes.as_slice()).with_context(|| format!("decoding {}", path.display()))
}

pub fn read_real(path: &Path) -> Result<RealImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    RealImage::read_dump(bytes.as_slice()).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip form; empty for missing values.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ptycho_core::Complex64;

    #[test]
    fn pgm_layout_and_scaling() {
        let img = RealImage::from_vec(3, 1, vec![0.0, 0.5, 2.0]).unwrap();
        let bytes = encode_pgm(&img, 0.0, 1.0);
        let header = b"P5\n# range 0e0 1e0\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535]);
    }

    #[test]
    fn flat_image_maps_to_zero() {
        let img = RealImage::filled(2, 2, 0.0);
        let bytes = encode_pgm(&img, 0.0, 0.0);
        assert!(bytes.ends_with(&[0u8; 8]));
    }

    #[test]
    fn phase_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let img = ComplexImage::from_vec(2, 1, vec![Complex64::new(-1.0, -1e-300), Complex64::new(1.0, 0.0)]).unwrap();
        write_complex_pgms(dir.path(), "x", &img).unwrap();
        let phase = fs::read(dir.path().join("x_phase.pgm")).unwrap();
        let n = phase.len();
        assert_eq!(u16::from_be_bytes([phase[n - 4], phase[n - 3]]), 0);
        assert_eq!(u16::from_be_bytes([phase[n - 2], phase[n - 1]]), 32768);
        let back = read_complex(&{
            let p = dir.path().join("x.dump");
            write_dump(&p, &img).unwrap();
            p
        })
        .unwrap();
        assert_eq!(back, img);
    }
}
