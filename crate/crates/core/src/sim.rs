//! Synthetic experiments: Gaussian probes, hexagonal raster scans,
//! projected-transmission phantoms, noiseless data, shot noise and
//! scan-position jitter.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::forward::{DiffractionStack, PtychoOperator, ScanPattern};
use crate::image::{ComplexImage, MaskRegion};
use crate::metrics::{central_mask, FftCounter};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSpec {
    /// Full width at half maximum, pixels.
    pub fwhm: f64,
    /// Side of the square window outside which the probe is zero.
    pub support: usize,
    pub frame: usize,
    /// Value at the center pixel.
    pub amplitude: f64,
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0 && self.fwhm.is_finite()) {
            return Err(Error::InvalidArgument(format!("fwhm {} must be > 0", self.fwhm)));
        }
        if self.frame == 0 || self.support == 0 || self.support > self.frame {
            return Err(Error::InvalidArgument(format!(
                "probe support {} must be in 1..={}",
                self.support, self.frame
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument("probe amplitude must be > 0".into()));
        }
        Ok(())
    }
}

/// Real Gaussian centered on pixel `(frame/2, frame/2)`, zero outside the
/// centered `support x support` window.
pub fn make_gaussian_probe(spec: &ProbeSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let sigma = spec.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let c = spec.frame / 2;
    let lo = c - spec.support / 2;
    let hi = lo + spec.support;
    Ok(ComplexImage::from_fn(spec.frame, spec.frame, |x, y| {
        if x < lo || x >= hi || y < lo || y >= hi {
            return Complex64::new(0.0, 0.0);
        }
        let r2 = (x as f64 - c as f64).powi(2) + (y as f64 - c as f64).powi(2);
        Complex64::new(spec.amplitude * (-r2 / (2.0 * sigma * sigma)).exp(), 0.0)
    }))
}

/// Hexagonal lattice of frame centers covering `region`: rows at pitch
/// `round(spacing * sqrt(3) / 2)`, odd rows shifted by `spacing / 2`, the
/// lattice centered in the region. Returned positions are frame top-left
/// corners, so every frame is centered on its lattice point.
pub fn make_hex_scan(region: &MaskRegion, spacing: usize, frame: usize) -> Result<ScanPattern> {
    if spacing == 0 {
        return Err(Error::InvalidArgument("scan spacing must be >= 1".into()));
    }
    if region.w == 0 || region.h == 0 {
        return Err(Error::EmptyMask);
    }
    let s = spacing as f64;
    let pitch = (s * 3f64.sqrt() / 2.0).round().max(1.0);
    let (w, h) = ((region.w - 1) as f64, (region.h - 1) as f64);
    let rows = (h / pitch).floor() as usize + 1;
    let cols = |odd: bool| {
        let shift = if odd { s / 2.0 } else { 0.0 };
        if w < shift {
            0
        } else {
            ((w - shift) / s).floor() as usize + 1
        }
    };
    let extent_y = (rows - 1) as f64 * pitch;
    let extent_x = (0..rows.min(2))
        .filter(|&r| cols(r % 2 == 1) > 0)
        .map(|r| {
            let odd = r % 2 == 1;
            (cols(odd) - 1) as f64 * s + if odd { s / 2.0 } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let ox = region.x0 as f64 + (w - extent_x) / 2.0;
    let oy = region.y0 as f64 + (h - extent_y) / 2.0;
    let half = (frame / 2) as f64;

    let mut positions = Vec::new();
    for r in 0..rows {
        let odd = r % 2 == 1;
        let shift = if odd { s / 2.0 } else { 0.0 };
        for j in 0..cols(odd) {
            let cx = (ox + shift + j as f64 * s).round();
            let cy = (oy + r as f64 * pitch).round();
            if cx < half || cy < half {
                return Err(Error::InvalidArgument(format!(
                    "frame centered at ({cx}, {cy}) starts before the object origin"
                )));
            }
            positions.push(((cx - half) as usize, (cy - half) as usize));
        }
    }
    if positions.is_empty() {
        return Err(Error::InvalidArgument("hex scan produced no positions".into()));
    }
    Ok(ScanPattern::new(positions))
}

/// Noiseless intensities `|A f|^2` and amplitudes. Transforms here are not
/// part of any solver's budget.
pub fn generate_data(op: &PtychoOperator, truth: &ComplexImage) -> Result<(DiffractionStack, DiffractionStack)> {
    let z = op.apply(truth, &FftCounter::new())?;
    let b = z.abs();
    let d = DiffractionStack::from_vec(z.count(), z.frame(), z.data().iter().map(|v| v.norm_sqr()).collect())?;
    Ok((d, b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Expected photon count per pattern; `f64::INFINITY` disables noise.
    pub photons: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            photons: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photons > 0.0) {
            return Err(Error::InvalidArgument(format!("photons {} must be > 0", self.photons)));
        }
        Ok(())
    }
}

/// Per pattern `k`: `d_noisy = Poisson(s_k d) / s_k` with
/// `s_k = photons / sum(d_k)`. Pattern `k` draws from its own stream of
/// the seeded generator, so the result does not depend on scheduling.
/// Returns noisy intensities and amplitudes.
pub fn add_poisson_noise(d: &DiffractionStack, noise: &NoiseSpec) -> Result<(DiffractionStack, DiffractionStack)> {
    noise.validate()?;
    d.check_nonnegative()?;
    let mut out = d.clone();
    if noise.photons.is_finite() {
        let n = out.frame_len();
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(k, frame)| -> Result<()> {
                let total: f64 = frame.iter().sum();
                if total <= 0.0 {
                    return Ok(());
                }
                let s = noise.photons / total;
                let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
                rng.set_stream(k as u64);
                for v in frame.iter_mut() {
                    let lambda = s * *v;
                    let count = if lambda > 0.0 {
                        Poisson::new(lambda)
                            .map_err(|e| Error::InvalidArgument(format!("poisson rate {lambda}: {e}")))?
                            .sample(&mut rng)
                    } else {
                        0.0
                    };
                    *v = count / s;
                }
                Ok(())
            })?;
    }
    let b = DiffractionStack::from_vec(out.count(), out.frame(), out.data().iter().map(|v| v.sqrt()).collect())?;
    Ok((out, b))
}

/// Jittered scan and the indices of positions that had to be clamped back
/// inside the object.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedScan {
    pub scan: ScanPattern,
    pub clamped: Vec<usize>,
}

/// Adds an independent uniform integer displacement in
/// `-max_disp..=max_disp` to each coordinate of each position.
pub fn perturb_positions(
    scan: &ScanPattern,
    max_disp: usize,
    seed: u64,
    object_dims: (usize, usize),
    frame: usize,
) -> Result<PerturbedScan> {
    let (w, h) = object_dims;
    if frame > w || frame > h {
        return Err(Error::InvalidArgument(format!("frame {frame} exceeds object {w}x{h}")));
    }
    let (max_x, max_y) = ((w - frame) as i64, (h - frame) as i64);
    let m = max_disp as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clamped = Vec::new();
    let positions = scan
        .positions
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let dx = rng.random_range(-m..=m);
            let dy = rng.random_range(-m..=m);
            let (px, py) = (x as i64 + dx, y as i64 + dy);
            let (cx, cy) = (px.clamp(0, max_x), py.clamp(0, max_y));
            if (cx, cy) != (px, py) {
                clamped.push(k);
            }
            (cx as usize, cy as usize)
        })
        .collect();
    Ok(PerturbedScan {
        scan: ScanPattern::new(positions),
        clamped,
    })
}

/// Complex refractive index `1 - delta + i beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    pub delta: f64,
    pub beta: f64,
}

impl Material {
    pub fn new(name: &str, delta: f64, beta: f64) -> Self {
        Self {
            name: name.to_string(),
            delta,
            beta,
        }
    }

    /// `n - 1` integrated over `thickness`, times the wavenumber.
    fn phase_integral(&self, k0: f64, thickness: f64) -> Complex64 {
        Complex64::new(-self.delta, self.beta) * (k0 * thickness)
    }
}

/// Chip materials at 6.2 keV.
pub fn standard_materials() -> Vec<Material> {
    vec![
        Material::new("Si", 1.285e-5, 4.777e-7),
        Material::new("Al", 1.436e-5, 4.305e-7),
        Material::new("W", 7.971e-5, 9.840e-6),
        Material::new("Cu", 4.264e-5, 1.479e-6),
        Material::new("SiO2", 1.206e-5, 2.574e-7),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Layered chip: substrate, contacts, two wiring levels, vias, cap.
    IcLayered,
    /// Non-overlapping disks of the first material on vacuum.
    Beads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub width: usize,
    pub height: usize,
    pub materials: Vec<Material>,
    pub seed: u64,
    /// Metres.
    pub wavelength: f64,
    /// Total projected thickness, metres.
    pub thickness: f64,
}

impl PhantomSpec {
    pub fn ic(width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: PhantomKind::IcLayered,
            width,
            height,
            materials: standard_materials(),
            seed,
            wavelength: 0.2e-9,
            thickness: 4.4e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("phantom dimensions must be positive".into()));
        }
        if !(self.wavelength > 0.0 && self.thickness > 0.0) {
            return Err(Error::InvalidArgument("wavelength and thickness must be > 0".into()));
        }
        for m in &self.materials {
            if !(m.delta >= 0.0 && m.beta >= 0.0 && m.delta.is_finite() && m.beta.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "material {} needs finite delta, beta >= 0",
                    m.name
                )));
            }
        }
        if self.materials.is_empty() {
            return Err(Error::InvalidArgument("phantom needs at least one material".into()));
        }
        Ok(())
    }

    fn material(&self, name: &str) -> Result<&Material> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("phantom material {name} not defined")))
    }

    fn wavenumber(&self) -> f64 {
        std::f64::consts::TAU / self.wavelength
    }
}

/// Projected transmission `exp(i k0 sum_z (n - 1) dz)`, relative to vacuum.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let exponent = match spec.kind {
        PhantomKind::IcLayered => ic_exponent(spec)?,
        PhantomKind::Beads => beads_exponent(spec)?,
    };
    Ok(exponent.map(|e| (Complex64::i() * e).exp()))
}

#[derive(Clone, Copy)]
enum Features {
    None,
    /// Full-height strips of random width.
    VerticalStrips {
        count: usize,
        width: (usize, usize),
    },
    /// Random-length horizontal wires.
    Wires {
        count: usize,
        width: (usize, usize),
        horizontal: bool,
    },
    /// Small squares.
    Pads {
        count: usize,
        size: (usize, usize),
    },
}

struct Layer {
    fraction: f64,
    fill: &'static str,
    feature: &'static str,
    features: Features,
}

/// Layer stack, bottom to top; fractions sum to one. Feature counts are per
/// 64x64 pixels and sizes scale with the image.
const IC_LAYERS: [Layer; 6] = [
    Layer {
        fraction: 0.4,
        fill: "Si",
        feature: "SiO2",
        features: Features::VerticalStrips {
            count: 5,
            width: (2, 5),
        },
    },
    Layer {
        fraction: 0.1,
        fill: "SiO2",
        feature: "W",
        features: Features::Pads {
            count: 14,
            size: (2, 4),
        },
    },
    Layer {
        fraction: 0.15,
        fill: "SiO2",
        feature: "Al",
        features: Features::Wires {
            count: 8,
            width: (2, 4),
            horizontal: true,
        },
    },
    Layer {
        fraction: 0.1,
        fill: "SiO2",
        feature: "W",
        features: Features::Pads {
            count: 10,
            size: (2, 3),
        },
    },
    Layer {
        fraction: 0.15,
        fill: "SiO2",
        feature: "Cu",
        features: Features::Wires {
            count: 7,
            width: (2, 5),
            horizontal: false,
        },
    },
    Layer {
        fraction: 0.1,
        fill: "SiO2",
        feature: "SiO2",
        features: Features::None,
    },
];

fn scaled(n: usize, unit: f64) -> usize {
    ((n as f64 * unit).round() as usize).max(1)
}

fn ic_exponent(spec: &PhantomSpec) -> Result<ComplexImage> {
    let (w, h) = (spec.width, spec.height);
    let k0 = spec.wavenumber();
    let unit = w.min(h) as f64 / 64.0;
    let area = (w * h) as f64 / (64.0 * 64.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut total = ComplexImage::zeros(w, h);
    let mut mask = vec![false; w * h];
    for layer in &IC_LAYERS {
        let dz = layer.fraction * spec.thickness;
        let fill = spec.material(layer.fill)?.phase_integral(k0, dz);
        let feature = spec.material(layer.feature)?.phase_integral(k0, dz);
        mask.iter_mut().for_each(|m| *m = false);
        let mut rect = |x0: usize, y0: usize, rw: usize, rh: usize| {
            for y in y0..(y0 + rh).min(h) {
                for x in x0..(x0 + rw).min(w) {
                    mask[y * w + x] = true;
                }
            }
        };
        let count = |c: usize| ((c as f64 * area).round() as usize).max(1);
        match layer.features {
            Features::None => {}
            Features::VerticalStrips { count: c, width } => {
                for _ in 0..count(c) {
                    let sw = rng.random_range(scaled(width.0, unit)..=scaled(width.1, unit));
                    let x0 = rng.random_range(0..w);
                    rect(x0, 0, sw, h);
                }
            }
            Features::Wires {
                count: c,
                width,
                horizontal,
            } => {
                for _ in 0..count(c) {
                    let ww = rng.random_range(scaled(width.0, unit)..=scaled(width.1, unit));
                    let (along, across) = if horizontal { (w, h) } else { (h, w) };
                    let len = rng.random_range(along / 4..=along);
                    let start = rng.random_range(0..=along - len);
                    let pos = rng.random_range(0..across);
                    if horizontal {
                        rect(start, pos, len, ww);
                    } else {
                        rect(pos, start, ww, len);
                    }
                }
            }
            Features::Pads { count: c, size } => {
                for _ in 0..count(c) {
                    let s = rng.random_range(scaled(size.0, unit)..=scaled(size.1, unit));
                    rect(rng.random_range(0..w), rng.random_range(0..h), s, s);
                }
            }
        }
        for (t, &m) in total.data_mut().iter_mut().zip(&mask) {
            *t += if m { feature } else { fill };
        }
    }
    Ok(total)
}

fn beads_exponent(spec: &PhantomSpec) -> Result<ComplexImage> {
    let (w, h) = (spec.width, spec.height);
    let inside = spec.materials[0].phase_integral(spec.wavenumber(), spec.thickness);
    let unit = w.min(h) as f64 / 64.0;
    let (r_min, r_max) = (2.5 * unit, 5.0 * unit);
    let target = ((w * h) as f64 / (64.0 * 64.0) * 14.0).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut disks: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while disks.len() < target && attempts < 200 * target {
        attempts += 1;
        let r = rng.random_range(r_min..=r_max);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        if disks.iter().all(|&(x, y, q)| (x - cx).hypot(y - cy) > r + q + 1.0) {
            disks.push((cx, cy, r));
        }
    }
    Ok(ComplexImage::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        if disks.iter().any(|&(cx, cy, r)| (px - cx).hypot(py - cy) <= r) {
            inside
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// Complete simulated geometry: phantom, probe and hex scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub phantom: PhantomSpec,
    pub probe: ProbeSpec,
    /// Region the scan lattice covers.
    pub region: MaskRegion,
    pub spacing: usize,
}

impl Scenario {
    /// 64x64 object, 32-pixel frames, fwhm 8 / support 20, spacing 4 over the
    /// central 32x32.
    pub fn desk() -> Self {
        Self {
            phantom: PhantomSpec::ic(64, 64, 0),
            probe: ProbeSpec {
                fwhm: 8.0,
                support: 20,
                frame: 32,
                amplitude: 1.0,
            },
            region: MaskRegion::new(16, 16, 32, 32),
            spacing: 4,
        }
    }

    /// 500x500 object, 160-pixel frames, fwhm 30 / support 78, spacing 15
    /// over the central 250x250.
    pub fn paper() -> Self {
        Self {
            phantom: PhantomSpec::ic(500, 500, 0),
            probe: ProbeSpec {
                fwhm: 30.0,
                support: 78,
                frame: 160,
                amplitude: 1.0,
            },
            region: MaskRegion::new(125, 125, 250, 250),
            spacing: 15,
        }
    }

    pub fn build(&self) -> Result<Instance> {
        let object = make_phantom(&self.phantom)?;
        let probe = make_gaussian_probe(&self.probe)?;
        let scan = make_hex_scan(&self.region, self.spacing, self.probe.frame)?;
        let op = PtychoOperator::new(probe, scan, self.phantom.width, self.phantom.height)?;
        let mask = central_mask(self.phantom.width, self.phantom.height)?;
        Ok(Instance { object, op, mask })
    }
}

/// Ground truth and the nominal operator.
#[derive(Clone, Debug)]
pub struct Instance {
    pub object: ComplexImage,
    pub op: PtychoOperator,
    pub mask: MaskRegion,
}
