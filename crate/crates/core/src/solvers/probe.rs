//! Joint object/probe recovery and probe initializations.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gradient::Momentum;
use super::projection::{epie_correction, epie_probe_update, max_norm_sqr, sweep_order};
use super::{Problem, RunStatus, SolverConfig, SolverRun, Tracker};
use crate::forward::{centered_inverse_dft, DiffractionStack};
use crate::image::ComplexImage;
use crate::loss::wirtinger_gradient;
use crate::{Error, Result};

/// Scales `probe` to unit energy.
pub fn normalize_energy(probe: &ComplexImage) -> Result<ComplexImage> {
    let e = probe.norm();
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::ZeroProbe);
    }
    Ok(probe.scaled(Complex64::new(1.0 / e, 0.0)))
}

/// Centered inverse DFT of the mean measured amplitude, at unit energy.
pub fn probe_from_mean_amplitude(b: &DiffractionStack) -> Result<ComplexImage> {
    b.check_nonnegative()?;
    let n = b.frame();
    let k = b.count() as f64;
    let mut mean = vec![Complex64::new(0.0, 0.0); b.frame_len()];
    for frame in b.frames() {
        for (m, v) in mean.iter_mut().zip(frame) {
            m.re += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let probe = ComplexImage::from_vec(n, n, centered_inverse_dft(n, &mean))?;
    normalize_energy(&probe)
}

/// `probe + level * max|probe| * (complex Gaussian)` on the probe's
/// support, at unit energy. Pure in `seed`.
pub fn perturbed_probe(probe: &ComplexImage, level: f64, seed: u64) -> Result<ComplexImage> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "perturbation level {level} must be >= 0"
        )));
    }
    let amp = level * probe.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = probe.map(|v| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        if v == Complex64::new(0.0, 0.0) {
            v
        } else {
            v + Complex64::new(re, im) * (amp / std::f64::consts::SQRT_2)
        }
    });
    normalize_energy(&noisy)
}

/// Alternates one AWF object step (probe fixed, step recomputed from the
/// current probe) with one ePIE probe-only sweep (object fixed). Costs 4K
/// transforms per iteration. Starts from the operator's probe.
pub fn run_awf_probe(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let b = problem.amplitudes;
    let mut t = Tracker::new(problem, config, start)?;
    let mut rng = config.epie_shuffle.then(|| ChaCha8Rng::seed_from_u64(config.seed));
    let mut op = problem.op.clone();
    let mut probe = op.probe().clone();
    let mut state = Momentum::new(start);
    let mut status = RunStatus::Completed;
    for tau in 0..config.max_iterations {
        let iter = tau + 1;
        let mu = t.step(&op)?;
        let y = state.extrapolate(tau);
        let eval = wirtinger_gradient(&op, b, &y, &t.counter)?;
        let grad_norm = eval.gradient.norm();
        let mut next = y;
        next.axpy(Complex64::new(-mu, 0.0), &eval.gradient);
        state.advance(next);

        let diverged = t.check(Some(eval.value), &state.current);
        if diverged.is_none() {
            let object_max = max_norm_sqr(state.current.data());
            for k in sweep_order(op.positions(), rng.as_mut()) {
                let s = epie_correction(&op, b, &state.current, &probe, k, &t.counter);
                epie_probe_update(&mut probe, &s, object_max, config.epie_probe_step);
            }
        }
        let diverged = diverged.or_else(|| (!probe.is_finite()).then(|| "non-finite probe".to_string()));
        t.push(iter, Some(eval.value), Some(grad_norm), &state.current)?;
        if let Some(reason) = diverged {
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
        op = op.with_probe(probe.clone())?;
    }
    let cost_op = op.clone();
    t.finish(state.current, Some(op.probe().clone()), status, &cost_op)
}
