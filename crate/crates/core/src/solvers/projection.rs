//! Alternating-projection baselines on exit-wave stacks.
//!
//! `P_M` replaces Fourier moduli with the measured amplitudes; `P_O` maps a
//! stack to the nearest stack of the form `probe ⊙ crop(o, r_k)`. The
//! object behind `P_O` is the illumination-weighted average of the
//! back-shifted, probe-conjugated waves. Pixels no frame illuminates keep
//! their previous value.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Problem, RunStatus, SolverConfig, SolverRun, Tracker};
use crate::forward::{DiffractionStack, FieldStack, PtychoOperator};
use crate::image::{sgn, ComplexImage};
use crate::metrics::FftCounter;
use crate::Result;

/// `F^{-1}(b ⊙ sgn(F psi_k))` for every frame; 2K transforms. Returns the
/// projected stack and the amplitude loss of `psi`'s moduli.
fn project_moduli(
    op: &PtychoOperator,
    b: &DiffractionStack,
    psi: &FieldStack,
    counter: &FftCounter,
) -> (FieldStack, f64) {
    let mut out = psi.clone();
    let n = out.frame_len();
    let inv_alpha = 1.0 / op.alpha();
    let partial: Vec<f64> = out
        .data_mut()
        .par_chunks_mut(n)
        .zip(b.data().par_chunks(n))
        .map(|(buf, bk)| {
            op.forward_frame(buf, counter);
            let mut cost = 0.0;
            for (z, &bi) in buf.iter_mut().zip(bk) {
                let d = z.norm() - bi;
                cost += d * d;
                *z = sgn(*z) * bi;
            }
            op.inverse_frame(buf, counter);
            if inv_alpha != 1.0 {
                buf.iter_mut().for_each(|v| *v *= inv_alpha);
            }
            cost
        })
        .collect();
    (out, partial.iter().sum())
}

/// Magnitude projection of an exit-wave stack.
pub fn magnitude_projection(
    op: &PtychoOperator,
    b: &DiffractionStack,
    psi: &FieldStack,
    counter: &FftCounter,
) -> Result<FieldStack> {
    op.check_stack(psi)?;
    op.check_stack(b)?;
    b.check_nonnegative()?;
    Ok(project_moduli(op, b, psi, counter).0)
}

/// `probe ⊙ crop(o, r_k)` for all k; no transforms.
fn exit_waves(op: &PtychoOperator, o: &ComplexImage) -> FieldStack {
    let mut psi = FieldStack::zeros(op.positions(), op.frame());
    let n = psi.frame_len();
    psi.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(k, buf)| op.exit_wave(o, k, buf));
    psi
}

/// Object whose exit waves are closest to `psi`. Accumulates in scan order.
fn overlap_object(op: &PtychoOperator, psi: &FieldStack, weight: &[f64], prev: &ComplexImage) -> ComplexImage {
    let (w, h) = op.object_dims();
    let mut acc = ComplexImage::zeros(w, h);
    let mut buf = vec![Complex64::new(0.0, 0.0); psi.frame_len()];
    for k in 0..op.positions() {
        for ((o, s), p) in buf.iter_mut().zip(psi.frame_data(k)).zip(op.probe().data()) {
            *o = p.conj() * s;
        }
        op.add_to_window(k, &buf, &mut acc);
    }
    for ((a, &wt), old) in acc.data_mut().iter_mut().zip(weight).zip(prev.data()) {
        *a = if wt > 0.0 { *a / wt } else { *old };
    }
    acc
}

/// `sum_k |p_k|^2` on the object grid (independent of DFT scaling).
fn overlap_weight(op: &PtychoOperator) -> Vec<f64> {
    let alpha = op.alpha();
    op.illumination_map().data().iter().map(|v| v / alpha).collect()
}

/// `2 a - b`
fn reflect(a: &FieldStack, b: &FieldStack) -> FieldStack {
    let mut out = a.clone();
    for (o, y) in out.data_mut().iter_mut().zip(b.data()) {
        *o = *o * 2.0 - y;
    }
    out
}

/// Error reduction: `o <- P_O P_M (exit waves of o)`. The loss at the
/// current object falls out of the forward half, so no extra transforms.
pub fn run_er(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let op = problem.op;
    let mut t = Tracker::new(problem, config, start)?;
    let weight = overlap_weight(op);
    let mut o = start.clone();
    let mut status = RunStatus::Completed;
    for iter in 1..=config.max_iterations {
        let psi = exit_waves(op, &o);
        let (projected, cost) = project_moduli(op, problem.amplitudes, &psi, &t.counter);
        o = overlap_object(op, &projected, &weight, &o);
        let diverged = t.check(Some(cost), &o);
        t.push(iter, Some(cost), None, &o)?;
        if let Some(reason) = diverged {
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
    }
    t.finish(o, None, status, op)
}

/// Difference map with `beta = 1`:
/// `psi <- psi + P_M(2 P_O psi - psi) - P_O psi`; the estimate is the
/// overlap object of `psi`.
pub fn run_dm(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    run_stack_iteration(problem, config, start, |op, b, psi, weight, prev, counter| {
        let o = overlap_object(op, psi, weight, prev);
        let po = exit_waves(op, &o);
        let (pm, _) = project_moduli(op, b, &reflect(&po, psi), counter);
        let mut next = psi.clone();
        for ((v, m), q) in next.data_mut().iter_mut().zip(pm.data()).zip(po.data()) {
            *v += m - q;
        }
        next
    })
}

/// Relaxed averaged alternating reflections:
/// `psi <- beta/2 (R_O R_M psi + psi) + (1 - beta) P_M psi`.
pub fn run_raar(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let beta = config.raar_beta;
    run_stack_iteration(problem, config, start, move |op, b, psi, weight, prev, counter| {
        let (pm, _) = project_moduli(op, b, psi, counter);
        let rm = reflect(&pm, psi);
        let po_rm = exit_waves(op, &overlap_object(op, &rm, weight, prev));
        let ro_rm = reflect(&po_rm, &rm);
        let mut next = psi.clone();
        for (((v, r), m), s) in next
            .data_mut()
            .iter_mut()
            .zip(ro_rm.data())
            .zip(pm.data())
            .zip(psi.data())
        {
            *v = (r + s) * (0.5 * beta) + m * (1.0 - beta);
        }
        next
    })
}

fn run_stack_iteration(
    problem: &Problem<'_>,
    config: &SolverConfig,
    start: &ComplexImage,
    update: impl Fn(&PtychoOperator, &DiffractionStack, &FieldStack, &[f64], &ComplexImage, &FftCounter) -> FieldStack,
) -> Result<SolverRun> {
    let op = problem.op;
    let mut t = Tracker::new(problem, config, start)?;
    let weight = overlap_weight(op);
    let mut psi = exit_waves(op, start);
    let mut estimate = start.clone();
    let mut status = RunStatus::Completed;
    for iter in 1..=config.max_iterations {
        psi = update(op, problem.amplitudes, &psi, &weight, &estimate, &t.counter);
        estimate = overlap_object(op, &psi, &weight, &estimate);
        let cost = if estimate.is_finite() {
            problem.diagnostic_cost(op, &estimate)?
        } else {
            f64::NAN
        };
        let diverged = t.check(Some(cost), &estimate);
        t.push(iter, Some(cost), None, &estimate)?;
        if let Some(reason) = diverged {
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
    }
    t.finish(estimate, None, status, op)
}

/// Updates for one ePIE position. Returns the exit-wave correction and the
/// object window it was computed against.
pub(super) struct EpieStep {
    pub delta: Vec<Complex64>,
    pub window: Vec<Complex64>,
}

/// Fourier-constraint correction `psi' - psi` at position `k` for the
/// given object and probe; 2 transforms.
pub(super) fn epie_correction(
    op: &PtychoOperator,
    b: &DiffractionStack,
    object: &ComplexImage,
    probe: &ComplexImage,
    k: usize,
    counter: &FftCounter,
) -> EpieStep {
    let n = op.frame() * op.frame();
    let mut window = vec![Complex64::new(0.0, 0.0); n];
    op.crop(object, k, &mut window);
    let psi: Vec<Complex64> = window.iter().zip(probe.data()).map(|(o, p)| o * p).collect();
    let mut buf = psi.clone();
    op.forward_frame(&mut buf, counter);
    for (z, &bi) in buf.iter_mut().zip(b.frame_data(k)) {
        *z = sgn(*z) * bi;
    }
    op.inverse_frame(&mut buf, counter);
    let inv_alpha = 1.0 / op.alpha();
    for (d, s) in buf.iter_mut().zip(&psi) {
        *d = *d * inv_alpha - s;
    }
    EpieStep { delta: buf, window }
}

/// `probe += step * conj(window) / max|object|^2 * delta`.
pub(super) fn epie_probe_update(probe: &mut ComplexImage, s: &EpieStep, object_max_sqr: f64, step: f64) {
    if object_max_sqr <= 0.0 {
        return;
    }
    let c = step / object_max_sqr;
    for ((p, o), d) in probe.data_mut().iter_mut().zip(&s.window).zip(&s.delta) {
        *p += o.conj() * d * c;
    }
}

pub(super) fn max_norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
}

/// Scan order for one sweep; shuffled per sweep when requested.
pub(super) fn sweep_order(k: usize, shuffle: Option<&mut ChaCha8Rng>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    order
}

/// Sequential ePIE sweeps. The probe is also refined when the algorithm
/// updates it, starting from the operator's probe.
pub fn run_epie(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let op = problem.op;
    let b = problem.amplitudes;
    let mut t = Tracker::new(problem, config, start)?;
    let update_probe = config.algorithm.updates_probe();
    let mut rng = config.epie_shuffle.then(|| ChaCha8Rng::seed_from_u64(config.seed));
    let mut o = start.clone();
    let mut p = op.probe().clone();
    let mut current = op.clone();
    let mut status = RunStatus::Completed;
    for iter in 1..=config.max_iterations {
        for k in sweep_order(op.positions(), rng.as_mut()) {
            let s = epie_correction(op, b, &o, &p, k, &t.counter);
            let probe_max = max_norm_sqr(p.data());
            let object_max = if update_probe { max_norm_sqr(o.data()) } else { 0.0 };
            if probe_max > 0.0 {
                let c = config.epie_object_step / probe_max;
                let upd: Vec<Complex64> = p.data().iter().zip(&s.delta).map(|(q, d)| q.conj() * d * c).collect();
                op.add_to_window(k, &upd, &mut o);
            }
            if update_probe {
                epie_probe_update(&mut p, &s, object_max, config.epie_probe_step);
            }
        }
        if update_probe && p.is_finite() {
            current = op.with_probe(p.clone())?;
        }
        let cost = if o.is_finite() && p.is_finite() {
            problem.diagnostic_cost(&current, &o)?
        } else {
            f64::NAN
        };
        let diverged = t.check(Some(cost), &o);
        t.push(iter, Some(cost), None, &o)?;
        if let Some(reason) = diverged {
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
    }
    let probe = update_probe.then(|| p.clone());
    t.finish(o, probe, status, &current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{DftNormalization, ScanPattern};
    use crate::image::MaskRegion;
    use crate::solvers::{init_object, Algorithm, ErrorMetric, Truth};
    use rand::Rng;

    fn instance(seed: u64, norm: DftNormalization) -> (PtychoOperator, DiffractionStack, ComplexImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = ComplexImage::from_fn(6, 6, |x, y| {
            let r2 = (x as f64 - 2.5).powi(2) + (y as f64 - 2.5).powi(2);
            Complex64::from_polar((-r2 / 5.0).exp(), 0.3 * x as f64)
        });
        let positions = (0..4).flat_map(|y| (0..4).map(move |x| (2 * x, 2 * y))).collect();
        let op = PtychoOperator::with_options(probe, ScanPattern::new(positions), 12, 12, norm, true).unwrap();
        let truth = ComplexImage::from_fn(12, 12, |_, _| {
            Complex64::from_polar(rng.random_range(0.7..1.0), rng.random_range(-0.6..0.6))
        });
        let b = op.apply(&truth, &FftCounter::new()).unwrap().abs();
        (op, b, truth)
    }

    #[test]
    fn magnitude_projection_imposes_data() {
        for norm in [DftNormalization::Unitary, DftNormalization::Unnormalized] {
            let (op, b, _) = instance(1, norm);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let psi = FieldStack::from_vec(
                op.positions(),
                op.frame(),
                (0..op.measurements())
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect(),
            )
            .unwrap();
            let counter = FftCounter::new();
            let mut out = magnitude_projection(&op, &b, &psi, &counter).unwrap();
            assert_eq!(counter.get(), 2 * op.positions() as u64);
            let n = out.frame_len();
            for buf in out.data_mut().chunks_mut(n) {
                op.forward_frame(buf, &counter);
            }
            for (z, bi) in out.data().iter().zip(b.data()) {
                assert!((z.norm() - bi).abs() <= 1e-12 * (1.0 + bi));
            }
            // Idempotent.
            let psi2 = magnitude_projection(&op, &b, &psi, &counter).unwrap();
            let psi3 = magnitude_projection(&op, &b, &psi2, &counter).unwrap();
            let diff: f64 = psi2.data().iter().zip(psi3.data()).map(|(a, c)| (a - c).norm()).sum();
            assert!(diff < 1e-10);
        }
    }

    #[test]
    fn overlap_projection_is_exact_on_consistent_stacks() {
        let (op, _, truth) = instance(3, DftNormalization::Unitary);
        let psi = exit_waves(&op, &truth);
        let o = overlap_object(&op, &psi, &overlap_weight(&op), &ComplexImage::zeros(12, 12));
        assert!(o.sub(&truth).norm() < 1e-13 * truth.norm());
    }

    #[test]
    fn truth_is_a_fixed_point_of_every_projection_method() {
        let (op, b, truth) = instance(4, DftNormalization::Unitary);
        let problem = Problem::new(&op, &b);
        for alg in [Algorithm::Er, Algorithm::Dm, Algorithm::Raar, Algorithm::Epie] {
            let run = super::super::run_from(&problem, &SolverConfig::new(alg, 3), &truth).unwrap();
            assert!(run.object.sub(&truth).norm() < 1e-12 * truth.norm(), "{alg}");
            assert!(run.final_cost.unwrap() < 1e-24, "{alg}");
        }
    }

    #[test]
    fn er_cost_is_monotone_and_counted() {
        let (op, b, _) = instance(5, DftNormalization::Unitary);
        let problem = Problem::new(&op, &b);
        let run = run_er(&problem, &SolverConfig::new(Algorithm::Er, 40), &init_object(&op)).unwrap();
        let k = op.positions() as u64;
        for (i, r) in run.records.iter().enumerate() {
            assert_eq!(r.cum_ffts, 2 * k * (i as u64 + 1));
        }
        for w in run.records.windows(2) {
            assert!(w[1].cost.unwrap() <= w[0].cost.unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fft_counts_per_sweep() {
        let (op, b, _) = instance(6, DftNormalization::Unitary);
        let problem = Problem::new(&op, &b);
        let k = op.positions() as u64;
        for alg in [Algorithm::Dm, Algorithm::Raar, Algorithm::Epie, Algorithm::EpieProbe] {
            let run = super::super::run_from(&problem, &SolverConfig::new(alg, 5), &init_object(&op)).unwrap();
            assert_eq!(run.total_ffts, 2 * k * 5, "{alg}");
            assert_eq!(run.probe.is_some(), alg.updates_probe());
        }
    }

    #[test]
    fn projection_methods_make_progress() {
        let (op, b, truth) = instance(7, DftNormalization::Unitary);
        let problem = Problem::new(&op, &b).with_truth(Truth {
            object: &truth,
            mask: MaskRegion::new(3, 3, 6, 6),
            metric: ErrorMetric::Phase,
        });
        let start = init_object(&op);
        let initial = problem.truth.unwrap().rre(&start).unwrap();
        for alg in [Algorithm::Er, Algorithm::Raar, Algorithm::Epie] {
            let run = super::super::run_from(&problem, &SolverConfig::new(alg, 100), &start).unwrap();
            assert!(!run.diverged());
            assert!(run.final_rre().unwrap() < initial, "{alg}");
        }
    }

    #[test]
    fn shuffled_epie_is_reproducible() {
        let (op, b, _) = instance(8, DftNormalization::Unitary);
        let problem = Problem::new(&op, &b);
        let mut config = SolverConfig::new(Algorithm::Epie, 4);
        config.epie_shuffle = true;
        config.seed = 11;
        let a = run_epie(&problem, &config, &init_object(&op)).unwrap();
        let c = run_epie(&problem, &config, &init_object(&op)).unwrap();
        assert_eq!(a.object, c.object);
        config.seed = 12;
        let d = run_epie(&problem, &config, &init_object(&op)).unwrap();
        assert_ne!(a.object, d.object);
    }
}
