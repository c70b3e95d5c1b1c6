//! Gradient methods on the amplitude loss.

use num_complex::Complex64;

use super::{line_search, Problem, RunStatus, SolverConfig, SolverRun, Tracker};
use crate::image::ComplexImage;
use crate::loss::{amplitude_loss, wirtinger_gradient, LossEval};
use crate::Result;

/// Nesterov weight `(tau + 1) / (tau + 3)`.
pub fn momentum_weight(tau: usize) -> f64 {
    (tau as f64 + 1.0) / (tau as f64 + 3.0)
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn evaluate(t: &Tracker<'_, '_>, f: &ComplexImage) -> Result<LossEval> {
    wirtinger_gradient(t.problem.op, t.problem.amplitudes, f, &t.counter)
}

fn converged(config: &SolverConfig, grad_norm: f64) -> bool {
    config.grad_tol.is_some_and(|tol| grad_norm <= tol)
}

/// `f <- f - mu * grad L(f)` with the fixed step `1 / lambda_max(A^H A)`.
pub fn run_wf(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    run_steepest(problem, config, start, false)
}

/// Steepest descent with the step chosen by line search each iteration.
pub fn run_wf_line_search(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    run_steepest(problem, config, start, true)
}

fn run_steepest(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage, search: bool) -> Result<SolverRun> {
    let mut t = Tracker::new(problem, config, start)?;
    let mu_bar = t.step(problem.op)?;
    let mut f = start.clone();
    let mut status = RunStatus::Completed;
    for iter in 1..=config.max_iterations {
        let eval = evaluate(&t, &f)?;
        let grad_norm = eval.gradient.norm();
        let mu = if search {
            line_search(
                problem.op,
                problem.amplitudes,
                &f,
                &eval.gradient,
                config.line_search.bracket_scale * mu_bar,
                &config.line_search,
                &t.counter,
            )?
            .step
        } else {
            mu_bar
        };
        f.axpy(real(-mu), &eval.gradient);
        if let Some(reason) = t.check(Some(eval.value), &f) {
            t.push(iter, Some(eval.value), Some(grad_norm), &f)?;
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
        t.push(iter, Some(eval.value), Some(grad_norm), &f)?;
        if converged(config, grad_norm) {
            status = RunStatus::Converged { iteration: iter };
            break;
        }
    }
    t.finish(f, None, status, problem.op)
}

/// Accelerated Wirtinger flow:
/// `y = f_t + beta_t (f_t - f_{t-1})`, `f_{t+1} = y - mu grad L(y)`,
/// with `f_{-1} = f_0`.
pub fn run_awf(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let mut t = Tracker::new(problem, config, start)?;
    let mu = t.step(problem.op)?;
    let mut state = Momentum::new(start);
    let mut status = RunStatus::Completed;
    for tau in 0..config.max_iterations {
        let iter = tau + 1;
        let y = state.extrapolate(tau);
        let eval = evaluate(&t, &y)?;
        let grad_norm = eval.gradient.norm();
        let mut next = y;
        next.axpy(real(-mu), &eval.gradient);
        state.advance(next);
        let cost = if config.log_cost_at_iterate && state.current.is_finite() {
            amplitude_loss(problem.op, problem.amplitudes, &state.current, &t.counter)?
        } else {
            eval.value
        };
        let diverged = t.check(Some(cost), &state.current);
        t.push(iter, Some(cost), Some(grad_norm), &state.current)?;
        if let Some(reason) = diverged {
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
        if converged(config, grad_norm) {
            status = RunStatus::Converged { iteration: iter };
            break;
        }
    }
    t.finish(state.current, None, status, problem.op)
}

/// Iterate pair for Nesterov extrapolation.
pub(super) struct Momentum {
    pub current: ComplexImage,
    previous: ComplexImage,
}

impl Momentum {
    pub fn new(start: &ComplexImage) -> Self {
        Self {
            current: start.clone(),
            previous: start.clone(),
        }
    }

    pub fn extrapolate(&self, tau: usize) -> ComplexImage {
        let beta = momentum_weight(tau);
        let mut y = self.current.clone();
        for ((yi, c), p) in y
            .data_mut()
            .iter_mut()
            .zip(self.current.data())
            .zip(self.previous.data())
        {
            *yi += (c - p) * beta;
        }
        y
    }

    pub fn advance(&mut self, next: ComplexImage) {
        self.previous = std::mem::replace(&mut self.current, next);
    }
}

/// Polak-Ribiere+ nonlinear conjugate gradients. The coefficient is
/// clamped at zero and the direction resets to steepest descent whenever
/// it fails to descend.
pub fn run_cgm(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    let mut t = Tracker::new(problem, config, start)?;
    let mu_bar = t.step(problem.op)?;
    let upper = config.line_search.bracket_scale * mu_bar;
    let mut f = start.clone();
    let mut prev: Option<(ComplexImage, ComplexImage)> = None;
    let mut status = RunStatus::Completed;
    for iter in 1..=config.max_iterations {
        let eval = evaluate(&t, &f)?;
        let g = eval.gradient;
        let grad_norm = g.norm();
        let mut direction = g.scaled(real(-1.0));
        if let Some((g_old, d_old)) = &prev {
            let beta = polak_ribiere_plus(&g, g_old);
            direction.axpy(real(beta), d_old);
            if g.inner(&direction).re >= 0.0 {
                direction = g.scaled(real(-1.0));
            }
        }
        // line_search minimizes L(f - mu * s), so search along s = -d.
        let search = direction.scaled(real(-1.0));
        let step = line_search(
            problem.op,
            problem.amplitudes,
            &f,
            &search,
            upper,
            &config.line_search,
            &t.counter,
        )?
        .step;
        f.axpy(real(step), &direction);
        if let Some(reason) = t.check(Some(eval.value), &f) {
            t.push(iter, Some(eval.value), Some(grad_norm), &f)?;
            status = RunStatus::Diverged {
                iteration: iter,
                reason,
            };
            break;
        }
        t.push(iter, Some(eval.value), Some(grad_norm), &f)?;
        if converged(config, grad_norm) {
            status = RunStatus::Converged { iteration: iter };
            break;
        }
        prev = Some((g, direction));
    }
    t.finish(f, None, status, problem.op)
}

/// `max(0, Re<g, g - g_old> / ||g_old||^2)`.
pub(super) fn polak_ribiere_plus(g: &ComplexImage, g_old: &ComplexImage) -> f64 {
    let den = g_old.norm_sqr();
    if den == 0.0 {
        return 0.0;
    }
    let num = g.norm_sqr() - g.inner(g_old).re;
    (num / den).max(0.0)
}
