//! Reconstruction algorithms.
//!
//! Cost-minimizing methods (WF, AWF, CGM) work on the amplitude loss
//! directly. The alternating-projection baselines (ER, DM, RAAR, ePIE) do
//! not minimize it, but their runs still log it so that all methods can be
//! compared on the same axes.
//!
//! FFT accounting: `cum_ffts` counts the transforms an algorithm needs to
//! advance. Diagnostic evaluations that only exist for logging (the cost of
//! a projection method's object estimate, `SolverRun::final_cost`) use a
//! separate counter. The one exception is `log_cost_at_iterate`, which
//! makes a gradient method pay K extra transforms per iteration.

mod gradient;
mod line_search;
mod probe;
mod projection;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::forward::{DiffractionStack, PtychoOperator};
use crate::image::{ComplexImage, MaskRegion};
use crate::loss::amplitude_loss;
use crate::metrics::{rre_phase, rre_scale, FftCounter};
use crate::{Error, Result};

pub use gradient::{momentum_weight, run_awf, run_cgm, run_wf, run_wf_line_search};
pub use line_search::{line_search, LineSearchResult, LineSearchSettings};
pub use probe::{normalize_energy, perturbed_probe, probe_from_mean_amplitude, run_awf_probe};
pub use projection::{magnitude_projection, run_dm, run_epie, run_er, run_raar};

/// Divergence threshold on `||f|| / ||f_0||`.
pub const DIVERGENCE_RATIO: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Wirtinger flow with the fixed step `1 / lambda_max(A^H A)`.
    Wf,
    /// Wirtinger flow with an exact line search per iteration.
    WfLineSearch,
    /// Accelerated Wirtinger flow.
    Awf,
    /// Polak-Ribiere+ nonlinear conjugate gradients with line search.
    Cgm,
    Epie,
    Er,
    Dm,
    Raar,
    /// AWF object updates alternated with ePIE probe updates.
    AwfProbe,
    /// ePIE with its probe update enabled.
    EpieProbe,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::Wf,
        Algorithm::WfLineSearch,
        Algorithm::Awf,
        Algorithm::Cgm,
        Algorithm::Epie,
        Algorithm::Er,
        Algorithm::Dm,
        Algorithm::Raar,
        Algorithm::AwfProbe,
        Algorithm::EpieProbe,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Wf => "wf",
            Algorithm::WfLineSearch => "wf-ls",
            Algorithm::Awf => "awf",
            Algorithm::Cgm => "cgm",
            Algorithm::Epie => "epie",
            Algorithm::Er => "er",
            Algorithm::Dm => "dm",
            Algorithm::Raar => "raar",
            Algorithm::AwfProbe => "awf-probe",
            Algorithm::EpieProbe => "epie-probe",
        }
    }

    pub fn updates_probe(self) -> bool {
        matches!(self, Algorithm::AwfProbe | Algorithm::EpieProbe)
    }

    /// Whether the method explicitly minimizes the amplitude loss.
    pub fn minimizes_cost(self) -> bool {
        matches!(
            self,
            Algorithm::Wf | Algorithm::WfLineSearch | Algorithm::Awf | Algorithm::Cgm | Algorithm::AwfProbe
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iterations: usize,
    /// Replaces `1 / lambda_max(A^H A)` when set.
    pub step_size: Option<f64>,
    pub line_search: LineSearchSettings,
    /// Seeds the ePIE scan-order shuffle.
    pub seed: u64,
    pub deterministic: bool,
    /// AWF: log the cost at the new iterate (K extra transforms) instead
    /// of at the extrapolated point.
    pub log_cost_at_iterate: bool,
    pub raar_beta: f64,
    pub epie_shuffle: bool,
    pub epie_object_step: f64,
    pub epie_probe_step: f64,
    /// Optional early stop on the gradient norm; off by default.
    pub grad_tol: Option<f64>,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, max_iterations: usize) -> Self {
        Self {
            algorithm,
            max_iterations,
            step_size: None,
            line_search: LineSearchSettings::default(),
            seed: 0,
            deterministic: true,
            log_cost_at_iterate: false,
            raar_beta: 0.9,
            epie_shuffle: false,
            epie_object_step: 1.0,
            epie_probe_step: 1.0,
            grad_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let Some(mu) = self.step_size {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::InvalidArgument(format!("step size {mu} must be > 0")));
            }
        }
        self.line_search.validate()?;
        if !(self.raar_beta > 0.0 && self.raar_beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "raar beta {} outside (0, 1]",
                self.raar_beta
            )));
        }
        if !(self.epie_object_step > 0.0 && self.epie_probe_step > 0.0) {
            return Err(Error::InvalidArgument("ePIE steps must be > 0".into()));
        }
        Ok(())
    }
}

/// One logged iteration.
///
/// `cost` and `grad_norm` belong to the point where the iteration
/// evaluated the loss (the previous iterate for WF/CGM/ER, the extrapolated
/// point for AWF, the current estimate for DM/RAAR/ePIE); `rre` is the
/// error of the iterate produced by this iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cum_ffts: u64,
    pub cost: Option<f64>,
    pub grad_norm: Option<f64>,
    pub rre: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Gradient norm fell below `grad_tol`.
    Converged {
        iteration: usize,
    },
    /// Non-finite cost or runaway iterate; records stop here.
    Diverged {
        iteration: usize,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct SolverRun {
    pub config: SolverConfig,
    pub object: ComplexImage,
    pub probe: Option<ComplexImage>,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    /// Amplitude loss of the returned estimate (diagnostic, uncounted).
    pub final_cost: Option<f64>,
    pub total_ffts: u64,
}

impl SolverRun {
    pub fn final_rre(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rre)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ErrorMetric {
    /// Best global phase.
    #[default]
    Phase,
    /// Best complex scale, for runs where the probe is also estimated.
    Scale,
}

/// Ground truth for per-iteration error logging.
#[derive(Clone, Copy, Debug)]
pub struct Truth<'a> {
    pub object: &'a ComplexImage,
    pub mask: MaskRegion,
    pub metric: ErrorMetric,
}

impl Truth<'_> {
    pub fn rre(&self, est: &ComplexImage) -> Result<f64> {
        match self.metric {
            ErrorMetric::Phase => rre_phase(est, self.object, &self.mask).map(|r| r.0),
            ErrorMetric::Scale => match rre_scale(est, self.object, &self.mask) {
                Ok((r, _)) => Ok(r),
                // A zero estimate is as far from the truth as it gets.
                Err(_) if est.norm() == 0.0 => Ok(1.0),
                Err(e) => Err(e),
            },
        }
    }
}

/// Operator, measured amplitudes and optional ground truth.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub op: &'a PtychoOperator,
    pub amplitudes: &'a DiffractionStack,
    pub truth: Option<Truth<'a>>,
}

impl<'a> Problem<'a> {
    pub fn new(op: &'a PtychoOperator, amplitudes: &'a DiffractionStack) -> Self {
        Self {
            op,
            amplitudes,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: Truth<'a>) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.op.check_stack(self.amplitudes)?;
        self.amplitudes.check_nonnegative()?;
        if let Some(t) = &self.truth {
            self.op.check_object(t.object)?;
            let (w, h) = self.op.object_dims();
            t.mask.check_inside(w, h)?;
        }
        Ok(())
    }

    fn rre(&self, est: &ComplexImage) -> Result<Option<f64>> {
        self.truth.as_ref().map(|t| t.rre(est)).transpose()
    }

    /// Amplitude loss of `f` under `op`, on a throwaway counter.
    fn diagnostic_cost(&self, op: &PtychoOperator, f: &ComplexImage) -> Result<f64> {
        amplitude_loss(op, self.amplitudes, f, &FftCounter::new())
    }
}

/// All-ones starting object shared by every method.
pub fn init_object(op: &PtychoOperator) -> ComplexImage {
    let (w, h) = op.object_dims();
    ComplexImage::filled(w, h, Complex64::new(1.0, 0.0))
}

/// Runs `config.algorithm` from the all-ones start. Probe-updating
/// algorithms start from the operator's probe.
pub fn reconstruct(problem: &Problem<'_>, config: &SolverConfig) -> Result<SolverRun> {
    let start = init_object(problem.op);
    run_from(problem, config, &start)
}

/// Runs `config.algorithm` from an explicit starting object.
pub fn run_from(problem: &Problem<'_>, config: &SolverConfig, start: &ComplexImage) -> Result<SolverRun> {
    match config.algorithm {
        Algorithm::Wf => run_wf(problem, config, start),
        Algorithm::WfLineSearch => run_wf_line_search(problem, config, start),
        Algorithm::Awf => run_awf(problem, config, start),
        Algorithm::Cgm => run_cgm(problem, config, start),
        Algorithm::Er => run_er(problem, config, start),
        Algorithm::Dm => run_dm(problem, config, start),
        Algorithm::Raar => run_raar(problem, config, start),
        Algorithm::Epie | Algorithm::EpieProbe => run_epie(problem, config, start),
        Algorithm::AwfProbe => run_awf_probe(problem, config, start),
    }
}

/// Shared bookkeeping for one run.
struct Tracker<'p, 'a> {
    problem: &'p Problem<'a>,
    config: SolverConfig,
    counter: FftCounter,
    records: Vec<IterationRecord>,
    start_norm: f64,
}

impl<'p, 'a> Tracker<'p, 'a> {
    fn new(problem: &'p Problem<'a>, config: &SolverConfig, start: &ComplexImage) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        problem.op.check_object(start)?;
        if !start.is_finite() {
            return Err(Error::NonFinite("starting object".into()));
        }
        let n = start.norm();
        Ok(Self {
            problem,
            config: config.clone(),
            counter: FftCounter::new(),
            records: Vec::with_capacity(config.max_iterations),
            start_norm: if n > 0.0 { n } else { 1.0 },
        })
    }

    /// Step `1 / lambda_max` for `op`, or the configured override.
    fn step(&self, op: &PtychoOperator) -> Result<f64> {
        match self.config.step_size {
            Some(mu) => Ok(mu),
            None => op.fixed_step(),
        }
    }

    /// Returns a divergence reason when the state is unusable.
    fn check(&self, cost: Option<f64>, iterate: &ComplexImage) -> Option<String> {
        if let Some(c) = cost {
            if !c.is_finite() {
                return Some(format!("non-finite cost {c}"));
            }
        }
        if !iterate.is_finite() {
            return Some("non-finite iterate".into());
        }
        let ratio = iterate.norm() / self.start_norm;
        if ratio > DIVERGENCE_RATIO {
            return Some(format!("iterate norm grew by {ratio:.3e}"));
        }
        None
    }

    fn push(&mut self, iter: usize, cost: Option<f64>, grad_norm: Option<f64>, iterate: &ComplexImage) -> Result<()> {
        let rre = if iterate.is_finite() {
            self.problem.rre(iterate)?
        } else {
            None
        };
        self.records.push(IterationRecord {
            iter,
            cum_ffts: self.counter.get(),
            cost,
            grad_norm,
            rre,
        });
        Ok(())
    }

    fn finish(
        self,
        object: ComplexImage,
        probe: Option<ComplexImage>,
        status: RunStatus,
        cost_op: &PtychoOperator,
    ) -> Result<SolverRun> {
        let final_cost = if object.is_finite() {
            Some(self.problem.diagnostic_cost(cost_op, &object)?)
        } else {
            None
        };
        Ok(SolverRun {
            total_ffts: self.counter.get(),
            config: self.config,
            object,
            probe,
            records: self.records,
            status,
            final_cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_ids_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.id().parse::<Algorithm>().unwrap(), a);
        }
        assert!("pie".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(Algorithm::Awf, 0).validate().is_err());
        let mut c = SolverConfig::new(Algorithm::Awf, 5);
        assert!(c.validate().is_ok());
        c.step_size = Some(-1.0);
        assert!(c.validate().is_err());
        c.step_size = None;
        c.line_search.bracket_scale = 0.0;
        assert!(c.validate().is_err());
    }
}
