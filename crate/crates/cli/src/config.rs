//! Experiment configuration: the TOML schema and its resolution against a
//! size preset.
//!
//! Every section is optional. Missing values come from the preset
//! (`desk` unless `experiment.preset` says otherwise); missing seeds are
//! derived from `experiment.seed`. A resolved configuration serializes
//! back to a complete file, which is what dataset manifests store.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ptycho_core::sim::{standard_materials, Material, NoiseSpec, PhantomKind, PhantomSpec, ProbeSpec, Scenario};
use ptycho_core::solvers::{Algorithm, LineSearchSettings, SolverConfig};
use ptycho_core::MaskRegion;
use serde::{Deserialize, Serialize};

/// Iterations per solver when neither the solver nor the experiment says.
pub const DEFAULT_ITERATIONS: usize = 1000;

/// Standard deviation of the probe perturbation relative to `max|probe|`.
pub const DEFAULT_PERTURBATION: f64 = 0.1;

/// Offsets added to the global seed for each derived stream.
const PHANTOM_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const JITTER_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;
const SOLVER_STREAM: u64 = 4;

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentSection,
    pub phantom: PhantomSection,
    pub probe: ProbeSection,
    pub scan: ScanSection,
    pub noise: NoiseSection,
    pub misalignment: MisalignmentSection,
    pub probe_mode: ProbeModeSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub solver: Vec<SolverSection>,
    pub reconstruct: ReconstructSection,
    /// Written by `simulate`; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub out: Option<PathBuf>,
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    /// `ic` or `beads`.
    pub kind: Option<String>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub seed: Option<u64>,
    /// Metres.
    pub wavelength: Option<f64>,
    /// Metres.
    pub thickness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub materials: Option<Vec<MaterialEntry>>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaterialEntry {
    pub name: String,
    pub delta: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub fwhm: Option<f64>,
    pub support: Option<usize>,
    pub frame: Option<usize>,
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub spacing: Option<usize>,
    /// `[x0, y0, width, height]` of the scanned region.
    pub region: Option<[usize; 4]>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Photons per pattern; `inf` for noiseless data.
    pub photons: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MisalignmentSection {
    pub max_displacement: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeModeSection {
    /// `known`, `deterministic-init` or `perturbed-init`.
    pub mode: Option<String>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub algorithm: String,
    pub iterations: Option<usize>,
    pub step_size: Option<f64>,
    pub bracket_scale: Option<f64>,
    pub line_search_tol: Option<f64>,
    pub line_search_evals: Option<usize>,
    pub log_cost_at_iterate: Option<bool>,
    pub raar_beta: Option<f64>,
    pub epie_shuffle: Option<bool>,
    pub epie_object_step: Option<f64>,
    pub epie_probe_step: Option<f64>,
    pub grad_tol: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    /// Directory written by `simulate`; when absent, data are simulated in
    /// memory.
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub positions: usize,
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    pub photons: f64,
    /// Jittered positions clamped back into the object.
    pub clamped: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeMode {
    Known,
    /// Probe seeded from the measured amplitudes.
    DeterministicInit,
    /// True probe plus seeded complex Gaussian noise.
    PerturbedInit {
        level: f64,
        seed: u64,
    },
}

impl ProbeMode {
    pub fn id(&self) -> &'static str {
        match self {
            ProbeMode::Known => "known",
            ProbeMode::DeterministicInit => "deterministic-init",
            ProbeMode::PerturbedInit { .. } => "perturbed-init",
        }
    }

    pub fn probe_unknown(&self) -> bool {
        !matches!(self, ProbeMode::Known)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Misalignment {
    pub max_displacement: usize,
    pub seed: u64,
}

/// Fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub deterministic: bool,
    pub out: PathBuf,
    pub scenario: Scenario,
    pub noise: NoiseSpec,
    pub misalignment: Misalignment,
    pub probe_mode: ProbeMode,
    pub solvers: Vec<SolverConfig>,
    pub dataset: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub iterations: Option<usize>,
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn preset(name: &str) -> Result<Scenario> {
    match name {
        "desk" => Ok(Scenario::desk()),
        "paper" => Ok(Scenario::paper()),
        other => bail!("unknown preset {other:?} (expected desk or paper)"),
    }
}

fn solver_ids_for(mode: ProbeMode, algorithm: Algorithm) -> Result<Algorithm> {
    if !mode.probe_unknown() || algorithm.updates_probe() {
        return Ok(algorithm);
    }
    match algorithm {
        Algorithm::Awf => Ok(Algorithm::AwfProbe),
        Algorithm::Epie => Ok(Algorithm::EpieProbe),
        other => bail!(
            "solver {other} cannot refine the probe; with probe mode {} use awf or epie",
            mode.id()
        ),
    }
}

/// The seven methods compared under a known probe.
const DEFAULT_SOLVERS: [Algorithm; 7] = [
    Algorithm::Wf,
    Algorithm::Awf,
    Algorithm::Cgm,
    Algorithm::Epie,
    Algorithm::Dm,
    Algorithm::Er,
    Algorithm::Raar,
];

impl ConfigFile {
    pub fn resolve(&self, overrides: &Overrides) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let preset_name = e.preset.clone().unwrap_or_else(|| "desk".to_string());
        let base = preset(&preset_name)?;
        let seed = overrides.seed.or(e.seed).unwrap_or(0);
        let derived = |stream: u64| seed.wrapping_add(stream);

        let p = &self.phantom;
        let kind = match p.kind.as_deref().unwrap_or("ic") {
            "ic" => PhantomKind::IcLayered,
            "beads" => PhantomKind::Beads,
            other => bail!("unknown phantom kind {other:?} (expected ic or beads)"),
        };
        let materials = match &p.materials {
            Some(list) => list.iter().map(|m| Material::new(&m.name, m.delta, m.beta)).collect(),
            // Beads use the first material only; tungsten gives strong contrast.
            None if kind == PhantomKind::Beads => standard_materials().into_iter().filter(|m| m.name == "W").collect(),
            None => base.phantom.materials.clone(),
        };
        let phantom = PhantomSpec {
            kind,
            width: p.width.unwrap_or(base.phantom.width),
            height: p.height.unwrap_or(base.phantom.height),
            materials,
            seed: p.seed.unwrap_or(derived(PHANTOM_STREAM)),
            wavelength: p.wavelength.unwrap_or(base.phantom.wavelength),
            thickness: p.thickness.unwrap_or(base.phantom.thickness),
        };
        phantom.validate()?;

        let probe = ProbeSpec {
            fwhm: self.probe.fwhm.unwrap_or(base.probe.fwhm),
            support: self.probe.support.unwrap_or(base.probe.support),
            frame: self.probe.frame.unwrap_or(base.probe.frame),
            amplitude: self.probe.amplitude.unwrap_or(base.probe.amplitude),
        };
        probe.validate()?;

        let region = match self.scan.region {
            Some([x0, y0, w, h]) => MaskRegion::new(x0, y0, w, h),
            None if (phantom.width, phantom.height) == (base.phantom.width, base.phantom.height) => base.region,
            None => MaskRegion::new(
                phantom.width / 4,
                phantom.height / 4,
                phantom.width / 2,
                phantom.height / 2,
            ),
        };
        region.check_inside(phantom.width, phantom.height)?;
        let scenario = Scenario {
            phantom,
            probe,
            region,
            spacing: self.scan.spacing.unwrap_or(base.spacing),
        };

        let noise = NoiseSpec {
            photons: self.noise.photons.unwrap_or(f64::INFINITY),
            seed: self.noise.seed.unwrap_or(derived(NOISE_STREAM)),
        };
        noise.validate()?;

        let misalignment = Misalignment {
            max_displacement: self.misalignment.max_displacement.unwrap_or(0),
            seed: self.misalignment.seed.unwrap_or(derived(JITTER_STREAM)),
        };

        let probe_mode = match self.probe_mode.mode.as_deref().unwrap_or("known") {
            "known" => ProbeMode::Known,
            "deterministic-init" => ProbeMode::DeterministicInit,
            "perturbed-init" => ProbeMode::PerturbedInit {
                level: self.probe_mode.level.unwrap_or(DEFAULT_PERTURBATION),
                seed: self.probe_mode.seed.unwrap_or(derived(PROBE_STREAM)),
            },
            other => bail!("unknown probe mode {other:?}"),
        };

        let deterministic = overrides.deterministic || e.deterministic.unwrap_or(true);
        let default_iters = e.iterations.unwrap_or(DEFAULT_ITERATIONS);
        let sections: Vec<SolverSection> = if self.solver.is_empty() {
            DEFAULT_SOLVERS
                .iter()
                .map(|a| SolverSection {
                    algorithm: a.id().to_string(),
                    ..SolverSection::default()
                })
                .collect()
        } else {
            self.solver.clone()
        };
        let mut solvers = Vec::with_capacity(sections.len());
        for s in &sections {
            let algorithm = solver_ids_for(probe_mode, s.algorithm.parse()?)?;
            let mut c = SolverConfig::new(
                algorithm,
                overrides.iterations.or(s.iterations).unwrap_or(default_iters),
            );
            let ls = LineSearchSettings::default();
            c.step_size = s.step_size;
            c.line_search = LineSearchSettings {
                bracket_scale: s.bracket_scale.unwrap_or(ls.bracket_scale),
                rel_tol: s.line_search_tol.unwrap_or(ls.rel_tol),
                max_evals: s.line_search_evals.unwrap_or(ls.max_evals),
            };
            c.seed = derived(SOLVER_STREAM);
            c.deterministic = deterministic;
            c.log_cost_at_iterate = s.log_cost_at_iterate.unwrap_or(false);
            c.raar_beta = s.raar_beta.unwrap_or(c.raar_beta);
            c.epie_shuffle = s.epie_shuffle.unwrap_or(false);
            c.epie_object_step = s.epie_object_step.unwrap_or(c.epie_object_step);
            c.epie_probe_step = s.epie_probe_step.unwrap_or(c.epie_probe_step);
            c.grad_tol = s.grad_tol;
            c.validate()?;
            if solvers.iter().any(|o: &SolverConfig| o.algorithm == algorithm) {
                bail!("solver {algorithm} requested twice");
            }
            solvers.push(c);
        }

        Ok(ExperimentConfig {
            preset: preset_name,
            seed,
            deterministic,
            out: overrides
                .out
                .clone()
                .or_else(|| e.out.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            scenario,
            noise,
            misalignment,
            probe_mode,
            solvers,
            dataset: self.reconstruct.dataset.clone(),
        })
    }
}

impl ExperimentConfig {
    /// Complete file form; resolving it again gives back `self`.
    pub fn to_file(&self) -> ConfigFile {
        let sc = &self.scenario;
        let ph = &sc.phantom;
        let (mode_level, mode_seed) = match self.probe_mode {
            ProbeMode::PerturbedInit { level, seed } => (Some(level), Some(seed)),
            _ => (None, None),
        };
        ConfigFile {
            experiment: ExperimentSection {
                preset: Some(self.preset.clone()),
                seed: Some(self.seed),
                deterministic: Some(self.deterministic),
                out: Some(self.out.clone()),
                iterations: None,
            },
            phantom: PhantomSection {
                kind: Some(
                    match ph.kind {
                        PhantomKind::IcLayered => "ic",
                        PhantomKind::Beads => "beads",
                    }
                    .to_string(),
                ),
                width: Some(ph.width),
                height: Some(ph.height),
                seed: Some(ph.seed),
                wavelength: Some(ph.wavelength),
                thickness: Some(ph.thickness),
                materials: Some(
                    ph.materials
                        .iter()
                        .map(|m| MaterialEntry {
                            name: m.name.clone(),
                            delta: m.delta,
                            beta: m.beta,
                        })
                        .collect(),
                ),
            },
            probe: ProbeSection {
                fwhm: Some(sc.probe.fwhm),
                support: Some(sc.probe.support),
                frame: Some(sc.probe.frame),
                amplitude: Some(sc.probe.amplitude),
            },
            scan: ScanSection {
                spacing: Some(sc.spacing),
                region: Some([sc.region.x0, sc.region.y0, sc.region.w, sc.region.h]),
            },
            noise: NoiseSection {
                photons: Some(self.noise.photons),
                seed: Some(self.noise.seed),
            },
            misalignment: MisalignmentSection {
                max_displacement: Some(self.misalignment.max_displacement),
                seed: Some(self.misalignment.seed),
            },
            probe_mode: ProbeModeSection {
                mode: Some(self.probe_mode.id().to_string()),
                level: mode_level,
                seed: mode_seed,
            },
            solver: self.solvers.iter().map(solver_section).collect(),
            reconstruct: ReconstructSection {
                dataset: self.dataset.clone(),
            },
            dataset: None,
        }
    }
}

fn solver_section(c: &SolverConfig) -> SolverSection {
    SolverSection {
        algorithm: c.algorithm.id().to_string(),
        iterations: Some(c.max_iterations),
        step_size: c.step_size,
        bracket_scale: Some(c.line_search.bracket_scale),
        line_search_tol: Some(c.line_search.rel_tol),
        line_search_evals: Some(c.line_search.max_evals),
        log_cost_at_iterate: Some(c.log_cost_at_iterate),
        raar_beta: Some(c.raar_beta),
        epie_shuffle: Some(c.epie_shuffle),
        epie_object_step: Some(c.epie_object_step),
        epie_probe_step: Some(c.epie_probe_step),
        grad_tol: c.grad_tol,
    }
}
