//! The four subcommands. Each takes a resolved configuration and writes
//! into `config.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ptycho_core::metrics::{central_mask, ffts_to_reach, parse_csv, write_csv};
use ptycho_core::sim::{add_poisson_noise, generate_data, make_phantom, perturb_positions};
use ptycho_core::solvers::{
    perturbed_probe, probe_from_mean_amplitude, reconstruct, ErrorMetric, Problem, RunStatus, SolverRun, Truth,
};
use ptycho_core::{ComplexImage, DiffractionStack, MaskRegion, PtychoOperator, ScanPattern};

use crate::config::{ConfigFile, DatasetSection, ExperimentConfig, ProbeMode};
use crate::output::{fmt_opt, read_complex, read_real, write_complex_pgms, write_dump, write_file};

/// Measured data plus what the reconstruction is told about the geometry.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Nominal scan with the true probe.
    pub op: PtychoOperator,
    pub amplitudes: DiffractionStack,
    pub truth: ComplexImage,
    pub mask: MaskRegion,
    pub photons: f64,
    /// Positions the data were actually taken at, when jittered.
    pub true_scan: Option<ScanPattern>,
    pub clamped: Vec<usize>,
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub solver: String,
    pub iterations: usize,
    pub final_cost: Option<f64>,
    pub final_rre: Option<f64>,
    pub total_ffts: u64,
    pub status: String,
}

pub const SUMMARY_HEADER: &str = "solver,iterations,final_cost,final_rre,total_ffts,status";
pub const BENCHMARK_HEADER: &str = "solver,iter,cum_ffts,cost,grad_norm,rre,note";

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_phantom(config: &ExperimentConfig) -> Result<()> {
    let object = make_phantom(&config.scenario.phantom)?;
    ensure_out(&config.out)?;
    write_complex_pgms(&config.out, "phantom", &object)?;
    write_dump(&config.out.join("phantom.dump"), &object)
}

/// Simulates in memory. Nothing touches the disk.
pub fn simulate(config: &ExperimentConfig) -> Result<Dataset> {
    let mut inst = config.scenario.build()?;
    inst.op.set_deterministic(config.deterministic);
    let m = config.misalignment;
    let (true_op, true_scan, clamped) = if m.max_displacement > 0 {
        let jittered = perturb_positions(
            inst.op.scan(),
            m.max_displacement,
            m.seed,
            inst.op.object_dims(),
            inst.op.frame(),
        )?;
        let (w, h) = inst.op.object_dims();
        let mut op = PtychoOperator::new(inst.op.probe().clone(), jittered.scan.clone(), w, h)?;
        op.set_deterministic(config.deterministic);
        (op, Some(jittered.scan), jittered.clamped)
    } else {
        (inst.op.clone(), None, Vec::new())
    };
    let (d, b) = generate_data(&true_op, &inst.object)?;
    let amplitudes = if config.noise.photons.is_finite() {
        add_poisson_noise(&d, &config.noise)?.1
    } else {
        b
    };
    Ok(Dataset {
        op: inst.op,
        amplitudes,
        truth: inst.object,
        mask: inst.mask,
        photons: config.noise.photons,
        true_scan,
        clamped,
    })
}

fn scan_csv(scan: &ScanPattern) -> String {
    let mut s = String::from("k,x,y\n");
    for (k, (x, y)) in scan.positions.iter().enumerate() {
        writeln!(s, "{k},{x},{y}").unwrap();
    }
    s
}

fn parse_scan(text: &str) -> Result<ScanPattern> {
    let mut lines = text.lines();
    ensure!(
        lines.next().map(str::trim) == Some("k,x,y"),
        "scan file needs a k,x,y header"
    );
    let mut positions = Vec::new();
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cols: Vec<usize> = line
            .split(',')
            .map(|c| c.trim().parse())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad scan row {line:?}"))?;
        ensure!(cols.len() == 3 && cols[0] == i, "bad scan row {line:?}");
        positions.push((cols[1], cols[2]));
    }
    Ok(ScanPattern::new(positions))
}

pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Dataset> {
    let data = simulate(config)?;
    let dir = &config.out;
    ensure_out(dir)?;
    let mut bytes = Vec::new();
    data.amplitudes.to_image().write_dump(&mut bytes)?;
    write_file(&dir.join("amplitudes.dump"), &bytes)?;
    write_file(&dir.join("scan.csv"), scan_csv(data.op.scan()).as_bytes())?;
    if let Some(scan) = &data.true_scan {
        write_file(&dir.join("scan_true.csv"), scan_csv(scan).as_bytes())?;
    }
    write_dump(&dir.join("object_true.dump"), &data.truth)?;
    write_dump(&dir.join("probe.dump"), data.op.probe())?;

    let (w, h) = data.op.object_dims();
    let mut manifest = config.to_file();
    manifest.dataset = Some(DatasetSection {
        positions: data.op.positions(),
        frame: data.op.frame(),
        width: w,
        height: h,
        photons: data.photons,
        clamped: data.clamped.clone(),
    });
    let text = toml::to_string(&manifest)?;
    write_file(&dir.join("manifest.toml"), text.as_bytes())?;
    Ok(data)
}

pub fn load_dataset(dir: &Path, deterministic: bool) -> Result<Dataset> {
    let manifest: ConfigFile = crate::config::load(&dir.join("manifest.toml"))?;
    let info = manifest.dataset.context("manifest has no [dataset] section")?;
    let amplitudes = DiffractionStack::from_image(&read_real(&dir.join("amplitudes.dump"))?)?;
    amplitudes.check_nonnegative()?;
    let scan_path = dir.join("scan.csv");
    let scan =
        parse_scan(&fs::read_to_string(&scan_path).with_context(|| format!("reading {}", scan_path.display()))?)?;
    let probe = read_complex(&dir.join("probe.dump"))?;
    let truth = read_complex(&dir.join("object_true.dump"))?;
    ensure!(
        truth.dims() == (info.width, info.height),
        "true object is {:?}, manifest says {}x{}",
        truth.dims(),
        info.width,
        info.height
    );
    ensure!(
        amplitudes.count() == scan.len() && amplitudes.frame() == probe.width(),
        "{} patterns of {} px for {} positions and a {} px probe",
        amplitudes.count(),
        amplitudes.frame(),
        scan.len(),
        probe.width()
    );
    let mut op = PtychoOperator::new(probe, scan, info.width, info.height)?;
    op.set_deterministic(deterministic);
    Ok(Dataset {
        op,
        amplitudes,
        mask: central_mask(info.width, info.height)?,
        truth,
        photons: info.photons,
        true_scan: None,
        clamped: info.clamped,
    })
}

/// Operator the solvers start from: nominal scan, probe per `mode`.
pub fn starting_operator(data: &Dataset, mode: ProbeMode) -> Result<PtychoOperator> {
    Ok(match mode {
        ProbeMode::Known => data.op.clone(),
        ProbeMode::DeterministicInit => data.op.with_probe(probe_from_mean_amplitude(&data.amplitudes)?)?,
        ProbeMode::PerturbedInit { level, seed } => {
            data.op.with_probe(perturbed_probe(data.op.probe(), level, seed)?)?
        }
    })
}

fn status_field(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Converged { iteration } => format!("converged@{iteration}"),
        RunStatus::Diverged { iteration, .. } => format!("diverged@{iteration}"),
    }
}

pub fn run_solvers(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<SolverRun>> {
    let op = starting_operator(data, config.probe_mode)?;
    let metric = if config.probe_mode.probe_unknown() {
        ErrorMetric::Scale
    } else {
        ErrorMetric::Phase
    };
    let problem = Problem::new(&op, &data.amplitudes).with_truth(Truth {
        object: &data.truth,
        mask: data.mask,
        metric,
    });
    config
        .solvers
        .iter()
        .map(|c| reconstruct(&problem, c).with_context(|| format!("running {}", c.algorithm)))
        .collect()
}

pub fn cmd_reconstruct(config: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let data = match &config.dataset {
        Some(dir) => load_dataset(dir, config.deterministic)?,
        None => simulate(config)?,
    };
    ensure_out(&config.out)?;
    let mut rows = Vec::new();
    for run in run_solvers(config, &data)? {
        let id = run.config.algorithm.id();
        let dir = &config.out;
        let mut csv = Vec::new();
        write_csv(&mut csv, &run.records)?;
        write_file(&dir.join(format!("{id}.csv")), &csv)?;
        write_dump(&dir.join(format!("{id}_object.dump")), &run.object)?;
        write_complex_pgms(dir, id, &run.object)?;
        if let Some(probe) = &run.probe {
            write_dump(&dir.join(format!("{id}_probe.dump")), probe)?;
        }
        if let RunStatus::Diverged { iteration, reason } = &run.status {
            eprintln!("warning: {id} diverged at iteration {iteration}: {reason}");
        }
        rows.push(SummaryRow {
            solver: id.to_string(),
            iterations: run.records.len(),
            final_cost: run.final_cost,
            final_rre: run.final_rre(),
            total_ffts: run.total_ffts,
            status: status_field(&run.status),
        });
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for r in &rows {
        writeln!(
            summary,
            "{},{},{},{},{},{}",
            r.solver,
            r.iterations,
            fmt_opt(r.final_cost),
            fmt_opt(r.final_rre),
            r.total_ffts,
            r.status
        )?;
    }
    write_file(&config.out.join("summary.csv"), summary.as_bytes())?;
    Ok(rows)
}

pub fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<12} {:>6} {:>12} {:>12} {:>10}  status",
        "solver", "iters", "final_cost", "final_rre", "ffts"
    );
    let show = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
    for r in rows {
        println!(
            "{:<12} {:>6} {:>12} {:>12} {:>10}  {}",
            r.solver,
            r.iterations,
            show(r.final_cost),
            show(r.final_rre),
            r.total_ffts,
            r.status
        );
    }
}

/// Merges the per-solver logs in `config.out` into `benchmark.csv`, plus
/// `benchmark_summary.csv` with the transforms each solver needed to reach
/// RRE 0.1 and 0.01. Missing logs become a warning row.
pub fn merge_benchmark(config: &ExperimentConfig) -> Result<()> {
    let mut long = format!("{BENCHMARK_HEADER}\n");
    let mut short = String::from("solver,ffts_to_1e-1,ffts_to_1e-2,final_rre\n");
    for c in &config.solvers {
        let id = c.algorithm.id();
        let path = config.out.join(format!("{id}.csv"));
        let records = match fs::read_to_string(&path) {
            Ok(text) => parse_csv(&text).with_context(|| format!("parsing {}", path.display()))?,
            Err(_) => {
                eprintln!("warning: no log for {id} at {}", path.display());
                writeln!(long, "{id},,,,,,missing run")?;
                writeln!(short, "{id},,,")?;
                continue;
            }
        };
        for r in &records {
            writeln!(
                long,
                "{id},{},{},{},{},{},",
                r.iter,
                r.cum_ffts,
                fmt_opt(r.cost),
                fmt_opt(r.grad_norm),
                fmt_opt(r.rre)
            )?;
        }
        let reach = |t| ffts_to_reach(&records, t).map(|n| n.to_string()).unwrap_or_default();
        writeln!(
            short,
            "{id},{},{},{}",
            reach(0.1),
            reach(0.01),
            fmt_opt(records.last().and_then(|r| r.rre))
        )?;
    }
    ensure_out(&config.out)?;
    write_file(&config.out.join("benchmark.csv"), long.as_bytes())?;
    write_file(&config.out.join("benchmark_summary.csv"), short.as_bytes())
}

pub fn cmd_benchmark(config: &ExperimentConfig, merge_only: bool) -> Result<Vec<SummaryRow>> {
    if config.solvers.is_empty() {
        bail!("benchmark needs at least one solver");
    }
    let rows = if merge_only {
        Vec::new()
    } else {
        cmd_reconstruct(config)?
    };
    merge_benchmark(config)?;
    Ok(rows)
}
