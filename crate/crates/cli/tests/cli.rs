use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ptycho(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptycho")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn phantom_writes_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ph");
    ok(&ptycho(&["phantom", "--out", out.to_str().unwrap()]));
    for f in ["phantom.dump", "phantom_magnitude.pgm", "phantom_phase.pgm"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let pgm = fs::read(out.join("phantom_magnitude.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}

#[test]
fn simulate_then_reconstruct_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"
            [noise]
            photons = 1e6
            [misalignment]
            max_displacement = 1
            [[solver]]
            algorithm = "awf"
            [[solver]]
            algorithm = "er"
            [reconstruct]
            dataset = "{}"
            "#,
            data.display()
        ),
    );
    ok(&ptycho(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        data.to_str().unwrap(),
    ]));
    for f in [
        "amplitudes.dump",
        "scan.csv",
        "scan_true.csv",
        "object_true.dump",
        "probe.dump",
        "manifest.toml",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap();
    assert!(manifest.contains("positions = 88"), "{manifest}");

    let rec = dir.path().join("rec");
    let out = ptycho(&[
        "reconstruct",
        "--config",
        &cfg,
        "--out",
        rec.to_str().unwrap(),
        "--iters",
        "5",
    ]);
    ok(&out);
    let summary = fs::read_to_string(rec.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "solver,iterations,final_cost,final_rre,total_ffts,status");
    assert!(lines[1].starts_with("awf,5,"), "{summary}");
    assert!(lines[2].starts_with("er,5,"), "{summary}");
    assert!(lines[1].ends_with(",completed"));
    for f in [
        "awf.csv",
        "awf_object.dump",
        "awf_magnitude.pgm",
        "awf_phase.pgm",
        "er.csv",
    ] {
        assert!(rec.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(rec.join("awf.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("awf"));
}

#[test]
fn unknown_probe_runs_joint_solvers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
        [probe_mode]
        mode = "deterministic-init"
        [[solver]]
        algorithm = "awf"
        [[solver]]
        algorithm = "epie"
        "#,
    );
    let rec = dir.path().join("rec");
    ok(&ptycho(&[
        "reconstruct",
        "--config",
        &cfg,
        "--out",
        rec.to_str().unwrap(),
        "--iters",
        "3",
    ]));
    assert!(rec.join("awf-probe_probe.dump").exists());
    assert!(rec.join("epie-probe.csv").exists());
}

#[test]
fn divergence_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[solver]]\nalgorithm = \"wf\"\nstep_size = 1e6\n");
    let rec = dir.path().join("rec");
    let out = ptycho(&[
        "reconstruct",
        "--config",
        &cfg,
        "--out",
        rec.to_str().unwrap(),
        "--iters",
        "50",
    ]);
    ok(&out);
    let summary = fs::read_to_string(rec.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().contains(",diverged@"), "{summary}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn benchmark_merges_and_flags_missing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[[solver]]\nalgorithm = \"wf\"\n[[solver]]\nalgorithm = \"raar\"\n",
    );
    let out_dir = dir.path().join("bench");
    ok(&ptycho(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--iters",
        "4",
    ]));
    let table = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    assert!(table.starts_with("solver,iter,cum_ffts,cost,grad_norm,rre,note\n"));
    assert_eq!(table.lines().filter(|l| l.starts_with("wf,")).count(), 4);
    assert_eq!(table.lines().filter(|l| l.starts_with("raar,")).count(), 4);
    assert!(out_dir.join("benchmark_summary.csv").exists());

    fs::remove_file(out_dir.join("raar.csv")).unwrap();
    let out = ptycho(&[
        "benchmark",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--merge-only",
    ]);
    ok(&out);
    let table = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    assert!(table.contains("raar,,,,,,missing run"), "{table}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    for text in [
        "[probe]\nsupport = 40\n",
        "[scan]\nbogus = 1\n",
        "[noise]\nphotons = -1.0\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let out = ptycho(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert!(!out.status.success(), "{text}");
        assert!(!out_dir.exists(), "{text}");
    }
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let file = ptycho_cli::config::load(&path).unwrap();
        file.resolve(&ptycho_cli::config::Overrides::default())
            .unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4);
}
