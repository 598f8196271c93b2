use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fractumour"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TUMOUR_") {
            c.env_remove(k);
        }
    }
    c
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const CIRCULAR: &str = "mesh.n = 16\ntime.dt = 0.1\ntime.T = 1\nmodel.alpha = 0.5\n\
                        model.lambda = 0\nmodel.p_phi = 0\nsources.s_psi = 0.5\n\
                        output.series_path = series.csv\n";

#[test]
fn zero_horizon_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "a.cfg",
        "time.T = 0\noutput.series_path = s.csv\n",
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "t,tumour_mass,nutrient_mass,chemo_mass,total_displacement,radius,fp_iters,phi_min,phi_max"
    );
}

#[test]
fn desk_scale_row_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "a.cfg",
        "mesh.n = 32\ntime.dt = 0.0666666666666666667\ntime.T = 5\nmodel.lambda = 0\nmodel.p_phi = 0\n\
         sources.s_psi = 0.5\noutput.series_path = s.csv\n",
    );
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 75 + 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max fixed-point iterations"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let body = format!("{CIRCULAR}output.snapshot_dir = snaps\noutput.snapshot_times = 0.5, 1\n");
    let cfg = write_cfg(dir.path(), "a.cfg", &body);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert!(bin().arg("run").arg(&cfg).status().unwrap().success());
    let (s1, p1) = (read("series.csv"), read("snaps/snapshot_0001.txt"));
    assert!(bin().arg("run").arg(&cfg).status().unwrap().success());
    assert_eq!(s1, read("series.csv"));
    assert_eq!(p1, read("snaps/snapshot_0001.txt"));
    let snap = String::from_utf8(p1).unwrap();
    assert!(snap.starts_with("# t=1.0000000000000000e0\n"));
    assert_eq!(snap.lines().count(), 1 + 17 * 17);
    assert!(!snap.contains('\r'));
}

#[test]
fn single_alpha_sweep_matches_run() {
    let dir = TempDir::new().unwrap();
    let body = CIRCULAR.replace("model.alpha = 0.5", "model.alpha = 1");
    let cfg = write_cfg(dir.path(), "a.cfg", &body);
    assert!(bin().arg("run").arg(&cfg).status().unwrap().success());
    let out = bin()
        .args(["sweep-alpha", cfg.to_str().unwrap(), "--alphas", "1.0"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let run = std::fs::read(dir.path().join("series.csv")).unwrap();
    let swept = std::fs::read(dir.path().join("series_alpha1.csv")).unwrap();
    assert_eq!(run, swept);
    let table = std::fs::read_to_string(dir.path().join("series_radius.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("t,R_1"));
    assert_eq!(table.lines().count(), 12);
}

#[test]
fn sweep_radius_table_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", CIRCULAR);
    let out_dir = dir.path().join("sweep");
    let out = bin()
        .args([
            "sweep-alpha",
            cfg.to_str().unwrap(),
            "--alphas",
            "0.25,0.5,0.75,1",
            "--out-dir",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    for a in ["0.25", "0.5", "0.75", "1"] {
        assert!(out_dir.join(format!("series_alpha{a}.csv")).exists());
    }
    let table = std::fs::read_to_string(out_dir.join("series_radius.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("t,R_0.25,R_0.5,R_0.75,R_1"));
    let last: Vec<f64> = table
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    // ordering in alpha only emerges at later times; here check the layout
    assert_eq!(last.len(), 5);
    assert_eq!(last[0], 1.0);
    assert!(last[1..].iter().all(|r| *r > 0.0), "{last:?}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let typo = write_cfg(dir.path(), "typo.cfg", "model.Mphi_typo = 1\n");
    let out = bin().arg("run").arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.Mphi_typo"));

    let nu = write_cfg(dir.path(), "nu.cfg", "model.nu = 0.5\n");
    let out = bin().arg("run").arg(&nu).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Poisson"));

    assert_eq!(
        bin()
            .args(["run", "/nonexistent/x.cfg"])
            .status()
            .unwrap()
            .code(),
        Some(1)
    );

    let stall = write_cfg(
        dir.path(),
        "stall.cfg",
        "solver.fp_max = 1\ntime.T = 0.2\ntime.dt = 0.1\nsources.s_psi = 0.5\n",
    );
    let out = bin().arg("run").arg(&stall).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 1"));

    let cfg = write_cfg(dir.path(), "ok.cfg", CIRCULAR);
    assert_eq!(
        bin()
            .args(["sweep-alpha", cfg.to_str().unwrap()])
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    let out = bin()
        .args(["sweep-alpha", cfg.to_str().unwrap(), "--alphas", "0.5,1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        bin()
            .args(["verify", "--only", "42"])
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    assert_eq!(bin().arg("bogus").status().unwrap().code(), Some(1));
}

#[test]
fn env_override_applies() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", CIRCULAR);
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .env("TUMOUR_TIME__T", "0.5")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let bad = bin()
        .arg("run")
        .arg(&cfg)
        .env("TUMOUR_MODEL__ALPHAA", "0.5")
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
}

#[test]
fn verify_subset_passes() {
    let out = bin()
        .args(["verify", "--only", "1,2,8,9"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 4);
}
