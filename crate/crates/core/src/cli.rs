//! Command implementations behind the binary: single run, α sweep, verification.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{parse_config, Config};
use crate::error::{Error, Result};
use crate::output::{check_writable, radius_table, write_run, write_text};
use crate::stepper::{run_simulation, Problem, RunOutput};
use crate::verify::{run_criterion, VerifyOptions, CRITERIA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_SOLVER
    }
}

/// Bytes held by the tumour history at the end of a run.
pub fn history_bytes(p: &Problem) -> Result<usize> {
    let nodes = (p.n + 1) * (p.n + 1);
    Ok(p.num_steps()? * nodes * std::mem::size_of::<f64>())
}

fn summary(run: &RunOutput) -> String {
    let last = run.series.last().expect("series holds the initial record");
    format!(
        "t = {}: tumour mass {:.6e}, nutrient mass {:.6e}, chemo mass {:.6e}, radius {:.4}, \
         max fixed-point iterations {}",
        last.t,
        last.tumour_mass,
        last.nutrient_mass,
        last.chemo_mass,
        last.radius,
        run.series.max_fp_iters()
    )
}

/// Runs the configuration at `path`, writing its outputs.
pub fn cmd_run(path: &Path, out: &mut impl Write) -> Result<RunOutput> {
    let cfg = parse_config(path)?;
    run_config(&cfg, out)
}

pub fn run_config(cfg: &Config, out: &mut impl Write) -> Result<RunOutput> {
    check_writable(&cfg.output)?;
    let mib = history_bytes(&cfg.problem)? as f64 / (1024.0 * 1024.0);
    let _ = writeln!(out, "history memory up to {mib:.1} MiB");
    let run = run_simulation(&cfg.problem)?;
    write_run(&cfg.output, &run)?;
    let _ = writeln!(out, "{}", summary(&run));
    Ok(run)
}

/// Where sweep outputs go: next to the configured series, or `dir`.
fn sweep_paths(cfg: &Config, dir: Option<&Path>) -> (PathBuf, String) {
    let series = cfg.output.series_path.as_deref();
    let base = dir
        .map(Path::to_path_buf)
        .or_else(|| series.and_then(Path::parent).map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let stem = series
        .and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    (base, stem)
}

/// Per-α configuration: series `<stem>_alpha<α>.csv`, snapshots in `alpha_<α>/`.
pub fn sweep_config(cfg: &Config, alpha: f64, dir: Option<&Path>) -> Config {
    let (base, stem) = sweep_paths(cfg, dir);
    let mut c = cfg.clone();
    c.problem.params.alpha = alpha;
    c.output.series_path = Some(base.join(format!("{stem}_alpha{alpha}.csv")));
    c.output.snapshot_dir = cfg
        .output
        .snapshot_dir
        .as_ref()
        .map(|d| d.join(format!("alpha_{alpha}")));
    c
}

pub fn radius_table_path(cfg: &Config, dir: Option<&Path>) -> PathBuf {
    let (base, stem) = sweep_paths(cfg, dir);
    base.join(format!("{stem}_radius.csv"))
}

/// One run per α in parallel, then the combined radius table. Returns the
/// exit code.
pub fn cmd_sweep_alpha(
    path: &Path,
    alphas: &[f64],
    dir: Option<&Path>,
    out: &mut impl Write,
) -> i32 {
    if alphas.is_empty() {
        let _ = writeln!(out, "error: --alphas needs at least one value");
        return EXIT_CONFIG;
    }
    let cfg = match parse_config(path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return exit_code(&e);
        }
    };
    let configs: Vec<Config> = alphas.iter().map(|&a| sweep_config(&cfg, a, dir)).collect();
    for (a, c) in alphas.iter().zip(&configs) {
        if let Err(e) = c.problem.validate().and_then(|_| check_writable(&c.output)) {
            let _ = writeln!(out, "alpha = {a}: error: {e}");
            return EXIT_CONFIG;
        }
    }
    if let Ok(b) = history_bytes(&cfg.problem) {
        let _ = writeln!(
            out,
            "{} runs on up to {} threads, history memory up to {:.1} MiB each",
            alphas.len(),
            rayon::current_num_threads(),
            b as f64 / (1024.0 * 1024.0)
        );
    }
    let results: Vec<Result<RunOutput>> = configs
        .par_iter()
        .map(|c| {
            let run = run_simulation(&c.problem)?;
            write_run(&c.output, &run)?;
            Ok(run)
        })
        .collect();
    let mut code = EXIT_OK;
    let mut done = Vec::new();
    for (a, r) in alphas.iter().zip(&results) {
        match r {
            Ok(run) => {
                let _ = writeln!(out, "alpha = {a}: {}", summary(run));
                done.push((*a, &run.series));
            }
            Err(e) => {
                let _ = writeln!(out, "alpha = {a}: error: {e}");
                code = code.max(exit_code(e));
            }
        }
    }
    if code != EXIT_OK {
        return code;
    }
    let table_path = radius_table_path(&cfg, dir);
    match radius_table(&done).and_then(|t| write_text(&table_path, &t)) {
        Ok(()) => {
            let _ = writeln!(out, "radius table written to {}", table_path.display());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs the selected criteria (all when empty), one line each.
pub fn cmd_verify(only: &[usize], opts: &VerifyOptions, out: &mut impl Write) -> i32 {
    let ids: Vec<usize> = if only.is_empty() {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        only.to_vec()
    };
    if let Some(bad) = ids.iter().find(|i| !CRITERIA.iter().any(|c| c.0 == **i)) {
        let _ = writeln!(out, "error: no criterion {bad}");
        return EXIT_CONFIG;
    }
    let mut failed = 0;
    for id in &ids {
        let r = run_criterion(*id, opts);
        let _ = writeln!(out, "{r}");
        failed += usize::from(!r.passed);
    }
    let _ = writeln!(
        out,
        "{} of {} criteria passed",
        ids.len() - failed,
        ids.len()
    );
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_paths_follow_series() {
        let mut cfg = Config::default();
        cfg.output.series_path = Some("/runs/circ.csv".into());
        cfg.output.snapshot_dir = Some("/runs/snaps".into());
        let c = sweep_config(&cfg, 0.25, None);
        assert_eq!(c.problem.params.alpha, 0.25);
        assert_eq!(
            c.output.series_path.as_deref(),
            Some(Path::new("/runs/circ_alpha0.25.csv"))
        );
        assert_eq!(
            c.output.snapshot_dir.as_deref(),
            Some(Path::new("/runs/snaps/alpha_0.25"))
        );
        assert_eq!(
            radius_table_path(&cfg, None),
            Path::new("/runs/circ_radius.csv")
        );
        let c = sweep_config(&Config::default(), 1.0, Some(Path::new("/o")));
        assert_eq!(
            c.output.series_path.as_deref(),
            Some(Path::new("/o/series_alpha1.csv"))
        );
    }

    #[test]
    fn history_estimate() {
        let p = Problem::default();
        assert_eq!(history_bytes(&p).unwrap(), 15 * 33 * 33 * 8);
    }

    #[test]
    fn verify_rejects_unknown_id() {
        let mut buf = Vec::new();
        assert_eq!(
            cmd_verify(&[12], &VerifyOptions::default(), &mut buf),
            EXIT_CONFIG
        );
        let mut buf = Vec::new();
        assert_eq!(
            cmd_verify(&[8], &VerifyOptions::default(), &mut buf),
            EXIT_OK
        );
        assert!(String::from_utf8(buf).unwrap().starts_with("[PASS] 8."));
    }
}
