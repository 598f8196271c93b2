//! File outputs: time-series CSV, nodal snapshots and the α radius table.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::OutputConfig;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::observe::TimeSeries;
use crate::stepper::{FieldState, RunOutput};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Creates (and truncates) every configured output so unwritable paths fail
/// before any computation.
pub fn check_writable(out: &OutputConfig) -> Result<()> {
    if let Some(p) = &out.series_path {
        create(p)?;
    }
    if let Some(d) = &out.snapshot_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok(())
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = create(path)?;
    series.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

/// `# t=<time>` followed by `x y phi mu ux uy psi chi` per node.
pub fn write_snapshot(mut w: impl Write, mesh: &Mesh, s: &FieldState) -> std::io::Result<()> {
    writeln!(w, "# t={:.16e}", s.t)?;
    for (i, p) in mesh.nodes().iter().enumerate() {
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            p[0],
            p[1],
            s.phi[i],
            s.mu[i],
            s.u[2 * i],
            s.u[2 * i + 1],
            s.psi[i],
            s.chi[i]
        )?;
    }
    Ok(())
}

pub fn snapshot_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("snapshot_{index:04}.txt"))
}

/// Writes the series and snapshots requested by `out`; returns written paths.
pub fn write_run(out: &OutputConfig, run: &RunOutput) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(p) = &out.series_path {
        write_series(p, &run.series)?;
        written.push(p.clone());
    }
    if let Some(dir) = &out.snapshot_dir {
        for (k, snap) in run.snapshots.iter().enumerate() {
            let path = snapshot_path(dir, k);
            let mut w = create(&path)?;
            write_snapshot(&mut w, &run.mesh, &snap.state).map_err(|e| Error::io(&path, e))?;
            finish(w, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Columns `t, R_<α1>, R_<α2>, ...`; all series must share the time grid.
pub fn radius_table(runs: &[(f64, &TimeSeries)]) -> Result<String> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::InvalidArgument(
            "radius table needs at least one run".into(),
        ));
    };
    for (alpha, s) in runs {
        let same = s.len() == first.len()
            && s.records()
                .iter()
                .zip(first.records())
                .all(|(a, b)| a.t == b.t);
        if !same {
            return Err(Error::InvalidData(format!(
                "series for alpha = {alpha} is on a different time grid"
            )));
        }
    }
    let mut text = String::from("t");
    for (alpha, _) in runs {
        text.push_str(&format!(",R_{alpha}"));
    }
    text.push('\n');
    for (i, r) in first.records().iter().enumerate() {
        text.push_str(&format!("{:.16e}", r.t));
        for (_, s) in runs {
            text.push_str(&format!(",{:.16e}", s.records()[i].radius));
        }
        text.push('\n');
    }
    Ok(text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observe::Record;

    fn series(ts: &[f64], r: f64) -> TimeSeries {
        let mut s = TimeSeries::new();
        for &t in ts {
            s.push(Record {
                t,
                tumour_mass: 0.0,
                nutrient_mass: 0.0,
                chemo_mass: 0.0,
                total_displacement: 0.0,
                radius: r * (1.0 + t),
                fp_iters: 1,
                phi_min: 0.0,
                phi_max: 1.0,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn radius_table_layout() {
        let a = series(&[0.0, 0.5], 0.1);
        let b = series(&[0.0, 0.5], 0.2);
        let t = radius_table(&[(0.5, &a), (1.0, &b)]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "t,R_0.5,R_1");
        assert_eq!(
            lines[2],
            "5.0000000000000000e-1,1.5000000000000002e-1,3.0000000000000004e-1"
        );
        let c = series(&[0.0, 0.25], 0.2);
        assert!(radius_table(&[(0.5, &a), (1.0, &c)]).is_err());
        assert!(radius_table(&[]).is_err());
    }

    #[test]
    fn snapshot_layout() {
        let mesh = Mesh::unit_square(1).unwrap();
        let state = FieldState {
            t: 0.25,
            phi: vec![1.0, 0.0, 0.0, 0.5],
            mu: vec![0.0; 4],
            u: (0..8).map(|k| k as f64).collect(),
            psi: vec![2.0; 4],
            chi: vec![0.0; 4],
            fp_iters: 0,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &mesh, &state).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "# t=2.5000000000000000e-1");
        let last: Vec<f64> = lines[4].split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last, vec![1.0, 1.0, 0.5, 0.0, 6.0, 7.0, 2.0, 0.0]);
    }
}
