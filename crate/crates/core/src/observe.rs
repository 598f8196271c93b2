//! Scalar observables, field probes and the per-step time series.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{Mesh, Point};

/// Default radius threshold.
pub const RADIUS_THRESHOLD: f64 = 1e-3;

pub const CSV_HEADER: &str =
    "t,tumour_mass,nutrient_mass,chemo_mass,total_displacement,radius,fp_iters,phi_min,phi_max";

/// `1ᵀ M v`, the integral of the P1 interpolant of `v`.
pub fn field_mass(m: &CsrMatrix, v: &[f64]) -> Result<f64> {
    crate::fem::integrate_scalar(m, v)
}

/// `∫|u|` with nodal `|u|` interpolated in P1; `u` is interleaved `(ux, uy)` per node.
pub fn total_displacement(m: &CsrMatrix, u: &[f64]) -> Result<f64> {
    if u.len() != 2 * m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: 2 * m.nrows(),
            found: u.len(),
        });
    }
    let modulus: Vec<f64> = u.chunks_exact(2).map(|c| c[0].hypot(c[1])).collect();
    field_mass(m, &modulus)
}

/// Largest node distance from `center` among nodes with `phi >= thresh`; 0 if none.
pub fn tumour_radius(phi: &[f64], mesh: &Mesh, center: Point, thresh: f64) -> f64 {
    phi.iter()
        .zip(mesh.nodes())
        .filter(|(v, _)| **v >= thresh)
        .map(|(_, p)| (p[0] - center[0]).hypot(p[1] - center[1]))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Line `y = coord`, samples ordered by `x`.
    X,
    /// Line `x = coord`, samples ordered by `y`.
    Y,
}

/// Samples of the P1 interpolant where the line meets mesh edges, as
/// `(free coordinate, value)` ordered by the free coordinate.
pub fn cross_section(field: &[f64], mesh: &Mesh, axis: Axis, coord: f64) -> Vec<(f64, f64)> {
    let (fixed, free) = match axis {
        Axis::X => (1, 0),
        Axis::Y => (0, 1),
    };
    let nodes = mesh.nodes();
    let mut out = Vec::new();
    for tri in mesh.triangles() {
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            let (pa, pb) = (nodes[a], nodes[b]);
            let (da, db) = (pa[fixed] - coord, pb[fixed] - coord);
            if da == 0.0 && db == 0.0 {
                out.push((pa[free], field[a]));
                out.push((pb[free], field[b]));
            } else if da == 0.0 {
                out.push((pa[free], field[a]));
            } else if db == 0.0 {
                out.push((pb[free], field[b]));
            } else if (da < 0.0) != (db < 0.0) {
                let s = da / (da - db);
                out.push((
                    pa[free] + s * (pb[free] - pa[free]),
                    field[a] + s * (field[b] - field[a]),
                ));
            }
        }
    }
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out.dedup_by(|p, q| (p.0 - q.0).abs() <= 1e-12);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub tumour_mass: f64,
    pub nutrient_mass: f64,
    pub chemo_mass: f64,
    pub total_displacement: f64,
    pub radius: f64,
    pub fp_iters: usize,
    pub phi_min: f64,
    pub phi_max: f64,
}

/// Records with strictly increasing `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    records: Vec<Record>,
}

impl TimeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if !(r.t > last.t) {
                return Err(Error::State(format!(
                    "time series record at t = {} does not follow t = {}",
                    r.t, last.t
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn max_fp_iters(&self) -> usize {
        self.records.iter().map(|r| r.fp_iters).max().unwrap_or(0)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                r.t,
                r.tumour_mass,
                r.nutrient_mass,
                r.chemo_mass,
                r.total_displacement,
                r.radius,
                r.fp_iters,
                r.phi_min,
                r.phi_max
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_mass;
    use crate::model::InitialCondition;

    fn setup(n: usize) -> (Mesh, CsrMatrix) {
        let mesh = Mesh::unit_square(n).unwrap();
        let m = assemble_mass(&mesh);
        (mesh, m)
    }

    #[test]
    fn mass_examples() {
        let (mesh, m) = setup(4);
        let nn = mesh.num_nodes();
        assert!((field_mass(&m, &vec![1.0; nn]).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(field_mass(&m, &vec![0.0; nn]).unwrap(), 0.0);
        assert!(field_mass(&m, &[1.0]).is_err());
    }

    #[test]
    fn circular_plateau_mass_matches_radial_quadrature() {
        let (mesh, m) = setup(100);
        let ic = InitialCondition::circular_default();
        let v = ic.nodal(&mesh).unwrap();
        let mass = field_mass(&m, &v).unwrap();
        // 2π ∫ r φ(r) dr by composite Simpson on a fine grid
        let (a, k) = (0.22, 20_000);
        let h = a / k as f64;
        let g = |r: f64| r * ic.eval([0.5 + r, 0.5]).unwrap();
        let mut s = g(0.0) + g(a);
        for i in 1..k {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        let exact = 2.0 * std::f64::consts::PI * s * h / 3.0;
        assert!((exact - 0.076_730_931_176_542_88).abs() < 1e-9, "{exact}");
        assert!((mass - exact).abs() < 1e-3, "{mass} vs {exact}");
    }

    #[test]
    fn displacement_examples() {
        let (mesh, m) = setup(6);
        let nn = mesh.num_nodes();
        assert_eq!(total_displacement(&m, &vec![0.0; 2 * nn]).unwrap(), 0.0);
        let ux: Vec<f64> = (0..nn).flat_map(|_| [1.0, 0.0]).collect();
        assert!((total_displacement(&m, &ux).unwrap() - 1.0).abs() < 1e-14);
        let lin: Vec<f64> = mesh.nodes().iter().flat_map(|p| [p[0], 0.0]).collect();
        assert!((total_displacement(&m, &lin).unwrap() - 0.5).abs() < 1e-14);
        assert!(total_displacement(&m, &[0.0; 3]).is_err());
    }

    #[test]
    fn radius_examples() {
        let mesh = Mesh::unit_square(200).unwrap();
        let c = [0.5, 0.5];
        assert_eq!(
            tumour_radius(&vec![0.0; mesh.num_nodes()], &mesh, c, 1e-3),
            0.0
        );
        let disk: Vec<f64> = mesh
            .nodes()
            .iter()
            .map(|p| {
                if (p[0] - 0.5).hypot(p[1] - 0.5) <= 0.2 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let r = tumour_radius(&disk, &mesh, c, 1e-3);
        assert!((r - 0.2).abs() <= mesh.h(), "{r}");
        let ic = InitialCondition::circular_default().nodal(&mesh).unwrap();
        let r = tumour_radius(&ic, &mesh, c, f64::MIN_POSITIVE);
        assert!((r - 0.22).abs() <= mesh.h(), "{r}");
        // level set φ = 1e-3 of the bump: r = b + (a-b)·sqrt(1 - 1/(1 - ln 1e-3))
        let level = 0.05 + 0.17 * (1.0 - 1.0 / (1.0 - 1e-3f64.ln())).sqrt();
        let r = tumour_radius(&ic, &mesh, c, RADIUS_THRESHOLD);
        assert!((r - level).abs() <= mesh.h(), "{r} vs {level}");
        assert!(tumour_radius(&ic, &mesh, c, 0.5) <= r);
    }

    #[test]
    fn cross_section_examples() {
        let mesh = Mesh::unit_square(10).unwrap();
        let nn = mesh.num_nodes();
        let s = cross_section(&vec![3.0; nn], &mesh, Axis::X, 0.37);
        assert!(s.iter().all(|p| p.1 == 3.0));
        let x: Vec<f64> = mesh.nodes().iter().map(|p| p[0]).collect();
        let s = cross_section(&x, &mesh, Axis::X, 0.5);
        assert_eq!(s.len(), 11);
        for (xc, v) in &s {
            assert!((xc - v).abs() < 1e-15);
        }
        let s = cross_section(&x, &mesh, Axis::X, 0.55);
        assert!(s.len() > 11);
        assert!(s.windows(2).all(|w| w[0].0 < w[1].0));
        for (xc, v) in &s {
            assert!((xc - v).abs() < 1e-14);
        }
    }

    #[test]
    fn plateau_cross_section_symmetric() {
        let mesh = Mesh::unit_square(40).unwrap();
        let v = InitialCondition::circular_default().nodal(&mesh).unwrap();
        let s = cross_section(&v, &mesh, Axis::X, 0.5);
        let k = s.len();
        for i in 0..k {
            assert!((s[i].1 - s[k - 1 - i].1).abs() < 1e-12);
            if (s[i].0 - 0.5).abs() <= 0.05 + 1e-12 {
                assert_eq!(s[i].1, 1.0);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let mut ts = TimeSeries::new();
        let rec = Record {
            t: 0.0,
            tumour_mass: 0.1,
            nutrient_mass: 0.0,
            chemo_mass: 0.0,
            total_displacement: 0.0,
            radius: 0.22,
            fp_iters: 0,
            phi_min: 0.0,
            phi_max: 1.0,
        };
        ts.push(rec).unwrap();
        assert!(ts.push(rec).is_err());
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(!s.contains('\r'));
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,1.0000000000000001e-1,0.0000000000000000e0,0.0000000000000000e0,\
             0.0000000000000000e0,2.2000000000000000e-1,0,0.0000000000000000e0,1.0000000000000000e0"
        );
    }
}
