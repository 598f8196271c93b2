//! P1 finite-element assembly on triangle meshes.
//!
//! Scalar fields carry one coefficient per node. Vector fields interleave
//! components, so node `i` owns dofs `2i` (x) and `2i + 1` (y).

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::mesh::{Mesh, Point, SideSet};
use crate::model::Params;

/// Area and constant basis gradients of triangle `t`.
pub(crate) fn element_geometry(mesh: &Mesh, t: usize) -> (f64, [[f64; 2]; 3]) {
    let [p0, p1, p2] = mesh.triangles()[t].map(|k| mesh.nodes()[k]);
    let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let grads = [
        [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
        [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
        [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
    ];
    (0.5 * two_a, grads)
}

fn centroid(mesh: &Mesh, t: usize) -> Point {
    let tri = mesh.triangles()[t];
    let mut c = [0.0; 2];
    for k in tri {
        c[0] += mesh.nodes()[k][0] / 3.0;
        c[1] += mesh.nodes()[k][1] / 3.0;
    }
    c
}

/// Consistent mass matrix `M[i,j] = ∫ y_i y_j`.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut b =
        TripletBuilder::with_capacity(mesh.num_nodes(), mesh.num_nodes(), 9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, _) = element_geometry(mesh, t);
        for a in 0..3 {
            for c in 0..3 {
                let w = if a == c { area / 6.0 } else { area / 12.0 };
                b.push(tri[a], tri[c], w);
            }
        }
    }
    b.build(true)
}

/// Row-sum lumping of a consistent mass matrix.
pub fn lump_mass(m: &CsrMatrix) -> Result<Vec<f64>> {
    let sums = m.row_sums();
    if let Some((i, s)) = sums.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::DegenerateMesh(format!(
            "lumped mass of node {i} is {s}"
        )));
    }
    Ok(sums)
}

/// `K[i,j] = ∫ coeff ∇y_i·∇y_j` with `coeff` sampled at triangle centroids.
pub fn assemble_stiffness(mesh: &Mesh, coeff: impl Fn(Point) -> f64) -> Result<CsrMatrix> {
    let mut b =
        TripletBuilder::with_capacity(mesh.num_nodes(), mesh.num_nodes(), 9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = centroid(mesh, t);
        let k = coeff(c);
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidCoefficient {
                value: k,
                x: c[0],
                y: c[1],
            });
        }
        let (area, g) = element_geometry(mesh, t);
        for a in 0..3 {
            for d in 0..3 {
                let v = k * area * (g[a][0] * g[d][0] + g[a][1] * g[d][1]);
                b.push(tri[a], tri[d], v);
            }
        }
    }
    Ok(b.build(true))
}

/// Vector stiffness of `2G ε(u):ε(v) + (2Gν/(1-2ν)) div u div v`.
pub fn assemble_elasticity(mesh: &Mesh, shear: f64, nu: f64) -> Result<CsrMatrix> {
    if !(nu < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "Poisson ratio must be < 0.5, got {nu}"
        )));
    }
    if !(shear > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shear modulus must be > 0, got {shear}"
        )));
    }
    let lame = 2.0 * shear * nu / (1.0 - 2.0 * nu);
    // Voigt material matrix with engineering shear strain
    let d = [
        [2.0 * shear + lame, lame, 0.0],
        [lame, 2.0 * shear + lame, 0.0],
        [0.0, 0.0, shear],
    ];
    let ndof = 2 * mesh.num_nodes();
    let mut b = TripletBuilder::with_capacity(ndof, ndof, 36 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, g) = element_geometry(mesh, t);
        // strain-displacement rows (εxx, εyy, γxy) for the 6 local dofs
        let mut bmat = [[0.0; 6]; 3];
        for a in 0..3 {
            bmat[0][2 * a] = g[a][0];
            bmat[1][2 * a + 1] = g[a][1];
            bmat[2][2 * a] = g[a][1];
            bmat[2][2 * a + 1] = g[a][0];
        }
        let mut db = [[0.0; 6]; 3];
        for r in 0..3 {
            for c in 0..6 {
                db[r][c] = (0..3).map(|k| d[r][k] * bmat[k][c]).sum();
            }
        }
        let dof = |l: usize| 2 * tri[l / 2] + l % 2;
        for p in 0..6 {
            for q in 0..6 {
                let v: f64 = (0..3).map(|r| bmat[r][p] * db[r][q]).sum();
                b.push(dof(p), dof(q), area * v);
            }
        }
    }
    Ok(b.build(true))
}

/// `D[k,l] = ∫ y_k ∇·w_l`, scalar rows by vector-dof columns.
pub fn assemble_divergence_coupling(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut b = TripletBuilder::with_capacity(n, 2 * n, 18 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, g) = element_geometry(mesh, t);
        for &k in tri {
            for (m, &node) in tri.iter().enumerate() {
                b.push(k, 2 * node, area / 3.0 * g[m][0]);
                b.push(k, 2 * node + 1, area / 3.0 * g[m][1]);
            }
        }
    }
    b.build(false)
}

/// `B[i,j] = ∫ y_i y_j` over the boundary edges on the given sides.
pub fn assemble_boundary_mass(mesh: &Mesh, sides: SideSet) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut b = TripletBuilder::new(n, n);
    for e in mesh
        .boundary_edges()
        .iter()
        .filter(|e| sides.contains(e.side))
    {
        let [p, q] = e.nodes.map(|k| mesh.nodes()[k]);
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        for a in 0..2 {
            for c in 0..2 {
                let w = if a == c { len / 3.0 } else { len / 6.0 };
                b.push(e.nodes[a], e.nodes[c], w);
            }
        }
    }
    b.build(true)
}

/// Nodal load `∫ f(a_h, b_h) y_i` using the three edge-midpoint rule, where
/// `a_h`, `b_h` are the P1 interpolants of the nodal vectors `a`, `b`.
pub fn assemble_load(mesh: &Mesh, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (area, _) = element_geometry(mesh, t);
        // midpoint of the edge opposite local vertex m
        let mut fm = [0.0; 3];
        for (m, v) in fm.iter_mut().enumerate() {
            let (p, q) = (tri[(m + 1) % 3], tri[(m + 2) % 3]);
            *v = f(0.5 * (a[p] + a[q]), 0.5 * (b[p] + b[q]));
        }
        for (m, &node) in tri.iter().enumerate() {
            // basis m is 1/2 on the two adjacent edges, 0 on the opposite one
            load[node] += area / 3.0 * 0.5 * (fm[(m + 1) % 3] + fm[(m + 2) % 3]);
        }
    }
    load
}

pub fn interpolate_nodal(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
    mesh.nodes()
        .iter()
        .map(|&p| {
            let v = f(p);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidData(format!(
                    "non-finite value {v} at ({}, {})",
                    p[0], p[1]
                )))
            }
        })
        .collect()
}

/// `1ᵀ M v`: the exact integral of the P1 interpolant when `M` is the mass matrix.
pub fn integrate_scalar(m: &CsrMatrix, v: &[f64]) -> Result<f64> {
    Ok(m.apply(v)?.iter().sum())
}

/// Symmetric elimination of Dirichlet rows and columns.
#[derive(Debug, Clone)]
pub struct DirichletConstraint {
    nodes: Vec<usize>,
    mask: Vec<bool>,
}

impl DirichletConstraint {
    pub fn new(dim: usize, nodes: &[usize]) -> Result<Self> {
        let mut mask = vec![false; dim];
        for &k in nodes {
            if k >= dim {
                return Err(Error::InvalidArgument(format!(
                    "constrained index {k} >= {dim}"
                )));
            }
            mask[k] = true;
        }
        let nodes = (0..dim).filter(|&k| mask[k]).collect();
        Ok(Self { nodes, mask })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn is_constrained(&self, k: usize) -> bool {
        self.mask[k]
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Zeroes constrained rows and columns and puts 1 on their diagonal.
    pub fn constrain_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        let mut t = TripletBuilder::with_capacity(a.nrows(), a.ncols(), a.nnz());
        for i in 0..a.nrows() {
            if self.mask[i] {
                t.push(i, i, 1.0);
                continue;
            }
            for (j, v) in a.row(i) {
                if !self.mask[j] {
                    t.push(i, j, v);
                }
            }
        }
        t.build(a.is_symmetric())
    }

    /// Moves the coupling to prescribed values onto `rhs` and writes the values
    /// into constrained rows. `values` is indexed like `rhs`; only constrained
    /// entries are read. `a` is the unconstrained matrix.
    pub fn lift_rhs(&self, a: &CsrMatrix, rhs: &mut [f64], values: &[f64]) {
        if self.nodes.is_empty() {
            return;
        }
        for i in 0..a.nrows() {
            if self.mask[i] {
                rhs[i] = values[i];
                continue;
            }
            for (j, v) in a.row(i) {
                if self.mask[j] {
                    rhs[i] -= v * values[j];
                }
            }
        }
    }

    /// Overwrites constrained entries of `x` with `values`.
    pub fn impose(&self, x: &mut [f64], values: &[f64]) {
        for &k in &self.nodes {
            x[k] = values[k];
        }
    }
}

/// Applies Dirichlet data `values[k]` at `nodes[k]` to the system `(a, rhs)`.
pub fn apply_dirichlet(
    a: &CsrMatrix,
    rhs: &[f64],
    nodes: &[usize],
    values: &[f64],
) -> Result<(CsrMatrix, Vec<f64>)> {
    if nodes.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            found: values.len(),
        });
    }
    if rhs.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: rhs.len(),
        });
    }
    let mut full = vec![f64::NAN; a.nrows()];
    for (&k, &v) in nodes.iter().zip(values) {
        if k >= full.len() {
            return Err(Error::InvalidArgument(format!(
                "constrained index {k} out of range"
            )));
        }
        if !full[k].is_nan() && full[k] != v {
            return Err(Error::DirichletConflict {
                node: k,
                first: full[k],
                second: v,
            });
        }
        full[k] = v;
    }
    let c = DirichletConstraint::new(a.nrows(), nodes)?;
    let mut b = rhs.to_vec();
    c.lift_rhs(a, &mut b, &full);
    Ok((c.constrain_matrix(a), b))
}

/// Every matrix the discrete system needs, assembled once per run.
#[derive(Debug, Clone)]
pub struct Operators {
    pub mass: CsrMatrix,
    pub lumped: Vec<f64>,
    /// Stiffness with mobility `M_phi`, acting on `mu`.
    pub k_mu: CsrMatrix,
    pub k_psi: CsrMatrix,
    pub k_chi: CsrMatrix,
    pub elasticity: CsrMatrix,
    pub divergence: CsrMatrix,
    /// Boundary mass on the sides outside the nutrient Dirichlet segment.
    pub boundary_mass: CsrMatrix,
}

impl Operators {
    pub fn assemble(mesh: &Mesh, p: &Params, gamma_psi: SideSet) -> Result<Self> {
        let mass = assemble_mass(mesh);
        let lumped = lump_mass(&mass)?;
        Ok(Self {
            lumped,
            k_mu: assemble_stiffness(mesh, |x| p.m_phi.eval(x))?,
            k_psi: assemble_stiffness(mesh, |x| p.m_psi.eval(x))?,
            k_chi: assemble_stiffness(mesh, |x| p.m_chi.eval(x))?,
            elasticity: assemble_elasticity(mesh, p.shear, p.nu)?,
            divergence: assemble_divergence_coupling(mesh),
            boundary_mass: assemble_boundary_mass(mesh, gamma_psi.complement()),
            mass,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.mass.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cg;
    use crate::mesh::Side;

    fn reference_triangle() -> Mesh {
        // the lower-right half of the n=1 mesh has vertices (0,0),(1,0),(1,1);
        // an affine map keeps the P1 mass matrix a multiple of the reference one
        Mesh::unit_square(1).unwrap()
    }

    #[test]
    fn reference_triangle_mass_entries() {
        let m = reference_triangle();
        let mass = assemble_mass(&m);
        // node 1 = (1,0) belongs only to the first triangle (area 1/2)
        assert!((mass.get(1, 1) - 1.0 / 12.0).abs() < 1e-16);
        assert!((mass.get(1, 0) - 1.0 / 24.0).abs() < 1e-16);
        assert!((mass.get(1, 3) - 1.0 / 24.0).abs() < 1e-16);
        assert_eq!(mass.get(1, 2), 0.0);
    }

    #[test]
    fn lumped_mass_on_single_square() {
        let m = Mesh::unit_square(1).unwrap();
        let l = lump_mass(&assemble_mass(&m)).unwrap();
        let expected = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in l.iter().zip(expected) {
            assert!((a - b).abs() < 1e-16);
        }
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lumping_rejects_nonpositive_rows() {
        let m = CsrMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(lump_mass(&m), Err(Error::DegenerateMesh(_))));
    }

    #[test]
    fn mass_total_and_symmetry() {
        let m = Mesh::unit_square(2).unwrap();
        let mass = assemble_mass(&m);
        let ones = vec![1.0; m.num_nodes()];
        assert!((integrate_scalar(&mass, &ones).unwrap() - 1.0).abs() < 1e-15);
        assert!(mass.asymmetry() <= 1e-15);
    }

    #[test]
    fn stiffness_annihilates_constants_and_scales() {
        let m = Mesh::unit_square(6).unwrap();
        let k1 = assemble_stiffness(&m, |_| 1.0).unwrap();
        let k3 = assemble_stiffness(&m, |_| 3.0).unwrap();
        let r = k1.mul_vec(&vec![1.0; m.num_nodes()]);
        assert!(r.iter().all(|v| v.abs() <= 1e-13));
        let d = k3.linear_combination(1.0, &k1, -3.0);
        assert!(d.to_dense().iter().flatten().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn stiffness_rejects_nonpositive_coefficient() {
        let m = Mesh::unit_square(2).unwrap();
        let err = assemble_stiffness(&m, |p| p[0] - 0.5).unwrap_err();
        assert!(matches!(err, Error::InvalidCoefficient { .. }));
    }

    #[test]
    fn elasticity_uniaxial_strain_energy() {
        let m = Mesh::unit_square(3).unwrap();
        let e = assemble_elasticity(&m, 0.4615, 0.3).unwrap();
        let mut u = vec![0.0; 2 * m.num_nodes()];
        for (i, p) in m.nodes().iter().enumerate() {
            u[2 * i] = p[0];
        }
        let energy: f64 = u.iter().zip(e.mul_vec(&u)).map(|(a, b)| a * b).sum();
        assert!((energy - 1.61525).abs() < 1e-12, "energy {energy}");
        let mut t = vec![0.0; 2 * m.num_nodes()];
        for i in 0..m.num_nodes() {
            t[2 * i] = 0.3;
            t[2 * i + 1] = -1.2;
        }
        assert!(e.mul_vec(&t).iter().all(|v| v.abs() <= 1e-13));
    }

    #[test]
    fn elasticity_rejects_incompressible() {
        let m = Mesh::unit_square(1).unwrap();
        assert!(assemble_elasticity(&m, 1.0, 0.5).is_err());
    }

    #[test]
    fn divergence_coupling_examples() {
        let m = Mesh::unit_square(4).unwrap();
        let d = assemble_divergence_coupling(&m);
        let n = m.num_nodes();
        let field = |f: &dyn Fn(Point) -> [f64; 2]| {
            let mut u = vec![0.0; 2 * n];
            for (i, p) in m.nodes().iter().enumerate() {
                let v = f(*p);
                u[2 * i] = v[0];
                u[2 * i + 1] = v[1];
            }
            u
        };
        let c = d.mul_vec(&field(&|_| [1.0, -2.0]));
        assert!(c.iter().all(|v| v.abs() < 1e-14));
        let r = d.mul_vec(&field(&|p| [p[0], p[1]]));
        assert!((r.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let s = d.mul_vec(&field(&|p| [p[1], 0.0]));
        assert!(s.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn boundary_mass_examples() {
        let m = Mesh::unit_square(2).unwrap();
        let ones = vec![1.0; m.num_nodes()];
        let all = assemble_boundary_mass(&m, SideSet::ALL);
        assert!((integrate_scalar(&all, &ones).unwrap() - 4.0).abs() < 1e-14);
        let left = assemble_boundary_mass(&m, SideSet::from_sides(&[Side::Left]));
        assert!((integrate_scalar(&left, &ones).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(assemble_boundary_mass(&m, SideSet::EMPTY).nnz(), 0);
    }

    #[test]
    fn load_rule_is_exact_for_quadratics() {
        // f(a,b) = a*b with a = x, b = y: ∫ x y y_i is a cubic, but summing
        // over i gives ∫ x y = 1/4, which the rule integrates exactly
        let m = Mesh::unit_square(3).unwrap();
        let xs: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = m.nodes().iter().map(|p| p[1]).collect();
        let load = assemble_load(&m, &xs, &ys, |a, b| a * b);
        assert!((load.iter().sum::<f64>() - 0.25).abs() < 1e-15);
        let lin = assemble_load(&m, &xs, &ys, |a, _| a);
        let mass_x = assemble_mass(&m).mul_vec(&xs);
        for (a, b) in lin.iter().zip(mass_x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolation_examples() {
        let m = Mesh::unit_square(1).unwrap();
        assert_eq!(
            interpolate_nodal(&m, |p| p[0]).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0]
        );
        assert_eq!(interpolate_nodal(&m, |_| 1.0).unwrap(), vec![1.0; 4]);
        assert!(matches!(
            interpolate_nodal(&m, |p| 1.0 / p[0]),
            Err(Error::InvalidData(_))
        ));
        let mass = assemble_mass(&m);
        let xs = interpolate_nodal(&m, |p| p[0]).unwrap();
        assert!((integrate_scalar(&mass, &xs).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(integrate_scalar(&mass, &[0.0; 4]).unwrap(), 0.0);
        assert!(integrate_scalar(&mass, &[0.0; 3]).is_err());
    }

    #[test]
    fn dirichlet_hand_reduced_three_node_poisson() {
        // 1D Laplacian on 3 nodes with u0 = 1 fixed; reduced system
        // [2 -1; -1 1][u1 u2] = [f1 + 1, f2]
        let mut t = TripletBuilder::new(3, 3);
        for (i, j, v) in [
            (0, 0, 1.0),
            (0, 1, -1.0),
            (1, 0, -1.0),
            (1, 1, 2.0),
            (1, 2, -1.0),
            (2, 1, -1.0),
            (2, 2, 1.0),
        ] {
            t.push(i, j, v);
        }
        let a = t.build(true);
        let (ac, b) = apply_dirichlet(&a, &[0.0, 0.5, 0.25], &[0], &[1.0]).unwrap();
        assert_eq!(b, vec![1.0, 1.5, 0.25]);
        assert_eq!(ac.get(0, 0), 1.0);
        assert_eq!(ac.get(1, 0), 0.0);
        assert_eq!(ac.get(0, 1), 0.0);
        assert_eq!(ac.get(1, 1), 2.0);
        let mut x = vec![0.0; 3];
        cg(&ac, &b, &mut x, 1e-14, 10).unwrap();
        // hand solution: u2 = u1 + 0.25, 2u1 - u1 - 0.25 = 1.5
        assert!((x[1] - 1.75).abs() < 1e-13 && (x[2] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn dirichlet_edge_cases() {
        let a = CsrMatrix::identity(3);
        let (ac, b) = apply_dirichlet(&a, &[1.0, 2.0, 3.0], &[], &[]).unwrap();
        assert_eq!(ac, a);
        assert_eq!(b, vec![1.0, 2.0, 3.0]);
        let (_, b) = apply_dirichlet(&a, &[1.0, 2.0, 3.0], &[0, 1, 2], &[0.0; 3]).unwrap();
        assert_eq!(b, vec![0.0; 3]);
        assert!(apply_dirichlet(&a, &[0.0; 3], &[1, 1], &[0.0, 0.0]).is_ok());
        assert!(matches!(
            apply_dirichlet(&a, &[0.0; 3], &[1, 1], &[0.0, 1.0]),
            Err(Error::DirichletConflict { node: 1, .. })
        ));
    }

    #[test]
    fn constant_dirichlet_data_reproduced() {
        let m = Mesh::unit_square(5).unwrap();
        let k = assemble_stiffness(&m, |p| 1.0 + p[0]).unwrap();
        let bnd = m.boundary_nodes(SideSet::ALL);
        let vals = vec![0.7; bnd.len()];
        let (kc, rhs) = apply_dirichlet(&k, &vec![0.0; m.num_nodes()], &bnd, &vals).unwrap();
        let mut x = vec![0.0; m.num_nodes()];
        cg(&kc, &rhs, &mut x, 1e-14, 500).unwrap();
        assert!(x.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
