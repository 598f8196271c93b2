//! Coupled time integrator.
//!
//! Each step runs a fixed-point loop that updates the nutrient, then the
//! chemotherapy, then the monolithic `(phi, mu, u)` block, with reaction
//! terms taken from the previous iterate.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fem::{assemble_load, DirichletConstraint, Operators};
use crate::fracquad::{cq_history_rhs, gl_weights, CqWeights, History};
use crate::linalg::{bicgstab, cg, norm2, BandedLu, CsrMatrix, TripletBuilder};
use crate::mesh::{Mesh, Point, Side, SideSet};
use crate::model::{monod, InitialCondition, Params, ScalarInit, Schedule};
use crate::observe::{
    field_mass, total_displacement, tumour_radius, Record, TimeSeries, RADIUS_THRESHOLD,
};

/// Floor of the denominator in the relative fixed-point change.
pub const FP_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Banded LU of the block, factored once per run.
    #[default]
    Direct,
    /// Jacobi-preconditioned BiCGStab.
    Krylov,
}

impl FromStr for LinearSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(LinearSolver::Direct),
            "krylov" => Ok(LinearSolver::Krylov),
            other => Err(Error::InvalidArgument(format!(
                "unknown linear solver '{other}'"
            ))),
        }
    }
}

impl fmt::Display for LinearSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearSolver::Direct => "direct",
            LinearSolver::Krylov => "krylov",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub fp_tol: f64,
    pub fp_max: usize,
    pub lin_tol: f64,
    pub lin_max_iter: usize,
    pub mass_lumping: bool,
    pub linear_solver: LinearSolver,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            fp_tol: 1e-6,
            fp_max: 50,
            lin_tol: 1e-10,
            lin_max_iter: 10_000,
            mass_lumping: false,
            linear_solver: LinearSolver::Direct,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.fp_tol > 0.0) {
            return Err(Error::Config(format!(
                "solver.fp_tol must be > 0, got {}",
                self.fp_tol
            )));
        }
        if self.fp_max == 0 {
            return Err(Error::Config("solver.fp_max must be >= 1".into()));
        }
        if !(self.lin_tol > 0.0 && self.lin_tol < 1.0) {
            return Err(Error::Config(format!(
                "solver.lin_tol must be in (0, 1), got {}",
                self.lin_tol
            )));
        }
        if self.lin_max_iter == 0 {
            return Err(Error::Config("solver.lin_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Boundary segments and boundary data. Nutrient and chemotherapy share the
/// Dirichlet segment `gamma_psi`; their flux data act on its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub gamma_u: SideSet,
    pub gamma_psi: SideSet,
    pub psi_dirichlet: Schedule,
    pub chi_dirichlet: Schedule,
    pub psi_flux: Schedule,
    pub chi_flux: Schedule,
}

impl Default for BoundaryData {
    fn default() -> Self {
        Self {
            gamma_u: SideSet::from_sides(&[Side::Left]),
            gamma_psi: SideSet::EMPTY,
            psi_dirichlet: Schedule::constant(0.0),
            chi_dirichlet: Schedule::constant(0.0),
            psi_flux: Schedule::constant(0.0),
            chi_flux: Schedule::constant(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub s_psi: Schedule,
    pub s_chi: Schedule,
}

impl Default for Sources {
    fn default() -> Self {
        Self {
            s_psi: Schedule::constant(0.0),
            s_chi: Schedule::constant(0.0),
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub params: Params,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub phi0: InitialCondition,
    pub psi0: ScalarInit,
    pub chi0: ScalarInit,
    pub boundary: BoundaryData,
    pub sources: Sources,
    pub solver: SolverSettings,
    pub center: Point,
    pub radius_threshold: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for Problem {
    /// Circular tumour with the reference parameters, no sources.
    fn default() -> Self {
        Self {
            params: Params::default(),
            n: 32,
            dt: 1.0 / 15.0,
            t_end: 1.0,
            phi0: InitialCondition::circular_default(),
            psi0: ScalarInit::Constant(0.0),
            chi0: ScalarInit::Constant(0.0),
            boundary: BoundaryData::default(),
            sources: Sources::default(),
            solver: SolverSettings::default(),
            center: [0.5, 0.5],
            radius_threshold: RADIUS_THRESHOLD,
            snapshot_times: Vec::new(),
        }
    }
}

impl Problem {
    /// `T / dt`, which must be an integer up to rounding.
    pub fn num_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "time.dt must be > 0, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "time.T must be >= 0, got {}",
                self.t_end
            )));
        }
        let ratio = self.t_end / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 2.0 * f64::EPSILON * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "time.T = {} is not an integer multiple of time.dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(Error::Params)?;
        self.solver.validate()?;
        self.num_steps()?;
        if self.n == 0 {
            return Err(Error::Config("mesh.n must be >= 1".into()));
        }
        if self.boundary.gamma_u.is_empty() {
            return Err(Error::Config(
                "displacement Dirichlet segment is empty: pure Neumann boundary conditions leave \
                 the elasticity system singular"
                    .into(),
            ));
        }
        if !(self.radius_threshold > 0.0) {
            return Err(Error::Config("output.radius_threshold must be > 0".into()));
        }
        for &s in &self.snapshot_times {
            if !(s >= 0.0 && s <= self.t_end * (1.0 + 1e-12)) {
                return Err(Error::Config(format!(
                    "snapshot time {s} outside [0, {}]",
                    self.t_end
                )));
            }
        }
        Ok(())
    }
}

/// Nodal unknowns at one time level; `u` interleaves `(ux, uy)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    pub chi: Vec<f64>,
    pub fp_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: FieldState,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mesh: Mesh,
    pub series: TimeSeries,
    pub snapshots: Vec<Snapshot>,
    pub final_state: FieldState,
    pub monod_guard_hits: usize,
}

fn wrap(step: usize, t: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ (Error::StepDivergence { .. } | Error::AtStep { .. }) => e,
        e => Error::AtStep {
            step,
            t,
            source: Box::new(e),
        },
    }
}

/// Solves `E u0 = -λ Dᵀ φ0` with `u0 = 0` on `gamma_u`, then recovers `μ0`
/// from `M μ0 = c M φ0 + λ D u0` (lumped mass when `lumped`).
pub fn initial_elastic_solve(
    phi0: &[f64],
    ops: &Operators,
    p: &Params,
    u_constraint: &DirichletConstraint,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = ops.num_nodes();
    if phi0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: phi0.len(),
        });
    }
    if u_constraint.is_empty() {
        return Err(Error::Config(
            "pure Neumann boundary conditions for the displacement: elasticity system is singular"
                .into(),
        ));
    }
    let dt = ops.divergence.transpose();
    let mut rhs: Vec<f64> = dt.mul_vec(phi0).iter().map(|v| -p.lambda * v).collect();
    u_constraint.impose(&mut rhs, &vec![0.0; 2 * n]);
    let ec = u_constraint.constrain_matrix(&ops.elasticity);
    let mut u = vec![0.0; 2 * n];
    cg(&ec, &rhs, &mut u, settings.lin_tol, settings.lin_max_iter)?;
    let du = ops.divergence.mul_vec(&u);
    let mu = if settings.mass_lumping {
        phi0.iter()
            .zip(&du)
            .zip(&ops.lumped)
            .map(|((f, d), m)| p.c * f + p.lambda * d / m)
            .collect()
    } else {
        let mut rhs = ops.mass.mul_vec(phi0);
        for (r, d) in rhs.iter_mut().zip(&du) {
            *r = p.c * *r + p.lambda * d;
        }
        let mut mu: Vec<f64> = phi0.iter().map(|f| p.c * f).collect();
        cg(
            &ops.mass,
            &rhs,
            &mut mu,
            settings.lin_tol,
            settings.lin_max_iter,
        )?;
        mu
    };
    Ok((u, mu))
}

/// SPD system with Dirichlet rows on a fixed node set.
#[derive(Debug, Clone)]
struct ScalarSystem {
    a: CsrMatrix,
    ac: CsrMatrix,
    bc: DirichletConstraint,
}

impl ScalarSystem {
    fn new(a: CsrMatrix, bc: DirichletConstraint) -> Self {
        let ac = bc.constrain_matrix(&a);
        Self { a, ac, bc }
    }

    fn solve(
        &self,
        mut rhs: Vec<f64>,
        boundary_value: f64,
        x: &mut [f64],
        s: &SolverSettings,
    ) -> Result<()> {
        if !self.bc.is_empty() {
            let values = vec![boundary_value; rhs.len()];
            self.bc.lift_rhs(&self.a, &mut rhs, &values);
            self.bc.impose(x, &values);
        }
        cg(&self.ac, &rhs, x, s.lin_tol, s.lin_max_iter)?;
        Ok(())
    }
}

/// The monolithic tumour block in interleaved per-node ordering:
/// `(phi, mu, ux, uy)` per node, or `(phi, ux, uy)` with lumped `mu`.
#[derive(Debug, Clone)]
struct PhiBlock {
    matrix: CsrMatrix,
    lu: Option<BandedLu>,
    nodes: usize,
    lumped: bool,
}

impl PhiBlock {
    fn per_node(&self) -> usize {
        if self.lumped {
            3
        } else {
            4
        }
    }

    fn phi_dof(&self, i: usize) -> usize {
        self.per_node() * i
    }

    fn mu_dof(&self, i: usize) -> usize {
        4 * i + 1
    }

    fn u_dof(&self, d: usize) -> usize {
        let k = self.per_node();
        k * (d / 2) + (k - 2) + d % 2
    }

    fn assemble(
        ops: &Operators,
        p: &Params,
        b0: f64,
        tau: f64,
        uc: &DirichletConstraint,
        s: &SolverSettings,
    ) -> Result<Self> {
        let n = ops.num_nodes();
        let mut blk = Self {
            matrix: CsrMatrix::zeros(0, 0),
            lu: None,
            nodes: n,
            lumped: s.mass_lumping,
        };
        let dim = blk.per_node() * n;
        let mut t =
            TripletBuilder::with_capacity(dim, dim, 6 * ops.mass.nnz() + 8 * ops.elasticity.nnz());
        let d = &ops.divergence;
        if blk.lumped {
            for i in 0..n {
                for (j, v) in ops.mass.row(i) {
                    t.push(blk.phi_dof(i), blk.phi_dof(j), b0 * v);
                }
                for (j, v) in ops.k_mu.row(i) {
                    t.push(blk.phi_dof(i), blk.phi_dof(j), tau * p.c * v);
                }
            }
            let inv: Vec<f64> = ops.lumped.iter().map(|m| 1.0 / m).collect();
            let kd = ops.k_mu.matmul(&CsrMatrix::from_diagonal(&inv).matmul(d));
            for i in 0..n {
                for (e, v) in kd.row(i) {
                    if !uc.is_constrained(e) {
                        t.push(blk.phi_dof(i), blk.u_dof(e), tau * p.lambda * v);
                    }
                }
            }
        } else {
            for i in 0..n {
                for (j, v) in ops.mass.row(i) {
                    t.push(blk.phi_dof(i), blk.phi_dof(j), b0 * v);
                    t.push(blk.mu_dof(i), blk.mu_dof(j), v);
                    t.push(blk.mu_dof(i), blk.phi_dof(j), -p.c * v);
                }
                for (j, v) in ops.k_mu.row(i) {
                    t.push(blk.phi_dof(i), blk.mu_dof(j), tau * v);
                }
                for (e, v) in d.row(i) {
                    if !uc.is_constrained(e) {
                        t.push(blk.mu_dof(i), blk.u_dof(e), -p.lambda * v);
                    }
                }
            }
        }
        for r in 0..2 * n {
            if uc.is_constrained(r) {
                t.push(blk.u_dof(r), blk.u_dof(r), 1.0);
                continue;
            }
            for (e, v) in ops.elasticity.row(r) {
                if !uc.is_constrained(e) {
                    t.push(blk.u_dof(r), blk.u_dof(e), v);
                }
            }
        }
        for i in 0..n {
            for (e, v) in d.row(i) {
                if !uc.is_constrained(e) {
                    t.push(blk.u_dof(e), blk.phi_dof(i), p.lambda * v);
                }
            }
        }
        blk.matrix = t.build(false);
        if s.linear_solver == LinearSolver::Direct {
            blk.lu = Some(BandedLu::factor(&blk.matrix)?);
        }
        Ok(blk)
    }

    /// Solves with `rhs_phi` on the tumour rows and zero elsewhere; `phi`,
    /// `mu`, `u` hold the initial guess on entry.
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        rhs_phi: &[f64],
        ops: &Operators,
        p: &Params,
        phi: &mut [f64],
        mu: &mut [f64],
        u: &mut [f64],
        s: &SolverSettings,
    ) -> Result<()> {
        let dim = self.matrix.nrows();
        let mut rhs = vec![0.0; dim];
        for i in 0..self.nodes {
            rhs[self.phi_dof(i)] = rhs_phi[i];
        }
        let x = match &self.lu {
            Some(lu) => lu.solve(&rhs),
            None => {
                let mut x = vec![0.0; dim];
                for i in 0..self.nodes {
                    x[self.phi_dof(i)] = phi[i];
                    if !self.lumped {
                        x[self.mu_dof(i)] = mu[i];
                    }
                }
                for (d, v) in u.iter().enumerate() {
                    x[self.u_dof(d)] = *v;
                }
                bicgstab(&self.matrix, &rhs, &mut x, s.lin_tol, s.lin_max_iter)?;
                x
            }
        };
        for i in 0..self.nodes {
            phi[i] = x[self.phi_dof(i)];
        }
        for (d, v) in u.iter_mut().enumerate() {
            *v = x[self.u_dof(d)];
        }
        if self.lumped {
            let du = ops.divergence.mul_vec(u);
            for i in 0..self.nodes {
                mu[i] = p.c * phi[i] + p.lambda * du[i] / ops.lumped[i];
            }
        } else {
            for i in 0..self.nodes {
                mu[i] = x[self.mu_dof(i)];
            }
        }
        Ok(())
    }
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new
        .iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / norm2(new).max(FP_FLOOR)
}

/// One simulation: mesh, operators, memory and the current time level.
#[derive(Debug, Clone)]
pub struct Simulation {
    problem: Problem,
    mesh: Mesh,
    ops: Operators,
    weights: CqWeights,
    tau: f64,
    history: History,
    state: FieldState,
    step: usize,
    n_steps: usize,
    psi_sys: ScalarSystem,
    chi_sys: ScalarSystem,
    block: PhiBlock,
    guard_hits: Cell<usize>,
}

impl Simulation {
    pub fn new(problem: Problem) -> Result<Self> {
        problem.validate()?;
        let n_steps = problem.num_steps()?;
        let mesh = Mesh::unit_square(problem.n)?;
        let p = &problem.params;
        let ops = Operators::assemble(&mesh, p, problem.boundary.gamma_psi)?;
        let nn = mesh.num_nodes();
        let dt = problem.dt;
        let s = &problem.solver;

        let u_nodes = mesh.boundary_nodes(problem.boundary.gamma_u);
        let u_dofs: Vec<usize> = u_nodes.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
        let uc = DirichletConstraint::new(2 * nn, &u_dofs)?;
        let psi_bc =
            DirichletConstraint::new(nn, &mesh.boundary_nodes(problem.boundary.gamma_psi))?;

        let psi_sys = ScalarSystem::new(
            ops.mass.linear_combination(1.0, &ops.k_psi, dt),
            psi_bc.clone(),
        );
        let chi_sys = ScalarSystem::new(
            ops.mass
                .linear_combination(1.0 + dt * p.n_chi, &ops.k_chi, dt),
            psi_bc,
        );
        let weights = gl_weights(p.alpha, n_steps)?;
        let tau = dt.powf(p.alpha);
        let block = PhiBlock::assemble(&ops, p, weights.as_slice()[0], tau, &uc, s)?;

        let phi0 = problem.phi0.nodal(&mesh)?;
        let mut psi = problem.psi0.nodal(&mesh)?;
        let mut chi = problem.chi0.nodal(&mesh)?;
        for v in phi0.iter().chain(&psi).chain(&chi) {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("non-finite initial value {v}")));
            }
        }
        let (u, mu) = initial_elastic_solve(&phi0, &ops, p, &uc, s)?;
        let b = &problem.boundary;
        for &k in psi_sys.bc.nodes() {
            psi[k] = b.psi_dirichlet.eval(0.0);
            chi[k] = b.chi_dirichlet.eval(0.0);
        }
        let state = FieldState {
            t: 0.0,
            phi: phi0.clone(),
            mu,
            u,
            psi,
            chi,
            fp_iters: 0,
        };
        Ok(Self {
            history: History::new(phi0),
            problem,
            mesh,
            ops,
            weights,
            tau,
            state,
            step: 0,
            n_steps,
            psi_sys,
            chi_sys,
            block,
            guard_hits: Cell::new(0),
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn num_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.n_steps
    }

    /// Times the monod denominator vanished and the term was set to 0.
    pub fn monod_guard_hits(&self) -> usize {
        self.guard_hits.get()
    }

    fn reaction_load(&self, phi: &[f64], s: &[f64], k: f64) -> Vec<f64> {
        assemble_load(&self.mesh, phi, s, |a, b| {
            let (v, guarded) = monod(a, b, k);
            if guarded {
                self.guard_hits.set(self.guard_hits.get() + 1);
            }
            v
        })
    }

    /// Nutrient update at time `t` with reactions at `(phi_star, psi_star)`.
    pub fn psi_step(
        &self,
        phi_star: &[f64],
        psi_star: &[f64],
        psi_prev: &[f64],
        t: f64,
        guess: &mut [f64],
    ) -> Result<()> {
        let p = &self.problem.params;
        let dt = self.problem.dt;
        let src = self.problem.sources.s_psi.eval(t);
        let flux = self.problem.boundary.psi_flux.eval(t);
        let mut rhs = self.ops.mass.mul_vec(psi_prev);
        if p.n_psi != 0.0 {
            let f = self.reaction_load(phi_star, psi_star, p.k_psi);
            for (r, v) in rhs.iter_mut().zip(&f) {
                *r -= dt * p.n_psi * v;
            }
        }
        self.add_sources(&mut rhs, dt * src, dt * flux);
        let value = self.problem.boundary.psi_dirichlet.eval(t);
        self.psi_sys.solve(rhs, value, guess, &self.problem.solver)
    }

    /// Chemotherapy update at time `t` with the kill term at `(phi_star, chi_star)`.
    pub fn chi_step(
        &self,
        phi_star: &[f64],
        chi_star: &[f64],
        chi_prev: &[f64],
        t: f64,
        guess: &mut [f64],
    ) -> Result<()> {
        let p = &self.problem.params;
        let dt = self.problem.dt;
        let src = self.problem.sources.s_chi.eval(t);
        let flux = self.problem.boundary.chi_flux.eval(t);
        let mut rhs = self.ops.mass.mul_vec(chi_prev);
        if p.p_chi != 0.0 {
            let g = self.reaction_load(phi_star, chi_star, p.k_chi);
            for (r, v) in rhs.iter_mut().zip(&g) {
                *r -= dt * p.p_chi * v;
            }
        }
        self.add_sources(&mut rhs, dt * src, dt * flux);
        let value = self.problem.boundary.chi_dirichlet.eval(t);
        self.chi_sys.solve(rhs, value, guess, &self.problem.solver)
    }

    fn add_sources(&self, rhs: &mut [f64], volume: f64, flux: f64) {
        if volume != 0.0 {
            for (r, m) in rhs.iter_mut().zip(&self.ops.lumped) {
                *r += volume * m;
            }
        }
        if flux != 0.0 {
            for (r, b) in rhs.iter_mut().zip(self.ops.boundary_mass.row_sums()) {
                *r += flux * b;
            }
        }
    }

    /// Tumour block with memory part `m_hist = M r`, lagged `phi_star` in the
    /// reactions and updated `psi`, `chi`. `phi`, `mu`, `u` carry the guess.
    #[allow(clippy::too_many_arguments)]
    pub fn coupled_phi_block(
        &self,
        m_hist: &[f64],
        phi_star: &[f64],
        psi: &[f64],
        chi: &[f64],
        phi: &mut [f64],
        mu: &mut [f64],
        u: &mut [f64],
    ) -> Result<()> {
        let p = &self.problem.params;
        let mut rhs = m_hist.to_vec();
        if p.n_phi != 0.0 {
            let f = self.reaction_load(phi_star, psi, p.k_psi);
            for (r, v) in rhs.iter_mut().zip(&f) {
                *r += self.tau * p.n_phi * v;
            }
        }
        if p.p_phi != 0.0 {
            let g = self.reaction_load(phi_star, chi, p.k_chi);
            for (r, v) in rhs.iter_mut().zip(&g) {
                *r -= self.tau * p.p_phi * v;
            }
        }
        self.block
            .solve(&rhs, &self.ops, p, phi, mu, u, &self.problem.solver)
    }

    /// Advances one step; returns the fixed-point iteration count.
    pub fn fixed_point_step(&mut self) -> Result<usize> {
        if self.is_finished() {
            return Err(Error::State(format!(
                "all {} steps already taken",
                self.n_steps
            )));
        }
        let n = self.step + 1;
        let t = n as f64 * self.problem.dt;
        self.advance(n, t).map_err(wrap(n, t))
    }

    fn advance(&mut self, n: usize, t: f64) -> Result<usize> {
        let r = cq_history_rhs(&self.weights, &self.history, n)?;
        let m_hist = self.ops.mass.mul_vec(&r);
        let prev = &self.state;
        let mut cur = prev.clone();
        let s = &self.problem.solver;
        let mut change = f64::INFINITY;
        for k in 1..=s.fp_max {
            let mut psi = cur.psi.clone();
            self.psi_step(&cur.phi, &cur.psi, &prev.psi, t, &mut psi)?;
            let mut chi = cur.chi.clone();
            self.chi_step(&cur.phi, &cur.chi, &prev.chi, t, &mut chi)?;
            let (mut phi, mut mu, mut u) = (cur.phi.clone(), cur.mu.clone(), cur.u.clone());
            self.coupled_phi_block(&m_hist, &cur.phi, &psi, &chi, &mut phi, &mut mu, &mut u)?;
            change = [
                rel_change(&phi, &cur.phi),
                rel_change(&mu, &cur.mu),
                rel_change(&u, &cur.u),
                rel_change(&psi, &cur.psi),
                rel_change(&chi, &cur.chi),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            cur = FieldState {
                t,
                phi,
                mu,
                u,
                psi,
                chi,
                fp_iters: k,
            };
            if change <= s.fp_tol {
                self.history.push(&cur.phi)?;
                self.state = cur;
                self.step = n;
                return Ok(k);
            }
        }
        Err(Error::StepDivergence { step: n, t, change })
    }

    /// Observables of the current state.
    pub fn record(&self) -> Result<Record> {
        let st = &self.state;
        let (lo, hi) = st
            .phi
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        Ok(Record {
            t: st.t,
            tumour_mass: field_mass(&self.ops.mass, &st.phi)?,
            nutrient_mass: field_mass(&self.ops.mass, &st.psi)?,
            chemo_mass: field_mass(&self.ops.mass, &st.chi)?,
            total_displacement: total_displacement(&self.ops.mass, &st.u)?,
            radius: tumour_radius(
                &st.phi,
                &self.mesh,
                self.problem.center,
                self.problem.radius_threshold,
            ),
            fp_iters: st.fp_iters,
            phi_min: lo,
            phi_max: hi,
        })
    }

    fn snapshot_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .problem
            .snapshot_times
            .iter()
            .map(|s| ((s / self.problem.dt).round() as usize).min(self.n_steps))
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    /// Runs the remaining steps, recording observables after every step.
    pub fn run(mut self) -> Result<RunOutput> {
        let snap_steps = self.snapshot_steps();
        let mut series = TimeSeries::new();
        let mut snapshots = Vec::new();
        series.push(self.record()?)?;
        if snap_steps.binary_search(&self.step).is_ok() {
            snapshots.push(Snapshot {
                state: self.state.clone(),
            });
        }
        while !self.is_finished() {
            self.fixed_point_step()?;
            series.push(self.record()?)?;
            if snap_steps.binary_search(&self.step).is_ok() {
                snapshots.push(Snapshot {
                    state: self.state.clone(),
                });
            }
        }
        Ok(RunOutput {
            monod_guard_hits: self.guard_hits.get(),
            mesh: self.mesh,
            series,
            snapshots,
            final_state: self.state,
        })
    }
}

/// Builds and runs `problem`.
pub fn run_simulation(problem: &Problem) -> Result<RunOutput> {
    Simulation::new(problem.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::integrate_scalar;

    fn no_reaction(alpha: f64) -> Params {
        Params {
            alpha,
            n_phi: 0.0,
            p_phi: 0.0,
            n_psi: 0.0,
            p_chi: 0.0,
            ..Params::default()
        }
    }

    fn small(n: usize, steps: usize, params: Params) -> Problem {
        Problem {
            params,
            n,
            dt: 1.0 / 15.0,
            t_end: steps as f64 / 15.0,
            ..Problem::default()
        }
    }

    #[test]
    fn settings_defaults_and_validation() {
        let s = SolverSettings::default();
        assert_eq!(s.fp_tol, 1e-6);
        assert_eq!(s.fp_max, 50);
        assert!(s.validate().is_ok());
        assert!(SolverSettings {
            fp_max: 0,
            ..s.clone()
        }
        .validate()
        .is_err());
        assert!(SolverSettings { fp_tol: 0.0, ..s }.validate().is_err());
    }

    #[test]
    fn step_count_must_be_integral() {
        let mut p = Problem {
            t_end: 1.0,
            ..Problem::default()
        };
        assert_eq!(p.num_steps().unwrap(), 15);
        p.t_end = 0.05;
        assert!(p.num_steps().is_err());
        p.t_end = 0.0;
        assert_eq!(p.num_steps().unwrap(), 0);
    }

    #[test]
    fn empty_displacement_segment_is_config_error() {
        let mut p = small(4, 1, Params::default());
        p.boundary.gamma_u = SideSet::EMPTY;
        let e = Simulation::new(p).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("pure Neumann"));
    }

    #[test]
    fn decoupled_initial_solve() {
        let p = small(
            8,
            1,
            Params {
                lambda: 0.0,
                ..Params::default()
            },
        );
        let sim = Simulation::new(p).unwrap();
        let st = sim.state();
        assert!(st.u.iter().all(|v| *v == 0.0));
        for (m, f) in st.mu.iter().zip(&st.phi) {
            assert!((m - 0.4 * f).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_tumour_initial_solve() {
        let mut p = small(6, 1, Params::default());
        p.phi0 = InitialCondition::CircularPlateau {
            a: 0.2,
            b: 0.1,
            center: [5.0, 5.0],
        };
        let sim = Simulation::new(p).unwrap();
        assert!(sim.state().u.iter().all(|v| *v == 0.0));
        assert!(sim.state().mu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn initial_elastic_residual_small() {
        let p = small(16, 1, Params::default());
        let sim = Simulation::new(p).unwrap();
        let ops = sim.operators();
        let st = sim.state();
        let e = ops.elasticity.mul_vec(&st.u);
        let dtphi = ops.divergence.transpose().mul_vec(&st.phi);
        let lam = sim.problem().params.lambda;
        let free: Vec<usize> = (0..st.u.len()).filter(|&d| d / 2 % 17 != 0).collect();
        let res: f64 = free
            .iter()
            .map(|&d| (e[d] + lam * dtphi[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        let rhs: f64 = free
            .iter()
            .map(|&d| (lam * dtphi[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-9 * rhs, "{res} vs {rhs}");
    }

    #[test]
    fn zero_state_converges_in_one_iteration() {
        let mut p = small(4, 2, Params::default());
        p.phi0 = InitialCondition::CircularPlateau {
            a: 0.2,
            b: 0.1,
            center: [5.0, 5.0],
        };
        let mut sim = Simulation::new(p).unwrap();
        assert_eq!(sim.fixed_point_step().unwrap(), 1);
        assert!(sim.state().phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn infinite_tolerance_means_one_iteration() {
        let mut p = small(6, 2, Params::default());
        p.solver.fp_tol = f64::INFINITY;
        p.sources.s_psi = Schedule::constant(0.5);
        let mut sim = Simulation::new(p).unwrap();
        assert_eq!(sim.fixed_point_step().unwrap(), 1);
        assert_eq!(sim.fixed_point_step().unwrap(), 1);
        assert!(sim.fixed_point_step().is_err());
    }

    #[test]
    fn nutrient_source_adds_exact_mass() {
        let mut p = small(6, 3, no_reaction(1.0));
        p.sources.s_psi = Schedule::constant(0.5);
        p.solver.lin_tol = 1e-13;
        let mut sim = Simulation::new(p).unwrap();
        for k in 1..=3 {
            sim.fixed_point_step().unwrap();
            let m = integrate_scalar(&sim.operators().mass, &sim.state().psi).unwrap();
            assert!((m - 0.5 * k as f64 / 15.0).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn nutrient_relaxes_to_dirichlet_value() {
        let mut p = small(6, 0, no_reaction(1.0));
        p.dt = 0.5;
        p.t_end = 20.0;
        p.phi0 = InitialCondition::CircularPlateau {
            a: 0.2,
            b: 0.1,
            center: [5.0, 5.0],
        };
        p.boundary.gamma_psi = SideSet::ALL;
        p.boundary.psi_dirichlet = Schedule::constant(2.0);
        let out = run_simulation(&p).unwrap();
        for v in &out.final_state.psi {
            assert!((v - 2.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn chemo_uniform_decay() {
        let mut p = small(4, 3, no_reaction(1.0));
        p.chi0 = ScalarInit::Constant(1.0);
        p.solver.lin_tol = 1e-14;
        let mut sim = Simulation::new(p).unwrap();
        let mut expected = 1.0;
        for _ in 0..3 {
            sim.fixed_point_step().unwrap();
            expected /= 1.2;
            for v in &sim.state().chi {
                assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
            }
        }
    }

    #[test]
    fn chemo_stays_zero_without_data() {
        let mut p = small(4, 2, Params::default());
        p.sources.s_psi = Schedule::constant(0.5);
        let out = run_simulation(&p).unwrap();
        assert!(out.final_state.chi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_block_has_zero_displacement() {
        let mut p = small(
            8,
            3,
            Params {
                lambda: 0.0,
                ..Params::default()
            },
        );
        p.sources.s_psi = Schedule::constant(0.5);
        let out = run_simulation(&p).unwrap();
        assert!(out.final_state.u.iter().all(|v| *v == 0.0));
    }

    fn mass_drift(alpha: f64, lumping: bool, solver: LinearSolver) -> f64 {
        let mut p = small(12, 6, no_reaction(alpha));
        p.solver.lin_tol = 1e-12;
        p.solver.mass_lumping = lumping;
        p.solver.linear_solver = solver;
        let out = run_simulation(&p).unwrap();
        let m0 = out.series.records()[0].tumour_mass;
        out.series
            .records()
            .iter()
            .map(|r| ((r.tumour_mass - m0) / m0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn tumour_mass_conserved_without_reactions() {
        for alpha in [1.0, 0.5] {
            for lumping in [false, true] {
                for solver in [LinearSolver::Direct, LinearSolver::Krylov] {
                    let d = mass_drift(alpha, lumping, solver);
                    assert!(d < 1e-10, "alpha {alpha} lumping {lumping} {solver}: {d}");
                }
            }
        }
    }

    #[test]
    fn direct_and_krylov_agree() {
        let mut p = small(8, 4, Params::default());
        p.sources.s_psi = Schedule::constant(0.5);
        p.params.alpha = 0.5;
        p.solver.fp_tol = 1e-10;
        p.solver.lin_tol = 1e-13;
        let a = run_simulation(&p).unwrap().final_state;
        p.solver.linear_solver = LinearSolver::Krylov;
        let b = run_simulation(&p).unwrap().final_state;
        assert!(rel_change(&a.phi, &b.phi) < 1e-9);
        assert!(rel_change(&a.u, &b.u) < 1e-7);
        assert!(rel_change(&a.psi, &b.psi) < 1e-9);
    }

    #[test]
    fn history_grows_by_one_per_step() {
        let mut sim = Simulation::new(small(4, 3, Params::default())).unwrap();
        for k in 0..3 {
            assert_eq!(sim.history().len(), k);
            sim.fixed_point_step().unwrap();
        }
        assert!(sim.is_finished());
    }

    #[test]
    fn zero_horizon_has_initial_record_only() {
        let p = small(4, 0, Params::default());
        let out = run_simulation(&p).unwrap();
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.series.records()[0].t, 0.0);
    }

    #[test]
    fn snapshots_at_requested_times() {
        let mut p = small(4, 6, Params::default());
        p.snapshot_times = vec![0.0, 0.2, 0.4, 0.2];
        let out = run_simulation(&p).unwrap();
        let ts: Vec<f64> = out.snapshots.iter().map(|s| s.state.t).collect();
        assert_eq!(ts.len(), 3);
        assert!((ts[1] - 0.2).abs() < 1e-12 && (ts[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn runs_are_bit_identical() {
        let mut p = small(6, 4, Params::default());
        p.params.alpha = 0.5;
        p.sources.s_psi = Schedule::constant(0.5);
        let a = run_simulation(&p).unwrap();
        let b = run_simulation(&p).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.final_state, b.final_state);
    }
}
