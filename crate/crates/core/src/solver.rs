//! Decoupled fixed-point iteration for the discrete Joule heating system.
//!
//! One step maps a temperature guess `v` to `(phi, u)`: solve the potential equation with
//! `sigma(v)`, then the linear temperature equation with the resulting right-hand side. Fixed
//! points of this map are exactly the discrete solutions.

use std::sync::Arc;

use crate::assembly::{assemble_phi, assemble_u, assemble_u_rhs, SparseSystem};
use crate::linalg::{pcg, LinearSolveStats};
use crate::mesh::Mesh;
use crate::problem::{cutoff_inactive, ProblemData};
use crate::quadrature::simplex_rule;
use crate::space::{CellGeometry, FeFunction, FunctionSpace, NormKind};
use crate::{Error, Result};

pub use crate::linalg::solve_spd;

/// Potential space of degree `k` and temperature space of degree `l` on one mesh.
#[derive(Debug, Clone)]
pub struct Spaces {
    pub phi: Arc<FunctionSpace>,
    pub u: Arc<FunctionSpace>,
}

impl Spaces {
    pub fn new(mesh: Arc<Mesh>, k: usize, l: usize) -> Result<Self> {
        let phi = FunctionSpace::new(mesh.clone(), k)?;
        let u = if l == k { phi.clone() } else { FunctionSpace::new(mesh, l)? };
        Ok(Self { phi, u })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.phi.mesh()
    }

    pub fn ndofs(&self) -> usize {
        self.phi.ndofs() + self.u.ndofs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Relative tolerance on the X-norm of the Picard increment.
    pub tol: f64,
    pub maxit: usize,
    /// Temperature damping in `(0, 1]`.
    pub damping: f64,
    /// Relative residual for CG; `None` derives it from `tol`.
    pub linear_tol: Option<f64>,
    /// CG iteration cap; `None` means `max(1000, 10 n)`.
    pub linear_maxit: Option<usize>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { tol: 1e-8, maxit: 50, damping: 1.0, linear_tol: None, linear_maxit: None }
    }
}

impl SolverParams {
    /// `0.01 tol`, capped at `1e-6` so that a loose or infinite Picard tolerance still gets
    /// meaningful linear solves.
    pub fn linear_tol(&self) -> f64 {
        self.linear_tol.unwrap_or_else(|| (0.01 * self.tol).min(1e-6))
    }

    fn linear_maxit(&self, n: usize) -> usize {
        self.linear_maxit.unwrap_or_else(|| (10 * n).max(1000))
    }

    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("Picard tolerance must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Argument(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if let Some(t) = self.linear_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Argument(format!("linear tolerance must be positive and finite, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PicardState {
    pub phi: FeFunction,
    pub u: FeFunction,
    pub iteration: usize,
    /// X-norm of the last update.
    pub increment_norm: f64,
    /// One entry per step.
    pub history: Vec<f64>,
}

impl PicardState {
    /// `sqrt(||phi||_H1^2 + ||u||_H1^2)`
    pub fn x_norm(&self) -> f64 {
        x_norm(&self.phi, &self.u)
    }
}

fn x_norm(phi: &FeFunction, u: &FeFunction) -> f64 {
    (phi.norm(NormKind::H1).powi(2) + u.norm(NormKind::H1).powi(2)).sqrt()
}

fn difference(a: &FeFunction, b: &FeFunction) -> FeFunction {
    let c = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x - y).collect();
    FeFunction::new(a.space().clone(), c).expect("same space")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub phi: LinearSolveStats,
    pub u: LinearSolveStats,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_increment: f64,
    /// Increment threshold `tol (1 + ||x||_X)` at the last step.
    pub threshold: f64,
    /// CG statistics of the initial potential solve and then of every step.
    pub linear_solve_stats: Vec<StepStats>,
    /// `||(phi_k - g_phi, u_k - g_u)||_X` for the initial iterate and every step.
    pub iterate_norms: Vec<f64>,
}

impl SolveReport {
    pub fn max_iterate_norm(&self) -> f64 {
        self.iterate_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Picard driver. The temperature matrix does not depend on the iterate and is assembled once.
pub struct PicardSolver<'a> {
    data: &'a ProblemData,
    spaces: Spaces,
    params: SolverParams,
    u_system: SparseSystem,
}

impl<'a> PicardSolver<'a> {
    pub fn new(data: &'a ProblemData, spaces: Spaces, params: SolverParams) -> Result<Self> {
        params.check()?;
        if !spaces.phi.same_mesh(&spaces.u) {
            return Err(Error::Mismatch("potential and temperature spaces live on different meshes".into()));
        }
        data.validate(spaces.mesh())?;
        let u_system = assemble_u(&spaces.u, data)?;
        Ok(Self { data, spaces, params, u_system })
    }

    pub fn spaces(&self) -> &Spaces {
        &self.spaces
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    fn solve_phi(&self, v_hat: &FeFunction, guess: Option<&FeFunction>) -> Result<(FeFunction, LinearSolveStats)> {
        let sys = assemble_phi(&self.spaces.phi, v_hat, self.data)?;
        let mut x = match guess {
            Some(g) => sys.restrict(g.coeffs()),
            None => vec![0.0; sys.rhs.len()],
        };
        let maxit = self.params.linear_maxit(x.len());
        let stats = pcg(&sys.matrix, &sys.rhs, &mut x, self.params.linear_tol(), maxit)?;
        Ok((FeFunction::new(self.spaces.phi.clone(), sys.expand(&x))?, stats))
    }

    fn solve_u(&self, phi: &FeFunction, v_hat: &FeFunction) -> Result<(FeFunction, LinearSolveStats)> {
        let load = assemble_u_rhs(&self.spaces.u, phi, v_hat, self.data)?;
        let rhs = self.u_system.rhs_with_load(&load);
        let mut x = self.u_system.restrict(v_hat.coeffs());
        let maxit = self.params.linear_maxit(x.len());
        let stats = pcg(&self.u_system.matrix, &rhs, &mut x, self.params.linear_tol(), maxit)?;
        Ok((FeFunction::new(self.spaces.u.clone(), self.u_system.expand(&x))?, stats))
    }

    /// `u_0` interpolates `g_u` on Dirichlet dofs and vanishes elsewhere; `phi_0` solves the
    /// potential equation with `sigma(u_0)`.
    pub fn initial_state(&self) -> Result<(PicardState, StepStats)> {
        let du = self.spaces.u.dirichlet_dofs_u();
        let coeffs = self
            .spaces
            .u
            .dof_points()
            .iter()
            .zip(du)
            .map(|(p, &d)| if d { self.data.g_u.value(p) } else { 0.0 })
            .collect();
        let u = FeFunction::new(self.spaces.u.clone(), coeffs)?;
        let (phi, stats) = self.solve_phi(&u, None)?;
        let none = LinearSolveStats { iterations: 0, relative_residual: 0.0 };
        Ok((PicardState { phi, u, iteration: 0, increment_norm: 0.0, history: Vec::new() }, StepStats { phi: stats, u: none }))
    }

    /// One application of the fixed-point map with `v = state.u`.
    pub fn step(&self, state: &PicardState) -> Result<(PicardState, StepStats)> {
        let (phi, sp) = self.solve_phi(&state.u, Some(&state.phi))?;
        let (mut u, su) = self.solve_u(&phi, &state.u)?;
        let theta = self.params.damping;
        if theta < 1.0 {
            for (n, o) in u.coeffs_mut().iter_mut().zip(state.u.coeffs()) {
                *n = theta * *n + (1.0 - theta) * o;
            }
        }
        let increment = x_norm(&difference(&phi, &state.phi), &difference(&u, &state.u));
        let mut history = state.history.clone();
        history.push(increment);
        Ok((
            PicardState { phi, u, iteration: state.iteration + 1, increment_norm: increment, history },
            StepStats { phi: sp, u: su },
        ))
    }

    /// Iterates until `increment <= tol (1 + ||x||_X)` or `maxit` steps. Running out of steps is
    /// reported through `converged = false`, not as an error.
    pub fn solve(&self) -> Result<(PicardState, SolveReport)> {
        let (mut state, stats0) = self.initial_state()?;
        let mut report = SolveReport {
            converged: false,
            iterations: 0,
            final_increment: f64::INFINITY,
            threshold: 0.0,
            linear_solve_stats: vec![stats0],
            iterate_norms: vec![self.lifted_norm(&state)],
        };
        while state.iteration < self.params.maxit {
            let (next, stats) = self.step(&state)?;
            state = next;
            report.linear_solve_stats.push(stats);
            report.iterate_norms.push(self.lifted_norm(&state));
            report.iterations = state.iteration;
            report.final_increment = state.increment_norm;
            report.threshold = self.params.tol * (1.0 + state.x_norm());
            log::debug!("picard step {}: increment {:.3e}", state.iteration, state.increment_norm);
            if state.increment_norm <= report.threshold {
                report.converged = true;
                break;
            }
        }
        if !report.converged {
            log::warn!(
                "Picard iteration stopped after {} steps with increment {:.3e}",
                report.iterations,
                report.final_increment
            );
        }
        Ok((state, report))
    }

    /// `||(phi - g_phi, u - g_u)||_X` with the analytic boundary data.
    pub fn lifted_norm(&self, state: &PicardState) -> f64 {
        let (a, b) = state.phi.error_norms(|p| self.data.g_phi.value_grad(p));
        let (c, d) = state.u.error_norms(|p| self.data.g_u.value_grad(p));
        (a * a + b * b + c * c + d * d).sqrt()
    }

    /// Relative linear residuals of both systems re-assembled at `state`, using `state.u` as
    /// the conductivity argument.
    pub fn fixed_point_residuals(&self, state: &PicardState) -> Result<(f64, f64)> {
        let phi_sys = assemble_phi(&self.spaces.phi, &state.u, self.data)?;
        let load = assemble_u_rhs(&self.spaces.u, &state.phi, &state.u, self.data)?;
        let mut u_sys = self.u_system.clone();
        u_sys.rhs = u_sys.rhs_with_load(&load);
        Ok((phi_sys.relative_residual(state.phi.coeffs()), u_sys.relative_residual(state.u.coeffs())))
    }
}

/// One fixed-point step from `state`.
pub fn picard_step(
    state: &PicardState,
    data: &ProblemData,
    spaces: &Spaces,
    params: &SolverParams,
) -> Result<(PicardState, StepStats)> {
    PicardSolver::new(data, spaces.clone(), params.clone())?.step(state)
}

/// Full Picard solve from the default initial iterate.
pub fn solve_joule(data: &ProblemData, spaces: &Spaces, params: &SolverParams) -> Result<(PicardState, SolveReport)> {
    PicardSolver::new(data, spaces.clone(), params.clone())?.solve()
}

/// `max(0, max phi - g_hi) + max(0, g_lo - min phi)` over the dof nodes.
pub fn nodal_overshoot(phi: &FeFunction, data: &ProblemData) -> f64 {
    let (lo, hi) = phi
        .coeffs()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    (hi - data.g_hi).max(0.0) + (data.g_lo - lo).max(0.0)
}

/// Fraction of volume quadrature points where the cutoff clamps `phi`.
pub fn cutoff_active_fraction(phi: &FeFunction, data: &ProblemData) -> f64 {
    let mesh = phi.space().mesh();
    let rule = simplex_rule(mesh.dim(), 2 * phi.space().degree() + 2);
    let mut active = 0usize;
    let mut total = 0usize;
    for c in 0..mesh.num_cells() {
        let geom = CellGeometry::new(mesh, c);
        for q in 0..rule.len() {
            let v = phi.eval_local(c, &geom, &rule.barycentric(q)).0;
            total += 1;
            if !cutoff_inactive(v, data.g_lo, data.g_hi) {
                active += 1;
            }
        }
    }
    active as f64 / total.max(1) as f64
}
