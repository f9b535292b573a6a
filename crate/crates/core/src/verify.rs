//! Manufactured solutions, convergence tables and the small-data diagnostic.

use std::sync::Arc;

use serde::Serialize;

use crate::assembly::facet_quadrature;
use crate::estimate::estimate;
use crate::expr::{Expr, Jet, Var};
use crate::mesh::{refine_uniform, Mesh};
use crate::problem::{Conductivity, Field, ProblemData, RobinData};
use crate::quadrature::simplex_rule;
use crate::solver::{cutoff_active_fraction, nodal_overshoot, PicardSolver, PicardState, SolverParams, Spaces};
use crate::space::{integrate_cells, CellGeometry, FeFunction, NormKind};
use crate::{dot, Error, Point, Result};

/// Exact potential and temperature as expressions in `x, y, z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub phi: Expr,
    pub u: Expr,
}

impl ExactSolution {
    pub fn parse(phi: &str, u: &str) -> Result<Self> {
        Ok(Self { phi: phi.parse()?, u: u.parse()? })
    }

    pub fn phi_at(&self, p: &Point) -> (f64, [f64; 3]) {
        let j = self.phi.jet_at(p);
        (j.v, j.g)
    }

    pub fn u_at(&self, p: &Point) -> (f64, [f64; 3]) {
        let j = self.u.jet_at(p);
        (j.v, j.g)
    }

    /// Errors of a discrete pair.
    pub fn errors(&self, state: &PicardState) -> ErrorNorms {
        let (pl2, psemi) = state.phi.error_norms(|p| self.phi_at(p));
        let (ul2, usemi) = state.u.error_norms(|p| self.u_at(p));
        ErrorNorms { phi_l2: pl2, phi_h1: pl2.hypot(psemi), u_l2: ul2, u_h1: ul2.hypot(usemi) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub phi_l2: f64,
    /// Full `H1` norm.
    pub phi_h1: f64,
    pub u_l2: f64,
    pub u_h1: f64,
}

impl ErrorNorms {
    /// `sqrt(||e_phi||_H1^2 + ||e_u||_H1^2)`
    pub fn x_norm(&self) -> f64 {
        self.phi_h1.hypot(self.u_h1)
    }
}

/// Volume points used to sample the range of a field: vertices and degree-4 quadrature nodes.
fn volume_samples(mesh: &Mesh) -> Vec<Point> {
    let rule = simplex_rule(mesh.dim(), 4);
    let mut out: Vec<Point> = mesh.vertices().to_vec();
    for c in 0..mesh.num_cells() {
        let geom = CellGeometry::new(mesh, c);
        out.extend((0..rule.len()).map(|q| geom.map(&rule.barycentric(q))));
    }
    out
}

/// Problem data whose exact solution is `exact`.
///
/// Sources: `f_phi = -div(sigma(u*) grad phi*)`, `f_u = -lap u* - sigma(u*) |grad phi*|^2`.
/// Boundary data: `g_phi = phi*` and `g_u = u*` on the whole domain, Robin data
/// `h = kappa u* + grad u* . n`. Since `g_phi = phi*`, the cutoff argument vanishes at the
/// exact solution; the bounds are the range of `phi*` over the domain so that the clamp is
/// inactive there. The Neumann part of the potential boundary must see zero exact flux.
pub fn mms_problem(exact: &ExactSolution, conductivity: Conductivity, kappa: Field, mesh: &Mesh) -> Result<ProblemData> {
    for (name, e) in [("exact potential", &exact.phi), ("exact temperature", &exact.u)] {
        if e.uses(Var::U) {
            return Err(Error::Data(format!("{name} `{e}` may not depend on u")));
        }
        if !e.is_smooth() {
            return Err(Error::Data(format!("{name} `{e}` is not twice differentiable (abs/min/max)")));
        }
    }
    let sets = mesh.facet_sets()?;
    let rule = simplex_rule(mesh.dim() - 1, 4);
    for &i in &sets.neumann_phi {
        let f = &sets.boundary[i];
        let geom = CellGeometry::new(mesh, f.cell);
        let fq = facet_quadrature(mesh, &geom, f.cell, mesh.facet_vertices(&f.vertices), &rule);
        for x in &fq.points {
            let (_, g) = exact.phi_at(x);
            let flux = dot(&g, &fq.normal);
            if flux.abs() > 1e-8 * (1.0 + dot(&g, &g).sqrt()) {
                return Err(Error::Data(format!(
                    "exact potential has normal derivative {flux:e} at Neumann point {x:?}; only homogeneous Neumann data is supported"
                )));
            }
        }
    }
    let (lo, hi) = volume_samples(mesh)
        .iter()
        .map(|p| exact.phi.eval_at(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data("exact potential is not finite on the mesh".into()));
    }
    let (phi, u) = (exact.phi.clone(), exact.u.clone());
    let cond = conductivity.clone();
    let f_phi = move |p: &Point| {
        let jp: Jet = phi.jet_at(p);
        let ju: Jet = u.jet_at(p);
        let (s, ds) = cond.eval(ju.v);
        -(ds * dot(&ju.g, &jp.g) + s * jp.laplacian())
    };
    let (phi, u) = (exact.phi.clone(), exact.u.clone());
    let cond = conductivity.clone();
    let f_u = move |p: &Point| {
        let jp: Jet = phi.jet_at(p);
        let ju: Jet = u.jet_at(p);
        let s = cond.eval(ju.v).0;
        -ju.laplacian() - s * dot(&jp.g, &jp.g)
    };
    let u = exact.u.clone();
    let k = kappa.clone();
    let h = move |p: &Point, n: &[f64; 3]| {
        let ju: Jet = u.jet_at(p);
        k.value(p) * ju.v + dot(&ju.g, n)
    };
    let mut data = ProblemData::new(conductivity, Field::Expr(exact.phi.clone()), Field::Expr(exact.u.clone()), mesh)?;
    data.kappa = kappa;
    data.h_robin = RobinData::Flux(Arc::new(h));
    data.f_phi = Some(Field::Fn(Arc::new(f_phi)));
    data.f_u = Some(Field::Fn(Arc::new(f_u)));
    data.g_lo = lo;
    data.g_hi = hi;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h_max: f64,
    pub ndofs: usize,
    pub err_phi_h1: f64,
    pub err_u_h1: f64,
    pub err_phi_l2: f64,
    pub err_u_l2: f64,
    pub estimator_total: f64,
    /// Estimator total over the X-norm error.
    pub effectivity: f64,
    pub picard_iterations: usize,
    pub max_iterate_norm: f64,
    pub overshoot: f64,
    pub cutoff_active: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Set when a level failed to converge; the table stops before it.
    pub failed: bool,
}

impl ConvergenceTable {
    /// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive rows.
    pub fn rates(&self, column: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| (column(&w[0]) / column(&w[1])).ln() / (w[0].h_max / w[1].h_max).ln())
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "h_max,ndofs,err_phi_h1,err_u_h1,err_phi_l2,err_u_l2,estimator_total,effectivity,\
             rate_phi_h1,rate_u_h1,rate_phi_l2,rate_u_l2,picard_iterations"
        )?;
        let r1 = self.rates(|r| r.err_phi_h1);
        let r2 = self.rates(|r| r.err_u_h1);
        let r3 = self.rates(|r| r.err_phi_l2);
        let r4 = self.rates(|r| r.err_u_l2);
        for (i, r) in self.rows.iter().enumerate() {
            let rates = if i == 0 {
                ",,,".to_string()
            } else {
                format!("{:.4},{:.4},{:.4},{:.4}", r1[i - 1], r2[i - 1], r3[i - 1], r4[i - 1])
            };
            writeln!(
                out,
                "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                r.h_max,
                r.ndofs,
                r.err_phi_h1,
                r.err_u_h1,
                r.err_phi_l2,
                r.err_u_l2,
                r.estimator_total,
                r.effectivity,
                rates,
                r.picard_iterations
            )?;
        }
        Ok(())
    }
}

/// Solves on `mesh` and `levels - 1` uniform refinements of it and tabulates errors against
/// `exact`. Levels are solved in order; a Picard failure ends the table with `failed` set.
pub fn convergence_study(
    data: &ProblemData,
    exact: &ExactSolution,
    mesh: Mesh,
    levels: usize,
    degrees: (usize, usize),
    params: &SolverParams,
) -> Result<ConvergenceTable> {
    if levels < 2 {
        return Err(Error::Argument(format!("a convergence study needs at least 2 levels, got {levels}")));
    }
    let mut table = ConvergenceTable::default();
    let mut mesh = Arc::new(mesh);
    for level in 0..levels {
        if level > 0 {
            mesh = Arc::new(refine_uniform(&mesh)?);
        }
        let spaces = Spaces::new(mesh.clone(), degrees.0, degrees.1)?;
        let solver = PicardSolver::new(data, spaces.clone(), params.clone())?;
        let (state, report) = solver.solve()?;
        if !report.converged {
            log::warn!("level {level} did not converge; convergence table truncated");
            table.failed = true;
            break;
        }
        let err = exact.errors(&state);
        let est = estimate(&state.phi, &state.u, data)?;
        table.rows.push(ConvergenceRow {
            h_max: mesh.h_max(),
            ndofs: spaces.ndofs(),
            err_phi_h1: err.phi_h1,
            err_u_h1: err.u_h1,
            err_phi_l2: err.phi_l2,
            err_u_l2: err.u_l2,
            estimator_total: est.weighted_total,
            effectivity: est.weighted_total / err.x_norm(),
            picard_iterations: report.iterations,
            max_iterate_norm: report.max_iterate_norm(),
            overshoot: nodal_overshoot(&state.phi, data),
            cutoff_active: cutoff_active_fraction(&state.phi, data),
        });
        log::info!("level {level}: h = {:.4}, X error {:.4e}", mesh.h_max(), err.x_norm());
    }
    Ok(table)
}

/// User-supplied constants of the small-data condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallDataConstants {
    /// Bound on `|sigma'|`; `None` takes the conductivity's Lipschitz constant.
    pub c7: Option<f64>,
    /// `H1 -> L6` embedding constant.
    pub c8: f64,
    /// Poincare-Friedrichs constant.
    pub c9: f64,
    pub delta: f64,
}

impl Default for SmallDataConstants {
    fn default() -> Self {
        Self { c7: None, c8: 1.0, c9: 1.0, delta: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallDataReport {
    pub c5: f64,
    pub c6: f64,
    /// `(1 - delta)^2 sigma_lo / (C6 + (1 - delta) sigma_lo)`
    pub threshold: f64,
    pub satisfied: bool,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub delta: f64,
    /// Discrete `||grad phi_n||_L3`, standing in for the unavailable exact value.
    pub grad_phi_l3: f64,
    pub grad_g_phi_l3: f64,
    /// `g_hi - g_lo`
    pub g_range: f64,
    pub sigma_hi: f64,
    pub sigma_lo: f64,
    pub note: String,
}

/// Evaluates
/// `C5 = C7 C8 (1 + C9) ||grad phi||_L3 max(1, g_range + ||grad g_phi||_L3)` and
/// `C6 = sigma_hi ((1 + C9)(C8 ||grad phi||_L3 + C8 ||grad g_phi||_L3) + g_range)`
/// and compares `C5` with the threshold.
pub fn small_data_check(phi_n: &FeFunction, data: &ProblemData, constants: &SmallDataConstants) -> Result<SmallDataReport> {
    let SmallDataConstants { c7, c8, c9, delta } = *constants;
    let c7 = c7.unwrap_or(data.conductivity.lipschitz);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(c7 >= 0.0) || !(c8 > 0.0) || !(c9 > 0.0) {
        return Err(Error::Argument(format!("constants must be positive (C7 = {c7}, C8 = {c8}, C9 = {c9})")));
    }
    let grad_phi_l3 = phi_n.norm(NormKind::L3Grad);
    let k = phi_n.space().degree();
    let grad_g_phi_l3 = integrate_cells(phi_n.space(), 3 * k + 2, |_, _, _, x| {
        let g = data.g_phi.value_grad(x).1;
        dot(&g, &g).powf(1.5)
    })
    .cbrt();
    let g_range = data.g_hi - data.g_lo;
    let (sigma_lo, sigma_hi) = (data.conductivity.sigma_lo, data.conductivity.sigma_hi);
    let c5 = c7 * c8 * (1.0 + c9) * grad_phi_l3 * (g_range + grad_g_phi_l3).max(1.0);
    let c6 = sigma_hi * ((1.0 + c9) * (c8 * grad_phi_l3 + c8 * grad_g_phi_l3) + g_range);
    let threshold = (1.0 - delta).powi(2) * sigma_lo / (c6 + (1.0 - delta) * sigma_lo);
    let mut note = String::from("uses the discrete gradient norm of phi_n");
    if constants.c8 == 1.0 && constants.c9 == 1.0 {
        log::warn!("C8 and C9 are at their default value 1; the small-data check is indicative only");
        note.push_str("; C8 and C9 defaulted to 1, indicative only");
    }
    Ok(SmallDataReport {
        c5,
        c6,
        threshold,
        satisfied: c5 <= threshold,
        c7,
        c8,
        c9,
        delta,
        grad_phi_l3,
        grad_g_phi_l3,
        g_range,
        sigma_hi,
        sigma_lo,
        note,
    })
}
