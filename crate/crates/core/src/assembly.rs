//! Global assembly of the discrete potential and temperature equations.
//!
//! Potential: `<sigma(v) grad phi, grad psi> = <f_phi, psi>`.
//! Temperature: `<grad u, grad w> + <kappa u, w>_R = -<sigma(v) [phi~] grad phi, grad w>
//!   + <sigma(v) grad g_phi . grad phi, w> + <h, w>_R + <f_u, w>`, where `[.]` is the cutoff
//! and `phi~ = phi - g_phi`.
//!
//! Dirichlet dofs are eliminated; their contribution moves to the right-hand side so the
//! reduced matrices stay symmetric positive definite. Element contributions are computed in
//! parallel and accumulated in cell order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::linalg::{norm2, CsrMatrix};
use crate::mesh::{simplex_measure, Mesh};
use crate::problem::ProblemData;
use crate::quadrature::{simplex_rule, QuadratureRule};
use crate::space::{CellGeometry, FeFunction, FunctionSpace, MAX_LOCAL};
use crate::{dot, Error, Point, Result};

/// Bijection between all dofs and the unconstrained ones.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeMap {
    pub free_to_dof: Vec<usize>,
    /// `usize::MAX` for constrained dofs.
    pub dof_to_free: Vec<usize>,
}

impl FreeMap {
    pub fn new(constrained: &[bool]) -> Self {
        let mut free_to_dof = Vec::new();
        let mut dof_to_free = vec![usize::MAX; constrained.len()];
        for (d, &c) in constrained.iter().enumerate() {
            if !c {
                dof_to_free[d] = free_to_dof.len();
                free_to_dof.push(d);
            }
        }
        Self { free_to_dof, dof_to_free }
    }

    pub fn num_free(&self) -> usize {
        self.free_to_dof.len()
    }
}

/// Reduced linear system over the free dofs.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    /// Right-hand side over free dofs, including the Dirichlet lifting.
    pub rhs: Vec<f64>,
    /// Eliminated dofs and their prescribed values.
    pub dirichlet_values: Vec<(usize, f64)>,
    pub free_map: FreeMap,
    lifting: Vec<f64>,
}

impl SparseSystem {
    /// Full dof vector from free values and the Dirichlet values.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.free_map.dof_to_free.len()];
        for (&d, &v) in self.free_map.free_to_dof.iter().zip(free) {
            full[d] = v;
        }
        for &(d, v) in &self.dirichlet_values {
            full[d] = v;
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_map.free_to_dof.iter().map(|&d| full[d]).collect()
    }

    /// Right-hand side for a full-length load vector: lifting plus the free part of `load`.
    pub fn rhs_with_load(&self, load: &[f64]) -> Vec<f64> {
        self.lifting.iter().zip(&self.free_map.free_to_dof).map(|(l, &d)| l + load[d]).collect()
    }

    /// `||rhs - A x_free|| / max(||rhs||, tiny)` for a full dof vector.
    pub fn relative_residual(&self, full: &[f64]) -> f64 {
        let x = self.restrict(full);
        let ax = self.matrix.mul(&x);
        let r: Vec<f64> = self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        norm2(&r) / norm2(&self.rhs).max(f64::MIN_POSITIVE)
    }
}

struct Local {
    cell: usize,
    mat: Vec<f64>,
    vec: Vec<f64>,
}

fn cell_rule(dim: usize, degree: usize) -> (QuadratureRule, Vec<[f64; 4]>) {
    let rule = simplex_rule(dim, degree);
    let lams = (0..rule.len()).map(|q| rule.barycentric(q)).collect();
    (rule, lams)
}

/// Quadrature points on the facet of `cell` spanned by `facet_vertices`. Barycentric
/// coordinates follow the order of `facet_vertices`, so two cells sharing a facet get
/// matching points when called with the same vertex order.
pub(crate) struct FacetQuadrature {
    pub lams: Vec<[f64; 4]>,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Outward unit normal with respect to `cell`.
    pub normal: [f64; 3],
}

pub(crate) fn facet_quadrature(
    mesh: &Mesh,
    geom: &CellGeometry,
    cell: usize,
    facet_vertices: &[usize],
    rule: &QuadratureRule,
) -> FacetQuadrature {
    let verts = mesh.cell(cell);
    let local: Vec<usize> =
        facet_vertices.iter().map(|v| verts.iter().position(|w| w == v).expect("facet vertex in cell")).collect();
    let opposite = (0..verts.len()).find(|i| !local.contains(i)).expect("opposite vertex");
    let pts: Vec<Point> = facet_vertices.iter().map(|&v| *mesh.vertex(v)).collect();
    let measure = simplex_measure(&pts);
    let scale = measure * if mesh.dim() == 3 { 2.0 } else { 1.0 };
    let g = geom.grad_lambda[opposite];
    let gn = dot(&g, &g).sqrt();
    let normal = [-g[0] / gn, -g[1] / gn, -g[2] / gn];
    let mut lams = Vec::with_capacity(rule.len());
    let mut points = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    for q in 0..rule.len() {
        let mu = rule.barycentric(q);
        let mut lam = [0.0; 4];
        for (j, &l) in local.iter().enumerate() {
            lam[l] = mu[j];
        }
        points.push(geom.map(&lam));
        lams.push(lam);
        weights.push(rule.weights[q] * scale);
    }
    FacetQuadrature { lams, points, weights, normal }
}

fn accumulate(space: &FunctionSpace, constrained: &[bool], values: &[f64], locals: &[Local]) -> SparseSystem {
    let free_map = FreeMap::new(constrained);
    let nfree = free_map.num_free();
    let nloc = space.basis().len();
    let mut triplets = Vec::with_capacity(locals.len() * nloc * nloc);
    let mut lifting = vec![0.0; nfree];
    let mut load = vec![0.0; nfree];
    for local in locals {
        let dofs = space.cell_dofs(local.cell);
        for a in 0..nloc {
            let fi = free_map.dof_to_free[dofs[a]];
            if fi == usize::MAX {
                continue;
            }
            load[fi] += local.vec[a];
            for b in 0..nloc {
                let m = local.mat[a * nloc + b];
                if m == 0.0 {
                    continue;
                }
                let fj = free_map.dof_to_free[dofs[b]];
                if fj == usize::MAX {
                    lifting[fi] -= m * values[dofs[b]];
                } else {
                    triplets.push((fi, fj, m));
                }
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(nfree, &triplets);
    let dirichlet_values = constrained.iter().enumerate().filter(|(_, &c)| c).map(|(d, _)| (d, values[d])).collect();
    let rhs = lifting.iter().zip(&load).map(|(a, b)| a + b).collect();
    SparseSystem { matrix, rhs, dirichlet_values, free_map, lifting }
}

fn dirichlet_values(space: &FunctionSpace, constrained: &[bool], g: &crate::problem::Field) -> Vec<f64> {
    space
        .dof_points()
        .iter()
        .zip(constrained)
        .map(|(p, &c)| if c { g.value(p) } else { 0.0 })
        .collect()
}

/// Potential system with conductivity `sigma(v_hat)`.
pub fn assemble_phi(space: &FunctionSpace, v_hat: &FeFunction, data: &ProblemData) -> Result<SparseSystem> {
    if !space.same_mesh(v_hat.space()) {
        return Err(Error::Mismatch("v_hat is defined on a different mesh than the potential space".into()));
    }
    let constrained = space.dirichlet_dofs_phi();
    if !constrained.iter().any(|&c| c) {
        return Err(Error::IllPosed("no Dirichlet dofs for the potential".into()));
    }
    let mesh = space.mesh();
    let basis = space.basis();
    let nloc = basis.len();
    let degree = 2 * space.degree().max(v_hat.space().degree()) + 2;
    let (rule, lams) = cell_rule(mesh.dim(), degree);
    let locals: Vec<Local> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let geom = CellGeometry::new(mesh, c);
            let mut mat = vec![0.0; nloc * nloc];
            let mut vec = vec![0.0; nloc];
            let mut val = [0.0; MAX_LOCAL];
            let mut grad = [[0.0; 3]; MAX_LOCAL];
            for (q, lam) in lams.iter().enumerate() {
                let w = rule.weights[q] * geom.det;
                let (u, _) = v_hat.eval_local(c, &geom, lam);
                let sigma = data.conductivity.eval(u).0;
                basis.eval(lam, &geom.grad_lambda, &mut val, &mut grad);
                for a in 0..nloc {
                    for b in a..nloc {
                        let m = w * sigma * dot(&grad[a], &grad[b]);
                        mat[a * nloc + b] += m;
                        if b != a {
                            mat[b * nloc + a] += m;
                        }
                    }
                }
                if let Some(f) = &data.f_phi {
                    let fx = f.value(&geom.map(lam));
                    for a in 0..nloc {
                        vec[a] += w * fx * val[a];
                    }
                }
            }
            Local { cell: c, mat, vec }
        })
        .collect();
    let values = dirichlet_values(space, constrained, &data.g_phi);
    Ok(accumulate(space, constrained, &values, &locals))
}

/// Temperature matrix: stiffness plus Robin mass. The right-hand side holds only the
/// Dirichlet lifting; add [`assemble_u_rhs`] through [`SparseSystem::rhs_with_load`].
pub fn assemble_u(space: &FunctionSpace, data: &ProblemData) -> Result<SparseSystem> {
    let mesh = space.mesh();
    let constrained = space.dirichlet_dofs_u();
    let basis = space.basis();
    let nloc = basis.len();
    let (rule, lams) = cell_rule(mesh.dim(), 2 * space.degree() + 2);
    let facet_rule = simplex_rule(mesh.dim() - 1, space.degree() + 2);
    let mut locals: Vec<Local> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let geom = CellGeometry::new(mesh, c);
            let mut mat = vec![0.0; nloc * nloc];
            let mut val = [0.0; MAX_LOCAL];
            let mut grad = [[0.0; 3]; MAX_LOCAL];
            for (q, lam) in lams.iter().enumerate() {
                let w = rule.weights[q] * geom.det;
                basis.eval(lam, &geom.grad_lambda, &mut val, &mut grad);
                for a in 0..nloc {
                    for b in a..nloc {
                        let m = w * dot(&grad[a], &grad[b]);
                        mat[a * nloc + b] += m;
                        if b != a {
                            mat[b * nloc + a] += m;
                        }
                    }
                }
            }
            Local { cell: c, mat, vec: vec![0.0; nloc] }
        })
        .collect();
    let mut kappa_positive = false;
    let sets = mesh.facet_sets()?;
    for &i in &sets.robin_u {
        let f = &sets.boundary[i];
        let geom = CellGeometry::new(mesh, f.cell);
        let fq = facet_quadrature(mesh, &geom, f.cell, mesh.facet_vertices(&f.vertices), &facet_rule);
        let mut mat = vec![0.0; nloc * nloc];
        let mut val = [0.0; MAX_LOCAL];
        let mut grad = [[0.0; 3]; MAX_LOCAL];
        let mut any = false;
        for q in 0..fq.lams.len() {
            let kappa = data.kappa.value(&fq.points[q]);
            if kappa < 0.0 {
                return Err(Error::Data(format!("kappa = {kappa} < 0 at {:?}", fq.points[q])));
            }
            if kappa == 0.0 {
                continue;
            }
            any = true;
            kappa_positive = true;
            basis.eval(&fq.lams[q], &geom.grad_lambda, &mut val, &mut grad);
            for a in 0..nloc {
                for b in 0..nloc {
                    mat[a * nloc + b] += fq.weights[q] * kappa * val[a] * val[b];
                }
            }
        }
        if any {
            locals.push(Local { cell: f.cell, mat, vec: vec![0.0; nloc] });
        }
    }
    if !constrained.iter().any(|&c| c) && !kappa_positive {
        return Err(Error::IllPosed(
            "temperature has no Dirichlet boundary and kappa vanishes on the Robin boundary".into(),
        ));
    }
    let values = dirichlet_values(space, constrained, &data.g_u);
    Ok(accumulate(space, constrained, &values, &locals))
}

/// Full-length temperature load vector for the potential `phi_n`, with `sigma` evaluated at
/// `v_hat`.
pub fn assemble_u_rhs(
    u_space: &FunctionSpace,
    phi_n: &FeFunction,
    v_hat: &FeFunction,
    data: &ProblemData,
) -> Result<Vec<f64>> {
    if !u_space.same_mesh(phi_n.space()) || !u_space.same_mesh(v_hat.space()) {
        return Err(Error::Mismatch("phi_n, v_hat and the temperature space must share one mesh".into()));
    }
    let mesh = u_space.mesh();
    let basis = u_space.basis();
    let nloc = basis.len();
    let kmax = u_space.degree().max(phi_n.space().degree());
    let (rule, lams) = cell_rule(mesh.dim(), 2 * kmax + 2);
    let cell_loads: Vec<Vec<f64>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let geom = CellGeometry::new(mesh, c);
            let mut vec = vec![0.0; nloc];
            let mut val = [0.0; MAX_LOCAL];
            let mut grad = [[0.0; 3]; MAX_LOCAL];
            for (q, lam) in lams.iter().enumerate() {
                let w = rule.weights[q] * geom.det;
                let x = geom.map(lam);
                let (phi, gphi) = phi_n.eval_local(c, &geom, lam);
                let (u, _) = v_hat.eval_local(c, &geom, lam);
                let sigma = data.conductivity.eval(u).0;
                let (g, gg) = data.g_phi.value_grad(&x);
                let cut = data.cutoff(phi - g, g);
                let src = sigma * dot(&gg, &gphi) + data.f_u.as_ref().map_or(0.0, |f| f.value(&x));
                basis.eval(lam, &geom.grad_lambda, &mut val, &mut grad);
                for a in 0..nloc {
                    vec[a] += w * (-sigma * cut * dot(&gphi, &grad[a]) + src * val[a]);
                }
            }
            vec
        })
        .collect();
    let mut load = vec![0.0; u_space.ndofs()];
    for (c, v) in cell_loads.iter().enumerate() {
        for (a, &d) in u_space.cell_dofs(c).iter().enumerate() {
            load[d] += v[a];
        }
    }
    if !data.h_robin.is_zero() {
        let facet_rule = simplex_rule(mesh.dim() - 1, u_space.degree() + 2);
        let mut val = [0.0; MAX_LOCAL];
        let mut grad = [[0.0; 3]; MAX_LOCAL];
        let sets = mesh.facet_sets()?;
        for &i in &sets.robin_u {
            let f = &sets.boundary[i];
            let cell = f.cell;
            let geom = CellGeometry::new(mesh, cell);
            let fq = facet_quadrature(mesh, &geom, cell, mesh.facet_vertices(&f.vertices), &facet_rule);
            let dofs = u_space.cell_dofs(cell);
            for q in 0..fq.lams.len() {
                let h = data.h_robin.value(&fq.points[q], &fq.normal);
                basis.eval(&fq.lams[q], &geom.grad_lambda, &mut val, &mut grad);
                for a in 0..nloc {
                    load[dofs[a]] += fq.weights[q] * h * val[a];
                }
            }
        }
    }
    Ok(load)
}
