//! Residual error indicators for the discrete potential and temperature.
//!
//! Cell residuals are evaluated at quadrature points with the product rule
//! `div(sigma(u) grad phi) = sigma'(u) grad u . grad phi + sigma(u) lap phi`, and the cutoff
//! `c = [phi - g_phi]` is differentiated almost everywhere:
//! `grad c = 1{g_lo <= phi <= g_hi} grad phi - grad g_phi`.
//!
//! Interior facet normals point from the lower to the higher cell id. Dirichlet facets carry
//! no indicator.

use std::io::Write;

use rayon::prelude::*;

use crate::assembly::facet_quadrature;
use crate::mesh::{diameter, FacetSets, Mesh};
use crate::problem::{cutoff_inactive, ProblemData};
use crate::quadrature::simplex_rule;
use crate::space::{CellGeometry, FeFunction};
use crate::{dot, Error, Point, Result};

/// Indicator values (unsquared `L2` norms) with their mesh-size weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub h_cell: Vec<f64>,
    pub eta_t: Vec<f64>,
    pub rho_t: Vec<f64>,
    /// Interior facets as `(lower cell, higher cell)`.
    pub interior_cells: Vec<[usize; 2]>,
    pub h_interior: Vec<f64>,
    pub eta_ei: Vec<f64>,
    pub rho_ei: Vec<f64>,
    pub neumann_cells: Vec<usize>,
    pub h_neumann: Vec<f64>,
    pub eta_en: Vec<f64>,
    pub robin_cells: Vec<usize>,
    pub h_robin: Vec<f64>,
    pub rho_er: Vec<f64>,
    /// Square root of the weighted sum of all squared indicators.
    pub weighted_total: f64,
    /// Squared weighted mass per cell: cell terms, half of each adjacent interior facet and
    /// all of each adjacent boundary facet. Sums to `weighted_total^2`.
    pub per_cell_total: Vec<f64>,
}

impl EstimatorReport {
    /// Assembles a report from raw indicator values and computes the totals.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        h_cell: Vec<f64>,
        eta_t: Vec<f64>,
        rho_t: Vec<f64>,
        interior: (Vec<[usize; 2]>, Vec<f64>, Vec<f64>, Vec<f64>),
        neumann: (Vec<usize>, Vec<f64>, Vec<f64>),
        robin: (Vec<usize>, Vec<f64>, Vec<f64>),
    ) -> Self {
        let mut r = Self {
            h_cell,
            eta_t,
            rho_t,
            interior_cells: interior.0,
            h_interior: interior.1,
            eta_ei: interior.2,
            rho_ei: interior.3,
            neumann_cells: neumann.0,
            h_neumann: neumann.1,
            eta_en: neumann.2,
            robin_cells: robin.0,
            h_robin: robin.1,
            rho_er: robin.2,
            weighted_total: 0.0,
            per_cell_total: Vec::new(),
        };
        r.weighted_total = total(&r);
        let mut per = vec![0.0; r.h_cell.len()];
        for (c, p) in per.iter_mut().enumerate() {
            *p = r.h_cell[c].powi(2) * (r.eta_t[c].powi(2) + r.rho_t[c].powi(2));
        }
        for (i, cells) in r.interior_cells.iter().enumerate() {
            let m = r.h_interior[i] * (r.eta_ei[i].powi(2) + r.rho_ei[i].powi(2));
            per[cells[0]] += 0.5 * m;
            per[cells[1]] += 0.5 * m;
        }
        for (i, &c) in r.neumann_cells.iter().enumerate() {
            per[c] += r.h_neumann[i] * r.eta_en[i].powi(2);
        }
        for (i, &c) in r.robin_cells.iter().enumerate() {
            per[c] += r.h_robin[i] * r.rho_er[i].powi(2);
        }
        r.per_cell_total = per;
        r
    }

    /// One row per cell and per facet:
    /// `kind,id,cell_a,cell_b,h,eta,rho,per_cell_total` (empty fields where not applicable).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "kind,id,cell_a,cell_b,h,eta,rho,per_cell_total")?;
        for c in 0..self.h_cell.len() {
            writeln!(
                out,
                "cell,{c},{c},,{:e},{:e},{:e},{:e}",
                self.h_cell[c], self.eta_t[c], self.rho_t[c], self.per_cell_total[c]
            )?;
        }
        for (i, cells) in self.interior_cells.iter().enumerate() {
            writeln!(
                out,
                "interior,{i},{},{},{:e},{:e},{:e},",
                cells[0], cells[1], self.h_interior[i], self.eta_ei[i], self.rho_ei[i]
            )?;
        }
        for (i, &c) in self.neumann_cells.iter().enumerate() {
            writeln!(out, "neumann,{i},{c},,{:e},{:e},,", self.h_neumann[i], self.eta_en[i])?;
        }
        for (i, &c) in self.robin_cells.iter().enumerate() {
            writeln!(out, "robin,{i},{c},,{:e},,{:e},", self.h_robin[i], self.rho_er[i])?;
        }
        Ok(())
    }
}

/// `sqrt(sum h_T^2 (eta_T^2 + rho_T^2) + sum_interior h_e (eta_eI^2 + rho_eI^2)
///       + sum_neumann h_e eta_eN^2 + sum_robin h_e rho_eR^2)`
pub fn total(r: &EstimatorReport) -> f64 {
    let cells: f64 = (0..r.h_cell.len()).map(|c| r.h_cell[c].powi(2) * (r.eta_t[c].powi(2) + r.rho_t[c].powi(2))).sum();
    let interior: f64 =
        (0..r.h_interior.len()).map(|i| r.h_interior[i] * (r.eta_ei[i].powi(2) + r.rho_ei[i].powi(2))).sum();
    let neumann: f64 = (0..r.h_neumann.len()).map(|i| r.h_neumann[i] * r.eta_en[i].powi(2)).sum();
    let robin: f64 = (0..r.h_robin.len()).map(|i| r.h_robin[i] * r.rho_er[i].powi(2)).sum();
    (cells + interior + neumann + robin).sqrt()
}

/// Pointwise fields needed by the residuals.
struct PointState {
    sigma: f64,
    dsigma: f64,
    phi: f64,
    u: f64,
    grad_u: [f64; 3],
    grad_phi: [f64; 3],
    /// `[phi - g_phi]`
    cut: f64,
    grad_g: [f64; 3],
}

fn point_state(
    phi: &FeFunction,
    u: &FeFunction,
    data: &ProblemData,
    cell: usize,
    geom: &CellGeometry,
    lam: &[f64; 4],
    x: &Point,
) -> PointState {
    let (pv, gp) = phi.eval_local(cell, geom, lam);
    let (uv, gu) = u.eval_local(cell, geom, lam);
    let (sigma, dsigma) = data.conductivity.eval(uv);
    let (g, gg) = data.g_phi.value_grad(x);
    let cut = data.cutoff(pv - g, g);
    PointState { sigma, dsigma, phi: pv, u: uv, grad_u: gu, grad_phi: gp, cut, grad_g: gg }
}

fn facet_h(mesh: &Mesh, key: &crate::mesh::FacetKey) -> f64 {
    let pts: Vec<Point> = mesh.facet_vertices(key).iter().map(|&v| *mesh.vertex(v)).collect();
    diameter(&pts)
}

/// Evaluates all indicators for the discrete pair `(phi, u)`.
pub fn estimate(phi: &FeFunction, u: &FeFunction, data: &ProblemData) -> Result<EstimatorReport> {
    if !phi.space().same_mesh(u.space()) {
        return Err(Error::Mismatch("phi and u live on different meshes".into()));
    }
    let mesh = phi.space().mesh().clone();
    let sets: FacetSets = mesh.facet_sets()?;
    let kmax = phi.space().degree().max(u.space().degree());
    let cell_rule = simplex_rule(mesh.dim(), 2 * kmax + 2);
    let facet_rule = simplex_rule(mesh.dim() - 1, kmax + 2);

    let cell_terms: Vec<(f64, f64, f64)> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let geom = CellGeometry::new(&mesh, c);
            let lap_phi = phi.laplacian_local(c, &geom);
            let lap_u = u.laplacian_local(c, &geom);
            let (mut eta2, mut rho2) = (0.0, 0.0);
            for q in 0..cell_rule.len() {
                let lam = cell_rule.barycentric(q);
                let x = geom.map(&lam);
                let s = point_state(phi, u, data, c, &geom, &lam, &x);
                let (dsigma, gg) = (s.dsigma, s.grad_g);
                let gu_gp = dot(&s.grad_u, &s.grad_phi);
                let div_flux = dsigma * gu_gp + s.sigma * lap_phi;
                let eta = div_flux + data.f_phi.as_ref().map_or(0.0, |f| f.value(&x));
                let grad_cut = if cutoff_inactive(s.phi, data.g_lo, data.g_hi) {
                    [s.grad_phi[0] - gg[0], s.grad_phi[1] - gg[1], s.grad_phi[2] - gg[2]]
                } else {
                    [-gg[0], -gg[1], -gg[2]]
                };
                let div_cut_flux = dsigma * gu_gp * s.cut + s.sigma * dot(&grad_cut, &s.grad_phi) + s.sigma * s.cut * lap_phi;
                let rho = lap_u
                    + div_cut_flux
                    + s.sigma * dot(&gg, &s.grad_phi)
                    + data.f_u.as_ref().map_or(0.0, |f| f.value(&x));
                let w = cell_rule.weights[q] * geom.det;
                eta2 += w * eta * eta;
                rho2 += w * rho * rho;
            }
            (mesh.cell_diameter(c), eta2.sqrt(), rho2.sqrt())
        })
        .collect();

    let interior: Vec<(f64, f64, f64)> = sets
        .interior
        .par_iter()
        .map(|f| {
            let verts = mesh.facet_vertices(&f.vertices);
            let [a, b] = f.cells;
            let ga = CellGeometry::new(&mesh, a);
            let gb = CellGeometry::new(&mesh, b);
            let qa = facet_quadrature(&mesh, &ga, a, verts, &facet_rule);
            let qb = facet_quadrature(&mesh, &gb, b, verts, &facet_rule);
            let n = qa.normal;
            let (mut eta2, mut rho2) = (0.0, 0.0);
            for q in 0..qa.lams.len() {
                let x = qa.points[q];
                let sa = point_state(phi, u, data, a, &ga, &qa.lams[q], &x);
                let sb = point_state(phi, u, data, b, &gb, &qb.lams[q], &x);
                let jump_flux = sa.sigma * dot(&sa.grad_phi, &n) - sb.sigma * dot(&sb.grad_phi, &n);
                let jump_phi = dot(&sa.grad_phi, &n) - dot(&sb.grad_phi, &n);
                let jump_u = dot(&sa.grad_u, &n) - dot(&sb.grad_u, &n);
                let sigma = 0.5 * (sa.sigma + sb.sigma);
                let cut = 0.5 * (sa.cut + sb.cut);
                let rho = jump_u + sigma * cut * jump_phi;
                eta2 += qa.weights[q] * jump_flux * jump_flux;
                rho2 += qa.weights[q] * rho * rho;
            }
            (facet_h(&mesh, &f.vertices), eta2.sqrt(), rho2.sqrt())
        })
        .collect();

    let boundary_term = |i: usize, robin: bool| -> (usize, f64, f64) {
        let f = &sets.boundary[i];
        let geom = CellGeometry::new(&mesh, f.cell);
        let fq = facet_quadrature(&mesh, &geom, f.cell, mesh.facet_vertices(&f.vertices), &facet_rule);
        let n = fq.normal;
        let mut r2 = 0.0;
        for q in 0..fq.lams.len() {
            let x = fq.points[q];
            let s = point_state(phi, u, data, f.cell, &geom, &fq.lams[q], &x);
            let r = if robin {
                dot(&s.grad_u, &n) + s.sigma * s.cut * dot(&s.grad_phi, &n) + data.kappa.value(&x) * s.u
                    - data.h_robin.value(&x, &n)
            } else {
                s.sigma * dot(&s.grad_phi, &n)
            };
            r2 += fq.weights[q] * r * r;
        }
        (f.cell, facet_h(&mesh, &f.vertices), r2.sqrt())
    };
    let neumann: Vec<(usize, f64, f64)> = sets.neumann_phi.par_iter().map(|&i| boundary_term(i, false)).collect();
    let robin: Vec<(usize, f64, f64)> = sets.robin_u.par_iter().map(|&i| boundary_term(i, true)).collect();

    Ok(EstimatorReport::from_parts(
        cell_terms.iter().map(|t| t.0).collect(),
        cell_terms.iter().map(|t| t.1).collect(),
        cell_terms.iter().map(|t| t.2).collect(),
        (
            sets.interior.iter().map(|f| f.cells).collect(),
            interior.iter().map(|t| t.0).collect(),
            interior.iter().map(|t| t.1).collect(),
            interior.iter().map(|t| t.2).collect(),
        ),
        (neumann.iter().map(|t| t.0).collect(), neumann.iter().map(|t| t.1).collect(), neumann.iter().map(|t| t.2).collect()),
        (robin.iter().map(|t| t.0).collect(), robin.iter().map(|t| t.1).collect(), robin.iter().map(|t| t.2).collect()),
    ))
}
