//! Continuous Lagrange spaces of degree 1 and 2 on simplicial meshes.
//!
//! Degrees of freedom are numbered vertices first, then (degree 2) one per mesh edge in the
//! order edges are first met while walking the cells.

use std::collections::HashMap;
use std::sync::Arc;

use crate::mesh::{BoundaryTags, Mesh, PhiTag, UTag};
use crate::quadrature::simplex_rule;
use crate::{dot, Error, Point, Result};

pub const MAX_LOCAL: usize = 10;

const EDGES_2D: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn local_edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

/// Affine geometry of one cell.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub dim: usize,
    pub points: [Point; 4],
    /// `|det J|`; the cell volume is this divided by `dim!`.
    pub det: f64,
    pub volume: f64,
    pub grad_lambda: [[f64; 3]; 4],
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let dim = mesh.dim();
        let mut points = [[0.0; 3]; 4];
        for (i, &v) in mesh.cell(cell).iter().enumerate() {
            points[i] = *mesh.vertex(v);
        }
        Self::from_points(dim, points)
    }

    pub fn from_points(dim: usize, points: [Point; 4]) -> Self {
        let mut jac = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                jac[i][j] = points[j + 1][i] - points[0][i];
            }
        }
        let (det, inv) = invert(dim, &jac);
        let mut grad_lambda = [[0.0; 3]; 4];
        for i in 0..dim {
            for k in 0..dim {
                grad_lambda[i + 1][k] = inv[i][k];
                grad_lambda[0][k] -= inv[i][k];
            }
        }
        let fact = if dim == 2 { 2.0 } else { 6.0 };
        Self { dim, points, det: det.abs(), volume: det.abs() / fact, grad_lambda }
    }

    /// Physical point with barycentric coordinates `lam`.
    pub fn map(&self, lam: &[f64; 4]) -> Point {
        let mut x = [0.0; 3];
        for i in 0..=self.dim {
            for k in 0..3 {
                x[k] += lam[i] * self.points[i][k];
            }
        }
        x
    }
}

fn invert(dim: usize, a: &[[f64; 3]; 3]) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        inv[0][0] = a[1][1] / det;
        inv[0][1] = -a[0][1] / det;
        inv[1][0] = -a[1][0] / det;
        inv[1][1] = a[0][0] / det;
        (det, inv)
    } else {
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
        inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
        inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
        inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
        inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
        inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
        inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
        inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
        inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
        (det, inv)
    }
}

/// Barycentric coordinates of `x` with respect to a simplex.
pub fn barycentric(points: &[Point], x: &Point) -> [f64; 4] {
    let dim = points.len() - 1;
    let mut pts = [[0.0; 3]; 4];
    pts[..points.len()].copy_from_slice(points);
    let g = CellGeometry::from_points(dim, pts);
    let mut lam = [0.0; 4];
    for i in 0..=dim {
        let d = [x[0] - points[0][0], x[1] - points[0][1], x[2] - points[0][2]];
        lam[i] = dot(&g.grad_lambda[i], &d) + if i == 0 { 1.0 } else { 0.0 };
    }
    lam
}

/// Lagrange shape functions of degree 1 or 2 in barycentric form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalBasis {
    pub degree: usize,
    pub dim: usize,
}

impl LocalBasis {
    pub fn len(&self) -> usize {
        match self.degree {
            1 => self.dim + 1,
            _ => (self.dim + 1) * (self.dim + 2) / 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values and physical gradients at barycentric point `lam`.
    pub fn eval(&self, lam: &[f64; 4], gl: &[[f64; 3]; 4], val: &mut [f64; MAX_LOCAL], grad: &mut [[f64; 3]; MAX_LOCAL]) {
        let nv = self.dim + 1;
        if self.degree == 1 {
            val[..nv].copy_from_slice(&lam[..nv]);
            grad[..nv].copy_from_slice(&gl[..nv]);
            return;
        }
        for i in 0..nv {
            val[i] = lam[i] * (2.0 * lam[i] - 1.0);
            let s = 4.0 * lam[i] - 1.0;
            grad[i] = [s * gl[i][0], s * gl[i][1], s * gl[i][2]];
        }
        for (e, &(i, j)) in local_edges(self.dim).iter().enumerate() {
            val[nv + e] = 4.0 * lam[i] * lam[j];
            for k in 0..3 {
                grad[nv + e][k] = 4.0 * (lam[j] * gl[i][k] + lam[i] * gl[j][k]);
            }
        }
    }

    /// Laplacians of the shape functions (constant on the cell).
    pub fn laplacians(&self, gl: &[[f64; 3]; 4], lap: &mut [f64; MAX_LOCAL]) {
        let nv = self.dim + 1;
        lap.fill(0.0);
        if self.degree == 1 {
            return;
        }
        for i in 0..nv {
            lap[i] = 4.0 * dot(&gl[i], &gl[i]);
        }
        for (e, &(i, j)) in local_edges(self.dim).iter().enumerate() {
            lap[nv + e] = 8.0 * dot(&gl[i], &gl[j]);
        }
    }

    /// Barycentric coordinates of the local nodes.
    pub fn nodes(&self) -> Vec<[f64; 4]> {
        let nv = self.dim + 1;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..nv {
            let mut l = [0.0; 4];
            l[i] = 1.0;
            out.push(l);
        }
        if self.degree == 2 {
            for &(i, j) in local_edges(self.dim) {
                let mut l = [0.0; 4];
                l[i] = 0.5;
                l[j] = 0.5;
                out.push(l);
            }
        }
        out
    }
}

/// A continuous Lagrange space on a mesh.
#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    basis: LocalBasis,
    ndofs: usize,
    cell_dofs: Vec<usize>,
    dof_points: Vec<Point>,
    edge_index: HashMap<(usize, usize), usize>,
    dirichlet_phi: Vec<bool>,
    dirichlet_u: Vec<bool>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Arc<Self>> {
        if degree != 1 && degree != 2 {
            return Err(Error::Argument(format!("polynomial degree must be 1 or 2, got {degree}")));
        }
        let dim = mesh.dim();
        let basis = LocalBasis { degree, dim };
        let nloc = basis.len();
        let nv = mesh.num_vertices();
        let mut edge_index = HashMap::new();
        let mut cell_dofs = Vec::with_capacity(mesh.num_cells() * nloc);
        let mut dof_points: Vec<Point> = mesh.vertices().to_vec();
        for cell in mesh.cells() {
            cell_dofs.extend_from_slice(cell);
            if degree == 2 {
                for &(i, j) in local_edges(dim) {
                    let (a, b) = (cell[i].min(cell[j]), cell[i].max(cell[j]));
                    let next = edge_index.len();
                    let e = *edge_index.entry((a, b)).or_insert(next);
                    if e == next {
                        let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
                        dof_points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
                    }
                    cell_dofs.push(nv + e);
                }
            }
        }
        let ndofs = dof_points.len();
        let mut space = Self {
            mesh,
            basis,
            ndofs,
            cell_dofs,
            dof_points,
            edge_index,
            dirichlet_phi: vec![false; ndofs],
            dirichlet_u: vec![false; ndofs],
        };
        let mut phi = vec![false; ndofs];
        let mut u = vec![false; ndofs];
        for f in space.mesh.boundary_facets() {
            let dofs = space.facet_dofs(space.mesh.facet_vertices(&f.vertices));
            let BoundaryTags { phi: tp, u: tu } = f.tags;
            for d in dofs {
                phi[d] |= tp == PhiTag::Dirichlet;
                u[d] |= tu == UTag::Dirichlet;
            }
        }
        space.dirichlet_phi = phi;
        space.dirichlet_u = u;
        Ok(Arc::new(space))
    }

    /// Dofs whose node lies on the closed facet spanned by `vertices`.
    pub fn facet_dofs(&self, vertices: &[usize]) -> Vec<usize> {
        let mut dofs = vertices.to_vec();
        if self.basis.degree == 2 {
            for i in 0..vertices.len() {
                for j in i + 1..vertices.len() {
                    let key = (vertices[i].min(vertices[j]), vertices[i].max(vertices[j]));
                    dofs.push(self.mesh.num_vertices() + self.edge_index[&key]);
                }
            }
        }
        dofs
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn basis(&self) -> LocalBasis {
        self.basis
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.basis.len();
        &self.cell_dofs[cell * n..(cell + 1) * n]
    }

    pub fn dof_points(&self) -> &[Point] {
        &self.dof_points
    }

    /// Flags of dofs on the closed Dirichlet part of the potential boundary.
    pub fn dirichlet_dofs_phi(&self) -> &[bool] {
        &self.dirichlet_phi
    }

    /// Flags of dofs on the closed Dirichlet part of the temperature boundary.
    pub fn dirichlet_dofs_u(&self) -> &[bool] {
        &self.dirichlet_u
    }

    pub fn same_mesh(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }
}

/// Which boundary facets a boundary norm runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPart {
    All,
    DirichletPhi,
    NeumannPhi,
    DirichletU,
    RobinU,
}

impl BoundaryPart {
    pub fn contains(&self, tags: &BoundaryTags) -> bool {
        match self {
            BoundaryPart::All => true,
            BoundaryPart::DirichletPhi => tags.phi == PhiTag::Dirichlet,
            BoundaryPart::NeumannPhi => tags.phi == PhiTag::Neumann,
            BoundaryPart::DirichletU => tags.u == UTag::Dirichlet,
            BoundaryPart::RobinU => tags.u == UTag::Robin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1Semi,
    /// Full H1 norm, `sqrt(L2^2 + H1Semi^2)`.
    H1,
    L2Boundary(BoundaryPart),
    /// `(int |grad f|^3)^(1/3)`
    L3Grad,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "l2" => NormKind::L2,
            "h1_semi" | "h1semi" => NormKind::H1Semi,
            "h1" => NormKind::H1,
            "l3_grad" | "l3grad" => NormKind::L3Grad,
            "l2_boundary" => NormKind::L2Boundary(BoundaryPart::All),
            "l2_boundary_dirichlet_phi" => NormKind::L2Boundary(BoundaryPart::DirichletPhi),
            "l2_boundary_neumann_phi" => NormKind::L2Boundary(BoundaryPart::NeumannPhi),
            "l2_boundary_dirichlet_u" => NormKind::L2Boundary(BoundaryPart::DirichletU),
            "l2_boundary_robin_u" => NormKind::L2Boundary(BoundaryPart::RobinU),
            other => return Err(Error::Argument(format!("unknown norm kind `{other}`"))),
        })
    }
}

/// A finite element function: coefficient vector over a space.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FunctionSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<FunctionSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndofs() {
            return Err(Error::Argument(format!(
                "coefficient vector has length {}, space has {} dofs",
                coeffs.len(),
                space.ndofs()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.ndofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    /// Nodal interpolation: the coefficient of each dof is `f` at its node.
    pub fn interpolate(space: Arc<FunctionSpace>, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let coeffs: Vec<f64> = space.dof_points().iter().map(&f).collect();
        if let Some(i) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at node {:?}", space.dof_points()[i])));
        }
        Ok(Self { space, coeffs })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub(crate) fn local(&self, cell: usize) -> [f64; MAX_LOCAL] {
        let mut out = [0.0; MAX_LOCAL];
        for (o, &d) in out.iter_mut().zip(self.space.cell_dofs(cell)) {
            *o = self.coeffs[d];
        }
        out
    }

    /// Value and gradient at barycentric point `lam` of `cell`.
    pub fn eval_local(&self, cell: usize, geom: &CellGeometry, lam: &[f64; 4]) -> (f64, [f64; 3]) {
        let basis = self.space.basis();
        let mut val = [0.0; MAX_LOCAL];
        let mut grad = [[0.0; 3]; MAX_LOCAL];
        basis.eval(lam, &geom.grad_lambda, &mut val, &mut grad);
        let c = self.local(cell);
        let mut v = 0.0;
        let mut g = [0.0; 3];
        for a in 0..basis.len() {
            v += c[a] * val[a];
            for k in 0..3 {
                g[k] += c[a] * grad[a][k];
            }
        }
        (v, g)
    }

    /// Laplacian on `cell` (zero for degree 1).
    pub fn laplacian_local(&self, cell: usize, geom: &CellGeometry) -> f64 {
        let basis = self.space.basis();
        let mut lap = [0.0; MAX_LOCAL];
        basis.laplacians(&geom.grad_lambda, &mut lap);
        let c = self.local(cell);
        (0..basis.len()).map(|a| c[a] * lap[a]).sum()
    }

    /// Gradients at points given in reference coordinates of `cell`.
    pub fn eval_grad(&self, cell: usize, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let mesh = self.space.mesh();
        if cell >= mesh.num_cells() {
            return Err(Error::Argument(format!("cell {cell} out of range")));
        }
        let dim = mesh.dim();
        let geom = CellGeometry::new(mesh, cell);
        Ok(points
            .iter()
            .map(|p| {
                let mut lam = [0.0; 4];
                lam[0] = 1.0 - p[..dim].iter().sum::<f64>();
                lam[1..=dim].copy_from_slice(&p[..dim]);
                self.eval_local(cell, &geom, &lam).1
            })
            .collect())
    }

    /// Value at a physical point, or `None` outside the mesh. Linear search; meant for tests
    /// and probes.
    pub fn eval_point(&self, x: &Point) -> Option<f64> {
        let mesh = self.space.mesh();
        (0..mesh.num_cells()).find_map(|c| {
            let lam = barycentric(&mesh.cell_points(c), x);
            if lam[..=mesh.dim()].iter().all(|&l| l > -1e-12) {
                Some(self.eval_local(c, &CellGeometry::new(mesh, c), &lam).0)
            } else {
                None
            }
        })
    }

    /// `(L2, H1-seminorm)` of `self - exact`, where `exact` returns value and gradient.
    pub fn error_norms(&self, exact: impl Fn(&Point) -> (f64, [f64; 3])) -> (f64, f64) {
        let mesh = self.space.mesh();
        let rule = simplex_rule(mesh.dim(), 2 * self.space.degree() + 4);
        let (mut l2, mut semi) = (0.0, 0.0);
        for c in 0..mesh.num_cells() {
            let geom = CellGeometry::new(mesh, c);
            for q in 0..rule.len() {
                let lam = rule.barycentric(q);
                let (v, gr) = self.eval_local(c, &geom, &lam);
                let (ev, eg) = exact(&geom.map(&lam));
                let d = [gr[0] - eg[0], gr[1] - eg[1], gr[2] - eg[2]];
                let w = rule.weights[q] * geom.det;
                l2 += w * (v - ev).powi(2);
                semi += w * dot(&d, &d);
            }
        }
        (l2.sqrt(), semi.sqrt())
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        let k = self.space.degree();
        match kind {
            NormKind::L2 => integrate_cells(&self.space, 2 * k + 2, |c, g, lam, _| self.eval_local(c, g, lam).0.powi(2)).sqrt(),
            NormKind::H1Semi => integrate_cells(&self.space, 2 * k + 2, |c, g, lam, _| {
                let gr = self.eval_local(c, g, lam).1;
                dot(&gr, &gr)
            })
            .sqrt(),
            NormKind::H1 => integrate_cells(&self.space, 2 * k + 2, |c, g, lam, _| {
                let (v, gr) = self.eval_local(c, g, lam);
                v * v + dot(&gr, &gr)
            })
            .sqrt(),
            NormKind::L3Grad => integrate_cells(&self.space, 3 * k + 2, |c, g, lam, _| {
                let gr = self.eval_local(c, g, lam).1;
                dot(&gr, &gr).powf(1.5)
            })
            .cbrt(),
            NormKind::L2Boundary(part) => {
                let mesh = self.space.mesh();
                let rule = simplex_rule(mesh.dim() - 1, 2 * k + 2);
                let mut sum = 0.0;
                for f in mesh.boundary_facets().iter().filter(|f| part.contains(&f.tags)) {
                    let verts = mesh.facet_vertices(&f.vertices);
                    let pts: Vec<Point> = verts.iter().map(|&v| *mesh.vertex(v)).collect();
                    let measure = crate::mesh::simplex_measure(&pts);
                    let fact = if mesh.dim() == 2 { 1.0 } else { 2.0 };
                    for q in 0..rule.len() {
                        let fl = rule.barycentric(q);
                        let mut x = [0.0; 3];
                        for (i, p) in pts.iter().enumerate() {
                            for kk in 0..3 {
                                x[kk] += fl[i] * p[kk];
                            }
                        }
                        let v = self.eval_point(&x).unwrap_or(0.0);
                        sum += rule.weights[q] * fact * measure * v * v;
                    }
                }
                sum.sqrt()
            }
        }
    }
}

/// Sums `w_q |det J| f(cell, geom, lam_q, x_q)` over all cells with a rule of `degree`.
pub fn integrate_cells(
    space: &FunctionSpace,
    degree: usize,
    mut f: impl FnMut(usize, &CellGeometry, &[f64; 4], &Point) -> f64,
) -> f64 {
    let mesh = space.mesh();
    let rule = simplex_rule(mesh.dim(), degree);
    let lams: Vec<[f64; 4]> = (0..rule.len()).map(|q| rule.barycentric(q)).collect();
    let mut total = 0.0;
    for c in 0..mesh.num_cells() {
        let geom = CellGeometry::new(mesh, c);
        let mut cell_sum = 0.0;
        for (q, lam) in lams.iter().enumerate() {
            let x = geom.map(lam);
            cell_sum += rule.weights[q] * f(c, &geom, lam, &x);
        }
        total += cell_sum * geom.det;
    }
    total
}
