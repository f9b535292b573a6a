//! Simplicial meshes (triangles and tetrahedra) with per-unknown boundary tags.
//!
//! Cells are stored with an ordered vertex list. The order is meaningful: the edge between
//! the first and the last vertex is the refinement edge used by bisection, and `generation`
//! holds the bisection type of each cell (only relevant in 3D).

mod io;
mod refine;

use std::collections::HashMap;

use crate::{norm3, sub, Error, Point, Result};

pub use io::{read_gmsh, write_vtk, GmshTagMap, VtkField};
pub use refine::{refine, refine_uniform};

/// Boundary condition type of the potential on a boundary facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhiTag {
    Dirichlet,
    Neumann,
}

/// Boundary condition type of the temperature on a boundary facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UTag {
    Dirichlet,
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundaryTags {
    pub phi: PhiTag,
    pub u: UTag,
}

impl BoundaryTags {
    pub const fn new(phi: PhiTag, u: UTag) -> Self {
        Self { phi, u }
    }

    pub const ALL_DIRICHLET: Self = Self::new(PhiTag::Dirichlet, UTag::Dirichlet);
}

/// Sorted vertex ids of a facet. Unused trailing slots (2D) hold `usize::MAX`.
pub type FacetKey = [usize; 3];

pub fn facet_key(vertices: &[usize]) -> FacetKey {
    let mut key = [usize::MAX; 3];
    key[..vertices.len()].copy_from_slice(vertices);
    key.sort_unstable();
    key
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub vertices: FacetKey,
    pub tags: BoundaryTags,
}

/// A conforming simplicial mesh of a bounded domain in 2D or 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    generation: Vec<u8>,
    boundary: Vec<BoundaryFacet>,
}

impl Mesh {
    /// Builds a mesh and checks it: positive cell volumes, at most two cells per facet,
    /// every boundary facet tagged exactly once, and a non-empty Dirichlet part for `phi`.
    pub fn new(
        dim: usize,
        vertices: Vec<Point>,
        cells: Vec<Vec<usize>>,
        generation: Vec<u8>,
        boundary: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Argument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if generation.len() != cells.len() {
            return Err(Error::Mesh("one generation tag per cell required".into()));
        }
        let mut flat = Vec::with_capacity(cells.len() * (dim + 1));
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() != dim + 1 {
                return Err(Error::Mesh(format!("cell {c} has {} vertices", cell.len())));
            }
            if let Some(&v) = cell.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("cell {c} references missing vertex {v}")));
            }
            flat.extend_from_slice(cell);
        }
        let mesh = Self { dim, vertices, cells: flat, generation, boundary };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        for c in 0..self.num_cells() {
            let vol = self.cell_volume(c);
            if !(vol > 0.0) || !vol.is_finite() {
                return Err(Error::Mesh(format!("cell {c} is degenerate (volume {vol:e})")));
            }
        }
        let facets = self.facet_map()?;
        let mut tagged: HashMap<FacetKey, BoundaryTags> = HashMap::with_capacity(self.boundary.len());
        for bf in &self.boundary {
            match facets.get(&bf.vertices) {
                Some(adj) if adj.len() == 1 => {}
                _ => {
                    return Err(Error::Mesh(format!(
                        "tagged facet {:?} is not a boundary facet",
                        self.facet_vertices(&bf.vertices)
                    )))
                }
            }
            if tagged.insert(bf.vertices, bf.tags).is_some() {
                return Err(Error::Mesh(format!(
                    "boundary facet {:?} tagged twice",
                    self.facet_vertices(&bf.vertices)
                )));
            }
        }
        let n_boundary = facets.values().filter(|adj| adj.len() == 1).count();
        if n_boundary != tagged.len() {
            return Err(Error::Mesh(format!(
                "{} boundary facets but {} tagged",
                n_boundary,
                tagged.len()
            )));
        }
        if !self.boundary.iter().any(|f| f.tags.phi == PhiTag::Dirichlet) {
            return Err(Error::Mesh("the Dirichlet part of the potential boundary is empty".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.generation.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    /// Ordered vertex ids of cell `c`; the first and last vertex span the refinement edge.
    pub fn cell(&self, c: usize) -> &[usize] {
        let n = self.dim + 1;
        &self.cells[c * n..(c + 1) * n]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn generation(&self, c: usize) -> u8 {
        self.generation[c]
    }

    pub fn boundary_facets(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    /// The vertex ids of a facet key with the padding removed.
    pub fn facet_vertices<'a>(&self, key: &'a FacetKey) -> &'a [usize] {
        &key[..self.dim]
    }

    pub fn cell_points(&self, c: usize) -> Vec<Point> {
        self.cell(c).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        simplex_measure(&self.cell_points(c))
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        centroid(&self.cell_points(c))
    }

    /// Largest edge length of cell `c`.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        diameter(&self.cell_points(c))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// Largest cell diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    pub(crate) fn facet_map(&self) -> Result<HashMap<FacetKey, Vec<(usize, usize)>>> {
        let mut map: HashMap<FacetKey, Vec<(usize, usize)>> = HashMap::with_capacity(self.num_cells() * 2);
        let n = self.dim + 1;
        let mut buf = Vec::with_capacity(self.dim);
        for c in 0..self.num_cells() {
            let cell = self.cell(c);
            for i in 0..n {
                buf.clear();
                buf.extend(cell.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
                let adj = map.entry(facet_key(&buf)).or_default();
                adj.push((c, i));
                if adj.len() > 2 {
                    return Err(Error::Mesh(format!("facet {buf:?} is shared by more than two cells")));
                }
            }
        }
        Ok(map)
    }

    /// Enumerates interior and boundary facets. Output order is sorted by facet vertices.
    pub fn facet_sets(&self) -> Result<FacetSets> {
        let map = self.facet_map()?;
        let tags: HashMap<FacetKey, BoundaryTags> =
            self.boundary.iter().map(|f| (f.vertices, f.tags)).collect();
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort_unstable();
        let mut sets = FacetSets::default();
        for key in keys {
            let adj = &map[&key];
            if adj.len() == 2 {
                let (a, b) = if adj[0].0 < adj[1].0 { (adj[0], adj[1]) } else { (adj[1], adj[0]) };
                sets.interior.push(InteriorFacet { vertices: key, cells: [a.0, b.0], local: [a.1, b.1] });
            } else {
                let tags = *tags
                    .get(&key)
                    .ok_or_else(|| Error::Mesh(format!("boundary facet {key:?} has no tags")))?;
                let idx = sets.boundary.len();
                match tags.phi {
                    PhiTag::Dirichlet => sets.dirichlet_phi.push(idx),
                    PhiTag::Neumann => sets.neumann_phi.push(idx),
                }
                match tags.u {
                    UTag::Dirichlet => sets.dirichlet_u.push(idx),
                    UTag::Robin => sets.robin_u.push(idx),
                }
                sets.boundary.push(BoundaryFacetRef { vertices: key, cell: adj[0].0, local: adj[0].1, tags });
            }
        }
        Ok(sets)
    }

    /// Largest ratio of cell diameter to inscribed-ball diameter.
    pub fn shape_regularity(&self) -> Result<f64> {
        let mut gamma: f64 = 0.0;
        for c in 0..self.num_cells() {
            let ratio = simplex_shape_ratio(&self.cell_points(c))
                .ok_or_else(|| Error::Mesh(format!("cell {c} is degenerate")))?;
            gamma = gamma.max(ratio);
        }
        Ok(gamma)
    }

    /// Structured simplicial mesh of `(0,1)^dim` with `n` subdivisions per axis.
    ///
    /// Squares are split into two triangles along the `(0,0)-(1,1)` diagonal, cubes into the
    /// six Kuhn tetrahedra around the main diagonal. The diagonal is the refinement edge of
    /// every cell, which makes the mesh compatible with bisection.
    pub fn unit_box(dim: usize, n: usize, tagger: &dyn Fn(&Point) -> BoundaryTags) -> Result<Self> {
        Self::structured_box(dim, n, [0.0; 3], 1.0, &|_| true, tagger)
    }

    /// L-shaped domain `(-1,1)^2 \ [0,1) x (-1,0]` with `2n` subdivisions per axis.
    /// The re-entrant corner sits at the origin.
    pub fn l_shape(n: usize, tagger: &dyn Fn(&Point) -> BoundaryTags) -> Result<Self> {
        if n < 1 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        Self::structured_box(2, 2 * n, [-1.0, -1.0, 0.0], 2.0, &|c| !(c[0] > 0.0 && c[1] < 0.0), tagger)
    }

    fn structured_box(
        dim: usize,
        n: usize,
        origin: Point,
        width: f64,
        keep: &dyn Fn(&Point) -> bool,
        tagger: &dyn Fn(&Point) -> BoundaryTags,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Argument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 1 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        let np = n + 1;
        let nz = if dim == 3 { np } else { 1 };
        let h = width / n as f64;
        let mut vertices = Vec::with_capacity(np * np * nz);
        for k in 0..nz {
            for j in 0..np {
                for i in 0..np {
                    let z = if dim == 3 { origin[2] + k as f64 * h } else { 0.0 };
                    vertices.push([origin[0] + i as f64 * h, origin[1] + j as f64 * h, z]);
                }
            }
        }
        let id = |i: usize, j: usize, k: usize| i + np * (j + np * k);
        let mut cells = Vec::new();
        let nk = if dim == 3 { n } else { 1 };
        for k in 0..nk {
            for j in 0..n {
                for i in 0..n {
                    if dim == 2 {
                        let (v00, v10, v01, v11) = (id(i, j, 0), id(i + 1, j, 0), id(i, j + 1, 0), id(i + 1, j + 1, 0));
                        cells.push(vec![v00, v10, v11]);
                        cells.push(vec![v00, v01, v11]);
                    } else {
                        const PERMS: [[usize; 3]; 6] =
                            [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                        for p in PERMS {
                            let mut idx = [i, j, k];
                            let mut cell = vec![id(idx[0], idx[1], idx[2])];
                            for axis in p {
                                idx[axis] += 1;
                                cell.push(id(idx[0], idx[1], idx[2]));
                            }
                            cells.push(cell);
                        }
                    }
                }
            }
        }
        cells.retain(|cell| {
            let pts: Vec<Point> = cell.iter().map(|&v| vertices[v]).collect();
            keep(&centroid(&pts))
        });
        // drop unused vertices
        let mut remap = vec![usize::MAX; vertices.len()];
        let mut used = Vec::new();
        for cell in cells.iter_mut() {
            for v in cell.iter_mut() {
                if remap[*v] == usize::MAX {
                    remap[*v] = used.len();
                    used.push(vertices[*v]);
                }
                *v = remap[*v];
            }
        }
        let generation = vec![0; cells.len()];
        Self::with_tagger(dim, used, cells, generation, tagger)
    }

    /// Builds a mesh whose boundary facets are tagged from their centroids.
    pub fn with_tagger(
        dim: usize,
        vertices: Vec<Point>,
        cells: Vec<Vec<usize>>,
        generation: Vec<u8>,
        tagger: &dyn Fn(&Point) -> BoundaryTags,
    ) -> Result<Self> {
        let untagged = Self { dim, vertices, cells: cells.concat(), generation, boundary: Vec::new() };
        let map = untagged.facet_map()?;
        let mut boundary: Vec<BoundaryFacet> = map
            .iter()
            .filter(|(_, adj)| adj.len() == 1)
            .map(|(key, _)| {
                let pts: Vec<Point> = key[..dim].iter().map(|&v| untagged.vertices[v]).collect();
                BoundaryFacet { vertices: *key, tags: tagger(&centroid(&pts)) }
            })
            .collect();
        boundary.sort_unstable_by_key(|f| f.vertices);
        Self::new(dim, untagged.vertices, cells, untagged.generation, boundary)
    }

    /// Copy of the mesh with boundary tags recomputed from each facet and its centroid.
    pub fn retag(&self, tagger: &dyn Fn(&BoundaryFacet, &Point) -> BoundaryTags) -> Result<Self> {
        let boundary = self
            .boundary
            .iter()
            .map(|f| {
                let pts: Vec<Point> = self.facet_vertices(&f.vertices).iter().map(|&v| self.vertices[v]).collect();
                BoundaryFacet { vertices: f.vertices, tags: tagger(f, &centroid(&pts)) }
            })
            .collect();
        let mesh = Self { boundary, ..self.clone() };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Interior facet with its two neighbours (lower cell id first) and the local index of the
/// vertex opposite the facet in each neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorFacet {
    pub vertices: FacetKey,
    pub cells: [usize; 2],
    pub local: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacetRef {
    pub vertices: FacetKey,
    pub cell: usize,
    pub local: usize,
    pub tags: BoundaryTags,
}

/// Facet enumeration. The tag lists hold indices into `boundary`.
#[derive(Debug, Clone, Default)]
pub struct FacetSets {
    pub interior: Vec<InteriorFacet>,
    pub boundary: Vec<BoundaryFacetRef>,
    pub dirichlet_phi: Vec<usize>,
    pub neumann_phi: Vec<usize>,
    pub dirichlet_u: Vec<usize>,
    pub robin_u: Vec<usize>,
}

impl FacetSets {
    pub fn num_facets(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }
}

pub(crate) fn centroid(points: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|x| x / points.len() as f64)
}

pub(crate) fn diameter(points: &[Point]) -> f64 {
    let mut h: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            h = h.max(norm3(&sub(&points[i], &points[j])));
        }
    }
    h
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Length, area or volume of a simplex with 2, 3 or 4 vertices (embedded in 3D).
pub(crate) fn simplex_measure(points: &[Point]) -> f64 {
    match points.len() {
        1 => 1.0,
        2 => norm3(&sub(&points[1], &points[0])),
        3 => 0.5 * norm3(&cross(&sub(&points[1], &points[0]), &sub(&points[2], &points[0]))),
        4 => {
            let a = sub(&points[1], &points[0]);
            let b = sub(&points[2], &points[0]);
            let c = sub(&points[3], &points[0]);
            crate::dot(&a, &cross(&b, &c)).abs() / 6.0
        }
        n => panic!("simplex with {n} vertices"),
    }
}

/// `h_T / d_T` where `d_T = 2 r` and the inradius is `r = d |T| / sum |facets|`.
pub(crate) fn simplex_shape_ratio(points: &[Point]) -> Option<f64> {
    let d = points.len() - 1;
    let vol = simplex_measure(points);
    if !(vol > 0.0) {
        return None;
    }
    let surface: f64 = (0..points.len())
        .map(|i| {
            let facet: Vec<Point> =
                points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| *p).collect();
            simplex_measure(&facet)
        })
        .sum();
    let inradius = d as f64 * vol / surface;
    Some(diameter(points) / (2.0 * inradius))
}
