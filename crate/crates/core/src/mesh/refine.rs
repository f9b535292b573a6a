//! Conforming bisection refinement.
//!
//! A cell `[x0, ..., xd]` with type `g` is split at the midpoint `z` of `x0 xd` into
//!
//! ```text
//!   [x0, z, x1, ..., xg, x(g+1), ..., x(d-1)]    type (g+1) mod d
//!   [xd, z, x1, ..., xg, x(d-1), ..., x(g+1)]    type (g+1) mod d
//! ```
//!
//! In 2D this is newest-vertex bisection; in 3D it is the Maubach / Stevenson variant. The
//! conformity closure bisects every cell that contains an already bisected edge until none is
//! left.

use std::collections::{HashMap, HashSet};

use super::{facet_key, BoundaryFacet, BoundaryTags, Mesh};
use crate::{Error, Result};

struct WorkCell {
    vertices: Vec<usize>,
    generation: u8,
    /// Tags of the facet opposite each local vertex, `None` for interior facets.
    facet_tags: Vec<Option<BoundaryTags>>,
}

const MAX_CLOSURE_SWEEPS: usize = 1000;

/// Bisects the marked cells plus whatever the conformity closure requires.
pub fn refine(mesh: &Mesh, marked: &[usize]) -> Result<Mesh> {
    if let Some(&c) = marked.iter().find(|&&c| c >= mesh.num_cells()) {
        return Err(Error::Argument(format!("marked cell {c} out of range")));
    }
    if marked.is_empty() {
        return Ok(mesh.clone());
    }
    let dim = mesh.dim();
    let boundary_tags: HashMap<_, _> = mesh.boundary_facets().iter().map(|f| (f.vertices, f.tags)).collect();
    let mut cells: Vec<Option<WorkCell>> = (0..mesh.num_cells())
        .map(|c| {
            let vertices = mesh.cell(c).to_vec();
            let facet_tags = (0..=dim)
                .map(|i| {
                    let facet: Vec<usize> =
                        vertices.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
                    boundary_tags.get(&facet_key(&facet)).copied()
                })
                .collect();
            Some(WorkCell { vertices, generation: mesh.generation(c), facet_tags })
        })
        .collect();
    let mut points = mesh.vertices().to_vec();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();

    let mut pending: Vec<usize> = {
        let set: HashSet<usize> = marked.iter().copied().collect();
        let mut v: Vec<usize> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    let mut sweeps = 0;
    while !pending.is_empty() {
        sweeps += 1;
        if sweeps > MAX_CLOSURE_SWEEPS {
            return Err(Error::Mesh(
                "bisection closure did not terminate; the initial refinement edges are not compatible".into(),
            ));
        }
        for c in pending.drain(..) {
            let cell = cells[c].take().expect("cell bisected twice in one sweep");
            let (a, b) = (cell.vertices[0], cell.vertices[dim]);
            let key = (a.min(b), a.max(b));
            let z = *midpoints.entry(key).or_insert_with(|| {
                let (pa, pb) = (points[a], points[b]);
                points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
                points.len() - 1
            });
            let (c1, c2) = bisect(&cell, z, dim);
            cells[c] = Some(c1);
            cells.push(Some(c2));
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.as_ref().expect("all cells present between sweeps");
            let v = &cell.vertices;
            let hanging = (0..v.len())
                .any(|i| (i + 1..v.len()).any(|j| midpoints.contains_key(&(v[i].min(v[j]), v[i].max(v[j])))));
            if hanging {
                pending.push(c);
            }
        }
    }

    let mut out_cells = Vec::with_capacity(cells.len());
    let mut generation = Vec::with_capacity(cells.len());
    let mut boundary = Vec::new();
    for cell in cells.into_iter().map(|c| c.expect("cell present")) {
        for (i, tags) in cell.facet_tags.iter().enumerate() {
            if let Some(tags) = tags {
                let facet: Vec<usize> =
                    cell.vertices.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
                boundary.push(BoundaryFacet { vertices: facet_key(&facet), tags: *tags });
            }
        }
        out_cells.push(cell.vertices);
        generation.push(cell.generation);
    }
    boundary.sort_unstable_by_key(|f| f.vertices);
    Mesh::new(dim, points, out_cells, generation, boundary)
}

fn bisect(cell: &WorkCell, z: usize, dim: usize) -> (WorkCell, WorkCell) {
    let v = &cell.vertices;
    let g = cell.generation as usize;
    let next = ((g + 1) % dim) as u8;
    let inner = &v[1..dim];
    let mut first = vec![v[0], z];
    first.extend_from_slice(inner);
    let mut second = vec![v[dim], z];
    second.extend_from_slice(&inner[..g.min(inner.len())]);
    second.extend(inner[g.min(inner.len())..].iter().rev());

    // local index in the parent of each vertex shared with a child
    let parent_local = |vertex: usize| v.iter().position(|&w| w == vertex).expect("vertex of parent");
    let child = |vertices: Vec<usize>, far: usize| {
        let facet_tags = vertices
            .iter()
            .map(|&w| {
                if w == z {
                    // facet opposite the midpoint is the parent facet opposite the other endpoint
                    cell.facet_tags[far]
                } else if w == v[0] || w == v[dim] {
                    None
                } else {
                    cell.facet_tags[parent_local(w)]
                }
            })
            .collect();
        WorkCell { vertices, generation: next, facet_tags }
    };
    (child(first, dim), child(second, 0))
}

/// Bisects every cell `dim` times, halving the mesh size.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let mut m = mesh.clone();
    for _ in 0..mesh.dim() {
        let all: Vec<usize> = (0..m.num_cells()).collect();
        m = refine(&m, &all)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{PhiTag, UTag};
    use crate::Point;

    fn tagger(c: &Point) -> BoundaryTags {
        if c[0] < 1e-12 {
            BoundaryTags::new(PhiTag::Dirichlet, UTag::Robin)
        } else {
            BoundaryTags::new(PhiTag::Neumann, UTag::Dirichlet)
        }
    }

    /// Every pair of cells meets in a common sub-simplex: no vertex of one cell lies in the
    /// relative interior of a face of another.
    fn assert_conforming(mesh: &Mesh) {
        let pts = mesh.vertices();
        let n = mesh.num_cells();
        for a in 0..n {
            let ca = mesh.cell(a);
            for b in 0..n {
                if a == b {
                    continue;
                }
                for &v in mesh.cell(b) {
                    if ca.contains(&v) {
                        continue;
                    }
                    // barycentric coordinates of v in cell a
                    let lam = crate::space::barycentric(&mesh.cell_points(a), &pts[v]);
                    let inside = lam.iter().all(|&l| l > -1e-12);
                    assert!(!inside, "vertex {v} of cell {b} lies on cell {a}");
                }
            }
        }
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = Mesh::unit_box(2, 2, &tagger).unwrap();
        assert_eq!(refine(&m, &[]).unwrap(), m);
    }

    #[test]
    fn out_of_range_marking() {
        let m = Mesh::unit_box(2, 1, &tagger).unwrap();
        assert!(refine(&m, &[5]).is_err());
    }

    #[test]
    fn all_cells_of_square() {
        let m = Mesh::unit_box(2, 1, &tagger).unwrap();
        let r = refine(&m, &[0, 1]).unwrap();
        assert_eq!(r.num_cells(), 4);
        assert!((r.total_volume() - 1.0).abs() < 1e-14);
        assert_conforming(&r);
    }

    #[test]
    fn single_cell_closure_is_conforming() {
        for dim in [2, 3] {
            let mut m = Mesh::unit_box(dim, 2, &tagger).unwrap();
            for step in 0..6 {
                m = refine(&m, &[step % m.num_cells()]).unwrap();
                assert_conforming(&m);
                assert!((m.total_volume() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_refinement_stays_conforming() {
        let mut m = Mesh::unit_box(2, 2, &tagger).unwrap();
        for _ in 0..8 {
            let target = (0..m.num_cells())
                .filter(|&c| m.cell(c).iter().any(|&v| m.vertex(v)[0] == 0.0 && m.vertex(v)[1] == 0.0))
                .collect::<Vec<_>>();
            m = refine(&m, &target).unwrap();
        }
        assert_conforming(&m);
    }

    #[test]
    fn tags_inherited() {
        let m = Mesh::unit_box(3, 1, &tagger).unwrap();
        let r = refine_uniform(&r_uniform_helper(&m)).unwrap();
        for f in r.boundary_facets() {
            let pts: Vec<Point> = r.facet_vertices(&f.vertices).iter().map(|&v| *r.vertex(v)).collect();
            assert_eq!(f.tags, tagger(&crate::mesh::centroid(&pts)));
        }
    }

    fn r_uniform_helper(m: &Mesh) -> Mesh {
        refine_uniform(m).unwrap()
    }

    #[test]
    fn uniform_refinement_halves_h() {
        for dim in [2, 3] {
            let m = Mesh::unit_box(dim, 2, &tagger).unwrap();
            let r = refine_uniform(&m).unwrap();
            assert_eq!(r.num_cells(), m.num_cells() << dim);
            assert!((r.h_max() - 0.5 * m.h_max()).abs() < 1e-12);
        }
    }
}
