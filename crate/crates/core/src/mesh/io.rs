//! Gmsh MSH 2.2 (ASCII) import and legacy VTK (ASCII) export.

use std::collections::HashMap;
use std::io::Write;

use super::{facet_key, BoundaryFacet, BoundaryTags, Mesh};
use crate::{norm3, sub, Error, Point, Result};

/// Maps Gmsh physical group ids of boundary elements to tag pairs. Boundary facets without a
/// boundary element, or with an unmapped group, get `default`.
#[derive(Debug, Clone)]
pub struct GmshTagMap {
    pub groups: HashMap<i64, BoundaryTags>,
    pub default: BoundaryTags,
}

impl Default for GmshTagMap {
    fn default() -> Self {
        Self { groups: HashMap::new(), default: BoundaryTags::ALL_DIRICHLET }
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Mesh("unexpected end of Gmsh file".into()))
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Mesh(format!("malformed number on line {line}")))
}

/// Reads an ASCII Gmsh 2.2 mesh. Triangles (type 2) or tetrahedra (type 4) become cells; the
/// highest dimension present wins. Lines (type 1) in 2D and triangles in 3D carry boundary
/// groups. Cells are reordered so that their longest edge is the refinement edge.
pub fn read_gmsh(text: &str, tags: &GmshTagMap) -> Result<Mesh> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let mut nodes: HashMap<i64, usize> = HashMap::new();
    let mut coords: Vec<Point> = Vec::new();
    let mut tris: Vec<(i64, Vec<i64>)> = Vec::new();
    let mut tets: Vec<Vec<i64>> = Vec::new();
    let mut segs: Vec<(i64, Vec<i64>)> = Vec::new();
    let mut saw_format = false;
    while let Some((_, line)) = lines.inner.next() {
        match line.trim() {
            "$MeshFormat" => {
                let (n, l) = lines.next_line()?;
                let version = l.split_whitespace().next().unwrap_or("");
                if !version.starts_with("2.") {
                    return Err(Error::Mesh(format!("line {n}: unsupported Gmsh version {version}")));
                }
                if l.split_whitespace().nth(1) != Some("0") {
                    return Err(Error::Mesh(format!("line {n}: only ASCII Gmsh files are supported")));
                }
                saw_format = true;
            }
            "$Nodes" => {
                let (n, l) = lines.next_line()?;
                let count: usize = parse_num(Some(l), n)?;
                for _ in 0..count {
                    let (n, l) = lines.next_line()?;
                    let mut it = l.split_whitespace();
                    let id: i64 = parse_num(it.next(), n)?;
                    let x: f64 = parse_num(it.next(), n)?;
                    let y: f64 = parse_num(it.next(), n)?;
                    let z: f64 = parse_num(it.next(), n)?;
                    nodes.insert(id, coords.len());
                    coords.push([x, y, z]);
                }
            }
            "$Elements" => {
                let (n, l) = lines.next_line()?;
                let count: usize = parse_num(Some(l), n)?;
                for _ in 0..count {
                    let (n, l) = lines.next_line()?;
                    let toks: Vec<i64> = l
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| Error::Mesh(format!("malformed element on line {n}"))))
                        .collect::<Result<_>>()?;
                    if toks.len() < 3 {
                        return Err(Error::Mesh(format!("malformed element on line {n}")));
                    }
                    let (etype, ntags) = (toks[1], toks[2] as usize);
                    let physical = if ntags > 0 { toks[3] } else { 0 };
                    let conn = toks.get(3 + ntags..).unwrap_or(&[]).to_vec();
                    let expect = match etype {
                        1 => 2,
                        2 => 3,
                        4 => 4,
                        _ => continue,
                    };
                    if conn.len() != expect {
                        return Err(Error::Mesh(format!("element on line {n} has {} nodes", conn.len())));
                    }
                    match etype {
                        1 => segs.push((physical, conn)),
                        2 => tris.push((physical, conn)),
                        _ => tets.push(conn),
                    }
                }
            }
            _ => {}
        }
    }
    if !saw_format {
        return Err(Error::Mesh("missing $MeshFormat section".into()));
    }
    let lookup = |id: &i64| nodes.get(id).copied().ok_or_else(|| Error::Mesh(format!("unknown node {id}")));
    let (dim, cells, facets) = if !tets.is_empty() {
        let cells = tets.iter().map(|c| c.iter().map(lookup).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
        (3, cells, tris)
    } else if !tris.is_empty() {
        let cells =
            tris.iter().map(|(_, c)| c.iter().map(lookup).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
        (2, cells, segs)
    } else {
        return Err(Error::Mesh("no triangles or tetrahedra found".into()));
    };
    let mut group_of: HashMap<_, i64> = HashMap::new();
    for (phys, conn) in &facets {
        let ids = conn.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        group_of.insert(facet_key(&ids), *phys);
    }

    // keep only referenced vertices
    let mut remap = vec![usize::MAX; coords.len()];
    let mut vertices = Vec::new();
    let mut cells = cells;
    for cell in cells.iter_mut() {
        for v in cell.iter_mut() {
            if remap[*v] == usize::MAX {
                remap[*v] = vertices.len();
                let mut p = coords[*v];
                if dim == 2 {
                    p[2] = 0.0;
                }
                vertices.push(p);
            }
            *v = remap[*v];
        }
        order_longest_edge(cell, &vertices);
    }
    let group_of: HashMap<_, _> = group_of
        .into_iter()
        .filter_map(|(key, g)| {
            let mapped: Option<Vec<usize>> = key[..dim]
                .iter()
                .map(|&v| remap.get(v).copied().filter(|&r| r != usize::MAX))
                .collect();
            mapped.map(|m| (facet_key(&m), g))
        })
        .collect();

    let untagged = Mesh { dim, vertices, cells: cells.concat(), generation: vec![0; cells.len()], boundary: Vec::new() };
    let map = untagged.facet_map()?;
    let mut boundary: Vec<BoundaryFacet> = map
        .iter()
        .filter(|(_, adj)| adj.len() == 1)
        .map(|(key, _)| {
            let t = group_of.get(key).and_then(|g| tags.groups.get(g)).copied().unwrap_or(tags.default);
            BoundaryFacet { vertices: *key, tags: t }
        })
        .collect();
    boundary.sort_unstable_by_key(|f| f.vertices);
    Mesh::new(dim, untagged.vertices, cells, untagged.generation, boundary)
}

/// Puts the longest edge (ties broken by vertex ids) first-to-last.
fn order_longest_edge(cell: &mut [usize], vertices: &[Point]) {
    let n = cell.len();
    let mut best = (0, n - 1);
    let mut best_key = (f64::NEG_INFINITY, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (cell[i].min(cell[j]), cell[i].max(cell[j]));
            let len = norm3(&sub(&vertices[a], &vertices[b]));
            let key = (len, a, b);
            if key.0 > best_key.0 || (key.0 == best_key.0 && (key.1, key.2) < (best_key.1, best_key.2)) {
                best_key = key;
                best = (i, j);
            }
        }
    }
    let (a, b) = (cell[best.0], cell[best.1]);
    let mut rest: Vec<usize> = cell.iter().copied().filter(|&v| v != a && v != b).collect();
    rest.sort_unstable();
    cell[0] = a.min(b);
    cell[n - 1] = a.max(b);
    cell[1..n - 1].copy_from_slice(&rest);
}

/// A named field attached to points or cells of a VTK file.
pub enum VtkField<'a> {
    Point(&'a str, &'a [f64]),
    Cell(&'a str, &'a [f64]),
}

/// Writes a legacy ASCII `UNSTRUCTURED_GRID`.
pub fn write_vtk<W: Write>(out: &mut W, mesh: &Mesh, title: &str, fields: &[VtkField<'_>]) -> Result<()> {
    let nv = mesh.num_vertices();
    let nc = mesh.num_cells();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    let per = mesh.dim() + 1;
    writeln!(out, "CELLS {} {}", nc, nc * (per + 1))?;
    for cell in mesh.cells() {
        write!(out, "{per}")?;
        for v in cell {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {nc}")?;
    let ty = if mesh.dim() == 2 { 5 } else { 10 };
    for _ in 0..nc {
        writeln!(out, "{ty}")?;
    }
    let point_fields: Vec<_> = fields.iter().filter_map(|f| if let VtkField::Point(n, d) = f { Some((n, d)) } else { None }).collect();
    let cell_fields: Vec<_> = fields.iter().filter_map(|f| if let VtkField::Cell(n, d) = f { Some((n, d)) } else { None }).collect();
    for (section, count, list) in [("POINT_DATA", nv, point_fields), ("CELL_DATA", nc, cell_fields)] {
        if list.is_empty() {
            continue;
        }
        writeln!(out, "{section} {count}")?;
        for (name, data) in list {
            if data.len() != count {
                return Err(Error::Argument(format!("field {name} has {} values, expected {count}", data.len())));
            }
            writeln!(out, "SCALARS {} double 1", name.replace(char::is_whitespace, "_"))?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for x in data.iter() {
                writeln!(out, "{x}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{PhiTag, UTag};

    const SQUARE: &str = "$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
5
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
5 0.5 0.5 0
$EndNodes
$Elements
6
1 1 2 7 1 1 2
2 1 2 8 2 2 3
3 2 2 9 3 1 2 5
4 2 2 9 3 2 3 5
5 2 2 9 3 3 4 5
6 2 2 9 3 4 1 5
$EndElements
";

    #[test]
    fn gmsh_square_with_groups() {
        let mut map = GmshTagMap {
            groups: HashMap::new(),
            default: BoundaryTags::new(PhiTag::Neumann, UTag::Robin),
        };
        map.groups.insert(7, BoundaryTags::ALL_DIRICHLET);
        let mesh = read_gmsh(SQUARE, &map).unwrap();
        assert_eq!((mesh.dim(), mesh.num_vertices(), mesh.num_cells()), (2, 5, 4));
        assert!((mesh.total_volume() - 1.0).abs() < 1e-14);
        let sets = mesh.facet_sets().unwrap();
        assert_eq!(sets.dirichlet_phi.len(), 1);
        assert_eq!(sets.robin_u.len(), 3);
        // refinement edge is the longest edge (a diagonal half of length sqrt(2)/2 vs side 1)
        for c in 0..mesh.num_cells() {
            let cell = mesh.cell(c);
            let e = norm3(&sub(mesh.vertex(cell[0]), mesh.vertex(cell[2])));
            assert!((e - 1.0).abs() < 1e-14);
        }
        let r = crate::mesh::refine_uniform(&mesh).unwrap();
        assert_eq!(r.num_cells(), 16);
    }

    #[test]
    fn gmsh_errors() {
        assert!(read_gmsh("garbage", &GmshTagMap::default()).is_err());
        let bad = SQUARE.replace("1 0 0 0\n", "1 0 zero 0\n");
        assert!(matches!(read_gmsh(&bad, &GmshTagMap::default()), Err(Error::Mesh(_))));
    }

    #[test]
    fn vtk_layout() {
        let mesh = Mesh::unit_box(2, 1, &|_| BoundaryTags::ALL_DIRICHLET).unwrap();
        let mut buf = Vec::new();
        let vals = [0.0, 1.0, 2.0, 3.0];
        write_vtk(&mut buf, &mesh, "test", &[VtkField::Point("phi", &vals), VtkField::Cell("eta", &[1.0, 2.0])]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\ntest\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 4 double\n"));
        assert!(text.contains("CELLS 2 8\n3 0 1 2\n3 0 3 2\nCELL_TYPES 2\n5\n5\n"));
        assert!(text.contains("POINT_DATA 4\nSCALARS phi double 1\nLOOKUP_TABLE default\n0\n1\n2\n3\n"));
        assert!(text.contains("CELL_DATA 2\nSCALARS eta double 1"));
        assert!(write_vtk(&mut Vec::new(), &mesh, "x", &[VtkField::Point("bad", &[1.0])]).is_err());
    }
}
