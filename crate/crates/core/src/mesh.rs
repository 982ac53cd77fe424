//! Simplicial meshes of boxes: structured triangle/tetrahedron generation,
//! boundary facet extraction with outward normals, and a line-oriented
//! text format.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("unsupported spatial dimension {0} (must be 2 or 3)")]
    BadDim(usize),
    #[error("box lengths must be positive, got {0}")]
    BadLength(f64),
    #[error("subdivisions must be >= 1 per axis")]
    BadSubdivision,
    #[error("cell {0} has non-positive measure")]
    DegenerateCell(usize),
    #[error("facet {0} is not contained in exactly one cell")]
    OrphanFacet(usize),
    #[error("malformed mesh text: {0}")]
    Parse(String),
}

/// A boundary facet: `dim` vertex indices, the adjacent cell, the outward
/// unit normal and the facet measure (length in 2-d, area in 3-d).
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub vertices: Vec<usize>,
    pub cell: usize,
    pub normal: Vec<f64>,
    pub measure: f64,
}

/// A simplicial mesh with flat coordinate storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    coords: Vec<f64>,
    pub cells: Vec<Vec<usize>>,
    pub facets: Vec<Facet>,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn det(cols: &[Vec<f64>]) -> f64 {
    match cols.len() {
        2 => cols[0][0] * cols[1][1] - cols[0][1] * cols[1][0],
        3 => {
            cols[0][0] * (cols[1][1] * cols[2][2] - cols[1][2] * cols[2][1])
                - cols[1][0] * (cols[0][1] * cols[2][2] - cols[0][2] * cols[2][1])
                + cols[2][0] * (cols[0][1] * cols[1][2] - cols[0][2] * cols[1][1])
        }
        n => unreachable!("determinant of size {n}"),
    }
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Signed simplex measure from the vertex order (area or volume).
    pub fn cell_signed_measure(&self, c: usize) -> f64 {
        let cell = &self.cells[c];
        let x0 = self.vertex(cell[0]);
        let cols: Vec<Vec<f64>> =
            (1..=self.dim).map(|k| sub(self.vertex(cell[k]), x0)).collect();
        let factorial = if self.dim == 2 { 2.0 } else { 6.0 };
        det(&cols) / factorial
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        self.cell_signed_measure(c).abs()
    }

    pub fn cell_centroid(&self, c: usize) -> Vec<f64> {
        let cell = &self.cells[c];
        let mut x = vec![0.0; self.dim];
        for &v in cell {
            for (xi, vi) in x.iter_mut().zip(self.vertex(v)) {
                *xi += vi;
            }
        }
        x.iter().map(|v| v / cell.len() as f64).collect()
    }

    pub fn facet_centroid(&self, f: &Facet) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &v in &f.vertices {
            for (xi, vi) in x.iter_mut().zip(self.vertex(v)) {
                *xi += vi;
            }
        }
        x.iter().map(|v| v / f.vertices.len() as f64).collect()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    pub fn boundary_measure(&self) -> f64 {
        self.facets.iter().map(|f| f.measure).sum()
    }

    /// Checks the structural invariants: positive cell measures, unit
    /// outward facet normals.
    pub fn validate(&self) -> Result<(), MeshError> {
        for c in 0..self.n_cells() {
            if self.cell_measure(c) <= 0.0 {
                return Err(MeshError::DegenerateCell(c));
            }
        }
        for (i, f) in self.facets.iter().enumerate() {
            let n2: f64 = f.normal.iter().map(|x| x * x).sum();
            if (n2.sqrt() - 1.0).abs() > 1e-12 || f.measure <= 0.0 {
                return Err(MeshError::OrphanFacet(i));
            }
            let fc = self.facet_centroid(f);
            let cc = self.cell_centroid(f.cell);
            let outward: f64 =
                f.normal.iter().zip(sub(&fc, &cc)).map(|(n, d)| n * d).sum();
            if outward <= 0.0 {
                return Err(MeshError::OrphanFacet(i));
            }
        }
        Ok(())
    }

    /// Measure and outward unit normal of a cell facet given its vertices
    /// and the adjacent cell.
    fn facet_geometry(&self, verts: &[usize], cell: usize) -> (Vec<f64>, f64) {
        let (normal, measure) = match self.dim {
            2 => {
                let e = sub(self.vertex(verts[1]), self.vertex(verts[0]));
                let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
                (vec![e[1] / len, -e[0] / len], len)
            }
            _ => {
                let e1 = sub(self.vertex(verts[1]), self.vertex(verts[0]));
                let e2 = sub(self.vertex(verts[2]), self.vertex(verts[0]));
                let n = vec![
                    e1[1] * e2[2] - e1[2] * e2[1],
                    e1[2] * e2[0] - e1[0] * e2[2],
                    e1[0] * e2[1] - e1[1] * e2[0],
                ];
                let len: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
                (n.iter().map(|x| x / len).collect(), 0.5 * len)
            }
        };
        // orient away from the cell centroid
        let mut normal = normal;
        let fc = {
            let mut x = vec![0.0; self.dim];
            for &v in verts {
                for (xi, vi) in x.iter_mut().zip(self.vertex(v)) {
                    *xi += vi;
                }
            }
            x.iter().map(|v| v / verts.len() as f64).collect::<Vec<_>>()
        };
        let cc = self.cell_centroid(cell);
        let outward: f64 = normal.iter().zip(sub(&fc, &cc)).map(|(n, d)| n * d).sum();
        if outward < 0.0 {
            for n in &mut normal {
                *n = -*n;
            }
        }
        (normal, measure)
    }

    /// Rebuilds facet adjacency and geometry from vertex indices alone.
    fn finalize_facets(&mut self, facet_vertices: Vec<Vec<usize>>) -> Result<(), MeshError> {
        use std::collections::HashMap;
        let mut by_key: HashMap<Vec<usize>, usize> = HashMap::new();
        for (c, cell) in self.cells.iter().enumerate() {
            for skip in 0..cell.len() {
                let mut key: Vec<usize> = cell
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .map(|(_, &v)| v)
                    .collect();
                key.sort_unstable();
                by_key.insert(key, c);
            }
        }
        let mut facets = Vec::with_capacity(facet_vertices.len());
        for (i, verts) in facet_vertices.into_iter().enumerate() {
            let mut key = verts.clone();
            key.sort_unstable();
            let &cell = by_key.get(&key).ok_or(MeshError::OrphanFacet(i))?;
            let (normal, measure) = self.facet_geometry(&verts, cell);
            facets.push(Facet { vertices: verts, cell, normal, measure });
        }
        self.facets = facets;
        Ok(())
    }
}

/// Structured simplicial mesh of an axis-aligned box: two triangles per
/// quad in 2-d, six tetrahedra per hex in 3-d, deterministic ordering.
pub fn generate_box_mesh(
    dim: usize,
    lengths: &[f64],
    subdivisions: &[usize],
) -> Result<Mesh, MeshError> {
    if dim != 2 && dim != 3 {
        return Err(MeshError::BadDim(dim));
    }
    if lengths.len() != dim || subdivisions.len() != dim {
        return Err(MeshError::BadDim(dim));
    }
    if let Some(&l) = lengths.iter().find(|l| **l <= 0.0) {
        return Err(MeshError::BadLength(l));
    }
    if subdivisions.iter().any(|&n| n == 0) {
        return Err(MeshError::BadSubdivision);
    }

    let n = subdivisions;
    let mut coords = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();

    if dim == 2 {
        let (nx, ny) = (n[0], n[1]);
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push(lengths[0] * i as f64 / nx as f64);
                coords.push(lengths[1] * j as f64 / ny as f64);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) =
                    (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                cells.push(vec![v00, v10, v11]);
                cells.push(vec![v00, v11, v01]);
            }
        }
    } else {
        let (nx, ny, nz) = (n[0], n[1], n[2]);
        let vid = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    coords.push(lengths[0] * i as f64 / nx as f64);
                    coords.push(lengths[1] * j as f64 / ny as f64);
                    coords.push(lengths[2] * k as f64 / nz as f64);
                }
            }
        }
        // Kuhn triangulation: one tetrahedron per permutation of the axes
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut verts = vec![vid(c[0], c[1], c[2])];
                        for &axis in &perm {
                            c[axis] += 1;
                            verts.push(vid(c[0], c[1], c[2]));
                        }
                        cells.push(verts);
                    }
                }
            }
        }
    }

    let mut mesh = Mesh { dim, coords, cells, facets: Vec::new() };
    // fix orientation so every signed measure is positive
    for c in 0..mesh.n_cells() {
        if mesh.cell_signed_measure(c) < 0.0 {
            mesh.cells[c].swap(0, 1);
        }
    }

    // boundary facets: cell faces that occur exactly once
    use std::collections::HashMap;
    let mut counts: HashMap<Vec<usize>, (usize, Vec<usize>)> = HashMap::new();
    for cell in &mesh.cells {
        for skip in 0..cell.len() {
            let verts: Vec<usize> = cell
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != skip)
                .map(|(_, &v)| v)
                .collect();
            let mut key = verts.clone();
            key.sort_unstable();
            counts.entry(key).and_modify(|e| e.0 += 1).or_insert((1, verts));
        }
    }
    let mut facet_vertices: Vec<Vec<usize>> = counts
        .into_iter()
        .filter(|(_, (count, _))| *count == 1)
        .map(|(_, (_, verts))| verts)
        .collect();
    facet_vertices.sort_by_key(|v| {
        let mut s = v.clone();
        s.sort_unstable();
        s
    });
    mesh.finalize_facets(facet_vertices)?;
    mesh.validate()?;
    Ok(mesh)
}

/// Serializes in the line-oriented text format:
/// header `dim nv nc nf`, then vertex, cell and facet lines.
pub fn write_text(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {}",
        mesh.dim,
        mesh.n_vertices(),
        mesh.n_cells(),
        mesh.facets.len()
    );
    for i in 0..mesh.n_vertices() {
        let line: Vec<String> = mesh.vertex(i).iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    for cell in &mesh.cells {
        let line: Vec<String> = cell.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    for f in &mesh.facets {
        let line: Vec<String> = f.vertices.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn read_text(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MeshError::Parse("empty input".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad header: {header}"))))
        .collect::<Result<_, _>>()?;
    let [dim, nv, nc, nf] = head[..] else {
        return Err(MeshError::Parse(format!("bad header: {header}")));
    };
    if dim != 2 && dim != 3 {
        return Err(MeshError::BadDim(dim));
    }

    let mut coords = Vec::with_capacity(nv * dim);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing vertex line".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad vertex: {line}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != dim {
            return Err(MeshError::Parse(format!("bad vertex arity: {line}")));
        }
        coords.extend(vals);
    }
    let mut read_indices = |count: usize, arity: usize, what: &str| -> Result<Vec<Vec<usize>>, MeshError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| MeshError::Parse(format!("missing {what} line")))?;
            let vals: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| MeshError::Parse(format!("bad {what}: {line}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != arity || vals.iter().any(|&v| v >= nv) {
                return Err(MeshError::Parse(format!("bad {what} line: {line}")));
            }
            out.push(vals);
        }
        Ok(out)
    };
    let cells = read_indices(nc, dim + 1, "cell")?;
    let facet_vertices = read_indices(nf, dim, "facet")?;

    let mut mesh = Mesh { dim, coords, cells, facets: Vec::new() };
    mesh.finalize_facets(facet_vertices)?;
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_single_quad() {
        let m = generate_box_mesh(2, &[1.0, 1.0], &[1, 1]).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.facets.len(), 4);
        assert!((m.total_volume() - 1.0).abs() <= 1e-14);
        assert!((m.boundary_measure() - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn unit_cube_single_hex() {
        let m = generate_box_mesh(3, &[1.0, 1.0, 1.0], &[1, 1, 1]).unwrap();
        assert_eq!(m.n_cells(), 6);
        assert!((m.total_volume() - 1.0).abs() <= 1e-12);
        assert!((m.boundary_measure() - 6.0).abs() <= 1e-10);
    }

    #[test]
    fn rectangle_measures() {
        let m = generate_box_mesh(2, &[2.0, 1.0], &[4, 3]).unwrap();
        assert_eq!(m.n_vertices(), 5 * 4);
        assert_eq!(m.n_cells(), 24);
        assert!((m.total_volume() - 2.0).abs() <= 1e-12);
        assert!((m.boundary_measure() - 6.0).abs() <= 1e-10);
    }

    #[test]
    fn box3d_measures() {
        let m = generate_box_mesh(3, &[1.0, 2.0, 0.5], &[2, 2, 1]).unwrap();
        assert_eq!(m.n_cells(), 6 * 4);
        assert!((m.total_volume() - 1.0).abs() <= 1e-12);
        // 2*(1*2 + 1*0.5 + 2*0.5) = 7
        assert!((m.boundary_measure() - 7.0).abs() <= 1e-10);
    }

    #[test]
    fn invariants_hold() {
        for m in [
            generate_box_mesh(2, &[1.5, 0.7], &[3, 2]).unwrap(),
            generate_box_mesh(3, &[1.0, 1.0, 1.0], &[2, 1, 2]).unwrap(),
        ] {
            m.validate().unwrap();
            for c in 0..m.n_cells() {
                assert!(m.cell_signed_measure(c) > 0.0);
            }
            for f in &m.facets {
                let fc = m.facet_centroid(f);
                let cc = m.cell_centroid(f.cell);
                let dot: f64 =
                    f.normal.iter().zip(fc.iter().zip(&cc)).map(|(n, (a, b))| n * (a - b)).sum();
                assert!(dot > 0.0, "normal not outward");
            }
        }
    }

    #[test]
    fn axis_aligned_normals() {
        let m = generate_box_mesh(2, &[1.0, 1.0], &[2, 2]).unwrap();
        for f in &m.facets {
            let c = m.facet_centroid(f);
            let expect = if c[0] == 0.0 {
                [-1.0, 0.0]
            } else if c[0] == 1.0 {
                [1.0, 0.0]
            } else if c[1] == 0.0 {
                [0.0, -1.0]
            } else {
                [0.0, 1.0]
            };
            assert!(f.normal.iter().zip(&expect).all(|(a, b)| (a - b).abs() <= 1e-14));
        }
    }

    #[test]
    fn text_roundtrip() {
        for m in [
            generate_box_mesh(2, &[1.0, 2.0], &[2, 3]).unwrap(),
            generate_box_mesh(3, &[1.0, 1.0, 1.0], &[1, 2, 1]).unwrap(),
        ] {
            let text = write_text(&m);
            let back = read_text(&text).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(generate_box_mesh(4, &[1.0; 4], &[1; 4]).is_err());
        assert!(generate_box_mesh(2, &[0.0, 1.0], &[1, 1]).is_err());
        assert!(generate_box_mesh(2, &[1.0, 1.0], &[0, 1]).is_err());
        assert!(read_text("").is_err());
        assert!(read_text("2 1 0 0\n0.0 0.0\n").is_ok());
        assert!(read_text("2 1 0 0\n0.0\n").is_err());
    }
}
