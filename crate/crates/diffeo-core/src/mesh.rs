//! Indexed triangle meshes of planar domains: construction with validation,
//! boundary extraction, signed areas and cotangent edge weights.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Relative threshold below which a triangle counts as degenerate
/// (scaled by the bounding-box area of the mesh).
pub const DEGENERACY_REL_THRESHOLD: f64 = 1e-14;

/// A validated triangle mesh of a planar disk-like domain.
///
/// All triangles are counter-clockwise and the boundary is a single closed
/// loop, stored counter-clockwise starting at the canonical start vertex
/// (lowest y, then lowest x among boundary vertices).
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_loop: Vec<usize>,
}

/// Symmetric per-undirected-edge weights, keyed by (min, max) vertex index.
#[derive(Debug, Clone)]
pub struct EdgeWeightTable {
    weights: BTreeMap<(usize, usize), f64>,
}

impl EdgeWeightTable {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.weights.get(&key(i, j)).copied()
    }

    /// Iterate undirected edges (i < j) in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Copy with every weight clamped to at least `floor`.
    pub fn clamped(&self, floor: f64) -> EdgeWeightTable {
        EdgeWeightTable {
            weights: self
                .weights
                .iter()
                .map(|(&k, &w)| (k, w.max(floor)))
                .collect(),
        }
    }
}

fn key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

fn tri_signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Signed area of triangle `tri_index`; positive for CCW.
pub fn signed_area(mesh: &TriMesh, tri_index: usize) -> f64 {
    let [i, j, k] = mesh.triangles[tri_index];
    tri_signed_area(mesh.vertices[i], mesh.vertices[j], mesh.vertices[k])
}

/// Shoelace area of a closed polygon given by its vertices in order.
pub fn polygon_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Even-odd point-in-polygon test with an absolute tolerance on edge hits.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]], tol: f64) -> bool {
    let n = poly.len();
    // On-boundary check first.
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if dist_point_segment(p, a, b) <= tol {
            return true;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Build a validated mesh from raw vertices and triangles.
///
/// Triangles listed clockwise are flipped; the boundary loop is extracted and
/// rotated to start at the canonical vertex (lowest y, then lowest x),
/// traversed counter-clockwise.
pub fn build_mesh(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<TriMesh> {
    if vertices.len() < 3 {
        return Err(Error::InvalidMesh(format!(
            "need at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("need at least 1 triangle".into()));
    }
    for (t, tri) in triangles.iter().enumerate() {
        for &v in tri {
            if v >= vertices.len() {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {v} out of range"
                )));
            }
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::DegenerateTriangle(t));
        }
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let bbox_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let area_tol = DEGENERACY_REL_THRESHOLD * bbox_area;

    // Orient each triangle CCW, rejecting degenerate ones.
    let mut tris = triangles;
    for (t, tri) in tris.iter_mut().enumerate() {
        let area = tri_signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
        if area.abs() < area_tol {
            return Err(Error::DegenerateTriangle(t));
        }
        if area < 0.0 {
            tri.swap(1, 2);
        }
    }

    // Edge incidence: manifold check and boundary extraction.
    let mut edge_tris: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (t, tri) in tris.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            edge_tris.entry(key(a, b)).or_default().push(t);
        }
    }
    for (&(a, b), ts) in &edge_tris {
        if ts.len() > 2 {
            return Err(Error::NonManifold(a, b));
        }
    }

    // Directed boundary edges follow the CCW triangle orientation, so the
    // resulting loop is CCW around the domain.
    let mut next_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n_boundary_edges = 0usize;
    for tri in &tris {
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            if edge_tris[&key(a, b)].len() == 1 {
                n_boundary_edges += 1;
                if next_of.insert(a, b).is_some() {
                    // Boundary vertex with more than two boundary edges.
                    return Err(Error::NonManifold(a, b));
                }
            }
        }
    }
    if next_of.is_empty() {
        return Err(Error::InvalidMesh("mesh has no boundary".into()));
    }

    let mut remaining = next_of.clone();
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    while let Some((&start, _)) = remaining.iter().next() {
        let mut cycle = vec![start];
        let mut cur = remaining.remove(&start).unwrap();
        while cur != start {
            cycle.push(cur);
            cur = remaining
                .remove(&cur)
                .ok_or_else(|| Error::InvalidMesh("broken boundary cycle".into()))?;
        }
        cycles.push(cycle);
    }
    if cycles.len() != 1 {
        return Err(Error::MultipleBoundaries(cycles.len()));
    }
    let mut cycle = cycles.pop().unwrap();
    debug_assert_eq!(cycle.len(), n_boundary_edges);

    // Disk topology: V - E + F = 1.
    let euler = vertices.len() as i64 - edge_tris.len() as i64 + tris.len() as i64;
    if euler != 1 {
        return Err(Error::NotADisk(euler));
    }

    // Canonical start: lowest y, then lowest x.
    let start_pos = cycle
        .iter()
        .enumerate()
        .min_by(|(_, &a), (_, &b)| {
            let (pa, pb) = (vertices[a], vertices[b]);
            (pa[1], pa[0]).partial_cmp(&(pb[1], pb[0])).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    cycle.rotate_left(start_pos);

    Ok(TriMesh {
        vertices,
        triangles: tris,
        boundary_loop: cycle,
    })
}

impl TriMesh {
    /// Undirected edges (i < j) in deterministic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = std::collections::BTreeSet::new();
        for tri in &self.triangles {
            for e in 0..3 {
                set.insert(key(tri[e], tri[(e + 1) % 3]));
            }
        }
        set.into_iter().collect()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_loop.contains(&v)
    }

    /// Boolean mask over vertices, true on the boundary loop.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for &v in &self.boundary_loop {
            mask[v] = true;
        }
        mask
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }
}

/// Cotangent edge weights: w_ij = 1/2 (cot a_ij + cot b_ij) over the angles
/// opposite edge (i, j); boundary edges see a single angle. Weights may be
/// negative on obtuse triangles.
pub fn cotangent_weight(mesh: &TriMesh) -> EdgeWeightTable {
    let mut weights: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for tri in &mesh.triangles {
        for e in 0..3 {
            let (i, j, opp) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
            let (p, q, o) = (mesh.vertices[i], mesh.vertices[j], mesh.vertices[opp]);
            let u = [p[0] - o[0], p[1] - o[1]];
            let v = [q[0] - o[0], q[1] - o[1]];
            let cross = u[0] * v[1] - u[1] * v[0];
            let dot = u[0] * v[0] + u[1] * v[1];
            let cot = dot / cross.abs();
            *weights.entry(key(i, j)).or_insert(0.0) += 0.5 * cot;
        }
    }
    EdgeWeightTable { weights }
}

/// Write the mesh in ASCII OFF format (z = 0). Byte-stable for equal inputs.
pub fn write_off<W: Write>(mesh: &TriMesh, out: &mut W) -> Result<()> {
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", mesh.vertices.len(), mesh.triangles.len())?;
    for v in &mesh.vertices {
        writeln!(out, "{:e} {:e} 0", v[0], v[1])?;
    }
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn write_off_file(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_off(mesh, &mut f)
}

/// Read an ASCII OFF mesh (z coordinates ignored) and validate it.
pub fn read_off<R: BufRead>(input: R) -> Result<TriMesh> {
    let mut lines = input
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Format("empty OFF file".into()))?;
    if header != "OFF" {
        return Err(Error::Format(format!("expected OFF header, got {header:?}")));
    }
    let counts = lines.next().ok_or_else(|| Error::Format("missing counts line".into()))?;
    let mut it = counts.split_whitespace();
    let nv: usize = parse(it.next(), "vertex count")?;
    let nf: usize = parse(it.next(), "face count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| Error::Format("truncated vertex list".into()))?;
        let mut it = line.split_whitespace();
        let x: f64 = parse(it.next(), "vertex x")?;
        let y: f64 = parse(it.next(), "vertex y")?;
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| Error::Format("truncated face list".into()))?;
        let mut it = line.split_whitespace();
        let n: usize = parse(it.next(), "face arity")?;
        if n != 3 {
            return Err(Error::Format(format!("only triangle faces supported, got arity {n}")));
        }
        let i: usize = parse(it.next(), "face index")?;
        let j: usize = parse(it.next(), "face index")?;
        let k: usize = parse(it.next(), "face index")?;
        triangles.push([i, j, k]);
    }
    build_mesh(vertices, triangles)
}

pub fn read_off_file(path: &Path) -> Result<TriMesh> {
    read_off(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Format(format!("unparsable {what}")))
}
