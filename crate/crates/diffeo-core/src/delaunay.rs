//! Triangulation of simple polygons: constrained Delaunay with refinement to
//! a target edge length, producing validated `TriMesh`es.

use std::collections::{BTreeMap, HashSet, VecDeque};

use spade::handles::{FixedFaceHandle, InnerTag};
use spade::{ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use crate::error::{Error, Result};
use crate::harmonic::SharedDomain2D;
use crate::mesh::{build_mesh, TriMesh};

type Cdt = ConstrainedDelaunayTriangulation<Point2<f64>>;

/// Mesh the interior of a simple CCW polygon with target edge length `h`.
///
/// Polygon edges are pre-split at spacing `h` and kept as constraint chains,
/// so the mesh boundary follows the polygon exactly; Delaunay refinement
/// fills the interior with triangles of roughly area sqrt(3)/4 h^2.
pub fn mesh_polygon(polygon: &[[f64; 2]], h: f64) -> Result<TriMesh> {
    mesh_with_anchors(polygon, h, &[])
}

/// Like [`mesh_polygon`], but forces boundary vertices at the arc fractions
/// that a harmonic map onto `shared` sends to the rectangle corners. Without
/// them a boundary edge can straddle a corner, and its image chord cuts that
/// corner off the mapped domain, leaving nearby shared-grid points outside
/// the mesh.
pub fn mesh_polygon_anchored(
    polygon: &[[f64; 2]],
    h: f64,
    shared: &SharedDomain2D,
) -> Result<TriMesh> {
    mesh_with_anchors(polygon, h, &shared.corner_fractions())
}

fn mesh_with_anchors(polygon: &[[f64; 2]], h: f64, fractions: &[f64]) -> Result<TriMesh> {
    if polygon.len() < 3 {
        return Err(Error::InvalidMesh(format!(
            "polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "target edge length must be positive, got {h}"
        )));
    }

    // Arc-length positions (from the canonical start vertex: lowest y, then
    // lowest x) at which a boundary vertex must exist. The minimum over the
    // boundary is always attained at a polygon corner, so the canonical start
    // of the final mesh coincides with this corner.
    let n = polygon.len();
    let edge_len: Vec<f64> = (0..n)
        .map(|i| {
            let a = polygon[i];
            let b = polygon[(i + 1) % n];
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .collect();
    let perim: f64 = edge_len.iter().sum();
    if perim < 1e-14 {
        return Err(Error::ZeroPerimeter);
    }
    let start = (0..n)
        .min_by(|&a, &b| {
            (polygon[a][1], polygon[a][0])
                .partial_cmp(&(polygon[b][1], polygon[b][0]))
                .unwrap()
        })
        .unwrap();
    let mut anchors: Vec<f64> = fractions.iter().map(|f| f * perim).collect();
    anchors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let anchor_tol = 1e-9 * perim;

    // Split each polygon edge into segments no longer than h, breaking
    // additionally at the anchor arc positions.
    let mut ring: Vec<[f64; 2]> = Vec::new();
    let mut arc = 0.0;
    for k in 0..n {
        let i = (start + k) % n;
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        let len = edge_len[i];
        let mut ts = vec![0.0, 1.0];
        for &s in &anchors {
            let t = (s - arc) / len;
            if t * len > anchor_tol && (1.0 - t) * len > anchor_tol {
                ts.push(t);
            }
        }
        ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for w in ts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let segs = ((t1 - t0) * len / h).ceil().max(1.0) as usize;
            for s in 0..segs {
                let t = t0 + (t1 - t0) * s as f64 / segs as f64;
                ring.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        arc += len;
    }

    let mut cdt = Cdt::new();
    let handles: Vec<_> = ring
        .iter()
        .map(|p| cdt.insert(Point2::new(p[0], p[1])))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidMesh(format!("polygon insertion failed: {e:?}")))?;
    let m = handles.len();
    for i in 0..m {
        cdt.add_constraint(handles[i], handles[(i + 1) % m]);
    }

    let max_area = 3.0f64.sqrt() / 4.0 * h * h;
    // spade silently caps refinement at 10x the initial vertex count, which
    // binds long before the area target on fine meshes; budget explicitly.
    let area = crate::mesh::polygon_area(polygon).abs();
    let budget = (8.0 * area / max_area) as usize + 10 * ring.len() + 1000;
    let params = RefinementParameters::<f64>::new()
        .exclude_outer_faces(true)
        .with_max_allowed_area(max_area)
        .with_max_additional_vertices(budget);
    cdt.refine(params);

    // Compact the vertex set to the faces we keep.
    let outside = outside_faces(&cdt);
    let mut index_of = vec![usize::MAX; cdt.num_vertices()];
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    for face in cdt.inner_faces() {
        if outside.contains(&face.fix()) {
            continue;
        }
        let mut tri = [0usize; 3];
        for (slot, v) in face.vertices().iter().enumerate() {
            let vi = v.fix().index();
            if index_of[vi] == usize::MAX {
                index_of[vi] = vertices.len();
                let p = v.position();
                vertices.push([p.x, p.y]);
            }
            tri[slot] = index_of[vi];
        }
        triangles.push(tri);
    }
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("refinement left no interior faces".into()));
    }

    // Boundary edges (constraints) in compacted indices.
    let mut boundary_edges: HashSet<(usize, usize)> = HashSet::new();
    for edge in cdt.undirected_edges() {
        if edge.is_constraint_edge() {
            let [a, b] = edge.vertices();
            let (ia, ib) = (index_of[a.fix().index()], index_of[b.fix().index()]);
            if ia != usize::MAX && ib != usize::MAX {
                boundary_edges.insert((ia.min(ib), ia.max(ib)));
            }
        }
    }
    let mut is_boundary = vec![false; vertices.len()];
    for &(a, b) in &boundary_edges {
        is_boundary[a] = true;
        is_boundary[b] = true;
    }
    split_chords(&mut vertices, &mut triangles, &mut is_boundary, &boundary_edges)?;
    build_mesh(vertices, triangles)
}

/// Remove every "chord": an interior edge whose two endpoints both lie on the
/// domain boundary. Under a boundary-fixing map whose image boundary has
/// straight stretches, a chord's triangle can collapse onto a segment, and an
/// interior vertex whose whole neighborhood maps onto one straight stretch
/// collapses with it. With no chords, every triangle keeps an interior vertex
/// and every interior vertex keeps an interior neighbor (its link would
/// otherwise be a closed fan of boundary edges). Splitting a chord at its
/// midpoint introduces no new chords, so this terminates.
fn split_chords(
    vertices: &mut Vec<[f64; 2]>,
    triangles: &mut Vec<[usize; 3]>,
    is_boundary: &mut Vec<bool>,
    boundary_edges: &HashSet<(usize, usize)>,
) -> Result<()> {
    for _ in 0..vertices.len() * 16 {
        let mut adj: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                adj.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let chord = adj.iter().find(|((a, b), _)| {
            is_boundary[*a] && is_boundary[*b] && !boundary_edges.contains(&(*a, *b))
        });
        let Some(((u, v), faces)) = chord else {
            return Ok(());
        };
        let (u, v) = (*u, *v);
        if faces.len() != 2 {
            return Err(Error::NonManifold(u, v));
        }
        let faces = faces.clone();
        let mid = [
            0.5 * (vertices[u][0] + vertices[v][0]),
            0.5 * (vertices[u][1] + vertices[v][1]),
        ];
        let mi = vertices.len();
        vertices.push(mid);
        is_boundary.push(false);
        for t in faces {
            let tri = triangles[t];
            let k = (0..3)
                .find(|&k| {
                    (tri[k] == u && tri[(k + 1) % 3] == v)
                        || (tri[k] == v && tri[(k + 1) % 3] == u)
                })
                .expect("face lost its chord edge");
            triangles[t] = [tri[k], mi, tri[(k + 2) % 3]];
            triangles.push([mi, tri[(k + 1) % 3], tri[(k + 2) % 3]]);
        }
    }
    Err(Error::InvalidMesh("chord splitting failed to terminate".into()))
}

/// Faces outside the constraint loop, found by flooding inward from the
/// convex hull without ever crossing a constraint edge. Exact: relies only
/// on topology, not on coordinate tolerances.
fn outside_faces(cdt: &Cdt) -> HashSet<FixedFaceHandle<InnerTag>> {
    let mut outside = HashSet::new();
    let mut queue: VecDeque<FixedFaceHandle<InnerTag>> = VecDeque::new();
    for hull_edge in cdt.convex_hull() {
        // convex_hull yields edges whose left side is the outer face.
        if hull_edge.is_constraint_edge() {
            continue;
        }
        if let Some(inner) = hull_edge.rev().face().as_inner() {
            if outside.insert(inner.fix()) {
                queue.push_back(inner.fix());
            }
        }
    }
    while let Some(f) = queue.pop_front() {
        let face = cdt.face(f);
        for edge in face.adjacent_edges() {
            if edge.is_constraint_edge() {
                continue;
            }
            if let Some(nb) = edge.rev().face().as_inner() {
                if outside.insert(nb.fix()) {
                    queue.push_back(nb.fix());
                }
            }
        }
    }
    outside
}
