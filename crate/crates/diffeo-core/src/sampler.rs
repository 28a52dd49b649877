//! Uniform shared-domain sampling: grid construction, point location in the
//! mapped mesh, and barycentric pull-back of coordinates and field values
//! into the physics domain.

use crate::error::{Error, Result};
use crate::harmonic::{MappedMesh, SharedDomain2D};

/// Relative snapping tolerance for points just outside the mapped mesh,
/// scaled by the shared-domain diameter.
pub const OUTSIDE_TOL_REL: f64 = 1e-9;

/// Uniform grid over the shared domain plus everything pulled back from one
/// mapped physics domain. Tensors are row-major with the x index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub resolution: (usize, usize),
    pub shared_points: Vec<[f64; 2]>,
    pub physics_points: Vec<[f64; 2]>,
    pub param_field: Vec<f64>,
    pub solution_field: Option<Vec<f64>>,
}

/// Vertex-centered lattice including the boundary:
/// point (i, j) = (x_min + i dx, y_min + j dy) with dx = width/(R_x - 1).
pub fn uniform_grid(shared: &SharedDomain2D, resolution: (usize, usize)) -> Vec<[f64; 2]> {
    let (rx, ry) = resolution;
    assert!(rx >= 2 && ry >= 2, "resolution must be at least 2x2");
    let dx = shared.width() / (rx - 1) as f64;
    let dy = shared.height() / (ry - 1) as f64;
    let mut pts = Vec::with_capacity(rx * ry);
    for j in 0..ry {
        for i in 0..rx {
            pts.push([shared.x_min + i as f64 * dx, shared.y_min + j as f64 * dy]);
        }
    }
    pts
}

/// Barycentric weights of `p` in the (shared-coordinate) triangle (a, b, c).
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 3] {
    let alpha = (-(p[0] - b[0]) * (c[1] - b[1]) + (p[1] - b[1]) * (c[0] - b[0]))
        / (-(a[0] - b[0]) * (c[1] - b[1]) + (a[1] - b[1]) * (c[0] - b[0]));
    let beta = (-(p[0] - c[0]) * (a[1] - c[1]) + (p[1] - c[1]) * (a[0] - c[0]))
        / (-(b[0] - c[0]) * (a[1] - c[1]) + (b[1] - c[1]) * (a[0] - c[0]));
    [alpha, beta, 1.0 - alpha - beta]
}

fn tri_corners(mapped: &MappedMesh, t: usize) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let [i, j, k] = mapped.mesh.triangles[t];
    (
        mapped.shared_coords[i],
        mapped.shared_coords[j],
        mapped.shared_coords[k],
    )
}

/// Uniform bucket grid over mapped triangles for O(1) expected point location.
pub struct TriLocator<'a> {
    mapped: &'a MappedMesh,
    lo: [f64; 2],
    inv_cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
    snap_tol: f64,
}

impl<'a> TriLocator<'a> {
    pub fn new(mapped: &'a MappedMesh, shared: &SharedDomain2D) -> Self {
        let coords = &mapped.shared_coords;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in coords {
            for d in 0..2 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        // Bucket size near the mean mapped edge length.
        let mut sum = 0.0;
        let mut count = 0usize;
        for tri in &mapped.mesh.triangles {
            for e in 0..3 {
                let a = coords[tri[e]];
                let b = coords[tri[(e + 1) % 3]];
                sum += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                count += 1;
            }
        }
        let cell = (sum / count.max(1) as f64).max(1e-12);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let inv_cell = 1.0 / cell;
        for (t, tri) in mapped.mesh.triangles.iter().enumerate() {
            let (mut tlo, mut thi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in tri {
                for d in 0..2 {
                    tlo[d] = tlo[d].min(coords[v][d]);
                    thi[d] = thi[d].max(coords[v][d]);
                }
            }
            let i0 = (((tlo[0] - lo[0]) * inv_cell) as usize).min(nx - 1);
            let i1 = (((thi[0] - lo[0]) * inv_cell) as usize).min(nx - 1);
            let j0 = (((tlo[1] - lo[1]) * inv_cell) as usize).min(ny - 1);
            let j1 = (((thi[1] - lo[1]) * inv_cell) as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        TriLocator {
            mapped,
            lo,
            inv_cell,
            nx,
            ny,
            buckets,
            snap_tol: OUTSIDE_TOL_REL * shared.diameter(),
        }
    }

    /// Containing triangle and barycentric weights; weights of points within
    /// tolerance of an edge or vertex are clipped to be nonnegative.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, [f64; 3])> {
        const BARY_TOL: f64 = 1e-12;
        let i = (((p[0] - self.lo[0]) * self.inv_cell).max(0.0) as usize).min(self.nx - 1);
        let j = (((p[1] - self.lo[1]) * self.inv_cell).max(0.0) as usize).min(self.ny - 1);
        for &t in &self.buckets[j * self.nx + i] {
            let (a, b, c) = tri_corners(self.mapped, t);
            let w = barycentric(p, a, b, c);
            if w.iter().all(|&x| x >= -BARY_TOL) {
                return Ok((t, clip(w)));
            }
        }
        // Brute-force fallback: nearest triangle by Euclidean distance, with
        // the snapping tolerance of the module contract.
        let mut best: Option<(usize, f64, [f64; 3])> = None;
        for t in 0..self.mapped.mesh.triangles.len() {
            let (a, b, c) = tri_corners(self.mapped, t);
            let w = barycentric(p, a, b, c);
            if w.iter().all(|&x| x >= -BARY_TOL) {
                return Ok((t, clip(w)));
            }
            let d = dist_point_triangle(p, a, b, c);
            if best.map_or(true, |(_, bd, _)| d < bd) {
                best = Some((t, d, w));
            }
        }
        match best {
            Some((t, d, w)) if d <= self.snap_tol => Ok((t, clip(w))),
            _ => Err(Error::OutsideMesh(p[0], p[1])),
        }
    }
}

fn clip(w: [f64; 3]) -> [f64; 3] {
    let c = [w[0].max(0.0), w[1].max(0.0), w[2].max(0.0)];
    let s = c[0] + c[1] + c[2];
    [c[0] / s, c[1] / s, c[2] / s]
}

fn dist_point_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let w = barycentric(p, a, b, c);
    if w.iter().all(|&x| x >= 0.0) {
        return 0.0;
    }
    [(a, b), (b, c), (c, a)]
        .into_iter()
        .map(|(u, v)| dist_point_segment(p, u, v))
        .fold(f64::INFINITY, f64::min)
}

fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
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

/// One-shot location of a single shared-domain point.
pub fn locate_and_weights(
    mapped: &MappedMesh,
    shared: &SharedDomain2D,
    point: [f64; 2],
) -> Result<(usize, [f64; 3])> {
    TriLocator::new(mapped, shared).locate(point)
}

/// Per-grid-point location results, reusable across field samplings.
#[derive(Debug, Clone)]
pub struct GridWeights {
    pub tris: Vec<usize>,
    pub bary: Vec<[f64; 3]>,
}

pub fn locate_grid(
    mapped: &MappedMesh,
    shared: &SharedDomain2D,
    shared_points: &[[f64; 2]],
) -> Result<GridWeights> {
    let locator = TriLocator::new(mapped, shared);
    let mut tris = Vec::with_capacity(shared_points.len());
    let mut bary = Vec::with_capacity(shared_points.len());
    for &p in shared_points {
        let (t, w) = locator.locate(p)?;
        tris.push(t);
        bary.push(w);
    }
    Ok(GridWeights { tris, bary })
}

/// Pull every grid point back to the physics domain: the barycentric
/// combination of the containing triangle's physics vertices.
pub fn pull_back(mapped: &MappedMesh, weights: &GridWeights) -> Vec<[f64; 2]> {
    weights
        .tris
        .iter()
        .zip(&weights.bary)
        .map(|(&t, w)| {
            let [i, j, k] = mapped.mesh.triangles[t];
            let (pi, pj, pk) = (
                mapped.mesh.vertices[i],
                mapped.mesh.vertices[j],
                mapped.mesh.vertices[k],
            );
            [
                w[0] * pi[0] + w[1] * pj[0] + w[2] * pk[0],
                w[0] * pi[1] + w[1] * pj[1] + w[2] * pk[1],
            ]
        })
        .collect()
}

/// Convenience wrapper: locate the full grid and pull it back.
pub fn pull_back_grid(
    mapped: &MappedMesh,
    shared: &SharedDomain2D,
    shared_points: &[[f64; 2]],
) -> Result<Vec<[f64; 2]>> {
    Ok(pull_back(mapped, &locate_grid(mapped, shared, shared_points)?))
}

/// Sample an analytic field at the pulled-back physics points.
pub fn sample_fn_field<F: Fn([f64; 2]) -> f64>(physics_points: &[[f64; 2]], f: F) -> Vec<f64> {
    physics_points.iter().map(|&p| f(p)).collect()
}

/// Sample a per-vertex field (e.g. the FEM solution) with the same
/// barycentric weights used for the coordinate pull-back.
pub fn sample_vertex_field(
    mapped: &MappedMesh,
    weights: &GridWeights,
    values: &[f64],
) -> Vec<f64> {
    weights
        .tris
        .iter()
        .zip(&weights.bary)
        .map(|(&t, w)| {
            let [i, j, k] = mapped.mesh.triangles[t];
            w[0] * values[i] + w[1] * values[j] + w[2] * values[k]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::{mesh_polygon, mesh_polygon_anchored};
    use crate::harmonic::{harmonic_map, WeightMode};
    use rand::{Rng, SeedableRng};

    fn identity_map(h: f64) -> MappedMesh {
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mesh = mesh_polygon(&poly, h).unwrap();
        let shared_coords = mesh.vertices.clone();
        MappedMesh { mesh, shared_coords }
    }

    #[test]
    fn uniform_grid_examples() {
        let s = SharedDomain2D::unit_square();
        let g = uniform_grid(&s, (2, 2));
        assert_eq!(g, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let g3 = uniform_grid(&s, (3, 3));
        assert_eq!(g3[4], [0.5, 0.5]);
        let g128 = uniform_grid(&s, (128, 128));
        assert_eq!(g128[1][0], 1.0 / 127.0);
        assert_eq!(g128.len(), 128 * 128);
    }

    #[test]
    fn vertex_and_centroid_weights() {
        let mapped = identity_map(0.3);
        let shared = SharedDomain2D::unit_square();
        let loc = TriLocator::new(&mapped, &shared);
        // A mapped vertex gets weight 1 on itself.
        let v = mapped.mesh.triangles[0][0];
        let (t, w) = loc.locate(mapped.shared_coords[v]).unwrap();
        let slot = mapped.mesh.triangles[t].iter().position(|&x| x == v).unwrap();
        assert!((w[slot] - 1.0).abs() < 1e-12);
        // A centroid gets (1/3, 1/3, 1/3).
        let [i, j, k] = mapped.mesh.triangles[0];
        let c = [
            (mapped.shared_coords[i][0] + mapped.shared_coords[j][0] + mapped.shared_coords[k][0])
                / 3.0,
            (mapped.shared_coords[i][1] + mapped.shared_coords[j][1] + mapped.shared_coords[k][1])
                / 3.0,
        ];
        let (t, w) = loc.locate(c).unwrap();
        if t == 0 {
            for x in w {
                assert!((x - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        // Partition of unity everywhere.
        assert!((w[0] + w[1] + w[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn locator_matches_brute_force_oracle() {
        let poly = [[0.0, 0.0], [10.0, 0.0], [9.0, 5.0], [5.0, 10.0], [1.0, 5.0]];
        let mesh = mesh_polygon(&poly, 0.8).unwrap();
        let shared = SharedDomain2D::unit_square();
        let mapped = harmonic_map(&mesh, &shared, WeightMode::Clamped).unwrap();
        let loc = TriLocator::new(&mapped, &shared);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 1000 {
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            // Brute-force oracle: scan every triangle.
            let mut oracle: Option<usize> = None;
            for t in 0..mapped.mesh.triangles.len() {
                let (a, b, c) = tri_corners(&mapped, t);
                let w = barycentric(p, a, b, c);
                if w.iter().all(|&x| x >= 1e-9) {
                    oracle = Some(t);
                    break;
                }
            }
            let Some(expect) = oracle else { continue };
            let (t, w) = loc.locate(p).unwrap();
            // Points strictly inside one triangle must match it exactly.
            assert_eq!(t, expect);
            assert!((w[0] + w[1] + w[2] - 1.0).abs() < 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn identity_pullback_is_exact() {
        let mapped = identity_map(0.23);
        let shared = SharedDomain2D::unit_square();
        let grid = uniform_grid(&shared, (17, 17));
        let phys = pull_back_grid(&mapped, &shared, &grid).unwrap();
        for (p, q) in grid.iter().zip(&phys) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_pullback_is_exact() {
        // Physics domain = 2 x shared domain; barycentric interpolation
        // reproduces linear maps exactly.
        let mut mapped = identity_map(0.23);
        for v in &mut mapped.mesh.vertices {
            v[0] *= 2.0;
            v[1] *= 2.0;
        }
        let shared = SharedDomain2D::unit_square();
        let grid = uniform_grid(&shared, (13, 13));
        let phys = pull_back_grid(&mapped, &shared, &grid).unwrap();
        for (p, q) in grid.iter().zip(&phys) {
            assert!((2.0 * p[0] - q[0]).abs() < 1e-10 && (2.0 * p[1] - q[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn field_sampling_linear_precision() {
        let poly = [[0.0, 0.0], [10.0, 0.0], [9.0, 5.0], [5.0, 10.0], [1.0, 5.0]];
        let shared = SharedDomain2D::unit_square();
        let mesh = mesh_polygon_anchored(&poly, 0.8, &shared).unwrap();
        let mapped = harmonic_map(&mesh, &shared, WeightMode::Clamped).unwrap();
        let grid = uniform_grid(&shared, (33, 33));
        let gw = locate_grid(&mapped, &shared, &grid).unwrap();
        let phys = pull_back(&mapped, &gw);
        let f = |p: [f64; 2]| 2.0 * p[0] + 3.0 * p[1] - 1.0;
        let per_vertex: Vec<f64> = mapped.mesh.vertices.iter().map(|&p| f(p)).collect();
        let sampled = sample_vertex_field(&mapped, &gw, &per_vertex);
        for (s, p) in sampled.iter().zip(&phys) {
            assert!((s - f(*p)).abs() < 1e-10);
        }
        // Constant fields stay constant.
        let c = sample_vertex_field(&mapped, &gw, &vec![4.25; mapped.mesh.vertices.len()]);
        assert!(c.iter().all(|&v| (v - 4.25).abs() < 1e-12));
    }

    #[test]
    fn quadratic_interpolation_converges_at_order_two() {
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let f = |p: [f64; 2]| p[0] * p[0] + 0.5 * p[1] * p[1];
        let err_at = |h: f64| {
            let mesh = mesh_polygon(&poly, h).unwrap();
            let shared_coords = mesh.vertices.clone();
            let mapped = MappedMesh { mesh, shared_coords };
            let shared = SharedDomain2D::unit_square();
            let grid = uniform_grid(&shared, (101, 101));
            let gw = locate_grid(&mapped, &shared, &grid).unwrap();
            let per_vertex: Vec<f64> =
                mapped.mesh.vertices.iter().map(|&p| f(p)).collect();
            let sampled = sample_vertex_field(&mapped, &gw, &per_vertex);
            let phys = pull_back(&mapped, &gw);
            sampled
                .iter()
                .zip(&phys)
                .map(|(s, p)| (s - f(*p)).abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = err_at(0.2) / err_at(0.1);
        assert!(
            ratio > 2.0 && ratio < 8.0,
            "expected ~4x error drop at half h, got {ratio}"
        );
    }

    #[test]
    fn resolution_nesting() {
        let shared = SharedDomain2D::unit_square();
        let r = 9;
        let coarse = uniform_grid(&shared, (r, r));
        let fine = uniform_grid(&shared, (2 * r - 1, 2 * r - 1));
        for j in 0..r {
            for i in 0..r {
                let c = coarse[j * r + i];
                let f = fine[(2 * j) * (2 * r - 1) + 2 * i];
                assert!((c[0] - f[0]).abs() < 1e-12 && (c[1] - f[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_vertex_positions() {
        let poly = [[0.0, 0.0], [10.0, 0.0], [9.0, 5.0], [5.0, 10.0], [1.0, 5.0]];
        let mesh = mesh_polygon(&poly, 0.8).unwrap();
        let shared = SharedDomain2D::unit_square();
        let mapped = harmonic_map(&mesh, &shared, WeightMode::Clamped).unwrap();
        let loc = TriLocator::new(&mapped, &shared);
        for v in 0..mapped.mesh.vertices.len() {
            let (t, w) = loc.locate(mapped.shared_coords[v]).unwrap();
            let [i, j, k] = mapped.mesh.triangles[t];
            let p = [
                w[0] * mapped.mesh.vertices[i][0]
                    + w[1] * mapped.mesh.vertices[j][0]
                    + w[2] * mapped.mesh.vertices[k][0],
                w[0] * mapped.mesh.vertices[i][1]
                    + w[1] * mapped.mesh.vertices[j][1]
                    + w[2] * mapped.mesh.vertices[k][1],
            ];
            let d = ((p[0] - mapped.mesh.vertices[v][0]).powi(2)
                + (p[1] - mapped.mesh.vertices[v][1]).powi(2))
            .sqrt();
            assert!(d < 1e-9 * 10.0, "round-trip error {d} at vertex {v}");
        }
    }

    #[test]
    fn far_outside_point_is_rejected() {
        let mapped = identity_map(0.3);
        let shared = SharedDomain2D::unit_square();
        let loc = TriLocator::new(&mapped, &shared);
        assert!(matches!(
            loc.locate([3.0, 3.0]),
            Err(Error::OutsideMesh(_, _))
        ));
    }
}
