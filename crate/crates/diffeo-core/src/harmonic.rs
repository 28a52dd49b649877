//! Discrete harmonic maps from a physics-domain mesh onto a shared rectangle:
//! arc-length boundary correspondence, cotangent-Laplacian solve with
//! Dirichlet boundary data, and bijectivity validation.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{cotangent_weight, EdgeWeightTable, TriMesh};
use crate::sparse::{CholeskyFactor, SymSparse};

/// Weight floor used by the default clamped mode. Positive weights plus a
/// convex target boundary give a fold-free embedding (Tutte condition).
pub const WEIGHT_CLAMP_EPS: f64 = 1e-8;

/// Axis-aligned shared rectangle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SharedDomain2D {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SharedDomain2D {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::Config(format!(
                "shared domain must have positive extents: [{x_min},{x_max}]x[{y_min},{y_max}]"
            )));
        }
        Ok(SharedDomain2D { x_min, x_max, y_min, y_max })
    }

    pub fn unit_square() -> Self {
        SharedDomain2D { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    pub fn diameter(&self) -> f64 {
        (self.width().powi(2) + self.height().powi(2)).sqrt()
    }

    /// Point at arc-length `s` along the perimeter, walking CCW from the
    /// lower-left corner: bottom, right, top, left edge in that order.
    pub fn perimeter_point(&self, s: f64) -> [f64; 2] {
        let (w, h) = (self.width(), self.height());
        let mut s = s.rem_euclid(self.perimeter());
        if s < w {
            return [self.x_min + s, self.y_min];
        }
        s -= w;
        if s < h {
            return [self.x_max, self.y_min + s];
        }
        s -= h;
        if s < w {
            return [self.x_max - s, self.y_max];
        }
        s -= w;
        [self.x_min, self.y_max - s]
    }

    /// Perimeter fractions of the four corners, CCW from lower-left.
    pub fn corner_fractions(&self) -> [f64; 4] {
        let (w, h) = (self.width(), self.height());
        let p = self.perimeter();
        [0.0, w / p, (w + h) / p, (2.0 * w + h) / p]
    }
}

/// A mesh together with its solved per-vertex shared-domain coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedMesh {
    pub mesh: TriMesh,
    pub shared_coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BijectivityReport {
    pub min_mapped_area: f64,
    pub fold_count: usize,
    pub ok: bool,
}

/// How cotangent weights are preprocessed before the harmonic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Clamp every weight to at least `WEIGHT_CLAMP_EPS` (default).
    Clamped,
    /// Use raw cotangent weights; falls back to clamped if the map folds.
    Raw,
}

/// Place each boundary vertex on the shared rectangle's perimeter at the
/// perimeter fraction equal to its cumulative physics arc-length fraction.
/// The first loop vertex lands on the lower-left corner; traversal is CCW.
pub fn parameterize_boundary(
    loop_positions: &[[f64; 2]],
    shared: &SharedDomain2D,
) -> Result<Vec<[f64; 2]>> {
    let n = loop_positions.len();
    if n < 3 {
        return Err(Error::InvalidMesh(format!("boundary loop needs >= 3 vertices, got {n}")));
    }
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        let a = loop_positions[i];
        let b = loop_positions[(i + 1) % n];
        cum[i + 1] = cum[i] + ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    }
    let total = cum[n];
    if total < 1e-14 {
        return Err(Error::ZeroPerimeter);
    }
    let perim = shared.perimeter();
    Ok((0..n)
        .map(|i| shared.perimeter_point(cum[i] / total * perim))
        .collect())
}

/// Solve the cotangent-Laplacian system L f = b (identity rows on the
/// boundary, weighted Laplacian rows in the interior) for both coordinates.
pub fn solve_harmonic(
    mesh: &TriMesh,
    weights: &EdgeWeightTable,
    shared: &SharedDomain2D,
) -> Result<MappedMesh> {
    let nv = mesh.vertices.len();
    let boundary = mesh.boundary_mask();
    let loop_positions: Vec<[f64; 2]> = mesh
        .boundary_loop
        .iter()
        .map(|&v| mesh.vertices[v])
        .collect();
    let boundary_pos = parameterize_boundary(&loop_positions, shared)?;

    let mut shared_coords = vec![[0.0; 2]; nv];
    for (k, &v) in mesh.boundary_loop.iter().enumerate() {
        shared_coords[v] = boundary_pos[k];
    }

    // Interior reduction: boundary rows are identity, so eliminate them.
    let mut interior_index = vec![usize::MAX; nv];
    let mut interior = Vec::new();
    for v in 0..nv {
        if !boundary[v] {
            interior_index[v] = interior.len();
            interior.push(v);
        }
    }
    if interior.is_empty() {
        return Ok(MappedMesh { mesh: mesh.clone(), shared_coords });
    }

    let ni = interior.len();
    let mut a = SymSparse::new(ni);
    let mut rhs = [vec![0.0; ni], vec![0.0; ni]];
    for (i, j, w) in weights.iter() {
        match (boundary[i], boundary[j]) {
            (false, false) => {
                a.add(interior_index[i], interior_index[i], w);
                a.add(interior_index[j], interior_index[j], w);
                a.add(interior_index[i], interior_index[j], -w);
            }
            (false, true) => {
                a.add(interior_index[i], interior_index[i], w);
                for d in 0..2 {
                    rhs[d][interior_index[i]] += w * shared_coords[j][d];
                }
            }
            (true, false) => {
                a.add(interior_index[j], interior_index[j], w);
                for d in 0..2 {
                    rhs[d][interior_index[j]] += w * shared_coords[i][d];
                }
            }
            (true, true) => {}
        }
    }

    let factor = CholeskyFactor::factor(&a)?;
    for d in 0..2 {
        let x = factor.solve(&rhs[d]);
        for (k, &v) in interior.iter().enumerate() {
            shared_coords[v][d] = x[k];
        }
    }

    Ok(MappedMesh { mesh: mesh.clone(), shared_coords })
}

/// Count mapped triangles with non-positive signed area.
pub fn validate_bijectivity(mapped: &MappedMesh) -> BijectivityReport {
    let mut min_area = f64::INFINITY;
    let mut folds = 0usize;
    for tri in &mapped.mesh.triangles {
        let [a, b, c] = [
            mapped.shared_coords[tri[0]],
            mapped.shared_coords[tri[1]],
            mapped.shared_coords[tri[2]],
        ];
        let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
        min_area = min_area.min(area);
        if area <= 0.0 {
            folds += 1;
        }
    }
    BijectivityReport {
        min_mapped_area: min_area,
        fold_count: folds,
        ok: folds == 0,
    }
}

/// Max over interior vertices of |sum_j w_ij (f_j - f_i)|, relative to the
/// shared-domain diameter.
pub fn harmonic_residual(
    mapped: &MappedMesh,
    weights: &EdgeWeightTable,
    shared: &SharedDomain2D,
) -> f64 {
    let nv = mapped.mesh.vertices.len();
    let boundary = mapped.mesh.boundary_mask();
    let mut res = vec![[0.0f64; 2]; nv];
    for (i, j, w) in weights.iter() {
        for d in 0..2 {
            let diff = mapped.shared_coords[j][d] - mapped.shared_coords[i][d];
            res[i][d] += w * diff;
            res[j][d] -= w * diff;
        }
    }
    let mut max = 0.0f64;
    for v in 0..nv {
        if !boundary[v] {
            max = max.max(res[v][0].abs()).max(res[v][1].abs());
        }
    }
    max / shared.diameter()
}

/// End-to-end harmonic map with weight preprocessing and fold validation.
///
/// Raw mode falls back to clamped weights when the raw solve folds; if the
/// clamped solve folds too, the map is rejected.
pub fn harmonic_map(mesh: &TriMesh, shared: &SharedDomain2D, mode: WeightMode) -> Result<MappedMesh> {
    let raw = cotangent_weight(mesh);
    let solve_with = |w: &EdgeWeightTable| -> Result<(MappedMesh, BijectivityReport)> {
        let mapped = solve_harmonic(mesh, w, shared)?;
        let report = validate_bijectivity(&mapped);
        Ok((mapped, report))
    };
    if mode == WeightMode::Raw {
        let (mapped, report) = solve_with(&raw)?;
        if report.ok {
            return Ok(mapped);
        }
    }
    let (mapped, report) = solve_with(&raw.clamped(WEIGHT_CLAMP_EPS))?;
    if !report.ok {
        return Err(Error::FoldOver {
            fold_count: report.fold_count,
            min_area: report.min_mapped_area,
        });
    }
    Ok(mapped)
}

/// Sidecar file with the solved shared coordinates, 17 significant digits.
pub fn write_shared_coords<W: Write>(mapped: &MappedMesh, out: &mut W) -> Result<()> {
    writeln!(out, "SHAREDCOORDS v1 {}", mapped.shared_coords.len())?;
    for c in &mapped.shared_coords {
        writeln!(out, "{:.16e} {:.16e}", c[0], c[1])?;
    }
    Ok(())
}

pub fn read_shared_coords<R: BufRead>(input: R, mesh: &TriMesh) -> Result<MappedMesh> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty shared-coords file".into()))??;
    let mut it = header.split_whitespace();
    if it.next() != Some("SHAREDCOORDS") || it.next() != Some("v1") {
        return Err(Error::Format("expected SHAREDCOORDS v1 header".into()));
    }
    let n: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format("bad SHAREDCOORDS count".into()))?;
    if n != mesh.vertices.len() {
        return Err(Error::ShapeMismatch(format!(
            "shared-coords count {n} != mesh vertex count {}",
            mesh.vertices.len()
        )));
    }
    let mut shared_coords = Vec::with_capacity(n);
    for line in lines.take(n) {
        let line = line?;
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad coordinate line".into()))?;
        let y: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format("bad coordinate line".into()))?;
        shared_coords.push([x, y]);
    }
    if shared_coords.len() != n {
        return Err(Error::Format("truncated shared-coords file".into()));
    }
    Ok(MappedMesh { mesh: mesh.clone(), shared_coords })
}

pub fn save_mapped_mesh(mapped: &MappedMesh, off_path: &Path, coords_path: &Path) -> Result<()> {
    crate::mesh::write_off_file(&mapped.mesh, off_path)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(coords_path)?);
    write_shared_coords(mapped, &mut f)
}
