//! Darcy-flow data generation: random polygonal domains, random coefficient
//! fields, and ground-truth solutions of -div(a grad u) = F with u = 0 on the
//! boundary by P1 finite elements on the physics mesh.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{save_grid_sample, DatasetManifest, SampleRecord};
use crate::delaunay::mesh_polygon_anchored;
use crate::error::{Error, Result};
use crate::harmonic::{harmonic_map, validate_bijectivity, SharedDomain2D, WeightMode};
use crate::mesh::{polygon_area, TriMesh};
use crate::sampler::{locate_grid, pull_back, sample_vertex_field, uniform_grid, GridSample};
use crate::seed;
use crate::sparse::{CholeskyFactor, SymSparse};

/// Physics canvas is [0, 10]^2 before any magnification.
pub const CANVAS: f64 = 10.0;
/// c1, c2 range from the main text.
pub const C_RANGE_MAIN: (f64, f64) = (0.2, 0.8);
/// Alternative c1, c2 range from the parameter table.
pub const C_RANGE_TABLE: (f64, f64) = (2.0, 9.0);

const MAX_RESAMPLE: usize = 100;
const ELLIPTICITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonFamily {
    Pentagon,
    Hexagon,
}

impl std::str::FromStr for PolygonFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pentagon" => Ok(PolygonFamily::Pentagon),
            "hexagon" => Ok(PolygonFamily::Hexagon),
            other => Err(Error::Config(format!("unknown polygon family '{other}'"))),
        }
    }
}

/// Vertex parameters of one random domain on the [0,10]^2 canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolygonSpec {
    pub family: PolygonFamily,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub x3: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x4: Option<f64>,
}

impl PolygonSpec {
    /// CCW vertex list. Pentagon: (0,0), (10,0), (x2,y2), (x3,10), (x1,y1);
    /// hexagon: (0,0), (10,0), (x2,y2), (x4,10), (x3,10), (x1,y1).
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match self.family {
            PolygonFamily::Pentagon => vec![
                [0.0, 0.0],
                [CANVAS, 0.0],
                [self.x2, self.y2],
                [self.x3, CANVAS],
                [self.x1, self.y1],
            ],
            PolygonFamily::Hexagon => vec![
                [0.0, 0.0],
                [CANVAS, 0.0],
                [self.x2, self.y2],
                [self.x4.expect("hexagon needs x4"), CANVAS],
                [self.x3, CANVAS],
                [self.x1, self.y1],
            ],
        }
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// A polygon is simple when no two non-adjacent edges meet.
pub fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            // Skip edges sharing a vertex.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Draw vertex parameters uniformly until the polygon is simple and CCW,
/// giving up after 100 attempts.
pub fn sample_polygon(family: PolygonFamily, rng: &mut impl Rng) -> Result<PolygonSpec> {
    for _ in 0..MAX_RESAMPLE {
        let spec = match family {
            PolygonFamily::Pentagon => PolygonSpec {
                family,
                x1: rng.gen_range(0.0..=2.0),
                y1: rng.gen_range(4.0..=6.0),
                x2: rng.gen_range(8.0..=10.0),
                y2: rng.gen_range(4.0..=6.0),
                x3: rng.gen_range(3.0..=7.0),
                x4: None,
            },
            PolygonFamily::Hexagon => PolygonSpec {
                family,
                x1: rng.gen_range(0.0..=2.0),
                y1: rng.gen_range(4.0..=6.0),
                x2: rng.gen_range(8.0..=10.0),
                y2: rng.gen_range(4.0..=6.0),
                x3: rng.gen_range(2.0..=4.0),
                x4: Some(rng.gen_range(6.0..=8.0)),
            },
        };
        let verts = spec.vertices();
        if is_simple(&verts) && polygon_area(&verts) > 0.0 {
            return Ok(spec);
        }
    }
    Err(Error::ExhaustedResampling(MAX_RESAMPLE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub c1: f64,
    pub c2: f64,
}

pub fn sample_coefficients(range: (f64, f64), rng: &mut impl Rng) -> CoefficientSpec {
    CoefficientSpec {
        c1: rng.gen_range(range.0..=range.1),
        c2: rng.gen_range(range.0..=range.1),
    }
}

/// a(x) = c1 sin(x/10) - c2 x (x - 10) + 2, a function of x only.
pub fn coefficient_field(spec: CoefficientSpec, x: f64) -> f64 {
    spec.c1 * (x / 10.0).sin() - spec.c2 * x * (x - 10.0) + 2.0
}

/// Verify a > floor over the canvas by dense sampling of [0, 10].
pub fn check_ellipticity(spec: CoefficientSpec) -> Result<()> {
    for i in 0..=1000 {
        let x = CANVAS * i as f64 / 1000.0;
        let a = coefficient_field(spec, x);
        if a <= ELLIPTICITY_FLOOR {
            return Err(Error::NonElliptic { value: a, x });
        }
    }
    Ok(())
}

/// Assemble the reduced (interior) P1 stiffness matrix and load vector with
/// one-point centroid quadrature and homogeneous Dirichlet elimination.
fn assemble<A, F>(mesh: &TriMesh, a: &A, f: &F) -> (SymSparse, Vec<f64>, Vec<Option<usize>>)
where
    A: Fn([f64; 2]) -> f64,
    F: Fn([f64; 2]) -> f64,
{
    let mask = mesh.boundary_mask();
    let mut index_of: Vec<Option<usize>> = vec![None; mesh.vertices.len()];
    let mut ni = 0;
    for (v, m) in mask.iter().enumerate() {
        if !m {
            index_of[v] = Some(ni);
            ni += 1;
        }
    }
    let mut k = SymSparse::new(ni);
    let mut rhs = vec![0.0; ni];
    for tri in &mesh.triangles {
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| mesh.vertices[v]).collect();
        let area = 0.5
            * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]));
        let centroid = [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ];
        let ac = a(centroid);
        let fc = f(centroid);
        // grad of the P1 basis at vertex i is the rotated opposite edge
        // over twice the area.
        let mut grads = [[0.0; 2]; 3];
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            grads[i] = [
                (p[j][1] - p[l][1]) / (2.0 * area),
                (p[l][0] - p[j][0]) / (2.0 * area),
            ];
        }
        for i in 0..3 {
            let Some(ri) = index_of[tri[i]] else { continue };
            rhs[ri] += fc * area / 3.0;
            for j in i..3 {
                let Some(rj) = index_of[tri[j]] else { continue };
                let kij = ac * area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                k.add(ri, rj, kij);
            }
        }
    }
    (k, rhs, index_of)
}

/// Solve -div(a grad u) = F with u = 0 on the boundary; returns per-vertex u.
pub fn solve_darcy<A, F>(mesh: &TriMesh, a: A, f: F) -> Result<Vec<f64>>
where
    A: Fn([f64; 2]) -> f64,
    F: Fn([f64; 2]) -> f64,
{
    let (k, rhs, index_of) = assemble(mesh, &a, &f);
    let mut u = vec![0.0; mesh.vertices.len()];
    if k.n() == 0 {
        return Ok(u);
    }
    let chol = CholeskyFactor::factor(&k)
        .map_err(|e| Error::SolverFailure(format!("reduced stiffness not SPD: {e}")))?;
    let ui = chol.solve(&rhs);
    // Direct solves should be exact to rounding; treat anything worse as a
    // solver failure.
    let r = k.mul_vec(&ui);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let res_norm = r
        .iter()
        .zip(&rhs)
        .map(|(x, b)| (x - b) * (x - b))
        .sum::<f64>()
        .sqrt();
    if rhs_norm > 0.0 && res_norm / rhs_norm > 1e-10 {
        return Err(Error::SolverFailure(format!(
            "relative residual {:.3e} exceeds 1e-10",
            res_norm / rhs_norm
        )));
    }
    for (v, slot) in index_of.iter().enumerate() {
        if let Some(ri) = slot {
            u[v] = ui[*ri];
        }
    }
    Ok(u)
}

/// Generation config; echoed verbatim into the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyConfig {
    pub n: usize,
    pub family: PolygonFamily,
    /// Grid resolution per axis (square grids).
    pub resolution: usize,
    /// Target mesh edge length on the unscaled canvas.
    pub h: f64,
    pub seed: u64,
    #[serde(default = "default_c_range")]
    pub c_range: (f64, f64),
    /// Uniform magnification of the physics domain. The coefficient field is
    /// evaluated at x/scale so magnified domains keep the same a-pattern and
    /// stay elliptic; h scales along with the geometry.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_weight_mode")]
    pub weight_mode: WeightMode,
}

fn default_c_range() -> (f64, f64) {
    C_RANGE_MAIN
}
fn default_scale() -> f64 {
    1.0
}
fn default_weight_mode() -> WeightMode {
    WeightMode::Clamped
}

impl Default for DarcyConfig {
    fn default() -> Self {
        DarcyConfig {
            n: 200,
            family: PolygonFamily::Pentagon,
            resolution: 128,
            h: 0.15,
            seed: 7,
            c_range: C_RANGE_MAIN,
            scale: 1.0,
            weight_mode: WeightMode::Clamped,
        }
    }
}

impl DarcyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.resolution < 2 {
            return Err(Error::Config("resolution must be at least 2".into()));
        }
        if !(self.h > 0.0 && self.h < CANVAS) {
            return Err(Error::Config(format!("h out of range: {}", self.h)));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!("scale must be positive: {}", self.scale)));
        }
        if !(self.c_range.1 >= self.c_range.0) {
            return Err(Error::Config(format!(
                "empty coefficient range [{}, {}]",
                self.c_range.0, self.c_range.1
            )));
        }
        Ok(())
    }
}

/// One fully generated sample plus everything the manifest records about it.
pub struct GeneratedSample {
    pub id: String,
    pub seed: u64,
    pub polygon: PolygonSpec,
    pub coeff: CoefficientSpec,
    pub grid: GridSample,
    pub record: SampleRecord,
}

/// Run the whole per-sample pipeline: polygon -> mesh -> harmonic map ->
/// FEM solve -> grid pull-back. Deterministic in (config.seed, index).
pub fn generate_sample(config: &DarcyConfig, index: usize) -> Result<GeneratedSample> {
    let attach = |e: Error| Error::Sample { index, source: Box::new(e) };
    let sample_seed = seed::derive(config.seed, "sample", index as u64);
    let mut rng = seed::rng(config.seed, "sample", index as u64);
    let polygon = sample_polygon(config.family, &mut rng).map_err(attach)?;
    let coeff = sample_coefficients(config.c_range, &mut rng);
    check_ellipticity(coeff).map_err(attach)?;

    let s = config.scale;
    let verts: Vec<[f64; 2]> = polygon.vertices().iter().map(|p| [p[0] * s, p[1] * s]).collect();
    let shared = SharedDomain2D::unit_square();
    let mesh = mesh_polygon_anchored(&verts, config.h * s, &shared).map_err(attach)?;
    let mapped = harmonic_map(&mesh, &shared, config.weight_mode).map_err(attach)?;
    let bijectivity = validate_bijectivity(&mapped);

    // F scales as 1/s^2 so a magnified sample is the unscaled physical
    // problem expressed in magnified coordinates: u_s(s x) = u_1(x).
    let a = |p: [f64; 2]| coefficient_field(coeff, p[0] / s);
    let u = solve_darcy(&mesh, a, |_| 1.0 / (s * s)).map_err(attach)?;

    let grid_pts = uniform_grid(&shared, (config.resolution, config.resolution));
    let gw = locate_grid(&mapped, &shared, &grid_pts).map_err(attach)?;
    let physics_points = pull_back(&mapped, &gw);
    let param_field: Vec<f64> = physics_points.iter().map(|&p| a(p)).collect();
    let solution_field = sample_vertex_field(&mapped, &gw, &u);

    let grid = GridSample {
        resolution: (config.resolution, config.resolution),
        shared_points: grid_pts,
        physics_points,
        param_field,
        solution_field: Some(solution_field),
    };
    let id = format!("s{index:04}");
    let record = SampleRecord {
        id: id.clone(),
        seed: sample_seed,
        polygon,
        coeff,
        n_vertices: mesh.vertices.len(),
        n_triangles: mesh.triangles.len(),
        bijectivity,
        checksums: BTreeMap::new(),
    };
    Ok(GeneratedSample { id, seed: sample_seed, polygon, coeff, grid, record })
}

/// Generate `config.n` samples into `out`, writing per-sample grid files and
/// a manifest with the config echo, per-sample seeds, and file checksums.
pub fn generate_dataset(config: &DarcyConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let shared = SharedDomain2D::unit_square();
    let mut records: Vec<SampleRecord> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let sample = generate_sample(config, i)?;
            let checksums = save_grid_sample(out, &sample.id, &sample.grid, &shared, sample.seed)
                .map_err(|e| Error::Sample { index: i, source: Box::new(e) })?;
            let mut record = sample.record;
            record.checksums = checksums;
            Ok(record)
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = DatasetManifest {
        config: config.clone(),
        forcing: format!("constant 1/scale^2 = {}", 1.0 / (config.scale * config.scale)),
        shared,
        samples: records,
    };
    manifest.save(out)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::mesh_polygon;
    use crate::seed;

    fn midpoint_pentagon() -> PolygonSpec {
        PolygonSpec {
            family: PolygonFamily::Pentagon,
            x1: 1.0,
            y1: 5.0,
            x2: 9.0,
            y2: 5.0,
            x3: 5.0,
            x4: None,
        }
    }

    #[test]
    fn midpoint_pentagon_area_is_65() {
        let verts = midpoint_pentagon().vertices();
        assert!(is_simple(&verts));
        assert!((polygon_area(&verts) - 65.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let mut r1 = seed::rng(7, "sample", 3);
        let mut r2 = seed::rng(7, "sample", 3);
        let a = sample_polygon(PolygonFamily::Pentagon, &mut r1).unwrap();
        let b = sample_polygon(PolygonFamily::Pentagon, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=2.0).contains(&a.x1));
        assert!((4.0..=6.0).contains(&a.y1));
        assert!((8.0..=10.0).contains(&a.x2));
        assert!((4.0..=6.0).contains(&a.y2));
        assert!((3.0..=7.0).contains(&a.x3));
    }

    #[test]
    fn ten_thousand_seeds_never_exhaust() {
        for family in [PolygonFamily::Pentagon, PolygonFamily::Hexagon] {
            for i in 0..10_000u64 {
                let mut rng = seed::rng(99, "robustness", i);
                let spec = sample_polygon(family, &mut rng).unwrap();
                assert!(is_simple(&spec.vertices()));
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(coefficient_field(CoefficientSpec { c1: 0.0, c2: 0.0 }, 3.7), 2.0);
        let v = coefficient_field(CoefficientSpec { c1: 0.5, c2: 0.5 }, 5.0);
        assert!((v - 14.7397128).abs() < 1e-6, "got {v}");
        // Quadratic term vanishes at the canvas edges.
        let c = CoefficientSpec { c1: 0.3, c2: 0.7 };
        assert!((coefficient_field(c, 0.0) - 2.0).abs() < 1e-12);
        assert!((coefficient_field(c, 10.0) - (2.0 + 0.3 * 1.0f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn zero_forcing_gives_zero_solution() {
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mesh = mesh_polygon(&poly, 0.2).unwrap();
        let u = solve_darcy(&mesh, |_| 3.0, |_| 0.0).unwrap();
        assert!(u.iter().all(|&v| v.abs() < 1e-14));
    }

    fn rel_l2_error(mesh: &TriMesh, u: &[f64], exact: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (v, &uh) in u.iter().enumerate() {
            let ue = exact(mesh.vertices[v]);
            num += (uh - ue) * (uh - ue);
            den += ue * ue;
        }
        (num / den).sqrt()
    }

    #[test]
    fn manufactured_solution_converges_at_order_two() {
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let pi = std::f64::consts::PI;
        let exact = |p: [f64; 2]| (pi * p[0]).sin() * (pi * p[1]).sin();
        let f = move |p: [f64; 2]| 2.0 * pi * pi * (pi * p[0]).sin() * (pi * p[1]).sin();
        let err_at = |h: f64| {
            let mesh = mesh_polygon(&poly, h).unwrap();
            let u = solve_darcy(&mesh, |_| 1.0, f).unwrap();
            rel_l2_error(&mesh, &u, exact)
        };
        let (e1, e2) = (err_at(0.1), err_at(0.05));
        let ratio = e1 / e2;
        assert!(e2 < 0.01, "fine-grid error too large: {e2}");
        assert!(ratio > 2.0 && ratio < 8.0, "expected ~4x drop, got {ratio}");
    }

    #[test]
    fn variable_coefficient_manufactured_solution() {
        // u = x(1-x)y(1-y), a = 1+x; F derived by hand:
        // F = -(a u_x)_x - (a u_y)_y
        //   = -(1-2x)y(1-y) + 2(1+x)y(1-y) + 2(1+x)x(1-x).
        let poly = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let exact = |p: [f64; 2]| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let a = |p: [f64; 2]| 1.0 + p[0];
        let f = |p: [f64; 2]| {
            let (x, y) = (p[0], p[1]);
            -(1.0 - 2.0 * x) * y * (1.0 - y)
                + 2.0 * (1.0 + x) * y * (1.0 - y)
                + 2.0 * (1.0 + x) * x * (1.0 - x)
        };
        let err_at = |h: f64| {
            let mesh = mesh_polygon(&poly, h).unwrap();
            let u = solve_darcy(&mesh, a, f).unwrap();
            rel_l2_error(&mesh, &u, exact)
        };
        let ratio = err_at(0.1) / err_at(0.05);
        assert!(ratio > 2.0 && ratio < 8.0, "expected ~4x drop, got {ratio}");
    }

    #[test]
    fn maximum_principle_and_energy_identity() {
        let verts = midpoint_pentagon().vertices();
        let mesh = mesh_polygon(&verts, 0.5).unwrap();
        let coeff = CoefficientSpec { c1: 0.5, c2: 0.5 };
        let a = |p: [f64; 2]| coefficient_field(coeff, p[0]);
        let u = solve_darcy(&mesh, a, |_| 1.0).unwrap();
        let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= -1e-10, "maximum principle violated: min u = {min}");
        assert!(max > 0.0);
        // u' K u' == u' b on the reduced system.
        let (k, b, index_of) = assemble(&mesh, &a, &|_: [f64; 2]| 1.0);
        let mut ui = vec![0.0; k.n()];
        for (v, slot) in index_of.iter().enumerate() {
            if let Some(ri) = slot {
                ui[*ri] = u[v];
            }
        }
        let ku = k.mul_vec(&ui);
        let energy: f64 = ui.iter().zip(&ku).map(|(x, y)| x * y).sum();
        let work: f64 = ui.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((energy - work).abs() / work.abs() < 1e-10);
    }

    #[test]
    fn generated_sample_is_deterministic() {
        let config = DarcyConfig {
            n: 1,
            resolution: 17,
            h: 0.8,
            ..DarcyConfig::default()
        };
        let a = generate_sample(&config, 0).unwrap();
        let b = generate_sample(&config, 0).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.polygon, b.polygon);
        assert!(a.record.bijectivity.ok);
        // Physics points stay inside the polygon.
        let verts = a.polygon.vertices();
        for p in &a.grid.physics_points {
            assert!(crate::mesh::point_in_polygon(*p, &verts, 1e-9 * CANVAS));
        }
    }

    #[test]
    fn scaled_sample_keeps_ellipticity_pattern() {
        let config = DarcyConfig {
            n: 1,
            resolution: 9,
            h: 1.0,
            scale: 3.0,
            ..DarcyConfig::default()
        };
        let g = generate_sample(&config, 2).unwrap();
        // All coefficient values positive and bounded like the unscaled field.
        for &v in &g.grid.param_field {
            assert!(v > 0.0 && v < 30.0);
        }
        for p in &g.grid.physics_points {
            assert!(p[0] <= 30.0 + 1e-9 && p[1] <= 30.0 + 1e-9);
        }
    }

    /// With F = 1/s^2 a magnified sample is the unscaled problem in
    /// magnified coordinates, so the pulled-back solutions agree up to
    /// FEM discretization error.
    #[test]
    fn scaled_sample_matches_unscaled_solution() {
        let base = DarcyConfig { n: 1, resolution: 17, h: 0.4, ..DarcyConfig::default() };
        let scaled = DarcyConfig { scale: 1.5, ..base.clone() };
        let u1 = generate_sample(&base, 0).unwrap().grid.solution_field.unwrap();
        let u2 = generate_sample(&scaled, 0).unwrap().grid.solution_field.unwrap();
        let num: f64 = u1.iter().zip(&u2).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = u1.iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-2, "rel L2 {}", (num / den).sqrt());
    }
}
