//! Closed-form volume parameterization of pocket-type 3D parts: a part
//! bounded by top/bottom surfaces T, B and side curves L, R maps onto a
//! fixed box by per-axis normalized gaps. Forward map, inverse map, and the
//! Jacobian-determinant positivity check certifying the diffeomorphism.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_GAP: f64 = 1e-9;

/// Piecewise-bilinear height field on a regular (x, y) grid; values are
/// row-major with x fastest. Queries clamp to the grid extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface2 {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let mut i = match grid.binary_search_by(|g| g.partial_cmp(&v).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if i == n - 1 {
        i = n - 2;
    }
    (i, (v - grid[i]) / (grid[i + 1] - grid[i]))
}

impl Surface2 {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Surface2> {
        if xs.len() < 2 || ys.len() < 2 {
            return Err(Error::Config("surface grid needs at least 2 points per axis".into()));
        }
        if values.len() != xs.len() * ys.len() {
            return Err(Error::ShapeMismatch(format!(
                "surface: {} values for a {}x{} grid",
                values.len(),
                xs.len(),
                ys.len()
            )));
        }
        for g in [&xs, &ys] {
            if g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("surface grid must be strictly increasing".into()));
            }
        }
        Ok(Surface2 { xs, ys, values })
    }

    pub fn constant(xs: Vec<f64>, ys: Vec<f64>, value: f64) -> Surface2 {
        let values = vec![value; xs.len() * ys.len()];
        Surface2 { xs, ys, values }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (i, tx) = bracket(&self.xs, x);
        let (j, ty) = bracket(&self.ys, y);
        let nx = self.xs.len();
        let v00 = self.values[j * nx + i];
        let v10 = self.values[j * nx + i + 1];
        let v01 = self.values[(j + 1) * nx + i];
        let v11 = self.values[(j + 1) * nx + i + 1];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// Piecewise-linear curve on an x grid, clamped beyond its extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface1 {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl Surface1 {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Surface1> {
        if xs.len() < 2 || values.len() != xs.len() {
            return Err(Error::ShapeMismatch(format!(
                "curve: {} values for {} knots",
                values.len(),
                xs.len()
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("curve grid must be strictly increasing".into()));
        }
        Ok(Surface1 { xs, values })
    }

    pub fn constant(xs: Vec<f64>, value: f64) -> Surface1 {
        let values = vec![value; xs.len()];
        Surface1 { xs, values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, t) = bracket(&self.xs, x);
        (1.0 - t) * self.values[i] + t * self.values[i + 1]
    }
}

/// The four bounding surfaces of a pocket part plus the shared box extents
/// (s_x, s_y, s_z); the default box is 600 x 240 x 30 mm.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSurfaces {
    pub top: Surface2,
    pub bottom: Surface2,
    pub left: Surface1,
    pub right: Surface1,
    pub extents: [f64; 3],
}

pub const DEFAULT_EXTENTS: [f64; 3] = [600.0, 240.0, 30.0];

impl PartSurfaces {
    /// T = 30, B = 0, L = 240, R = 0 over x in [0, 600]: the map is the
    /// identity on the box.
    pub fn flat_block() -> PartSurfaces {
        let xs = vec![0.0, 600.0];
        let ys = vec![0.0, 240.0];
        PartSurfaces {
            top: Surface2::constant(xs.clone(), ys.clone(), 30.0),
            bottom: Surface2::constant(xs.clone(), ys, 0.0),
            left: Surface1::constant(xs.clone(), 240.0),
            right: Surface1::constant(xs, 0.0),
            extents: DEFAULT_EXTENTS,
        }
    }

    fn gaps(&self, x: f64, y: f64) -> Result<(f64, f64, f64, f64)> {
        let l = self.left.eval(x);
        let r = self.right.eval(x);
        let t = self.top.eval(x, y);
        let b = self.bottom.eval(x, y);
        if l - r <= MIN_GAP {
            return Err(Error::DegenerateGap { x, y, which: "L-R", gap: l - r });
        }
        if t - b <= MIN_GAP {
            return Err(Error::DegenerateGap { x, y, which: "T-B", gap: t - b });
        }
        Ok((l, r, t, b))
    }
}

/// Forward map: u = x, v = s_y (y - R(x)) / (L(x) - R(x)),
/// w = s_z (z - B(x,y)) / (T(x,y) - B(x,y)).
pub fn volume_parameterize(surfaces: &PartSurfaces, p: [f64; 3]) -> Result<[f64; 3]> {
    let [x, y, z] = p;
    let (l, r, t, b) = surfaces.gaps(x, y)?;
    let [_, sy, sz] = surfaces.extents;
    Ok([x, sy * (y - r) / (l - r), sz * (z - b) / (t - b)])
}

/// det J = (s_y / (L - R)) * (s_z / (T - B)); strictly positive wherever the
/// gaps are positive, certifying local bijectivity.
pub fn jacobian_det(surfaces: &PartSurfaces, p: [f64; 3]) -> Result<f64> {
    let [x, y, _] = p;
    let (l, r, t, b) = surfaces.gaps(x, y)?;
    let [_, sy, sz] = surfaces.extents;
    Ok((sy / (l - r)) * (sz / (t - b)))
}

/// Closed-form inverse: x = u, y = R(x) + v (L(x) - R(x)) / s_y,
/// z = B(x,y) + w (T(x,y) - B(x,y)) / s_z.
pub fn inverse_parameterize(surfaces: &PartSurfaces, q: [f64; 3]) -> Result<[f64; 3]> {
    let [u, v, w] = q;
    let x = u;
    let l = surfaces.left.eval(x);
    let r = surfaces.right.eval(x);
    if l - r <= MIN_GAP {
        return Err(Error::DegenerateGap { x, y: f64::NAN, which: "L-R", gap: l - r });
    }
    let [_, sy, sz] = surfaces.extents;
    let y = r + v * (l - r) / sy;
    let t = surfaces.top.eval(x, y);
    let b = surfaces.bottom.eval(x, y);
    if t - b <= MIN_GAP {
        return Err(Error::DegenerateGap { x, y, which: "T-B", gap: t - b });
    }
    Ok([x, y, b + w * (t - b) / sz])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SurfaceHeader {
    x_grid: Vec<f64>,
    y_grid: Vec<f64>,
    side_x_grid: Vec<f64>,
    extents: [f64; 3],
}

/// Surface file: one JSON header line with the axis grids and box extents,
/// then raw little-endian f32 blocks: T, B (row-major, x fastest), L, R.
pub fn save_part_surfaces(path: &Path, s: &PartSurfaces) -> Result<()> {
    let header = SurfaceHeader {
        x_grid: s.top.xs.clone(),
        y_grid: s.top.ys.clone(),
        side_x_grid: s.left.xs.clone(),
        extents: s.extents,
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for block in [&s.top.values, &s.bottom.values, &s.left.values, &s.right.values] {
        for &v in block.iter() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_part_surfaces(path: &Path) -> Result<PartSurfaces> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("surface file has no header line".into()))?;
    let header: SurfaceHeader = serde_json::from_slice(&bytes[..nl])?;
    let grid_len = header.x_grid.len() * header.y_grid.len();
    let side_len = header.side_x_grid.len();
    let expect = 4 * (2 * grid_len + 2 * side_len);
    let body = &bytes[nl + 1..];
    if body.len() != expect {
        return Err(Error::Format(format!(
            "surface file body has {} bytes, expected {expect}",
            body.len()
        )));
    }
    let mut cursor = 0;
    let mut take = |len: usize| -> Vec<f64> {
        let block = &body[4 * cursor..4 * (cursor + len)];
        cursor += len;
        block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    let top = Surface2::new(header.x_grid.clone(), header.y_grid.clone(), take(grid_len))?;
    let bottom = Surface2::new(header.x_grid, header.y_grid, take(grid_len))?;
    let left = Surface1::new(header.side_x_grid.clone(), take(side_len))?;
    let right = Surface1::new(header.side_x_grid, take(side_len))?;
    Ok(PartSurfaces { top, bottom, left, right, extents: header.extents })
}

/// Smooth synthetic pocket: the top dips toward the middle, the sides bow
/// inward, everything stays well clear of degeneracy. Used by tests and as
/// the CLI's built-in demo part.
pub fn demo_pocket_part() -> PartSurfaces {
    let nx = 25;
    let ny = 13;
    let xs: Vec<f64> = (0..nx).map(|i| 600.0 * i as f64 / (nx - 1) as f64).collect();
    let ys: Vec<f64> = (0..ny).map(|j| 240.0 * j as f64 / (ny - 1) as f64).collect();
    let mut top = Vec::with_capacity(nx * ny);
    let mut bottom = Vec::with_capacity(nx * ny);
    for &y in &ys {
        for &x in &xs {
            let dip = ((std::f64::consts::PI * x / 600.0).sin()
                * (std::f64::consts::PI * y / 240.0).sin())
            .powi(2);
            top.push(30.0 - 18.0 * dip);
            bottom.push(2.0 * dip);
        }
    }
    let left: Vec<f64> = xs
        .iter()
        .map(|&x| 240.0 - 12.0 * (std::f64::consts::PI * x / 600.0).sin())
        .collect();
    let right: Vec<f64> = xs
        .iter()
        .map(|&x| 6.0 * (std::f64::consts::PI * x / 300.0).sin().abs())
        .collect();
    PartSurfaces {
        top: Surface2::new(xs.clone(), ys.clone(), top).unwrap(),
        bottom: Surface2::new(xs.clone(), ys, bottom).unwrap(),
        left: Surface1::new(xs.clone(), left).unwrap(),
        right: Surface1::new(xs, right).unwrap(),
        extents: DEFAULT_EXTENTS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    use super::demo_pocket_part as pocket_part;

    fn random_point(s: &PartSurfaces, rng: &mut impl Rng) -> [f64; 3] {
        let x = rng.gen_range(0.0..600.0);
        let l = s.left.eval(x);
        let r = s.right.eval(x);
        let y = r + rng.gen_range(0.01..0.99) * (l - r);
        let t = s.top.eval(x, y);
        let b = s.bottom.eval(x, y);
        let z = b + rng.gen_range(0.01..0.99) * (t - b);
        [x, y, z]
    }

    #[test]
    fn flat_block_is_identity() {
        let s = PartSurfaces::flat_block();
        let p = [10.0, 20.0, 5.0];
        assert_eq!(volume_parameterize(&s, p).unwrap(), p);
        assert_eq!(inverse_parameterize(&s, p).unwrap(), p);
        assert_eq!(jacobian_det(&s, p).unwrap(), 1.0);
    }

    #[test]
    fn doubled_top_halves_w_and_det() {
        let mut s = PartSurfaces::flat_block();
        s.top = Surface2::constant(vec![0.0, 600.0], vec![0.0, 240.0], 60.0);
        let q = volume_parameterize(&s, [100.0, 100.0, 30.0]).unwrap();
        assert!((q[2] - 15.0).abs() < 1e-12);
        assert!((jacobian_det(&s, [100.0, 100.0, 30.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_adherence() {
        let s = pocket_part();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let [x, y, _] = random_point(&s, &mut rng);
            let b = s.bottom.eval(x, y);
            let t = s.top.eval(x, y);
            let qb = volume_parameterize(&s, [x, y, b]).unwrap();
            let qt = volume_parameterize(&s, [x, y, t]).unwrap();
            assert!(qb[2].abs() < 1e-10);
            assert!((qt[2] - s.extents[2]).abs() < 1e-10);
            let qr = volume_parameterize(&s, [x, s.right.eval(x), b]).unwrap();
            let ql = volume_parameterize(&s, [x, s.left.eval(x), b]).unwrap();
            assert!(qr[1].abs() < 1e-10);
            assert!((ql[1] - s.extents[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = pocket_part();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = random_point(&s, &mut rng);
            let analytic = jacobian_det(&s, p).unwrap();
            assert!(analytic > 0.0);
            let h = 1e-5;
            let mut jac = [[0.0; 3]; 3];
            for col in 0..3 {
                let mut pp = p;
                pp[col] += h;
                let mut pm = p;
                pm[col] -= h;
                let qp = volume_parameterize(&s, pp).unwrap();
                let qm = volume_parameterize(&s, pm).unwrap();
                for row in 0..3 {
                    jac[row][col] = (qp[row] - qm[row]) / (2.0 * h);
                }
            }
            let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
            assert!(
                (det - analytic).abs() / analytic < 1e-6,
                "fd det {det} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn round_trip_on_shared_box() {
        let s = pocket_part();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = [
                rng.gen_range(0.0..s.extents[0]),
                rng.gen_range(0.0..s.extents[1]),
                rng.gen_range(0.0..s.extents[2]),
            ];
            let p = inverse_parameterize(&s, q).unwrap();
            let q2 = volume_parameterize(&s, p).unwrap();
            for c in 0..3 {
                let scale = s.extents[c].max(1.0);
                assert!((q[c] - q2[c]).abs() / scale < 1e-10);
            }
        }
    }

    #[test]
    fn monotonicity_along_axes() {
        let s = pocket_part();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_point(&s, &mut rng);
            let q = volume_parameterize(&s, p).unwrap();
            let qz = volume_parameterize(&s, [p[0], p[1], p[2] + 0.01]).unwrap();
            assert!(qz[2] > q[2]);
            let qy = volume_parameterize(&s, [p[0], p[1] + 0.01, p[2]]).unwrap();
            assert!(qy[1] > q[1]);
        }
    }

    #[test]
    fn degenerate_gap_is_reported() {
        let mut s = PartSurfaces::flat_block();
        // Top collapses onto the bottom at x = 600.
        s.top = Surface2::new(
            vec![0.0, 600.0],
            vec![0.0, 240.0],
            vec![30.0, 0.0, 30.0, 0.0],
        )
        .unwrap();
        let err = volume_parameterize(&s, [600.0, 100.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGap { which: "T-B", .. }));
    }

    #[test]
    fn surface_file_round_trip() {
        let s = pocket_part();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("part.surf");
        save_part_surfaces(&path, &s).unwrap();
        let loaded = load_part_surfaces(&path).unwrap();
        assert_eq!(loaded.extents, s.extents);
        assert_eq!(loaded.top.xs, s.top.xs);
        for (a, b) in s.top.values.iter().zip(&loaded.top.values) {
            assert_eq!(*a as f32, *b as f32);
        }
        // Evaluations agree to f32 precision.
        let p = [123.4, 56.7, 8.9];
        let qa = volume_parameterize(&s, p).unwrap();
        let qb = volume_parameterize(&loaded, p).unwrap();
        for c in 0..3 {
            assert!((qa[c] - qb[c]).abs() < 1e-4);
        }
    }
}
