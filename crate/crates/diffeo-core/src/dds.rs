//! Geometry-image similarity: Normalized Cross-Correlation between pulled-
//! back coordinate images, the Domain Diffeomorphism Similarity score, and
//! the DDS-vs-error correlation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::GridSample;

/// M x N x C image, channel-major planes of M*N values each.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryImage {
    pub shape: (usize, usize, usize),
    pub data: Vec<f64>,
}

impl GeometryImage {
    pub fn new(shape: (usize, usize, usize), data: Vec<f64>) -> Result<GeometryImage> {
        let (m, n, c) = shape;
        if data.len() != m * n * c {
            return Err(Error::ShapeMismatch(format!(
                "geometry image: {} values for shape {m}x{n}x{c}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("geometry image".into()));
        }
        Ok(GeometryImage { shape, data })
    }

    /// The x^pS coordinate image of a grid sample (C = 2).
    pub fn from_grid(grid: &GridSample) -> Result<GeometryImage> {
        let (rx, ry) = grid.resolution;
        let mut data = Vec::with_capacity(2 * rx * ry);
        data.extend(grid.physics_points.iter().map(|p| p[0]));
        data.extend(grid.physics_points.iter().map(|p| p[1]));
        GeometryImage::new((rx, ry, 2), data)
    }

    fn channels(&self) -> usize {
        self.shape.2
    }

    fn plane(&self, c: usize) -> &[f64] {
        let pixels = self.shape.0 * self.shape.1;
        &self.data[c * pixels..(c + 1) * pixels]
    }

    /// Per-channel means.
    fn means(&self) -> Vec<f64> {
        let pixels = (self.shape.0 * self.shape.1) as f64;
        (0..self.channels())
            .map(|c| self.plane(c).iter().sum::<f64>() / pixels)
            .collect()
    }
}

/// How the channel sums are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NccMode {
    /// Per-channel centering with a single joint normalization over all
    /// channels, exactly as the metric is defined.
    #[default]
    Joint,
    /// Per-channel NCC values averaged; offered for comparison.
    PerChannel,
}

fn centered_moments(a: &GeometryImage, b: &GeometryImage, c: usize) -> (f64, f64, f64) {
    let (ma, mb) = (a.means()[c], b.means()[c]);
    let mut cross = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    for (x, y) in a.plane(c).iter().zip(b.plane(c)) {
        let (dx, dy) = (x - ma, y - mb);
        cross += dx * dy;
        ea += dx * dx;
        eb += dy * dy;
    }
    (cross, ea, eb)
}

pub fn ncc_with_mode(a: &GeometryImage, b: &GeometryImage, mode: NccMode) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "ncc: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    match mode {
        NccMode::Joint => {
            let mut cross = 0.0;
            let mut ea = 0.0;
            let mut eb = 0.0;
            for c in 0..a.channels() {
                let (x, y, z) = centered_moments(a, b, c);
                cross += x;
                ea += y;
                eb += z;
            }
            if ea < 1e-20 || eb < 1e-20 {
                return Err(Error::ZeroVariance);
            }
            Ok((cross / (ea.sqrt() * eb.sqrt())).clamp(-1.0, 1.0))
        }
        NccMode::PerChannel => {
            let mut total = 0.0;
            for c in 0..a.channels() {
                let (cross, ea, eb) = centered_moments(a, b, c);
                if ea < 1e-20 || eb < 1e-20 {
                    return Err(Error::ZeroVariance);
                }
                total += (cross / (ea.sqrt() * eb.sqrt())).clamp(-1.0, 1.0);
            }
            Ok(total / a.channels() as f64)
        }
    }
}

/// Normalized Cross-Correlation: per-channel mean removal, second moments
/// summed over all pixels and channels, result clamped to [-1, 1].
pub fn ncc(a: &GeometryImage, b: &GeometryImage) -> Result<f64> {
    ncc_with_mode(a, b, NccMode::Joint)
}

/// Domain Diffeomorphism Similarity: mean NCC of a candidate against every
/// training-set geometry image.
pub fn dds(candidate: &GeometryImage, training_set: &[GeometryImage]) -> Result<f64> {
    dds_with_mode(candidate, training_set, NccMode::Joint)
}

pub fn dds_with_mode(
    candidate: &GeometryImage,
    training_set: &[GeometryImage],
    mode: NccMode,
) -> Result<f64> {
    if training_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for t in training_set {
        total += ncc_with_mode(candidate, t, mode)?;
    }
    Ok(total / training_set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
    /// True when either variable has zero variance; coefficients are then
    /// reported as 0 by convention.
    pub degenerate: bool,
    /// (dds, error) pairs sorted by dds, ready for plotting.
    pub table: Vec<(f64, f64)>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cross = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cross += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cross / (vx.sqrt() * vy.sqrt()))
}

/// Fractional ranks with ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson and Spearman correlation between DDS scores and prediction
/// errors, with the sorted pair table for plotting.
pub fn correlation_report(dds_values: &[f64], errors: &[f64]) -> Result<CorrelationReport> {
    if dds_values.len() != errors.len() {
        return Err(Error::ShapeMismatch(format!(
            "correlation: {} dds values vs {} errors",
            dds_values.len(),
            errors.len()
        )));
    }
    if dds_values.len() < 3 {
        return Err(Error::InsufficientData(dds_values.len()));
    }
    let p = pearson(dds_values, errors);
    let s = pearson(&ranks(dds_values), &ranks(errors));
    let degenerate = p.is_none() || s.is_none();
    let mut table: Vec<(f64, f64)> = dds_values.iter().cloned().zip(errors.iter().cloned()).collect();
    table.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(CorrelationReport {
        pearson_r: p.unwrap_or(0.0),
        spearman_rho: s.unwrap_or(0.0),
        n: dds_values.len(),
        degenerate,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn image(shape: (usize, usize, usize), seed: u64) -> GeometryImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.0 * shape.1 * shape.2)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        GeometryImage::new(shape, data).unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let a = image((8, 8, 2), 1);
        assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_centered_image_gives_minus_one() {
        let a = image((8, 8, 2), 2);
        let means = a.means();
        let pixels = 64;
        let mut data = vec![0.0; a.data.len()];
        for c in 0..2 {
            for p in 0..pixels {
                data[c * pixels + p] = means[c] - (a.data[c * pixels + p] - means[c]);
            }
        }
        let b = GeometryImage::new(a.shape, data).unwrap();
        assert!((ncc(&a, &b).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_sin_cos_patterns_are_uncorrelated() {
        let m = 32;
        let pi2 = 2.0 * std::f64::consts::PI;
        let mut sa = Vec::new();
        let mut sb = Vec::new();
        for j in 0..m {
            for i in 0..m {
                let _ = j;
                sa.push((pi2 * i as f64 / m as f64).sin());
                sb.push((pi2 * i as f64 / m as f64).cos());
            }
        }
        let a = GeometryImage::new((m, m, 1), sa).unwrap();
        let b = GeometryImage::new((m, m, 1), sb).unwrap();
        assert!(ncc(&a, &b).unwrap().abs() < 1e-10);
    }

    #[test]
    fn symmetry_bounds_and_affine_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..200 {
            let a = image((6, 7, 2), 1000 + trial);
            let b = image((6, 7, 2), 2000 + trial);
            let ab = ncc(&a, &b).unwrap();
            let ba = ncc(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
            // s*b + per-channel t leaves NCC unchanged.
            let s: f64 = rng.gen_range(0.1..3.0);
            let t = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let pixels = 42;
            let mut data = vec![0.0; b.data.len()];
            for c in 0..2 {
                for p in 0..pixels {
                    data[c * pixels + p] = s * b.data[c * pixels + p] + t[c];
                }
            }
            let b2 = GeometryImage::new(b.shape, data).unwrap();
            assert!((ncc(&a, &b2).unwrap() - ab).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_image_is_rejected() {
        let a = image((4, 4, 2), 3);
        let b = GeometryImage::new((4, 4, 2), vec![2.5; 32]).unwrap();
        assert!(matches!(ncc(&a, &b), Err(Error::ZeroVariance)));
    }

    #[test]
    fn dds_examples() {
        let a = image((8, 8, 2), 5);
        assert!((dds(&a, &[a.clone()]).unwrap() - 1.0).abs() < 1e-12);
        let means = a.means();
        let pixels = 64;
        let mut data = vec![0.0; a.data.len()];
        for c in 0..2 {
            for p in 0..pixels {
                data[c * pixels + p] = means[c] - (a.data[c * pixels + p] - means[c]);
            }
        }
        let mirror = GeometryImage::new(a.shape, data).unwrap();
        assert!(dds(&a, &[a.clone(), mirror]).unwrap().abs() < 1e-12);
        assert!(matches!(dds(&a, &[]), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn perfect_linear_anticorrelation() {
        let dds_vals = vec![0.1, 0.4, 0.5, 0.9];
        let errors: Vec<f64> = dds_vals.iter().map(|d| 2.0 - 3.0 * d).collect();
        let rep = correlation_report(&dds_vals, &errors).unwrap();
        assert!((rep.pearson_r + 1.0).abs() < 1e-12);
        assert!((rep.spearman_rho + 1.0).abs() < 1e-12);
        assert!(!rep.degenerate);
        // Table is sorted by dds.
        for w in rep.table.windows(2) {
            assert!(w[0].0 <= w[1].0);
        }
    }

    #[test]
    fn constant_errors_are_degenerate() {
        let rep = correlation_report(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0]).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.pearson_r, 0.0);
        assert_eq!(rep.spearman_rho, 0.0);
    }

    #[test]
    fn spearman_handles_ties_and_monotone_maps() {
        let dds_vals: Vec<f64> = vec![0.1, 0.2, 0.2, 0.7, 0.9];
        let errors: Vec<f64> = dds_vals.iter().map(|d| (-5.0 * d).exp()).collect();
        let rep = correlation_report(&dds_vals, &errors).unwrap();
        // Monotone decreasing map: perfect negative rank correlation up to
        // the tied pair.
        assert!(rep.spearman_rho < -0.9);
        assert!(matches!(
            correlation_report(&[0.0, 1.0], &[0.0, 1.0]),
            Err(Error::InsufficientData(2))
        ));
    }
}
