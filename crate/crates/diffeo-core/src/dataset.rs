//! Dataset persistence: per-sample grid tensors as raw little-endian f32
//! files with JSON manifests, plus the dataset-level manifest with config
//! echo, per-sample seeds, and checksums. Bit-exact across platforms.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::darcy::{CoefficientSpec, DarcyConfig, PolygonSpec};
use crate::error::{Error, Result};
use crate::harmonic::{BijectivityReport, SharedDomain2D};
use crate::sampler::GridSample;

/// Scalar tensors stored per sample, one raw file each, named
/// "<id>_<field>.f32". Row-major with the x index fastest.
pub const FIELD_NAMES: [&str; 6] = ["shared_x", "shared_y", "phys_x", "phys_y", "a", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSampleManifest {
    pub resolution: (usize, usize),
    pub shared: SharedDomain2D,
    pub sample_id: String,
    pub seed: u64,
    pub fields: Vec<String>,
}

pub fn write_tensor_f32(path: &Path, data: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for &v in data {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensor_f32(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * len {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            4 * len,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn split_xy(points: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    points.iter().map(|p| (p[0], p[1])).unzip()
}

/// Write one sample's manifest and tensor files into `dir`; returns the
/// file-name -> sha256 map.
pub fn save_grid_sample(
    dir: &Path,
    id: &str,
    grid: &GridSample,
    shared: &SharedDomain2D,
    seed: u64,
) -> Result<BTreeMap<String, String>> {
    let (sx, sy) = split_xy(&grid.shared_points);
    let (px, py) = split_xy(&grid.physics_points);
    let mut tensors: Vec<(&str, &[f64])> = vec![
        ("shared_x", &sx),
        ("shared_y", &sy),
        ("phys_x", &px),
        ("phys_y", &py),
        ("a", &grid.param_field),
    ];
    if let Some(u) = &grid.solution_field {
        tensors.push(("u", u));
    }
    let expected = grid.resolution.0 * grid.resolution.1;
    let mut checksums = BTreeMap::new();
    for (name, data) in &tensors {
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "field {name}: {} values for a {}x{} grid",
                data.len(),
                grid.resolution.0,
                grid.resolution.1
            )));
        }
        let file = format!("{id}_{name}.f32");
        write_tensor_f32(&dir.join(&file), data)?;
        checksums.insert(file.clone(), sha256_file(&dir.join(&file))?);
    }
    let manifest = GridSampleManifest {
        resolution: grid.resolution,
        shared: *shared,
        sample_id: id.to_string(),
        seed,
        fields: tensors.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let manifest_file = format!("{id}.json");
    fs::write(
        dir.join(&manifest_file),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    checksums.insert(
        manifest_file.clone(),
        sha256_file(&dir.join(&manifest_file))?,
    );
    Ok(checksums)
}

pub fn load_grid_sample(dir: &Path, id: &str) -> Result<(GridSample, GridSampleManifest)> {
    let manifest: GridSampleManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{id}.json")))?)?;
    let len = manifest.resolution.0 * manifest.resolution.1;
    let tensor = |name: &str| read_tensor_f32(&dir.join(format!("{id}_{name}.f32")), len);
    let join_xy = |xs: Vec<f64>, ys: Vec<f64>| -> Vec<[f64; 2]> {
        xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect()
    };
    let shared_points = join_xy(tensor("shared_x")?, tensor("shared_y")?);
    let physics_points = join_xy(tensor("phys_x")?, tensor("phys_y")?);
    let param_field = tensor("a")?;
    let solution_field = if manifest.fields.iter().any(|f| f == "u") {
        Some(tensor("u")?)
    } else {
        None
    };
    Ok((
        GridSample {
            resolution: manifest.resolution,
            shared_points,
            physics_points,
            param_field,
            solution_field,
        },
        manifest,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub polygon: PolygonSpec,
    pub coeff: CoefficientSpec,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub bijectivity: BijectivityReport,
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DarcyConfig,
    /// Forcing function used by the oracle, recorded for reproducibility.
    pub forcing: String,
    pub shared: SharedDomain2D,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DatasetManifest> {
        Ok(serde_json::from_str(&fs::read_to_string(
            dir.join("manifest.json"),
        )?)?)
    }
}

/// Load every sample listed in a dataset manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<GridSample>)> {
    let manifest = DatasetManifest::load(dir)?;
    let mut grids = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let (grid, _) = load_grid_sample(dir, &rec.id)?;
        grids.push(grid);
    }
    Ok((manifest, grids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darcy::{generate_dataset, DarcyConfig, PolygonFamily};

    fn small_config() -> DarcyConfig {
        DarcyConfig {
            n: 2,
            family: PolygonFamily::Pentagon,
            resolution: 9,
            h: 0.9,
            seed: 11,
            ..DarcyConfig::default()
        }
    }

    #[test]
    fn tensor_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f32");
        let data = vec![0.0, 1.5, -3.25, 1.0e-8, 6.02e23];
        write_tensor_f32(&path, &data).unwrap();
        let back = read_tensor_f32(&path, data.len()).unwrap();
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert!(read_tensor_f32(&path, 4).is_err());
    }

    #[test]
    fn dataset_round_trip_and_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&small_config(), dir.path()).unwrap();
        assert_eq!(manifest.samples.len(), 2);
        for rec in &manifest.samples {
            assert!(rec.bijectivity.ok);
            for (file, sum) in &rec.checksums {
                assert_eq!(&sha256_file(&dir.path().join(file)).unwrap(), sum);
            }
        }
        let (loaded, grids) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(grids.len(), 2);
        assert!(grids[0].solution_field.is_some());
        // f32 storage round-trips to within f32 precision.
        let fresh = crate::darcy::generate_sample(&small_config(), 0).unwrap();
        for (a, b) in fresh.grid.param_field.iter().zip(&grids[0].param_field) {
            assert!((a - b).abs() <= (a.abs() * 1e-6).max(1e-6));
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_dataset(&small_config(), d1.path()).unwrap();
        let m2 = generate_dataset(&small_config(), d2.path()).unwrap();
        assert_eq!(m1, m2);
        for rec in &m1.samples {
            for file in rec.checksums.keys() {
                let a = std::fs::read(d1.path().join(file)).unwrap();
                let b = std::fs::read(d2.path().join(file)).unwrap();
                assert_eq!(a, b, "{file} differs between runs");
            }
        }
    }

    #[test]
    fn resolution_nesting_across_datasets() {
        // The 2R-1 grid contains the R grid as an exact sub-lattice, and the
        // pulled-back physics points coincide there.
        let coarse = crate::darcy::generate_sample(&small_config(), 1).unwrap();
        let fine_cfg = DarcyConfig { resolution: 17, ..small_config() };
        let fine = crate::darcy::generate_sample(&fine_cfg, 1).unwrap();
        let r = 9;
        for j in 0..r {
            for i in 0..r {
                let c = coarse.grid.physics_points[j * r + i];
                let f = fine.grid.physics_points[(2 * j) * (2 * r - 1) + 2 * i];
                assert!((c[0] - f[0]).abs() < 1e-12 && (c[1] - f[1]).abs() < 1e-12);
            }
        }
    }
}
