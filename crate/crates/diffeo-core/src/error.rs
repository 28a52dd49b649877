//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // Mesh construction / topology.
    #[error("non-manifold edge ({0}, {1}): bordered by more than two triangles")]
    NonManifold(usize, usize),
    #[error("degenerate triangle {0}: |signed area| below threshold")]
    DegenerateTriangle(usize),
    #[error("mesh has {0} boundary cycles, expected exactly one")]
    MultipleBoundaries(usize),
    #[error("mesh is not a manifold disk (V - E + F = {0}, expected 1)")]
    NotADisk(i64),
    #[error("invalid mesh input: {0}")]
    InvalidMesh(String),

    // Harmonic map.
    #[error("boundary loop has near-zero perimeter")]
    ZeroPerimeter,
    #[error("singular Laplacian system: non-positive pivot at reduced row {row} (value {pivot:.3e})")]
    SingularSystem { row: usize, pivot: f64 },
    #[error("harmonic map folds over: {fold_count} mapped triangles with non-positive area (min {min_area:.3e})")]
    FoldOver { fold_count: usize, min_area: f64 },

    // Sampling.
    #[error("point ({0}, {1}) lies outside the mapped mesh beyond tolerance")]
    OutsideMesh(f64, f64),

    // Darcy oracle.
    #[error("polygon sampling exhausted {0} attempts without a simple polygon")]
    ExhaustedResampling(usize),
    #[error("coefficient field is not uniformly elliptic: a = {value:.3e} at x = {x:.3}")]
    NonElliptic { value: f64, x: f64 },
    #[error("FEM solve failed: {0}")]
    SolverFailure(String),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // FNO engine.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value detected in {0}")]
    NonFinite(String),
    #[error("sample {0} has near-zero truth norm")]
    ZeroTruthNorm(usize),
    #[error("training diverged at epoch {epoch}: loss = {loss:.3e}")]
    Diverged { epoch: usize, loss: f64 },

    // Volume parameterization.
    #[error("degenerate surface gap at ({x:.3}, {y:.3}): {which} difference = {gap:.3e}")]
    DegenerateGap { x: f64, y: f64, which: &'static str, gap: f64 },

    // DDS metric.
    #[error("geometry image has near-zero centered energy")]
    ZeroVariance,
    #[error("empty training set for DDS")]
    EmptyTrainingSet,
    #[error("insufficient data for correlation report: n = {0} < 3")]
    InsufficientData(usize),

    // I/O and formats.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad inputs or configuration, as opposed to
    /// numerical failures discovered mid-computation. The CLI maps the former
    /// to exit code 2 and the latter to 3.
    pub fn is_validation(&self) -> bool {
        if let Error::Sample { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::InvalidMesh(_)
                | Error::ShapeMismatch(_)
                | Error::EmptyTrainingSet
                | Error::InsufficientData(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Format(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
