//! Learning PDE solution operators across geometrically varying domains by
//! mapping each domain onto a shared one (harmonic maps in 2D, closed-form
//! volume parameterization in 3D), training a Fourier neural operator on the
//! shared grid, and scoring cross-domain generalization with a normalized
//! cross-correlation similarity index.

pub mod darcy;
pub mod dataset;
pub mod dds;
pub mod delaunay;
pub mod error;
pub mod fno;
pub mod harmonic;
pub mod mesh;
pub mod sampler;
pub mod seed;
pub mod sparse;
pub mod volparam;

pub use error::{Error, Result};
pub use harmonic::{MappedMesh, SharedDomain2D};
pub use mesh::{EdgeWeightTable, TriMesh};
pub use sampler::GridSample;
