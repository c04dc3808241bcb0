//! Triangulation, piecewise-linear basis, FEM matrices and the projection
//! from mesh weights to observation locations.

mod fem;
mod mesh;
mod projector;

pub use fem::{assemble_fem, FemMatrices};
pub use mesh::{build_mesh, Rect, TriMesh};
pub use projector::{project, Projector, POINT_TOLERANCE};
