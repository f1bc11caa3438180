//! Surface reconstruction from oriented point clouds by fitting a sparse,
//! hierarchical, compactly supported kernel field and extracting its zero
//! level set.

pub mod bspline;
pub mod cg;
pub mod diagnostics;
pub mod error;
pub mod extract;
pub mod geometry;
pub mod hierarchy;
pub mod io;
pub mod mc_table;
pub mod metrics;
pub mod model;
pub mod model_file;
pub mod normals;
pub mod outofcore;
pub mod pipeline;
pub mod solver;
pub mod sparse;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{Aabb, OrientedPointCloud, Point, Rgb, TriangleMesh, Vector};
pub use hierarchy::{HierarchyParams, VoxelHierarchy, VoxelKey};
pub use model::{FeatureField, KernelModel};
pub use solver::{FitResult, SolveConfig};
