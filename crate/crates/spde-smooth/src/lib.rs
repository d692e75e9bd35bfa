//! Spatial smoothing with Matern fields: sparse linear algebra, meshes,
//! finite-element bases, Matern precision construction, and penalized
//! likelihood fitting with REML hyperparameter selection.

pub mod cli;
pub mod fembasis;
pub mod fitter;
pub mod matern;
pub mod mesh;
pub mod sparsela;

pub use fembasis::{fem_matrices, BasisSpec, FemMatrices, MassChoice};
pub use fitter::{
    optimize_hyperparameters, pirls, predict, Dataset, DesignMatrix, FamilyKind,
    FitOptions, FitResult,
};
pub use matern::{matern_covariance, matern_precision, MaternParams};
pub use mesh::{build_mesh_1d, delaunay_triangulate, Mesh, Mesh1D, Mesh2D};
pub use sparsela::{CholFactor, SparseMatrix, SparseSymMatrix};
