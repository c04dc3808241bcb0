//! Sparse symmetric linear algebra: storage, orderings, Cholesky
//! factorization and Gaussian sampling with a sparse precision.

mod cholesky;
mod market;
mod matrix;
mod ordering;

pub use cholesky::{factorize, standard_normals, CholFactor, SymbolicCholesky, PIVOT_TOLERANCE};
pub use market::{read_matrix_market, write_matrix_market};
pub use matrix::SparseSym;
pub use ordering::Ordering;
