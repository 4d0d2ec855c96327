//! Dense linear-algebra kernels shared by every other module.

mod cholesky;
mod io;
mod matrix;

pub use cholesky::{cholesky, inverse_gradient, ls_solve, CholFactor, PIVOT_TOLERANCE};
pub use io::{
    decode_payload, encode_payload, matrix_paths, read_matrix, write_matrix, MatrixHeader,
};
pub use matrix::{axpy, dot, max_abs, norm2, sub, Matrix, Vector};
