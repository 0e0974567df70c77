//! Dense rank-2 tensors, CSR sparse matrices, a reverse-mode tape and Adam.

mod adam;
mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_EPS, REL_FLOOR};
pub use params::{ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{OpKind, Tape, Var, STANDARDIZE_EPS};
pub use tensor::Tensor;

/// `out += x x^T` for an `m x k` row-major `x`, dot products summed in
/// index-ascending order.
pub(crate) fn gram_into(x: &[f64], m: usize, k: usize, out: &mut [f64]) {
    tensor::kernels::gemm_nt(x, m, k, x, m, out);
}
