//! Dense linear algebra, softmax/cross-entropy kernels and the AdamW step.

mod adamw;
mod matrix;
mod ops;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use matrix::{dot_f64, with_workers, DenseMatrix};
pub use ops::{row_softmax, soft_cross_entropy, STOCHASTIC_TOL};

pub(crate) use ops::{cross_entropy_rows, log_sum_exp, softmax_into};
