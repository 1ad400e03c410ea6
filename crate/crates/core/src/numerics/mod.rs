//! Dense matrices, trainable parameters and reverse-mode gradients.

mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use gradcheck::{check_gradients, GradCheckReport, GradViolation, FD_STEP};
pub use graph::{
    ppeg_side, survival_curve, CustomBackward, Graph, NodeId, PPEG_KERNELS, SURVIVAL_LOG_FLOOR,
};
pub use matrix::{
    dot, gelu, gelu_derivative, gelu_scalar, kl_divergence, layer_norm, matmul, matmul_nt,
    matmul_tn, sigmoid, softmax_rows, softplus, Matrix, KL_FLOOR, LAYER_NORM_EPS,
};
pub use params::{ParamId, ParamStore, Parameter};

pub(crate) use graph::survival_nll_value;

#[cfg(test)]
mod tests;
