//! Minimal reverse-mode autodiff for the Q-network.
//!
//! A [`Graph`] records every operation of one forward pass over batched
//! tensors; [`Graph::backward`] walks the record in reverse and returns
//! gradients for every parameter and node. Layers are described by a
//! [`NetworkSpec`] and bound to named tensors in a [`ParamSet`].
//!
//! Layouts: dense activations are `[batch, features]`; convolution
//! activations are channels-last `[batch, height, width, channels]`; dense
//! weights are `[in, out]`; convolution kernels are `[kh, kw, in, out]`.

mod graph;
mod io;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, SectionGroup, Var};
pub use io::{load_weights, read_container, save_weights, write_container, WeightsFile};
pub use layers::{Layer, NetworkSpec, Sequential, INIT_SCALE};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("corrupt weights container: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn gemm<T: crate::Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    use ndarray::{linalg::general_mat_mul, ArrayView2, ArrayViewMut2};
    let av = if a_t {
        ArrayView2::from_shape((k, m), a).expect("a shape").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("a shape")
    };
    let bv = if b_t {
        ArrayView2::from_shape((n, k), b).expect("b shape").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("b shape")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("c shape");
    let beta = if accumulate { T::one() } else { T::zero() };
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}
