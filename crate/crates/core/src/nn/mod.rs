// A small reverse-mode automatic differentiation engine over ndarray.
//
// Design constraints that shaped it:
//   - f64 element type throughout, single-threaded, append-only tape:
//     training runs are bit-reproducible given a seed, and analytic
//     gradients verify against central finite differences to ~1e-8.
//   - Parameters live outside the tape (named f64 arrays); each training
//     phase binds the subset it needs as differentiable leaves and the
//     rest as constants, which makes optimizer isolation and parameter
//     freezing structural rather than conventions to be policed.
//   - Ops are eager: each call computes its output immediately and records
//     a closure for the backward pass.

mod adam;
mod check;
mod params;
mod rng;
mod tape;

pub use adam::{clip_global_norm, Adam};
pub use check::{central_difference_check, FdReport};
pub use params::{xavier_uniform, zeros_init, Bound, Params};
pub use rng::{derive_rng, normal_vec, uniform_vec};
pub(crate) use rng::fnv1a64;
pub use tape::{Gradients, Tape, Value};

/// Dynamic-rank f64 tensor, the single array type the engine traffics in.
pub type Arr = ndarray::ArrayD<f64>;

/// Build a tensor from a shape and flat data (row-major).
pub fn arr_from(shape: &[usize], data: Vec<f64>) -> Arr {
    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(shape), data)
        .expect("shape/data length mismatch")
}

/// All-zeros tensor of the given shape.
pub fn zeros(shape: &[usize]) -> Arr {
    ndarray::ArrayD::zeros(ndarray::IxDyn(shape))
}
