//! Dense `f64` matrices with reverse-mode differentiation and SGD.

pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use kernels::{
    cosine_distance, entropy, normalize_rows, normalized, pairwise_cosine_distance, softmax,
    NORM_FLOOR,
};
pub use optim::{Param, Sgd};
pub use tape::{Axis, GradientMap, ParamId, Primitive, Tape, Var};
pub use tensor::{Shape, Tensor};
