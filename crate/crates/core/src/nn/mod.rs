//! Forward and backward passes for the primitives the blocks are built from.
//!
//! Every op comes in up to three forms: a plain forward, a `*_taped` forward
//! that also returns the tape its backward pass needs, and a `*_backward`
//! taking that tape and the upstream gradient. Tapes own copies of what they
//! need, so a tape outlives the parameters it was recorded with.

pub mod act;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use act::{act, act_backward, act_taped, ActTape, Activation};
pub use conv::{conv2d, conv2d_backward, conv2d_taped, ConvGrads, ConvParams, ConvTape};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use linear::{linear, linear_backward, linear_taped, LinearGrads, LinearParams, LinearTape};
pub use loss::{softmax_xent, softmax_xent_backward, XentTape};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_taped, BnGrads, BnParams, BnTape, Mode, BN_EPS, BN_MOMENTUM};
pub use pool::{
    avgpool_global, avgpool_global_backward, maxpool2d, maxpool2d_backward, maxpool2d_taped,
    upsample_nearest, upsample_nearest_backward, MaxPoolTape,
};
