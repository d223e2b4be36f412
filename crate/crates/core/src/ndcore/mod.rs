//! Dense row-major tensors, a keyed counter-based RNG, and a reverse-mode tape.
//!
//! Everything above this module (patches, the transformer, the loss) is built
//! from these pieces. Double precision is the default element type; `f32` is
//! supported everywhere a [`Real`] is accepted.

pub mod kernels;
pub mod omnt;
pub(crate) mod par;
pub mod rng;
pub mod tape;
mod tensor;

pub use rng::{mix64, Rng, Stream};
pub use tape::{BackwardFault, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
