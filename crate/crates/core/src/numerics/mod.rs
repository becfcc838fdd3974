//! Minimal dense-tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The op set is deliberately small: exactly the matrix products, activations,
//! row softmax, normalization, gathers, and reductions the model needs. All
//! training and verification math is 64-bit; forward values are exact
//! functions of their inputs (no threading, no fused approximations), so any
//! two code paths that perform the same math produce the same bits.

pub mod fd;
pub mod kernels;
pub mod tape;
mod tensor;

pub use fd::{fd_check, fd_check_coords};
pub use tape::{NodeId, Tape, TempSpec};
pub use tensor::Tensor;
