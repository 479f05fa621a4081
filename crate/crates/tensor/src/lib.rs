//! Dense real tensors and a Wengert-style tape for reverse-mode automatic
//! differentiation.
//!
//! The operation set is deliberately narrow: exactly what is needed to train
//! DCGAN-style generators and discriminators and small residual classifiers
//! on the CPU. Forward values are computed eagerly when an op is recorded on a
//! [`Tape`]; [`Tape::backward`] replays the recorded nodes in reverse.
//!
//! ```
//! use ecgan_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
//! let y = tape.sum(x);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
//! ```
//!
//! Tensors and tapes are generic over the element type and default to
//! `f32`. The same graph instantiated at `f64` serves as the finite-difference
//! oracle in [`gradcheck`].

mod error;
mod gemm;
pub mod gradcheck;
mod kernels;
mod real;
mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use real::Real;
pub use rng::Rng;
pub use tape::{Activation, NormMode, Tape, Var, BCE_EPS};
pub use tensor::Tensor;
