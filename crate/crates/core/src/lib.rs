//! Training lab for classifiers that learn from a concurrently trained
//! generative adversarial network.
//!
//! The crate pairs a DCGAN-style generator and discriminator with a separate
//! residual classifier. Each step the classifier sees a labeled real batch and
//! a generated batch; generated images whose softmax confidence clears a
//! threshold are pseudo-labeled with their argmax and contribute a
//! down-weighted cross-entropy term. Baselines (supervised only and a
//! two-headed shared discriminator) and a class-conditional variant are
//! trained by the same loop.
//!
//! ```no_run
//! use ecgan::data::synth_shapes;
//! use ecgan::train::{train, HyperParams, Models, Variant};
//!
//! let data = synth_shapes(100, 3, 32, 0.2, 1)?;
//! let hp = HyperParams { epochs: 2, ..HyperParams::default() };
//! let outcome = train(Variant::EcGan, &data, None, &hp, &Models::default(), &mut ())?;
//! println!("final train accuracy {:.3}", outcome.history.last().unwrap().train_acc);
//! # Ok::<(), ecgan::Error>(())
//! ```

pub mod data;
mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod train;

pub use ecgan_tensor as tensor;
pub use error::{DataError, Error, Result};
