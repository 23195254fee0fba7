//! Contrastive representation learning with autoencoder-embedding projectors.
//!
//! The crate is built bottom-up: [`tensor`] and [`rng`] are the numeric
//! substrate, [`nn`] provides layers with hand-written backward rules, and
//! [`optim`]/[`losses`] drive training. [`autoencoder`] pretrains the
//! embedding that [`simclr`] transplants into a projector, [`eval`] runs the
//! linear probe, and [`expcli`] sweeps the experiment grid.

pub mod augment;
pub mod autoencoder;
pub mod data;
pub mod error;
pub mod eval;
pub mod expcli;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod simclr;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
