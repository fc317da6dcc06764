//! View-invariant contrastive representation learning.
//!
//! The crate covers the whole pipeline at desk scale: the composite
//! contrastive objective ([`losses`]) and its independent oracles
//! ([`verify`]), a small convolutional engine ([`nn`]) and the tapped encoder
//! built on it ([`model`]), augmentation ([`augment`]), multi-view datasets
//! ([`data`]), two-stage training ([`train`]) and evaluation ([`eval`]).

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
