//! Numerical core of the four-player semi-supervised GAN laboratory.
//!
//! Everything here is `no_std` with `alloc`: a reverse-mode tape over dense
//! f64 tensors, the layer set and player networks, the game's losses, data
//! splitting and synthetic datasets, the training schedule, and an exact
//! categorical oracle for the game's equilibrium and EM properties. File
//! formats, the CLI and run management live in the `ugan-lab` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod theory;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Player, Result};
pub use tensor::Tensor;
