//! Incremental power-of-two weight quantization.
//!
//! Weights of every dense, convolutional and recurrent layer are moved, in
//! growing groups, onto a per-layer set of signed powers of two (plus zero)
//! while the still-floating remainder is retrained. The crate also stores
//! the result as bit-packed codes, runs multiplier-free inference over it,
//! and evaluates ensembles and uncertainty-driven sample selection.
//!
//! # Modules
//!
//! - [`quantlevels`] -- level sets and the per-value quantization rule
//! - [`nncore`] -- tensors, layers, gradients and SGD
//! - [`inq`] -- partition, group-wise quantization and retraining
//! - [`packstore`] -- SQW files, memory accounting, shift-add kernels
//! - [`ensemble`] -- ensemble prediction and suggestive annotation
//! - [`harness`] -- datasets, metrics, configs and experiment recipes
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod ensemble;
pub mod error;
pub mod harness;
pub mod inq;
pub mod nncore;
pub mod packstore;
pub mod quantlevels;

pub use error::{Error, Result, SqwError};
pub use quantlevels::{LevelSet, QuantCode};
