//! Learnable fast-wavelet-transform linear layers and wavelet-compressed GRUs.
//!
//! A dense weight matrix is replaced by `D · FWT⁻¹ · G · Π · FWT · B`, where
//! `D`, `G`, `B` are trainable diagonals, `Π` is a fixed random permutation and
//! the transform's filter bank is itself trained. A soft "wavelet loss" keeps
//! the learned filters close to a perfect-reconstruction, alias-free bank.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation over `f64` tensors.
//! - [`fwt`]: filter banks, multilevel analysis/synthesis, wavelet loss terms.
//! - [`wavelet_linear`]: the structured linear layer.
//! - [`recurrent`]: GRU cell with any recurrent matrix swapped for the layer.
//! - [`tasks`] and [`mnist`]: synthetic benchmarks, IDX loading, metrics.
//! - [`training`]: optimizers, the training loop and model gradient checks.
//! - [`cli`]: the `wavegru` command-line front end.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod fwt;
pub mod gradcheck;
pub mod mnist;
pub mod params;
pub mod recurrent;
pub mod tasks;
pub mod training;
pub mod wavelet_linear;

pub use error::{Error, Result};
