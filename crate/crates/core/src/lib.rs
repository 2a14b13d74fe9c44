//! Multi-view radar semantic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`checks`]: finite-difference gradient suites.
//! * [`tensor`]: dense tensors, a reverse-mode tape and the convolution,
//!   pooling and normalisation kernels the networks need.
//! * [`radar`]: FMCW scene synthesis, the range/Doppler/angle FFT chain,
//!   speckle and dB view aggregation.
//! * [`dataset`]: RSEG tensor files, dataset directories, temporal stacking,
//!   class weights, normalisation and coherent flips.
//! * [`model`]: MV-Net, MVA-Net (a)/(b) and TMVA-Net.
//! * [`loss`]: weighted cross entropy, soft Dice, coherence and their sum.
//! * [`metrics`]: IoU / Dice accumulation and reports.
//! * [`train`]: Adam, the learning-rate schedule, checkpoints and the
//!   training / evaluation loops driven by the `mvrss` binary.

pub mod checks;
pub mod dataset;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod radar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
