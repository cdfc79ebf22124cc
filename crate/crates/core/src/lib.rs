//! Spectral domain-adaptation toolkit.
//!
//! - [`spectral`]: exact 2D DFTs and low-frequency amplitude transfer between
//!   images.
//! - [`fusion`]: multi-model probability averaging, pseudo-label gating and a
//!   bounded-memory streaming engine over compressed on-disk maps.
//! - [`dataprep`]: image/label I/O, seeded resize-and-crop, pairing, label
//!   remapping.
//! - [`eval`]: confusion matrices, IoU/mIoU and error tables.

pub mod dataprep;
pub mod error;
pub mod eval;
pub mod fft;
pub mod fusion;
pub mod label;
pub mod spectral;

pub use error::{Error, Result};
pub use label::{LabelMap, IGNORE_LABEL};
pub use spectral::ImageTensor;
