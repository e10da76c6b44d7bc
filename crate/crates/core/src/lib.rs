//! GE2E text-independent speaker verification.
//!
//! The crate covers the whole desk-scale pipeline: a log-mel audio frontend
//! ([`dsp`]), a stacked-LSTM embedding network with explicit backpropagation
//! through time ([`net`]), the generalized end-to-end loss ([`loss`]), the
//! Adam training loop ([`trainer`]), d-vector extraction and EER experiments
//! ([`eval`]), and the binary formats, manifests and synthetic corpora used to
//! drive them ([`store`], [`synth`]).

pub mod dsp;
pub mod error;
pub mod eval;
pub mod loss;
pub mod net;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
