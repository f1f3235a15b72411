//! Deterministic building blocks for a nuclei segmentation and
//! classification pipeline on H&E tiles.
//!
//! - [`instance`]: label-image types, canonical relabelling, per-instance records
//! - [`hover`]: NP and HoVer training targets
//! - [`postprocess`]: energy, markers, watershed and class voting on network outputs
//! - [`metrics`]: PQ, mPQ+ and r² on per-image cell counts
//! - [`cost`]: cost-sensitive matrix and loss with gradient
//! - [`augment`]: per-instance mask jitter for pseudo-label generation
//! - [`stain`]: optical-density stain separation and restaining to a template
//! - [`pipeline`]: dataset I/O, config and the end-to-end runs behind the CLI

pub mod augment;
pub mod classes;
pub mod cost;
pub mod error;
pub mod hover;
pub mod instance;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod stain;
pub mod synth;

pub use classes::{NucleusClass, PerClass, N_CLASSES};
pub use error::{Error, ErrorKind, Result};
