//! Cell instance segmentation for Nissl-stained histology tiles.
//!
//! The pipeline over-segments each tile with a marker-controlled watershed
//! driven by multi-scale blob responses, then merges fragments with a
//! trained classifier, refines contours with an active-contour step, and
//! drops false positives with a second classifier.

pub mod error;
pub mod eval;
pub mod filters;
pub mod forest;
pub mod kernel;
pub mod merge;
pub mod morphology;
pub mod multiscale;
pub mod preprocess;
pub mod raster;
pub mod refine;
pub mod region;
pub mod synth;
pub mod threshold;
pub mod watershed;

pub use error::{Error, Result};
