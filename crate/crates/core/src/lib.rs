//! Text-guided weakly semi-supervised tumor segmentation and cancer detection.
//!
//! A segmentation teacher trained on a small fully annotated subset produces
//! pseudo tumor masks; a joint segmentation and detection student then trains
//! on every record, with report-derived diagnosis and location labels entering
//! through similarity to frozen text-prompt embeddings.

// `!(x >= 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod grid;
pub mod interp;
pub mod io;
pub mod losses;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod text;
pub mod util;

pub use error::{Error, Result};
