//! Dense flow fields between two images by multi-scale patch
//! matching, with outlier filtering and evaluation tools.

pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod imageio;
pub mod matcher;
pub mod synth;

pub use error::{FlowError, Result};
pub use imageio::{build_scale_space, load_lab, LabImage, ScaleSpace};
pub use matcher::{compute_flow, FlowField, MatchParams, Variant};
