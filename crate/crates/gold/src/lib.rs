//! GOLD at desk scale: global object-centric representation learning via
//! disentangled slot attention, with a seeded sprite dataset, two-stage
//! variational training, and segmentation / identification metrics.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod dsa;
pub mod error;
pub mod eval;
pub mod featurecodec;
pub mod gocl;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scenegen;
pub mod tensor;
pub mod trainer;

pub use error::{GoldError, Result};
