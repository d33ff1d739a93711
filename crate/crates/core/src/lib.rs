pub mod baselines;
pub mod dataset_io;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod trainer;
pub mod transform;
pub mod types;

pub use error::{CoreError, Result};
pub use types::{Annotation, BBox, Dataset, Frame, Joint, KeypointSet, Split};
