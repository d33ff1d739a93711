//! CPU tensor engine for the small convolutional networks used by taskmask.
//!
//! Networks are static [`Graph`]s with hand-written backward passes. Batches
//! are processed image by image through [`exec::par_map`], which uses rayon
//! when the `parallel` feature is on and a plain loop otherwise.

pub mod adam;
pub mod checkpoint;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointManifest,
    CHECKPOINT_FORMAT_VERSION,
};
pub use graph::{Activations, Graph, GraphBuilder, Init, Slot};
pub use params::{Grads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
