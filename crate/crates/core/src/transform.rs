//! Anything that maps a frame to a same-shaped frame: the learned obfuscator,
//! the blur baselines, and fixed fixtures used to calibrate the attacks.

use crate::types::{Dataset, Frame};

pub trait FrameTransform: Sync {
    fn apply(&self, x: &Frame) -> Frame;

    fn apply_dataset(&self, ds: &Dataset) -> Dataset {
        ds.map_frames(|f| self.apply(f))
    }
}

/// `O(x) = x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl FrameTransform for Identity {
    fn apply(&self, x: &Frame) -> Frame {
        x.clone()
    }
}

/// Ignores the input and emits a uniform colour.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub [f32; 3]);

impl FrameTransform for Constant {
    fn apply(&self, x: &Frame) -> Frame {
        Frame::filled(x.id(), x.width(), x.height(), self.0).expect("frame already validated")
    }
}
