use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taskmask_nn::{Scalar, Tensor};

use crate::error::{CoreError, Result};

pub const MIN_FRAME_SIDE: usize = 16;

/// An RGB image with values in `[0, 1]`, stored row-major and interleaved
/// (`H×W×3`).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    id: String,
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(CoreError::record(
                &id,
                format!("frame {width}x{height} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"),
            ));
        }
        if pixels.len() != width * height * 3 {
            return Err(CoreError::record(
                &id,
                format!("expected {} values, got {}", width * height * 3, pixels.len()),
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::record(&id, format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            id,
            width,
            height,
            pixels,
        })
    }

    /// Builds a frame from arbitrary reals, clamping into `[0, 1]`.
    pub fn from_clamped(id: impl Into<String>, width: usize, height: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for v in &mut pixels {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(id, width, height, pixels)
    }

    pub fn filled(id: impl Into<String>, width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(id, width, height, pixels)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Planar `[3, H, W]` copy for the networks.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let plane = self.width * self.height;
        let mut data = vec![S::zero(); 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = S::lit(px[c] as f64);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], data)
    }

    /// Inverse of [`Frame::to_tensor`]; values are clamped into `[0, 1]`.
    pub fn from_tensor<S: Scalar>(id: impl Into<String>, t: &Tensor<S>) -> Result<Self> {
        let (c, h, w) = t.chw();
        if c != 3 {
            return Err(CoreError::InvalidArgument(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        let mut pixels = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            for ch in 0..3 {
                pixels[i * 3 + ch] = t.data()[ch * plane + i].as_f64() as f32;
            }
        }
        Self::from_clamped(id, w, h, pixels)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Axis-aligned box in continuous pixel coordinates, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub cls: u32,
    /// Confidence for predictions; `None` for ground truth.
    pub score: Option<f64>,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, cls: u32) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            cls,
            score: None,
        };
        b.validate()?;
        Ok(b)
    }

    /// Clips the coordinates to a `width`×`height` frame before validating.
    pub fn clipped(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        cls: u32,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let (w, h) = (width as f64, height as f64);
        Self::new(
            x_min.clamp(0.0, w),
            y_min.clamp(0.0, h),
            x_max.clamp(0.0, w),
            y_max.clamp(0.0, h),
            cls,
        )
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score.clamp(0.0, 1.0));
        self
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(CoreError::InvalidArgument(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    /// 1 when the joint is labelled visible.
    pub v: u8,
}

/// Keypoints of one person. `area` is the object scale `s²` used by OKS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub joints: Vec<Joint>,
    pub area: f64,
    pub score: Option<f64>,
}

impl KeypointSet {
    pub fn new(joints: Vec<Joint>, area: f64) -> Result<Self> {
        if !(area > 0.0 && area.is_finite()) {
            return Err(CoreError::InvalidArgument(format!("keypoint area {area} must be positive")));
        }
        if joints.iter().any(|j| j.v > 1) {
            return Err(CoreError::InvalidArgument("joint visibility must be 0 or 1".into()));
        }
        Ok(Self {
            joints,
            area,
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

/// Ground truth of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub frame_id: String,
    pub boxes: Vec<BBox>,
    pub keypoints: Vec<KeypointSet>,
    /// Identity worn by the person glyphs of a synthetic frame.
    pub identity: Option<u32>,
}

impl Annotation {
    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            boxes: Vec::new(),
            keypoints: Vec::new(),
            identity: None,
        }
    }

    pub fn boxes_of(&self, cls: u32) -> impl Iterator<Item = &BBox> {
        self.boxes.iter().filter(move |b| b.cls == cls)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Frames in order plus one annotation per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    frames: Vec<Frame>,
    annotations: BTreeMap<String, Annotation>,
    pub split: Split,
    pub n_identities: Option<u32>,
}

impl Dataset {
    pub fn new(
        frames: Vec<Frame>,
        annotations: Vec<Annotation>,
        split: Split,
        n_identities: Option<u32>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for a in annotations {
            let id = a.frame_id.clone();
            if map.insert(id.clone(), a).is_some() {
                return Err(CoreError::record(&id, "duplicate annotation"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for f in &frames {
            if !seen.insert(f.id()) {
                return Err(CoreError::record(f.id(), "duplicate frame id"));
            }
            if !map.contains_key(f.id()) {
                return Err(CoreError::record(f.id(), "frame has no annotation"));
            }
        }
        if map.len() != frames.len() {
            let orphan = map.keys().find(|k| !seen.contains(k.as_str())).cloned().unwrap_or_default();
            return Err(CoreError::record(&orphan, "annotation without frame"));
        }
        Ok(Self {
            frames,
            annotations: map,
            split,
            n_identities,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn annotation(&self, frame_id: &str) -> &Annotation {
        &self.annotations[frame_id]
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.frames.iter().map(|f| &self.annotations[f.id()])
    }

    /// `(frame, annotation)` pairs in frame order.
    pub fn iter(&self) -> impl Iterator<Item = (&Frame, &Annotation)> {
        self.frames.iter().map(|f| (f, &self.annotations[f.id()]))
    }

    /// A dataset with the same annotations and transformed frames.
    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame + Sync + Send) -> Self {
        let frames = taskmask_nn::exec::par_map(&self.frames, |fr| f(fr).with_id(fr.id()));
        Self {
            frames,
            annotations: self.annotations.clone(),
            split: self.split,
            n_identities: self.n_identities,
        }
    }

    pub fn take(&self, n: usize) -> Self {
        let frames: Vec<Frame> = self.frames.iter().take(n).cloned().collect();
        let annotations = frames
            .iter()
            .map(|f| (f.id().to_string(), self.annotations[f.id()].clone()))
            .collect();
        Self {
            frames,
            annotations,
            split: self.split,
            n_identities: self.n_identities,
        }
    }

    /// SHA-256 over pixels (as 8-bit values) and annotation records.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (f, a) in self.iter() {
            h.update(f.id().as_bytes());
            h.update((f.width() as u64).to_le_bytes());
            h.update((f.height() as u64).to_le_bytes());
            h.update(frame_bytes(f));
            h.update(format!("{a:?}").as_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// 8-bit quantization used on disk and for hashing.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_bytes(f: &Frame) -> Vec<u8> {
    f.pixels().iter().map(|&v| quantize(v)).collect()
}

pub fn frame_hash(f: &Frame) -> String {
    let mut h = Sha256::new();
    for v in f.pixels() {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_out_of_range_and_tiny() {
        assert!(Frame::new("a", 16, 16, vec![0.5; 16 * 16 * 3]).is_ok());
        assert!(Frame::new("a", 15, 16, vec![0.5; 15 * 16 * 3]).is_err());
        let mut px = vec![0.5; 16 * 16 * 3];
        px[7] = 1.5;
        assert!(Frame::new("a", 16, 16, px).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let px: Vec<f32> = (0..16 * 20 * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        let f = Frame::new("a", 20, 16, px).unwrap();
        let t = f.to_tensor::<f32>();
        assert_eq!(t.shape(), &[3, 16, 20]);
        assert_eq!(Frame::from_tensor("a", &t).unwrap(), f);
    }

    #[test]
    fn bbox_validation_and_clipping() {
        assert!(BBox::new(5.0, 0.0, 5.0, 1.0, 0).is_err());
        let b = BBox::clipped(-3.0, 2.0, 70.0, 10.0, 1, 64, 64).unwrap();
        assert_eq!(b.xyxy(), [0.0, 2.0, 64.0, 10.0]);
    }

    #[test]
    fn dataset_requires_one_annotation_per_frame() {
        let f = Frame::filled("a", 16, 16, [0.0; 3]).unwrap();
        assert!(Dataset::new(vec![f.clone()], vec![], Split::Train, None).is_err());
        assert!(Dataset::new(vec![f.clone(), f.clone()], vec![Annotation::empty("a")], Split::Train, None).is_err());
        assert!(Dataset::new(vec![f], vec![Annotation::empty("a")], Split::Train, None).is_ok());
    }
}
