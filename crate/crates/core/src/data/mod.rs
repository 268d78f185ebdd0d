//! Frames, tracklets, dataset splits, ingestion and the synthetic scene generator.

mod crop;
pub mod jsonl;
pub mod kitti;
mod sample;
mod split;
pub mod store;
pub mod synth;

pub use crop::{
    build_stamped, crop_subregion, perturb_box, perturb_with, resample, PerturbConfig, PerturbDraw,
    Sampled, StampedCloud, DEFAULT_CROP_MARGIN,
};
pub use sample::{build_training_sample, crop_pair, SampleConfig, TrainingSample};
pub use split::{split_breakpoint, split_by_ratio};
pub use synth::{synth_dataset, synth_sequence, SynthConfig, SynthSequence};

use crate::error::{Error, Result};
use crate::geom::{Box3D, Vec3};

/// One LiDAR sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub frame_id: u32,
    pub points: Vec<Vec3>,
    pub reflectance: Option<Vec<f32>>,
}

impl Frame {
    pub fn new(frame_id: u32, points: Vec<Vec3>) -> Self {
        Frame { frame_id, points, reflectance: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ordered per-frame boxes of one object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub seq: String,
    pub instance_id: String,
    pub category: String,
    pub boxes: Vec<(u32, Box3D)>,
    pub is_pseudo: bool,
}

impl Tracklet {
    /// Validates strictly increasing frame ids and a shared box size.
    pub fn new(
        seq: impl Into<String>,
        instance_id: impl Into<String>,
        category: impl Into<String>,
        boxes: Vec<(u32, Box3D)>,
    ) -> Result<Self> {
        let t = Tracklet {
            seq: seq.into(),
            instance_id: instance_id.into(),
            category: category.into(),
            boxes,
            is_pseudo: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.boxes.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(format!(
                "tracklet {}/{}: frame ids not strictly increasing ({} then {})",
                self.seq, self.instance_id, w[0].0, w[1].0
            )));
        }
        if let Some((_, first)) = self.boxes.first() {
            if !first.size.is_valid() {
                return Err(Error::InvalidInput(format!("tracklet {}: invalid size", self.instance_id)));
            }
            if self.boxes.iter().any(|(_, b)| b.size != first.size) {
                return Err(Error::InvalidInput(format!(
                    "tracklet {}/{}: box size changes across frames",
                    self.seq, self.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.boxes.iter().map(|(f, _)| *f).collect()
    }

    pub fn box_at(&self, i: usize) -> &Box3D {
        &self.boxes[i].1
    }

    pub fn first_box(&self) -> Option<&Box3D> {
        self.boxes.first().map(|(_, b)| b)
    }

    pub fn with_boxes(&self, boxes: Vec<Box3D>) -> Tracklet {
        let boxes = self.boxes.iter().zip(boxes).map(|((f, _), b)| (*f, b)).collect();
        Tracklet { boxes, ..self.clone() }
    }
}

/// A single-object tracking sequence: the frames spanning one target tracklet.
/// `frames[i]` is the sweep for `target.boxes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub scene: usize,
    pub frames: Vec<Frame>,
    pub target: Tracklet,
    /// Other annotated objects in the same frames (distractor statistics).
    pub others: Vec<Tracklet>,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if self.frames.len() != self.target.len() {
            return Err(Error::InvalidInput(format!(
                "sequence {}: {} frames but {} target boxes",
                self.name,
                self.frames.len(),
                self.target.len()
            )));
        }
        for (f, (id, _)) in self.frames.iter().zip(&self.target.boxes) {
            if f.frame_id != *id {
                return Err(Error::InvalidInput(format!(
                    "sequence {}: frame {} does not match box frame {}",
                    self.name, f.frame_id, id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A sequence with only its first box known. `hidden` keeps the ground truth
/// when it exists (synthetic data) so pseudo-label quality can be measured.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSequence {
    pub name: String,
    pub scene: usize,
    pub frames: Vec<Frame>,
    pub first_box: Box3D,
    pub category: String,
    pub hidden: Option<Tracklet>,
}

impl UnlabeledSequence {
    pub fn from_sequence(seq: &Sequence) -> Self {
        UnlabeledSequence {
            name: seq.name.clone(),
            scene: seq.scene,
            frames: seq.frames.clone(),
            first_box: *seq.target.box_at(0),
            category: seq.target.category.clone(),
            hidden: Some(seq.target.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub labeled: Vec<Sequence>,
    pub unlabeled: Vec<UnlabeledSequence>,
}

impl SequenceDataset {
    pub fn labeled_frame_count(&self) -> usize {
        self.labeled.iter().map(Sequence::len).sum()
    }
}

/// Mixes a base seed with a stream tag and index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
