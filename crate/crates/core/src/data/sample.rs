use rand::Rng;

use super::{crop_subregion, perturb_box, resample, Frame, PerturbConfig, Sampled, DEFAULT_CROP_MARGIN};
use crate::geom::{Box3D, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    /// Points per frame crop after resampling.
    pub points: usize,
    pub margin: f64,
    pub perturb: PerturbConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { points: 1024, margin: DEFAULT_CROP_MARGIN, perturb: PerturbConfig::default() }
    }
}

/// A previous/current crop pair in world coordinates with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub prev_points: Vec<Vec3>,
    pub cur_points: Vec<Vec3>,
    /// The (possibly perturbed) previous box fed to the network.
    pub input_box: Box3D,
    pub prev_gt: Box3D,
    pub cur_gt: Box3D,
    pub is_pseudo: bool,
    /// Either crop was empty and holds sentinel points.
    pub degenerate: bool,
}

/// Crops both frames around `anchor` and resamples each to `cfg.points`.
pub fn crop_pair<R: Rng + ?Sized>(
    prev: &Frame,
    cur: &Frame,
    anchor: &Box3D,
    cfg: &SampleConfig,
    rng: &mut R,
) -> (Sampled, Sampled) {
    let p = crop_subregion(prev, anchor, cfg.margin);
    let c = crop_subregion(cur, anchor, cfg.margin);
    let p = resample(&p.points, cfg.points, anchor.center, rng);
    let c = resample(&c.points, cfg.points, anchor.center, rng);
    (p, c)
}

pub fn build_training_sample<R: Rng + ?Sized>(
    prev: &Frame,
    cur: &Frame,
    prev_gt: &Box3D,
    cur_gt: &Box3D,
    cfg: &SampleConfig,
    is_pseudo: bool,
    rng: &mut R,
) -> TrainingSample {
    let input_box = perturb_box(prev_gt, &cfg.perturb, rng);
    let (p, c) = crop_pair(prev, cur, &input_box, cfg, rng);
    TrainingSample {
        degenerate: p.degenerate || c.degenerate,
        prev_points: p.points,
        cur_points: c.points,
        input_box,
        prev_gt: *prev_gt,
        cur_gt: *cur_gt,
        is_pseudo,
    }
}
