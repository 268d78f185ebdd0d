//! Inference pipelines: M²-Track, M-Vanilla, ensembling, sequence tracking and
//! matcher-based refinement.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{crop_subregion, derive_seed, resample, Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geom::{
    from_canonical_point, point_in_box, points_in_box, rtm_between, to_canonical, to_canonical_point, transform_box, Box3D,
    Rtm4, Size3, Vec3,
};
use crate::model::{
    m2track_forward, pose_tensor, pose_to_box, rtm_from_row, stage1_forward, stage2_forward, vanilla_forward, ForwardOpts,
    M2TrackNets, Model, Nets, PairInput, Stacked, Stage1Vars, DYNAMIC,
};
use crate::nn::{Graph, ParamStore, Tensor, VanillaNet};

const STREAM_TRACK: u64 = 0x7472_6163;
const STREAM_REFINE: u64 = 0x7265_666e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionState {
    pub rtm: Rtm4,
    pub dynamic_logits: [f64; 2],
    pub is_dynamic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerOutput {
    pub refined_prev_box: Box3D,
    pub coarse_box: Box3D,
    pub refined_box: Box3D,
    /// Target decision per stacked crop point (previous frame first).
    pub mask: Vec<bool>,
    pub motion: Option<MotionState>,
    /// Empty crop or empty segmentation; every box equals the previous one.
    pub degenerate: bool,
}

impl TrackerOutput {
    pub fn fallback(prev_box: &Box3D, mask: Vec<bool>) -> Self {
        TrackerOutput {
            refined_prev_box: *prev_box,
            coarse_box: *prev_box,
            refined_box: *prev_box,
            mask,
            motion: None,
            degenerate: true,
        }
    }

    fn single(prev_box: &Box3D, b: Box3D) -> Self {
        TrackerOutput {
            refined_prev_box: *prev_box,
            coarse_box: b,
            refined_box: b,
            mask: Vec::new(),
            motion: None,
            degenerate: false,
        }
    }
}

/// One tracking step: previous frame and box plus current frame to current box.
/// `key` identifies the step for any internal sampling randomness.
pub trait StepTracker: Sync {
    fn step(&self, prev: &Frame, cur: &Frame, prev_box: &Box3D, key: u64) -> TrackerOutput;
}

/// Crops both frames around `anchor`, resampled to `n` points each; `None` when either is empty.
pub fn crop_inputs(prev: &Frame, cur: &Frame, anchor: &Box3D, n: usize, margin: f64, rng: &mut ChaCha8Rng) -> Option<PairInput> {
    let p = resample(&crop_subregion(prev, anchor, margin).points, n, anchor.center, rng);
    let c = resample(&crop_subregion(cur, anchor, margin).points, n, anchor.center, rng);
    if p.degenerate || c.degenerate {
        return None;
    }
    Some(PairInput { prev: p.points, cur: c.points, size: anchor.size })
}

/// Output of the segmentation network over one stamped crop pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub points: Vec<Vec3>,
    pub time: Vec<u8>,
    pub box_aware: Vec<[f64; 9]>,
    pub mask: Vec<bool>,
    pub degenerate: bool,
}

impl Segmentation {
    pub fn selected(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Target points as `(point, time)` pairs.
    pub fn targets(&self) -> Vec<(Vec3, u8)> {
        self.selected().into_iter().map(|i| (self.points[i], self.time[i])).collect()
    }
}

/// Two-stage motion-centric tracker over shared read-only weights.
pub struct M2Track<'a> {
    pub store: &'a ParamStore,
    pub nets: &'a M2TrackNets,
    pub points: usize,
    pub margin: f64,
    pub seed: u64,
    /// Test seam: classify every target as static.
    pub force_static: bool,
}

/// Single-stage tracker regressing one motion from the whole stamped cloud.
pub struct MVanilla<'a> {
    pub store: &'a ParamStore,
    pub net: &'a VanillaNet,
    pub points: usize,
    pub margin: f64,
    pub seed: u64,
}

/// Builds the inference tracker matching a model's architecture.
pub fn model_tracker(model: &Model, seed: u64) -> Box<dyn StepTracker + '_> {
    let points = model.points();
    let margin = crate::data::DEFAULT_CROP_MARGIN;
    match &model.nets {
        Nets::M2Track(nets) => Box::new(M2Track { store: &model.store, nets, points, margin, seed, force_static: false }),
        Nets::Vanilla(net) => Box::new(MVanilla { store: &model.store, net, points, margin, seed }),
    }
}

fn step_rng(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TRACK, key))
}

impl<'a> M2Track<'a> {
    pub fn new(model: &'a Model, seed: u64) -> Option<Self> {
        match &model.nets {
            Nets::M2Track(nets) => Some(M2Track {
                store: &model.store,
                nets,
                points: model.points(),
                margin: crate::data::DEFAULT_CROP_MARGIN,
                seed,
                force_static: false,
            }),
            Nets::Vanilla(_) => None,
        }
    }

    /// Segments the stamped crop pair; `mask_override` replaces the predicted mask.
    pub fn segment_target(&self, pair: &PairInput, prev_box: &Box3D, mask_override: Option<&[bool]>) -> Segmentation {
        let mut g = Graph::new(self.store, false);
        let st = Stacked::new(std::slice::from_ref(pair));
        let poses = g.constant(pose_tensor(&[*prev_box]));
        let (x, _) = crate::model::stamped_input(&mut g, &st, poses);
        let seg = self.nets.seg.forward(&mut g, x, &st.offsets, true);
        let v = g.value(seg);
        let mask: Vec<bool> = match mask_override {
            Some(m) => m.to_vec(),
            None => (0..v.rows).map(|i| v.get(i, 1) > v.get(i, 0)).collect(),
        };
        let box_aware = (0..v.rows).map(|i| std::array::from_fn(|k| v.get(i, 2 + k))).collect();
        let degenerate = !mask.iter().any(|m| *m);
        Segmentation { points: st.points, time: st.time, box_aware, mask, degenerate }
    }

    fn target_rows(seg: &Segmentation, prev_box: &Box3D) -> (Vec<usize>, Tensor) {
        let sel = seg.selected();
        let mut data = Vec::with_capacity(sel.len() * 13);
        for &i in &sel {
            let l = to_canonical_point(seg.points[i], prev_box);
            data.extend_from_slice(&[l.x, l.y, l.z, seg.time[i] as f64]);
            data.extend_from_slice(&seg.box_aware[i]);
        }
        let t = Tensor::from_vec(sel.len(), 13, data);
        (sel, t)
    }

    /// Stage I on a non-degenerate segmentation: (motion, refined previous box, coarse box).
    pub fn stage1_step(&self, seg: &Segmentation, prev_box: &Box3D) -> (MotionState, Box3D, Box3D) {
        let mut g = Graph::new(self.store, false);
        let (sel, x) = Self::target_rows(seg, prev_box);
        let x = g.constant(x);
        let poses = g.constant(pose_tensor(&[*prev_box]));
        let s1 = stage1_forward(&mut g, &self.nets.stage1, x, &[0, sel.len()], poses, self.force_static, true);
        let logits = g.value(s1.logits);
        let motion = MotionState {
            rtm: rtm_from_row(g.value(s1.motion), 0),
            dynamic_logits: [logits.get(0, 0), logits.get(0, 1)],
            is_dynamic: s1.dynamic[0],
        };
        let refined_prev = pose_to_box(g.value(s1.refined_prev), 0, prev_box.size);
        let coarse = pose_to_box(g.value(s1.coarse), 0, prev_box.size);
        (motion, refined_prev, coarse)
    }

    /// Stage II: merges the target points (previous ones carried by the motion when
    /// dynamic), canonicalizes them to the coarse box and regresses a final offset.
    pub fn stage2_step(&self, seg: &Segmentation, refined_prev: &Box3D, coarse: &Box3D) -> Box3D {
        let mut g = Graph::new(self.store, false);
        let sel = seg.selected();
        let pts: Vec<Vec3> = sel.iter().map(|&i| seg.points[i]).collect();
        let time: Vec<u8> = sel.iter().map(|&i| seg.time[i]).collect();
        let ba = g.constant(Tensor::from_vec(sel.len(), 9, sel.iter().flat_map(|&i| seg.box_aware[i]).collect()));
        let zero = g.constant(Tensor::zeros(1, 4));
        let s1 = Stage1Vars {
            motion: zero,
            logits: zero,
            refine: zero,
            dynamic: vec![false],
            refined_prev: g.constant(pose_tensor(&[*refined_prev])),
            coarse: g.constant(pose_tensor(&[*coarse])),
        };
        let s2 = stage2_forward(&mut g, &self.nets.stage2, &pts, &time, &[0, sel.len()], ba, &s1, true);
        pose_to_box(g.value(s2.refined), 0, coarse.size)
    }

    /// Full step through the stage functions, with an optional mask seam.
    pub fn step_with_mask(&self, pair: &PairInput, prev_box: &Box3D, mask_override: Option<&[bool]>) -> TrackerOutput {
        let seg = self.segment_target(pair, prev_box, mask_override);
        if seg.degenerate {
            return TrackerOutput::fallback(prev_box, seg.mask);
        }
        let (motion, refined_prev, coarse) = self.stage1_step(&seg, prev_box);
        let refined = self.stage2_step(&seg, &refined_prev, &coarse);
        TrackerOutput {
            refined_prev_box: refined_prev,
            coarse_box: coarse,
            refined_box: refined,
            mask: seg.mask,
            motion: Some(motion),
            degenerate: false,
        }
    }

    /// The same step evaluated as one batched graph (the training path).
    pub fn step_batched(&self, pair: &PairInput, prev_box: &Box3D) -> TrackerOutput {
        let mut g = Graph::new(self.store, false);
        let poses = g.constant(pose_tensor(&[*prev_box]));
        let opts = ForwardOpts { force_static: self.force_static, ..Default::default() };
        let out = m2track_forward(&mut g, self.nets, Stacked::new(std::slice::from_ref(pair)), poses, &opts);
        let Some(st) = out.stages else {
            return TrackerOutput::fallback(prev_box, out.mask);
        };
        let l = g.value(st.motion_logits);
        TrackerOutput {
            refined_prev_box: pose_to_box(g.value(st.refined_prev), 0, prev_box.size),
            coarse_box: pose_to_box(g.value(st.coarse), 0, prev_box.size),
            refined_box: pose_to_box(g.value(st.refined), 0, prev_box.size),
            mask: out.mask,
            motion: Some(MotionState {
                rtm: rtm_from_row(g.value(st.motion), 0),
                dynamic_logits: [l.get(0, 0), l.get(0, 1)],
                is_dynamic: l.get(0, DYNAMIC) > l.get(0, 1 - DYNAMIC) && !self.force_static,
            }),
            degenerate: false,
        }
    }
}

impl StepTracker for M2Track<'_> {
    fn step(&self, prev: &Frame, cur: &Frame, prev_box: &Box3D, key: u64) -> TrackerOutput {
        let mut rng = step_rng(self.seed, key);
        match crop_inputs(prev, cur, prev_box, self.points, self.margin, &mut rng) {
            Some(pair) => self.step_with_mask(&pair, prev_box, None),
            None => TrackerOutput::fallback(prev_box, Vec::new()),
        }
    }
}

impl MVanilla<'_> {
    pub fn predict(&self, pair: &PairInput, prev_box: &Box3D) -> (Rtm4, Box3D) {
        let mut g = Graph::new(self.store, false);
        let poses = g.constant(pose_tensor(&[*prev_box]));
        let out = vanilla_forward(&mut g, self.net, Stacked::new(std::slice::from_ref(pair)), poses, &ForwardOpts::default());
        let rtm = rtm_from_row(g.value(out.rtm), 0);
        (rtm, transform_box(prev_box, rtm))
    }
}

impl StepTracker for MVanilla<'_> {
    fn step(&self, prev: &Frame, cur: &Frame, prev_box: &Box3D, key: u64) -> TrackerOutput {
        let mut rng = step_rng(self.seed, key);
        match crop_inputs(prev, cur, prev_box, self.points, self.margin, &mut rng) {
            Some(pair) => {
                let (rtm, b) = self.predict(&pair, prev_box);
                TrackerOutput {
                    motion: Some(MotionState { rtm, dynamic_logits: [0.0, 0.0], is_dynamic: true }),
                    ..TrackerOutput::single(prev_box, b)
                }
            }
            None => TrackerOutput::fallback(prev_box, Vec::new()),
        }
    }
}

/// Test seam predicting the ground-truth relative motion between frames.
pub struct Oracle {
    boxes: HashMap<u32, Box3D>,
}

impl Oracle {
    pub fn new(gt: &Tracklet) -> Self {
        Oracle { boxes: gt.boxes.iter().copied().collect() }
    }
}

impl StepTracker for Oracle {
    fn step(&self, prev: &Frame, cur: &Frame, prev_box: &Box3D, _key: u64) -> TrackerOutput {
        match (self.boxes.get(&prev.frame_id), self.boxes.get(&cur.frame_id)) {
            (Some(a), Some(b)) => {
                let rtm = rtm_between(a, b);
                TrackerOutput {
                    motion: Some(MotionState { rtm, dynamic_logits: [0.0, 0.0], is_dynamic: true }),
                    ..TrackerOutput::single(prev_box, transform_box(prev_box, rtm))
                }
            }
            _ => TrackerOutput::fallback(prev_box, Vec::new()),
        }
    }
}

/// Always predicts the previous box.
pub struct ZeroMotion;

impl StepTracker for ZeroMotion {
    fn step(&self, _prev: &Frame, _cur: &Frame, prev_box: &Box3D, _key: u64) -> TrackerOutput {
        TrackerOutput::single(prev_box, *prev_box)
    }
}

/// Index of the largest count; ties go to the earliest (most recent frame).
pub fn select_proposal(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub chosen: usize,
    pub proposals: Vec<TrackerOutput>,
    pub counts: Vec<usize>,
}

impl EnsembleOutput {
    pub fn refined_box(&self) -> Box3D {
        self.proposals[self.chosen].refined_box
    }
}

/// Steps from each history entry `(P_{t-n}, B_{t-n})`, most recent first, to `cur`
/// and keeps the proposal containing the most current-frame points.
pub fn ensemble_step(tracker: &dyn StepTracker, history: &[(&Frame, Box3D)], cur: &Frame, key: u64) -> EnsembleOutput {
    assert!(!history.is_empty(), "ensemble needs at least one history frame");
    let proposals: Vec<TrackerOutput> = history
        .iter()
        .enumerate()
        .map(|(n, (f, b))| tracker.step(f, cur, b, key.wrapping_mul(64).wrapping_add(n as u64)))
        .collect();
    let counts: Vec<usize> = if proposals.len() == 1 {
        vec![0]
    } else {
        proposals.iter().map(|p| points_in_box(&cur.points, &p.refined_box, 1.0).iter().filter(|m| **m).count()).collect()
    };
    EnsembleOutput { chosen: select_proposal(&counts), proposals, counts }
}

/// Template-matching refiner over a search area in the motion box's canonical frame.
pub trait Refiner: Sync {
    /// `search` and `template` are canonical (to the motion box and the source
    /// boxes respectively); returns the refined box in the search frame.
    fn refine(&self, search: &[Vec3], template: &[Vec3], size: Size3) -> Box3D;
}

pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine(&self, _search: &[Vec3], _template: &[Vec3], size: Size3) -> Box3D {
        Box3D::new(Vec3::ZERO, 0.0, size)
    }
}

/// Mean-shift style alignment of the search points' centroid (inside a box
/// window) with the template centroid, in the ground plane.
pub struct CentroidRefiner {
    pub iterations: usize,
    /// Largest allowed shift per axis.
    pub max_shift: f64,
}

impl Default for CentroidRefiner {
    fn default() -> Self {
        CentroidRefiner { iterations: 5, max_shift: 1.0 }
    }
}

fn centroid(points: &[Vec3]) -> Option<Vec3> {
    (!points.is_empty()).then(|| points.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / points.len() as f64))
}

impl Refiner for CentroidRefiner {
    fn refine(&self, search: &[Vec3], template: &[Vec3], size: Size3) -> Box3D {
        let Some(ct) = centroid(template) else {
            return Box3D::new(Vec3::ZERO, 0.0, size);
        };
        let mut shift = Vec3::ZERO;
        for _ in 0..self.iterations {
            let window = Box3D::new(shift, 0.0, size);
            let inside: Vec<Vec3> = search.iter().copied().filter(|p| point_in_box(*p, &window, 1.0)).collect();
            let Some(cs) = centroid(&inside) else { break };
            let next = Vec3::new(
                (cs.x - ct.x).clamp(-self.max_shift, self.max_shift),
                (cs.y - ct.y).clamp(-self.max_shift, self.max_shift),
                0.0,
            );
            if next.distance(shift) < 1e-6 {
                shift = next;
                break;
            }
            shift = next;
        }
        Box3D::new(shift, 0.0, size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub margin: f64,
    pub search_points: usize,
    pub template_points: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { margin: 1.0, search_points: 1024, template_points: 512 }
    }
}

/// Refines `motion_box` with a matcher: the search area is the current frame
/// around the enlarged motion box; the template concatenates the target points
/// of every `(frame, box)` source, each canonical to its box. Output size is the
/// motion box's size.
pub fn refine_with_matcher(
    motion_box: &Box3D,
    cur: &Frame,
    sources: &[(&Frame, Box3D)],
    refiner: &dyn Refiner,
    cfg: &RefineConfig,
    rng: &mut ChaCha8Rng,
) -> Box3D {
    let search = resample(&crop_subregion(cur, motion_box, cfg.margin).points, cfg.search_points, motion_box.center, rng);
    let mut template = Vec::new();
    for (f, b) in sources {
        let inside: Vec<Vec3> = f.points.iter().copied().filter(|p| point_in_box(*p, b, 1.0)).collect();
        template.extend(to_canonical(&inside, b));
    }
    let template = resample(&template, cfg.template_points, Vec3::ZERO, rng);
    if search.degenerate || template.degenerate {
        return *motion_box;
    }
    let local = refiner.refine(&to_canonical(&search.points, motion_box), &template.points, motion_box.size);
    Box3D::new(
        from_canonical_point(local.center, motion_box),
        motion_box.yaw.radians() + local.yaw.radians(),
        motion_box.size,
    )
}

#[derive(Clone, Copy)]
pub struct TrackOptions<'r> {
    pub ensemble: usize,
    pub refiner: Option<&'r dyn Refiner>,
    pub refine: RefineConfig,
    pub seed: u64,
}

impl Default for TrackOptions<'_> {
    fn default() -> Self {
        TrackOptions { ensemble: 1, refiner: None, refine: RefineConfig::default(), seed: 0 }
    }
}

/// Per-frame diagnostics of a tracking run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDebug {
    pub frame_id: u32,
    pub proposals: Vec<[f64; 4]>,
    pub counts: Vec<usize>,
    pub chosen: usize,
    pub mask_points: usize,
    pub dynamic: Option<bool>,
    pub degenerate: bool,
    pub output: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    pub boxes: Vec<(u32, Box3D)>,
    pub debug: Vec<StepDebug>,
}

impl TrackRun {
    pub fn tracklet(&self, seq: &str, instance_id: &str, category: &str) -> Result<Tracklet> {
        Tracklet::new(seq, instance_id, category, self.boxes.clone())
    }
}

fn pose4(b: &Box3D) -> [f64; 4] {
    crate::model::pose_row(b)
}

/// Tracks frame by frame from `first_box`; each step's output feeds the next step.
pub fn track_sequence(tracker: &dyn StepTracker, frames: &[Frame], first_box: &Box3D, opts: &TrackOptions) -> TrackRun {
    let mut boxes: Vec<(u32, Box3D)> = Vec::with_capacity(frames.len());
    let mut debug = Vec::new();
    let Some(first) = frames.first() else {
        return TrackRun { boxes, debug };
    };
    boxes.push((first.frame_id, *first_box));
    let n = opts.ensemble.max(1);
    for t in 1..frames.len() {
        let history: Vec<(&Frame, Box3D)> = (1..=n.min(t)).map(|k| (&frames[t - k], boxes[t - k].1)).collect();
        let ens = ensemble_step(tracker, &history, &frames[t], t as u64);
        let chosen = &ens.proposals[ens.chosen];
        let mut out = ens.refined_box();
        if let Some(refiner) = opts.refiner {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, STREAM_REFINE, t as u64));
            let sources = [(&frames[0], *first_box), (&frames[t - 1], boxes[t - 1].1)];
            out = refine_with_matcher(&out, &frames[t], &sources, refiner, &opts.refine, &mut rng);
        }
        // Every emitted box keeps the first-frame size.
        out.size = first_box.size;
        debug.push(StepDebug {
            frame_id: frames[t].frame_id,
            proposals: ens.proposals.iter().map(|p| pose4(&p.refined_box)).collect(),
            counts: ens.counts.clone(),
            chosen: ens.chosen,
            mask_points: chosen.mask.iter().filter(|m| **m).count(),
            dynamic: chosen.motion.map(|m| m.is_dynamic),
            degenerate: chosen.degenerate,
            output: pose4(&out),
        });
        boxes.push((frames[t].frame_id, out));
    }
    TrackRun { boxes, debug }
}

/// Tracks independent sequences on up to `threads` workers; results keep input order.
pub fn track_many<T>(tracker: &dyn StepTracker, items: &[T], opts: &TrackOptions, threads: usize, get: impl Fn(&T) -> (&[Frame], Box3D) + Sync) -> Vec<TrackRun>
where
    T: Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(|it| {
            let (f, b) = get(it);
            track_sequence(tracker, f, &b, opts)
        }).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let get = &get;
                s.spawn(move || {
                    part.iter()
                        .map(|it| {
                            let (f, b) = get(it);
                            track_sequence(tracker, f, &b, opts)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("tracking worker panicked")).collect()
    })
}

pub fn write_debug_jsonl(path: &Path, runs: &[(&str, &TrackRun)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (seq, run) in runs {
        for d in &run.debug {
            let mut v = serde_json::to_value(d)?;
            v["seq"] = serde_json::Value::from(*seq);
            writeln!(w, "{}", serde_json::to_string(&v)?).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sequence, SynthConfig};
    use crate::geom::center_error;

    /// Mean distance from each point of `a` to its nearest point in `b`.
    fn mean_nn(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().map(|p| b.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / a.len() as f64
    }
    use crate::model::{merge_targets, Arch};
    use crate::nn::Widths;

    fn seq(seed: u64) -> crate::data::SynthSequence {
        let cfg = SynthConfig { frames: 6, ..SynthConfig::default() };
        synth_sequence(&cfg, seed).unwrap()
    }

    fn tiny(arch: Arch) -> Model {
        Model::new(arch, &Widths::tiny(), 64, 3)
    }

    #[test]
    fn oracle_reproduces_ground_truth() {
        let s = seq(1);
        let gt = &s.target;
        let run = track_sequence(&Oracle::new(gt), &s.frames, gt.box_at(0), &TrackOptions::default());
        for ((f, p), (g, b)) in run.boxes.iter().zip(&gt.boxes) {
            assert_eq!(f, g);
            assert!(center_error(p, b) < 1e-9);
            assert!(crate::geom::wrap_angle(p.yaw.radians() - b.yaw.radians()).abs() < 1e-9);
            assert_eq!(p.size, b.size);
        }
    }

    #[test]
    fn single_frame_and_zero_motion() {
        let s = seq(2);
        let first = *s.target.box_at(0);
        let run = track_sequence(&ZeroMotion, &s.frames[..1], &first, &TrackOptions::default());
        assert_eq!(run.boxes, vec![(s.frames[0].frame_id, first)]);
        let run = track_sequence(&ZeroMotion, &s.frames, &first, &TrackOptions::default());
        assert!(run.boxes.iter().all(|(_, b)| *b == first));
    }

    #[test]
    fn proposal_selection_rules() {
        assert_eq!(select_proposal(&[5, 9, 9]), 1);
        assert_eq!(select_proposal(&[7, 7]), 0);
        assert_eq!(select_proposal(&[3]), 0);
    }

    #[test]
    fn ensemble_of_one_is_plain_stepping() {
        let model = tiny(Arch::M2Track);
        let t = model_tracker(&model, 5);
        let s = seq(3);
        let first = *s.target.box_at(0);
        let a = track_sequence(t.as_ref(), &s.frames, &first, &TrackOptions::default());
        for (i, w) in s.frames.windows(2).enumerate() {
            let prev_box = a.boxes[i].1;
            let out = t.step(&w[0], &w[1], &prev_box, ((i + 1) as u64) * 64);
            assert_eq!(out.refined_box, a.boxes[i + 1].1);
        }
        let b = track_sequence(t.as_ref(), &s.frames, &first, &TrackOptions { ensemble: 3, ..Default::default() });
        assert_eq!(b.boxes[1], a.boxes[1]);
        assert!(b.boxes.iter().all(|(_, x)| x.size == first.size));
    }

    #[test]
    fn random_models_emit_valid_sized_boxes_deterministically() {
        let s = seq(4);
        let first = *s.target.box_at(0);
        for arch in [Arch::M2Track, Arch::Vanilla] {
            let model = tiny(arch);
            let t = model_tracker(&model, 1);
            let a = track_sequence(t.as_ref(), &s.frames, &first, &TrackOptions::default());
            let b = track_sequence(t.as_ref(), &s.frames, &first, &TrackOptions::default());
            assert_eq!(a, b);
            for (_, x) in &a.boxes {
                assert_eq!(x.size, first.size);
                assert!(x.center.is_finite());
            }
        }
    }

    #[test]
    fn empty_frames_fall_back_to_previous_box() {
        let model = tiny(Arch::M2Track);
        let t = model_tracker(&model, 1);
        let first = Box3D::new(Vec3::new(5.0, 0.0, 0.8), 0.2, Size3::new(1.8, 4.2, 1.5));
        let frames: Vec<Frame> = (0..4).map(|i| Frame::new(i, Vec::new())).collect();
        let run = track_sequence(t.as_ref(), &frames, &first, &TrackOptions::default());
        assert!(run.boxes.iter().all(|(_, b)| *b == first));
        assert!(run.debug.iter().all(|d| d.degenerate));
    }

    #[test]
    fn mask_seams_and_stage_composition() {
        let model = tiny(Arch::M2Track);
        let mut tr = M2Track::new(&model, 0).unwrap();
        let s = seq(5);
        let prev_box = *s.target.box_at(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = crop_inputs(&s.frames[0], &s.frames[1], &prev_box, 64, 2.0, &mut rng).unwrap();
        // Ground-truth mask seam returns exactly the ground-truth target points.
        let gt_mask: Vec<bool> = points_in_box(&pair.prev, &prev_box, 1.0)
            .into_iter()
            .chain(points_in_box(&pair.cur, s.target.box_at(1), 1.0))
            .collect();
        let seg = tr.segment_target(&pair, &prev_box, Some(&gt_mask));
        let want: Vec<Vec3> = pair.prev.iter().chain(&pair.cur).zip(&gt_mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
        assert_eq!(seg.targets().into_iter().map(|(p, _)| p).collect::<Vec<_>>(), want);
        // All-background mask is degenerate and falls back.
        let out = tr.step_with_mask(&pair, &prev_box, Some(&[false; 128]));
        assert!(out.degenerate && out.refined_box == prev_box);
        // Staged and single-graph evaluation agree.
        let staged = tr.step_with_mask(&pair, &prev_box, Some(&gt_mask));
        let mut g = Graph::new(&model.store, false);
        let poses = g.constant(pose_tensor(&[prev_box]));
        let opts = ForwardOpts { mask_override: Some(gt_mask.clone()), ..Default::default() };
        let out = m2track_forward(&mut g, tr.nets, Stacked::new(std::slice::from_ref(&pair)), poses, &opts);
        let st = out.stages.unwrap();
        let refined = pose_to_box(g.value(st.refined), 0, prev_box.size);
        assert!(center_error(&refined, &staged.refined_box) < 1e-9);
        // Forced static: coarse equals refined previous box.
        tr.force_static = true;
        let out = tr.step_with_mask(&pair, &prev_box, Some(&gt_mask));
        assert_eq!(out.coarse_box, out.refined_prev_box);
        assert!(!out.motion.unwrap().is_dynamic);
    }

    #[test]
    fn segmentation_mask_is_permutation_equivariant() {
        let model = tiny(Arch::M2Track);
        let tr = M2Track::new(&model, 0).unwrap();
        let s = seq(6);
        let prev_box = *s.target.box_at(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = crop_inputs(&s.frames[0], &s.frames[1], &prev_box, 64, 2.0, &mut rng).unwrap();
        let a = tr.segment_target(&pair, &prev_box, None);
        let mut rev = pair.clone();
        rev.prev.reverse();
        rev.cur.reverse();
        let b = tr.segment_target(&rev, &prev_box, None);
        let mut bm_prev = b.mask[..64].to_vec();
        bm_prev.reverse();
        let mut bm_cur = b.mask[64..].to_vec();
        bm_cur.reverse();
        assert_eq!(a.mask[..64], bm_prev[..]);
        assert_eq!(a.mask[64..], bm_cur[..]);
    }

    #[test]
    fn dynamic_merge_with_true_motion_aligns_rigid_target() {
        let cfg = SynthConfig {
            frames: 2,
            noise: 0.0,
            dropout: 0.0,
            occlusion: 0.0,
            static_prob: 0.0,
            speed: (1.0, 1.2),
            object_points: (400, 400),
            ..SynthConfig::default()
        };
        let s = synth_sequence(&cfg, 8).unwrap();
        let (b0, b1) = (*s.target.box_at(0), *s.target.box_at(1));
        let inside = |f: &Frame, b: &Box3D| -> Vec<Vec3> { f.points.iter().copied().filter(|p| point_in_box(*p, b, 1.0)).collect() };
        let (p0, p1) = (inside(&s.frames[0], &b0), inside(&s.frames[1], &b1));
        let merged = merge_targets(&p0, &p1, &b0, rtm_between(&b0, &b1), true, &b1);
        let (a, b) = merged.split_at(p0.len());
        let stale = merge_targets(&p0, &p1, &b0, rtm_between(&b0, &b1), false, &b1);
        let (sa, sb) = stale.split_at(p0.len());
        // Both halves sample the same rigid surface, so transported points land
        // on the current target instead of a frame behind it.
        let (aligned, misaligned) = (mean_nn(a, b), mean_nn(sa, sb));
        assert!(aligned < 0.2 && aligned < 0.5 * misaligned, "{aligned} vs {misaligned}");
    }

    #[test]
    fn refiners() {
        use rand::Rng;
        let size = Size3::new(1.8, 4.2, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let local: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-2.1..2.1), rng.gen_range(-0.75..0.75)))
            .collect();
        let b0 = Box3D::new(Vec3::new(10.0, 3.0, 0.75), 0.3, size);
        let truth = transform_box(&b0, Rtm4::new(0.1, 1.0, 0.0, 0.05));
        let f0 = Frame::new(0, local.iter().map(|p| from_canonical_point(*p, &b0)).collect());
        let f1 = Frame::new(1, local.iter().map(|p| from_canonical_point(*p, &truth)).collect());
        let cfg = RefineConfig::default();
        let src = [(&f0, b0)];
        let same = refine_with_matcher(&truth, &f1, &src, &IdentityRefiner, &cfg, &mut rng);
        assert!(center_error(&same, &truth) < 1e-9);
        let off = Box3D::new(truth.center + Vec3::new(0.2, 0.0, 0.0).rotate_z(0.8), truth.yaw.radians(), size);
        let fixed = refine_with_matcher(&off, &f1, &src, &CentroidRefiner::default(), &cfg, &mut rng);
        assert!(center_error(&fixed, &truth) < 0.5 * center_error(&off, &truth), "{}", center_error(&fixed, &truth));
        assert_eq!(fixed.size, size);
    }
}
