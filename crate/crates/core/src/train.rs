//! Supervised objective, motion augmentation and the supervised training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::data::{
    build_training_sample, derive_seed, perturb_box, Frame, PerturbConfig, SampleConfig, Sequence, TrainingSample,
    DEFAULT_CROP_MARGIN,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, OpeGrid};
use crate::geom::{
    center_error, distance_map, from_canonical_point, points_in_box, rtm_between, to_canonical_point, transform_box, Box3D,
    Rtm4,
};
use crate::model::{
    g_rtm_between, m2track_forward, pose_tensor, vanilla_forward, Arch, ForwardOpts, M2Out, Model, Nets, PairInput, Stacked,
};
use crate::nn::{apply_stat_updates, Adam, Gradients, Graph, StatUpdate, Tensor, Var, Widths};
use crate::tracker::{model_tracker, track_many, TrackOptions};

/// Center displacement above which a target counts as dynamic.
pub const DYNAMIC_THRESHOLD: f64 = 0.15;
pub const HUBER_DELTA: f64 = 1.0;

pub(crate) const STREAM_EPOCH: u64 = 0x6570_6f63;
pub(crate) const STREAM_SAMPLE: u64 = 0x7361_6d70;
const STREAM_INIT: u64 = 0x696e_6974;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub seg: f64,
    pub motion_cls: f64,
    pub box_aware: f64,
    pub rtm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { seg: 0.1, motion_cls: 0.1, box_aware: 1.0, rtm: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.seg, self.motion_cls, self.box_aware, self.rtm].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

pub fn is_dynamic(prev_gt: &Box3D, cur_gt: &Box3D) -> bool {
    center_error(prev_gt, cur_gt) > DYNAMIC_THRESHOLD
}

/// Weighted loss terms of a batch; `total` is their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub seg: Var,
    pub motion_cls: Var,
    pub box_aware: Var,
    pub rtm: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub total: f64,
    pub seg: f64,
    pub motion_cls: f64,
    pub box_aware: f64,
    pub rtm: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Var| g.value(x).item();
        LossValues {
            total: v(self.total),
            seg: v(self.seg),
            motion_cls: v(self.motion_cls),
            box_aware: v(self.box_aware),
            rtm: v(self.rtm),
        }
    }
}

impl LossValues {
    pub(crate) fn add_scaled(&mut self, o: &LossValues, k: f64) {
        self.total += k * o.total;
        self.seg += k * o.seg;
        self.motion_cls += k * o.motion_cls;
        self.box_aware += k * o.box_aware;
        self.rtm += k * o.rtm;
    }
}

pub(crate) fn weighted_rows(g: &mut Graph, per_row: Var, coef: Vec<f64>) -> Var {
    let c = g.constant(Tensor::column(coef));
    let w = g.mul(per_row, c);
    g.sum(w)
}

pub(crate) fn row_huber(g: &mut Graph, a: Var) -> Var {
    let h = g.huber(a, HUBER_DELTA);
    g.row_mean(h)
}

pub(crate) fn box_rows(boxes: impl Iterator<Item = Box3D>) -> Tensor {
    let b: Vec<Box3D> = boxes.collect();
    pose_tensor(&b)
}

fn rtm_rows(rtms: impl Iterator<Item = Rtm4>) -> Tensor {
    let r: Vec<f64> = rtms.flat_map(|r| r.to_array()).collect();
    Tensor::from_vec(r.len() / 4, 4, r)
}

fn check_batch(n: usize, weights: &[f64]) -> Result<()> {
    if n == 0 || weights.len() != n {
        return Err(Error::Contract(format!("loss needs one weight per sample ({} weights, {n} samples)", weights.len())));
    }
    Ok(())
}

/// The full two-stage objective: `Σ_s w_s · L_s` where `L_s` is
/// λ1·CE(mask) + λ2·CE(motion class) + λ3·Huber(box-aware) + λ4·(motion,
/// previous-box refinement, coarse-box and refined-box RTM errors).
pub fn loss_full(g: &mut Graph, out: &M2Out, samples: &[TrainingSample], weights: &[f64], lw: &LossWeights) -> Result<LossVars> {
    check_batch(samples.len(), weights)?;
    let Some(st) = &out.stages else {
        return Err(Error::Contract("loss needs stage outputs (enable the selection fallback when training)".into()));
    };
    let stk = &out.stacked;
    if stk.offsets.len() != samples.len() + 1 {
        return Err(Error::Contract("forward output and samples disagree on batch size".into()));
    }
    let mut labels = Vec::with_capacity(stk.points.len());
    let mut ba_target = Vec::with_capacity(stk.points.len() * 9);
    let mut coef = Vec::with_capacity(stk.points.len());
    for (s, smp) in samples.iter().enumerate() {
        let n = stk.rows(s).len() as f64;
        for (pts, gt) in [(&smp.prev_points, &smp.prev_gt), (&smp.cur_points, &smp.cur_gt)] {
            labels.extend(points_in_box(pts, gt, 1.0).into_iter().map(usize::from));
            ba_target.extend(distance_map(pts, gt).into_iter().flatten());
            coef.extend(std::iter::repeat_n(weights[s] / n, pts.len()));
        }
    }
    if labels.len() != stk.points.len() {
        return Err(Error::Contract("sample points do not match the stacked input".into()));
    }
    let ce = g.cross_entropy(out.seg_logits, &labels);
    let seg = weighted_rows(g, ce, coef.clone());
    let seg = g.scale(seg, lw.seg);

    let dyn_labels: Vec<usize> = samples.iter().map(|s| usize::from(is_dynamic(&s.prev_gt, &s.cur_gt))).collect();
    let ce = g.cross_entropy(st.motion_logits, &dyn_labels);
    let cls = weighted_rows(g, ce, weights.to_vec());
    let cls = g.scale(cls, lw.motion_cls);

    let target = g.constant(Tensor::from_vec(stk.points.len(), 9, ba_target));
    let d = g.sub(out.box_aware, target);
    let h = row_huber(g, d);
    let ba = weighted_rows(g, h, coef);
    let ba = g.scale(ba, lw.box_aware);

    let motion_t = g.constant(rtm_rows(samples.iter().map(|s| rtm_between(&s.prev_gt, &s.cur_gt))));
    let refine_t = g.constant(rtm_rows(samples.iter().map(|s| rtm_between(&s.input_box, &s.prev_gt))));
    let cur_gt = g.constant(box_rows(samples.iter().map(|s| s.cur_gt)));
    let e_motion = g.sub(st.motion, motion_t);
    let e_refine = g.sub(st.refine, refine_t);
    let e_coarse = g_rtm_between(g, st.coarse, cur_gt);
    let e_refined = g_rtm_between(g, st.refined, cur_gt);
    let mut terms = Vec::new();
    for e in [e_motion, e_refine, e_coarse, e_refined] {
        terms.push(row_huber(g, e));
    }
    let a = g.add(terms[0], terms[1]);
    let b = g.add(terms[2], terms[3]);
    let per = g.add(a, b);
    let rtm = weighted_rows(g, per, weights.to_vec());
    let rtm = g.scale(rtm, lw.rtm);

    let t = g.add(seg, cls);
    let t = g.add(t, ba);
    let total = g.add(t, rtm);
    Ok(LossVars { total, seg, motion_cls: cls, box_aware: ba, rtm })
}

/// M-Vanilla objective: λ4 · Huber between the regressed motion and the motion
/// from the input box to the current ground truth.
pub fn loss_vanilla(g: &mut Graph, rtm: Var, samples: &[TrainingSample], weights: &[f64], lw: &LossWeights) -> Result<LossVars> {
    check_batch(samples.len(), weights)?;
    let t = g.constant(rtm_rows(samples.iter().map(|s| rtm_between(&s.input_box, &s.cur_gt))));
    let e = g.sub(rtm, t);
    let h = row_huber(g, e);
    let r = weighted_rows(g, h, weights.to_vec());
    let r = g.scale(r, lw.rtm);
    let zero = g.constant(Tensor::scalar(0.0));
    Ok(LossVars { total: r, seg: zero, motion_cls: zero, box_aware: zero, rtm: r })
}

pub fn pair_inputs(samples: &[TrainingSample]) -> Vec<PairInput> {
    samples
        .iter()
        .map(|s| PairInput { prev: s.prev_points.clone(), cur: s.cur_points.clone(), size: s.input_box.size })
        .collect()
}

/// Forward outputs a batch loss may need beyond the loss itself.
pub enum BatchOut {
    M2Track(M2Out),
    Vanilla { pred: Var },
}

impl BatchOut {
    /// Final predicted poses (B×4), when every sample produced one.
    pub fn predicted(&self) -> Option<Var> {
        match self {
            BatchOut::M2Track(o) => o.stages.as_ref().map(|s| s.refined),
            BatchOut::Vanilla { pred } => Some(*pred),
        }
    }
}

/// Forward pass plus loss for either architecture, on input poses `poses` (B×4).
pub fn forward_loss(
    g: &mut Graph,
    model: &Model,
    samples: &[TrainingSample],
    poses: Var,
    weights: &[f64],
    lw: &LossWeights,
    fallback_top: usize,
) -> Result<(LossVars, BatchOut)> {
    let st = Stacked::new(&pair_inputs(samples));
    match &model.nets {
        Nets::M2Track(nets) => {
            let opts = ForwardOpts { fallback_top: Some(fallback_top), ..Default::default() };
            let out = m2track_forward(g, nets, st, poses, &opts);
            let l = loss_full(g, &out, samples, weights, lw)?;
            Ok((l, BatchOut::M2Track(out)))
        }
        Nets::Vanilla(net) => {
            let out = vanilla_forward(g, net, st, poses, &ForwardOpts::default());
            let l = loss_vanilla(g, out.rtm, samples, weights, lw)?;
            Ok((l, BatchOut::Vanilla { pred: out.pred }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugConfig {
    pub coin_flip_p: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    pub horizontal_flip: bool,
    pub temporal_flip: bool,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig { coin_flip_p: 0.5, rotation_deg: 10.0, translation: 0.3, horizontal_flip: true, temporal_flip: true }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coin_flip_p) {
            return Err(Error::Config(format!("coin_flip_p {} outside [0, 1]", self.coin_flip_p)));
        }
        if !(self.rotation_deg >= 0.0 && self.translation >= 0.0) {
            return Err(Error::Config("augmentation ranges must be non-negative".into()));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugDraw {
        let u = |rng: &mut R, h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
        AugDraw {
            flip: self.horizontal_flip && rng.gen_bool(0.5),
            rotation: u(rng, self.rotation_deg.to_radians()),
            dx: u(rng, self.translation),
            dy: u(rng, self.translation),
        }
    }
}

/// One augmentation: a lateral mirror of both targets and a rigid move of the
/// current target in its own frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugDraw {
    pub flip: bool,
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
}

fn mirror_target(points: &mut [crate::geom::Vec3], from: &Box3D, to: &Box3D, flip: bool) {
    let inside = points_in_box(points, from, 1.0);
    for (p, m) in points.iter_mut().zip(inside) {
        if m {
            let mut l = to_canonical_point(*p, from);
            if flip {
                l.x = -l.x;
            }
            *p = from_canonical_point(l, to);
        }
    }
}

/// Applies `d` to the target points (those inside the ground-truth boxes);
/// background points are untouched and the ground truth follows the move.
pub fn augment_with(sample: &TrainingSample, d: AugDraw) -> TrainingSample {
    if d == AugDraw::default() {
        return sample.clone();
    }
    let mut out = sample.clone();
    let moved = transform_box(&sample.cur_gt, Rtm4::new(d.dx, d.dy, 0.0, d.rotation));
    if d.flip {
        mirror_target(&mut out.prev_points, &sample.prev_gt, &sample.prev_gt, true);
    }
    mirror_target(&mut out.cur_points, &sample.cur_gt, &moved, d.flip);
    out.cur_gt = moved;
    out
}

pub fn augment_basic<R: Rng + ?Sized>(sample: &TrainingSample, cfg: &AugConfig, rng: &mut R) -> TrainingSample {
    augment_with(sample, cfg.draw(rng))
}

/// Augments with probability `p`, otherwise returns the sample unchanged; the
/// flag reports which happened.
pub fn coin_flip<R: Rng + ?Sized>(sample: &TrainingSample, cfg: &AugConfig, p: f64, rng: &mut R) -> (TrainingSample, bool) {
    if rng.gen::<f64>() < p {
        (augment_basic(sample, cfg, rng), true)
    } else {
        (sample.clone(), false)
    }
}

/// Plays the pair backwards: frames and ground truth swap and a fresh input
/// box is drawn around the new previous ground truth.
pub fn temporal_flip<R: Rng + ?Sized>(sample: &TrainingSample, perturb: &PerturbConfig, rng: &mut R) -> TrainingSample {
    TrainingSample {
        prev_points: sample.cur_points.clone(),
        cur_points: sample.prev_points.clone(),
        input_box: perturb_box(&sample.cur_gt, perturb, rng),
        prev_gt: sample.cur_gt,
        cur_gt: sample.prev_gt,
        is_pseudo: sample.is_pseudo,
        degenerate: sample.degenerate,
    }
}

/// Learning rate after `epoch` completed epochs: `base / 10^(epoch / decay_every)`.
pub fn learning_rate(base: f64, epoch: usize, decay_every: usize) -> f64 {
    base / 10f64.powi((epoch / decay_every.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub widths: String,
    pub points: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Cap on training pairs drawn per epoch (all pairs when absent).
    pub pairs_per_epoch: Option<usize>,
    /// Largest frame interval between the two frames of a training pair.
    /// Multi-frame ensembling with N proposals needs intervals up to N - 1.
    pub max_gap: usize,
    pub aug: AugConfig,
    pub loss: LossWeights,
    pub perturb: PerturbConfig,
    /// Points kept for Stage I when a predicted mask is empty during training.
    pub fallback_top: usize,
    pub grad_clip: Option<f64>,
    pub threads: usize,
    /// Validate every this many epochs (0 disables).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::M2Track,
            widths: "desk".into(),
            points: 1024,
            epochs: 60,
            batch: 32,
            lr: 1e-3,
            decay_every: 20,
            seed: 0,
            pairs_per_epoch: None,
            max_gap: 2,
            aug: AugConfig::default(),
            loss: LossWeights::default(),
            perturb: PerturbConfig::default(),
            fallback_top: 8,
            grad_clip: None,
            threads: 1,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.batch == 0 || self.decay_every == 0 || self.max_gap == 0 {
            return Err(Error::Config("points, batch, decay_every and max_gap must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Widths::by_name(&self.widths)?;
        self.aug.validate()?;
        self.loss.validate()
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig { points: self.points, margin: DEFAULT_CROP_MARGIN, perturb: self.perturb }
    }

    /// Reads `train.*` keys over the defaults.
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            arch: match c.get_str("train.model") {
                Some(s) => Arch::parse(s)?,
                None => d.arch,
            },
            widths: c.get_str("train.widths").unwrap_or(&d.widths).to_string(),
            points: c.get_or("train.points", d.points)?,
            epochs: c.get_or("train.epochs", d.epochs)?,
            batch: c.get_or("train.batch", d.batch)?,
            lr: c.get_or("train.lr", d.lr)?,
            decay_every: c.get_or("train.decay_every", d.decay_every)?,
            seed: c.get_or("train.seed", d.seed)?,
            pairs_per_epoch: c.get("train.pairs_per_epoch")?,
            max_gap: c.get_or("train.max_gap", d.max_gap)?,
            aug: AugConfig {
                coin_flip_p: c.get_or("aug.coin_flip_p", d.aug.coin_flip_p)?,
                rotation_deg: c.get_or("aug.rotation_deg", d.aug.rotation_deg)?,
                translation: c.get_or("aug.translation", d.aug.translation)?,
                horizontal_flip: c.get_or("aug.horizontal_flip", d.aug.horizontal_flip)?,
                temporal_flip: c.get_or("aug.temporal_flip", d.aug.temporal_flip)?,
            },
            loss: LossWeights {
                seg: c.get_or("loss.seg", d.loss.seg)?,
                motion_cls: c.get_or("loss.motion_cls", d.loss.motion_cls)?,
                box_aware: c.get_or("loss.box_aware", d.loss.box_aware)?,
                rtm: c.get_or("loss.rtm", d.loss.rtm)?,
            },
            perturb: PerturbConfig {
                horizontal: c.get_or("perturb.horizontal", d.perturb.horizontal)?,
                vertical: c.get_or("perturb.vertical", d.perturb.vertical)?,
                yaw_deg: c.get_or("perturb.yaw_deg", d.perturb.yaw_deg)?,
            },
            fallback_top: c.get_or("train.fallback_top", d.fallback_top)?,
            grad_clip: c.get("train.grad_clip")?,
            threads: c.get_or("train.threads", d.threads)?,
            val_every: c.get_or("train.val_every", d.val_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::new();
        c.set("train.model", self.arch.name());
        c.set("train.widths", &self.widths);
        c.set("train.points", self.points);
        c.set("train.epochs", self.epochs);
        c.set("train.batch", self.batch);
        c.set("train.lr", self.lr);
        c.set("train.decay_every", self.decay_every);
        c.set("train.seed", self.seed);
        if let Some(p) = self.pairs_per_epoch {
            c.set("train.pairs_per_epoch", p);
        }
        c.set("train.max_gap", self.max_gap);
        c.set("aug.coin_flip_p", self.aug.coin_flip_p);
        c.set("aug.rotation_deg", self.aug.rotation_deg);
        c.set("aug.translation", self.aug.translation);
        c.set("aug.horizontal_flip", self.aug.horizontal_flip);
        c.set("aug.temporal_flip", self.aug.temporal_flip);
        c.set("loss.seg", self.loss.seg);
        c.set("loss.motion_cls", self.loss.motion_cls);
        c.set("loss.box_aware", self.loss.box_aware);
        c.set("loss.rtm", self.loss.rtm);
        c.set("perturb.horizontal", self.perturb.horizontal);
        c.set("perturb.vertical", self.perturb.vertical);
        c.set("perturb.yaw_deg", self.perturb.yaw_deg);
        c.set("train.fallback_top", self.fallback_top);
        if let Some(g) = self.grad_clip {
            c.set("train.grad_clip", g);
        }
        c.set("train.threads", self.threads);
        c.set("train.val_every", self.val_every);
        c
    }

    pub fn new_model(&self) -> Result<Model> {
        Ok(Model::new(self.arch, &Widths::by_name(&self.widths)?, self.points, derive_seed(self.seed, STREAM_INIT, 0)))
    }
}

/// The frame pair `(frames[t - gap], frames[t])` of sequence `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub seq: usize,
    pub t: usize,
    pub gap: usize,
}

impl PairRef {
    pub fn prev(&self) -> usize {
        self.t - self.gap
    }
}

/// Every pair with an interval of 1 to `max_gap` frames, ordered by sequence,
/// then current frame, then interval.
pub fn frame_pairs(seqs: &[Sequence], max_gap: usize) -> Vec<PairRef> {
    seqs.iter()
        .enumerate()
        .flat_map(|(s, q)| (1..q.len()).flat_map(move |t| (1..=max_gap.min(t)).map(move |gap| PairRef { seq: s, t, gap })))
        .collect()
}

pub fn consecutive_pairs(seqs: &[Sequence]) -> Vec<PairRef> {
    frame_pairs(seqs, 1)
}

/// Crops, perturbs and augments one labeled pair.
pub fn make_sample<R: Rng + ?Sized>(seq: &Sequence, pair: PairRef, cfg: &TrainConfig, rng: &mut R) -> TrainingSample {
    let (i, t) = (pair.prev(), pair.t);
    let (b0, b1) = (seq.target.box_at(i), seq.target.box_at(t));
    make_sample_from(&seq.frames[i], &seq.frames[t], b0, b1, seq.target.is_pseudo, cfg, rng)
}

pub fn make_sample_from<R: Rng + ?Sized>(
    prev: &Frame,
    cur: &Frame,
    prev_gt: &Box3D,
    cur_gt: &Box3D,
    is_pseudo: bool,
    cfg: &TrainConfig,
    rng: &mut R,
) -> TrainingSample {
    let mut s = build_training_sample(prev, cur, prev_gt, cur_gt, &cfg.sample_config(), is_pseudo, rng);
    if cfg.aug.temporal_flip && rng.gen_bool(0.5) {
        s = temporal_flip(&s, &cfg.perturb, rng);
    }
    coin_flip(&s, &cfg.aug, cfg.aug.coin_flip_p, rng).0
}

/// Runs `f(i)` for `0..n` on up to `threads` workers, preserving order.
pub fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        let f = &f;
        let hs: Vec<_> = (0..threads)
            .map(|k| s.spawn(move || (k * chunk..((k + 1) * chunk).min(n)).map(f).collect::<Vec<_>>()))
            .collect();
        hs.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: LossValues,
    pub grad_norm: f64,
}

/// Applies gradients (optionally clipped) and running-statistics updates.
pub fn apply_update(model: &mut Model, mut grads: Gradients, stats: &[StatUpdate], lr: f64, clip: Option<f64>) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::Contract("non-finite gradient".into()));
    }
    let norm = match clip {
        Some(c) => grads.clip_global_norm(c),
        None => grads.global_norm(),
    };
    Adam::default().step(&mut model.store, &grads, lr);
    apply_stat_updates(&mut model.store, stats);
    Ok(norm)
}

/// One supervised optimizer step on a batch with per-sample loss weights.
pub fn train_step(model: &mut Model, samples: &[TrainingSample], weights: &[f64], cfg: &TrainConfig, lr: f64) -> Result<StepReport> {
    let (loss, grads, stats) = {
        let mut g = Graph::new(&model.store, true);
        let poses = g.constant(box_rows(samples.iter().map(|s| s.input_box)));
        let (l, _) = forward_loss(&mut g, model, samples, poses, weights, &cfg.loss, cfg.fallback_top)?;
        let grads = g.backward(l.total)?;
        (l.values(&g), grads, g.take_stats())
    };
    let grad_norm = apply_update(model, grads, &stats, lr, cfg.grad_clip)?;
    Ok(StepReport { loss, grad_norm })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossValues,
    pub val_success: Option<f64>,
    pub val_precision: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,loss_total,loss_seg,loss_motion_cls,loss_box_aware,loss_rtm,val_success,val_precision,lr,wall_seconds";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let l = &self.loss;
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:e},{:.2}",
            self.epoch,
            l.total,
            l.seg,
            l.motion_cls,
            l.box_aware,
            l.rtm,
            opt(self.val_success),
            opt(self.val_precision),
            self.lr,
            self.wall_seconds
        )
    }
}

/// Success/precision of `model` tracking `seqs` from their first boxes.
pub fn validate_model(model: &Model, seqs: &[Sequence], seed: u64, threads: usize) -> Result<(f64, f64)> {
    let tracker = model_tracker(model, seed);
    let runs = track_many(tracker.as_ref(), seqs, &TrackOptions::default(), threads, |s: &Sequence| {
        (&s.frames[..], *s.target.box_at(0))
    });
    let preds: Vec<_> = runs
        .iter()
        .zip(seqs)
        .map(|(r, s)| r.tracklet(&s.target.seq, &s.target.instance_id, &s.target.category))
        .collect::<Result<_>>()?;
    let gts: Vec<_> = seqs.iter().map(|s| s.target.clone()).collect();
    let (_, all) = evaluate(&preds, &gts, &OpeGrid::default())?;
    Ok((all.success, all.precision))
}

/// Where a training run writes, and what it resumes from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunPaths {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Per-epoch hook for extra work (for example, appending to a log).
pub type EpochHook<'a> = dyn FnMut(&EpochMetrics) + 'a;

/// Supervised training on labeled frame pairs up to `max_gap` apart. Each epoch shuffles the
/// pairs with its own derived seed, so a resumed run continues identically.
pub fn train_supervised(train: &[Sequence], val: &[Sequence], cfg: &TrainConfig, paths: &RunPaths) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pairs = frame_pairs(train, cfg.max_gap);
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no labeled training pairs".into()));
    }
    let (mut model, start) = match &paths.resume {
        Some(p) => {
            let m = Model::load(p)?;
            let done = m.store.meta("epoch").unwrap_or(0.0) as usize;
            (m, done)
        }
        None => (cfg.new_model()?, 0),
    };
    if model.arch() != cfg.arch {
        return Err(Error::Config(format!("checkpoint holds {} but config asks for {}", model.arch().name(), cfg.arch.name())));
    }
    let mut log = String::new();
    if let Some(dir) = &paths.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        if start == 0 || !path.exists() {
            log.push_str(METRICS_HEADER);
            log.push('\n');
        } else {
            log = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        }
        std::fs::write(dir.join("train_config.txt"), cfg.to_flat().to_text()).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = Vec::new();
    for epoch in start..cfg.epochs {
        let t0 = Instant::now();
        let lr = learning_rate(cfg.lr, epoch, cfg.decay_every);
        let mut order = pairs.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EPOCH, epoch as u64)));
        order.truncate(cfg.pairs_per_epoch.unwrap_or(order.len()).max(1));
        let mut sum = LossValues::default();
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let base = (epoch as u64) << 32 | (b * cfg.batch) as u64;
            let samples: Vec<TrainingSample> = parallel_map(chunk.len(), cfg.threads, |i| {
                let p = chunk[i];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SAMPLE, base + i as u64));
                make_sample(&train[p.seq], p, cfg, &mut rng)
            })
            .into_iter()
            .filter(|s| !s.degenerate)
            .collect();
            if samples.is_empty() {
                continue;
            }
            let w = vec![1.0 / samples.len() as f64; samples.len()];
            let rep = train_step(&mut model, &samples, &w, cfg, lr)?;
            sum.add_scaled(&rep.loss, 1.0);
            batches += 1;
        }
        let mut loss = LossValues::default();
        loss.add_scaled(&sum, 1.0 / batches.max(1) as f64);
        let (val_success, val_precision) = if cfg.val_every > 0 && !val.is_empty() && (epoch + 1) % cfg.val_every == 0 {
            let (s, p) = validate_model(&model, val, cfg.seed, cfg.threads)?;
            (Some(s), Some(p))
        } else {
            (None, None)
        };
        model.store.set_meta("epoch", (epoch + 1) as f64);
        let m = EpochMetrics { epoch: epoch + 1, loss, val_success, val_precision, lr, wall_seconds: t0.elapsed().as_secs_f64() };
        log::info!("epoch {} loss {:.5} val {:?}/{:?} lr {:e}", m.epoch, m.loss.total, m.val_success, m.val_precision, lr);
        if let Some(dir) = &paths.out_dir {
            let _ = writeln!(log, "{}", m.csv_row());
            let path = dir.join("metrics.csv");
            std::fs::write(&path, &log).map_err(|e| Error::io(&path, e))?;
            model.save(&checkpoint_path(dir, epoch + 1))?;
            model.save(&dir.join("last.ckpt"))?;
        }
        history.push(m);
    }
    Ok(TrainOutcome { model, history })
}
