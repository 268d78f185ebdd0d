//! Semi-supervised training with pseudo labels, delete-cut-paste motion
//! augmentation and a cycle-consistency objective.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::data::jsonl::tracklet_records;
use crate::data::{derive_seed, Frame, Sequence, TrainingSample, Tracklet, UnlabeledSequence};
use crate::error::{Error, Result};
use crate::eval::{evaluate, OpeGrid};
use crate::geom::{from_canonical_point, points_in_box, to_canonical_point, Box3D, Vec3};
use crate::model::{m2track_forward, vanilla_forward, ForwardOpts, Model, Nets, PairInput, Stacked};
use crate::nn::{Graph, Var};
use crate::tracker::{model_tracker, track_many, StepTracker, TrackOptions};
use crate::train::{
    apply_update, box_rows, checkpoint_path, forward_loss, frame_pairs, learning_rate, make_sample,
    make_sample_from, pair_inputs, parallel_map, row_huber, train_supervised, validate_model, weighted_rows, LossValues,
    PairRef, RunPaths, TrainConfig, TrainOutcome, STREAM_EPOCH, STREAM_SAMPLE,
};

/// Attempts at drawing a usable labeled source pair for one augmentation.
pub const SOURCE_RETRIES: usize = 8;

const STREAM_DCP: u64 = 0x6463_7073;

#[derive(Debug, Clone, PartialEq)]
pub struct SemiConfig {
    /// Weight of the unlabeled forward loss.
    pub lambda: f64,
    /// Weight of the cycle loss.
    pub alpha: f64,
    /// Deletion scale of the pseudo box.
    pub gamma: f64,
    pub paste_p: f64,
    pub clip: f64,
    pub cycle_on_labeled: bool,
    /// Optimization settings shared by pre-training and mixed training.
    pub train: TrainConfig,
}

impl Default for SemiConfig {
    fn default() -> Self {
        SemiConfig {
            lambda: 0.1,
            alpha: 0.1,
            gamma: 1.25,
            paste_p: 0.5,
            clip: 1.0,
            cycle_on_labeled: false,
            train: TrainConfig::default(),
        }
    }
}

impl SemiConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda) && ok(self.alpha) && ok(self.clip)) {
            return Err(Error::Config("semi: lambda, alpha and clip must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.paste_p) {
            return Err(Error::Config(format!("semi: paste probability {} outside [0, 1]", self.paste_p)));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("semi: gamma {} must be at least 1", self.gamma)));
        }
        self.train.validate()
    }

    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = SemiConfig::default();
        let cfg = SemiConfig {
            lambda: c.get_or("semi.lambda", d.lambda)?,
            alpha: c.get_or("semi.alpha", d.alpha)?,
            gamma: c.get_or("semi.gamma", d.gamma)?,
            paste_p: c.get_or("semi.paste_p", d.paste_p)?,
            clip: c.get_or("semi.clip", d.clip)?,
            cycle_on_labeled: c.get_or("semi.cycle_on_labeled", d.cycle_on_labeled)?,
            train: TrainConfig::from_flat(c)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = self.train.to_flat();
        c.set("semi.lambda", self.lambda);
        c.set("semi.alpha", self.alpha);
        c.set("semi.gamma", self.gamma);
        c.set("semi.paste_p", self.paste_p);
        c.set("semi.clip", self.clip);
        c.set("semi.cycle_on_labeled", self.cycle_on_labeled);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTracklet {
    pub tracklet: Tracklet,
    /// Identifier of the checkpoint that produced the boxes.
    pub source: String,
}

/// Tracks every unlabeled sequence from its given first box.
pub fn generate_pseudo_labels(
    tracker: &dyn StepTracker,
    unlabeled: &[UnlabeledSequence],
    threads: usize,
    source: &str,
) -> Result<Vec<PseudoTracklet>> {
    let runs = track_many(tracker, unlabeled, &TrackOptions::default(), threads, |u: &UnlabeledSequence| {
        (&u.frames[..], u.first_box)
    });
    runs.iter()
        .zip(unlabeled)
        .map(|(r, u)| {
            let id = u.hidden.as_ref().map_or(u.name.as_str(), |h| h.instance_id.as_str());
            let mut t = r.tracklet(&u.name, id, &u.category)?;
            t.is_pseudo = true;
            Ok(PseudoTracklet { tracklet: t, source: source.to_string() })
        })
        .collect()
}

pub fn write_pseudo_labels(path: &Path, labels: &[PseudoTracklet]) -> Result<()> {
    let mut out = String::new();
    for p in labels {
        for mut r in tracklet_records(&p.tracklet) {
            r.source = Some(p.source.clone());
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Success/precision of pseudo labels against the hidden ground truth, when
/// every sequence has one.
pub fn pseudo_label_quality(unlabeled: &[UnlabeledSequence], labels: &[PseudoTracklet]) -> Result<Option<(f64, f64)>> {
    let Some(gts) = unlabeled.iter().map(|u| u.hidden.clone()).collect::<Option<Vec<_>>>() else {
        return Ok(None);
    };
    let preds: Vec<Tracklet> = labels.iter().map(|p| p.tracklet.clone()).collect();
    let (_, all) = evaluate(&preds, &gts, &OpeGrid::default())?;
    Ok(Some((all.success, all.precision)))
}

/// Unlabeled sequences with their pseudo tracklets as targets.
pub fn pseudo_sequences(unlabeled: &[UnlabeledSequence], labels: &[PseudoTracklet]) -> Result<Vec<Sequence>> {
    if unlabeled.len() != labels.len() {
        return Err(Error::Contract(format!("{} unlabeled sequences but {} pseudo tracklets", unlabeled.len(), labels.len())));
    }
    unlabeled
        .iter()
        .zip(labels)
        .map(|(u, p)| {
            let s = Sequence { name: u.name.clone(), scene: u.scene, frames: u.frames.clone(), target: p.tracklet.clone(), others: vec![] };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcpOutput {
    pub points: [Vec<Vec3>; 2],
    /// Destination poses with the source object size.
    pub boxes: [Box3D; 2],
    pub pasted: [usize; 2],
}

/// Delete-cut-paste on one frame pair: clears everything inside the
/// `gamma`-scaled destination boxes, then pastes the source object (cut by its
/// ground-truth box) at each destination pose. Returns `None` when the source
/// object has no points in either frame.
pub fn delete_cut_paste(dest: [(&[Vec3], Box3D); 2], source: [(&[Vec3], Box3D); 2], gamma: f64) -> Option<DcpOutput> {
    let mut points: [Vec<Vec3>; 2] = Default::default();
    let mut boxes = [dest[0].1, dest[1].1];
    let mut pasted = [0; 2];
    for k in 0..2 {
        let (src_pts, src_box) = source[k];
        let object: Vec<Vec3> = src_pts
            .iter()
            .zip(points_in_box(src_pts, &src_box, 1.0))
            .filter(|(_, m)| *m)
            .map(|(p, _)| to_canonical_point(*p, &src_box))
            .collect();
        if object.is_empty() {
            return None;
        }
        let (dst_pts, dst_box) = dest[k];
        let mut out: Vec<Vec3> =
            dst_pts.iter().zip(points_in_box(dst_pts, &dst_box, gamma)).filter(|(_, m)| !*m).map(|(p, _)| *p).collect();
        boxes[k].size = src_box.size;
        out.extend(object.iter().map(|l| from_canonical_point(*l, &boxes[k])));
        pasted[k] = object.len();
        points[k] = out;
    }
    Some(DcpOutput { points, boxes, pasted })
}

/// `mean(labeled) + λ · mean(unlabeled)`; an empty side contributes nothing.
pub fn loss_forward_semi(labeled: &[f64], unlabeled: &[f64], lambda: f64) -> Result<f64> {
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(Error::InvalidInput("forward loss over an empty batch".into()));
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(mean(labeled) + lambda * mean(unlabeled))
}

/// Per-sample coefficients realizing [`loss_forward_semi`] as a weighted sum.
pub fn semi_weights(labeled_like: &[bool], lambda: f64) -> Vec<f64> {
    let nl = labeled_like.iter().filter(|l| **l).count();
    let nu = labeled_like.len() - nl;
    labeled_like.iter().map(|&l| if l { 1.0 / nl as f64 } else { lambda / nu as f64 }).collect()
}

/// Predicted boxes (B×4) for `pairs` tracked from `poses`, plus which samples
/// had no usable target points.
fn predict_poses(g: &mut Graph, model: &Model, pairs: &[PairInput], poses: Var, fallback_top: usize) -> Result<(Var, Vec<bool>)> {
    let st = Stacked::new(pairs);
    match &model.nets {
        Nets::M2Track(nets) => {
            let opts = ForwardOpts { fallback_top: Some(fallback_top), ..Default::default() };
            let out = m2track_forward(g, nets, st, poses, &opts);
            let stages = out.stages.ok_or_else(|| Error::Contract("forward pass produced no stages".into()))?;
            Ok((stages.refined, out.empty_mask))
        }
        Nets::Vanilla(net) => {
            let out = vanilla_forward(g, net, st, poses, &ForwardOpts::default());
            Ok((out.pred, vec![false; pairs.len()]))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CycleVars {
    /// Mean cycle loss over the samples that were used.
    pub mean: Var,
    pub used: usize,
    pub skipped: usize,
}

/// Tracks each sample forward from its input box, then backward with the
/// crops swapped from the forward estimate, and penalizes the gap to the input
/// box on `[x, y, z, sin θ]`. Gradients flow through both passes. Samples whose
/// forward or backward pass selected no target point contribute zero.
pub fn loss_cycle(g: &mut Graph, model: &Model, samples: &[TrainingSample], fallback_top: usize) -> Result<CycleVars> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cycle loss over an empty batch".into()));
    }
    let start = g.constant(box_rows(samples.iter().map(|s| s.input_box)));
    let fwd_pairs = pair_inputs(samples);
    let (fwd, fwd_empty) = predict_poses(g, model, &fwd_pairs, start, fallback_top)?;
    let back_pairs: Vec<PairInput> =
        fwd_pairs.into_iter().map(|p| PairInput { prev: p.cur, cur: p.prev, size: p.size }).collect();
    let (back, back_empty) = predict_poses(g, model, &back_pairs, fwd, fallback_top)?;
    let skip: Vec<bool> = fwd_empty.iter().zip(&back_empty).map(|(a, b)| *a || *b).collect();
    let used = skip.iter().filter(|s| !**s).count();
    let skipped = samples.len() - used;
    let d_xyz = {
        let a = g.slice_cols(back, 0, 3);
        let b = g.slice_cols(start, 0, 3);
        g.sub(a, b)
    };
    let d_sin = {
        let a = g.slice_cols(back, 3, 4);
        let a = g.sin(a);
        let b = g.slice_cols(start, 3, 4);
        let b = g.sin(b);
        g.sub(a, b)
    };
    let d = g.concat_cols(&[d_xyz, d_sin]);
    let h = row_huber(g, d);
    let coef = skip.iter().map(|&s| if s { 0.0 } else { 1.0 / used as f64 }).collect();
    let mean = weighted_rows(g, h, coef);
    if skipped > 0 {
        log::debug!("cycle loss skipped {skipped} of {} samples", samples.len());
    }
    Ok(CycleVars { mean, used, skipped })
}

/// A training sample and how the objective treats it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub sample: TrainingSample,
    /// Counted in the labeled mean (ground truth or delete-cut-paste output).
    pub labeled_like: bool,
    /// Drawn from an unlabeled sequence.
    pub from_unlabeled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SemiLoss {
    pub total: f64,
    pub forward: LossValues,
    pub cycle: f64,
    pub cycle_used: usize,
    pub cycle_skipped: usize,
}

/// Builds the full objective `forward + α · cycle` in `g`; returns the total
/// variable and its parts.
pub fn semi_batch_loss(g: &mut Graph, model: &Model, batch: &[MixedSample], cfg: &SemiConfig) -> Result<(Var, SemiLoss)> {
    let samples: Vec<TrainingSample> = batch.iter().map(|m| m.sample.clone()).collect();
    let flags: Vec<bool> = batch.iter().map(|m| m.labeled_like).collect();
    let weights = semi_weights(&flags, cfg.lambda);
    let poses = g.constant(box_rows(samples.iter().map(|s| s.input_box)));
    let (fwd, _) = forward_loss(g, model, &samples, poses, &weights, &cfg.train.loss, cfg.train.fallback_top)?;
    let mut out = SemiLoss { forward: fwd.values(g), ..Default::default() };
    let mut total = fwd.total;
    let cyc: Vec<TrainingSample> =
        batch.iter().filter(|m| m.from_unlabeled || cfg.cycle_on_labeled).map(|m| m.sample.clone()).collect();
    if cfg.alpha > 0.0 && !cyc.is_empty() {
        let record = g.record_stats;
        g.record_stats = false;
        let c = loss_cycle(g, model, &cyc, cfg.train.fallback_top);
        g.record_stats = record;
        let c = c?;
        let scaled = g.scale(c.mean, cfg.alpha);
        total = g.add(total, scaled);
        out.cycle = g.value(c.mean).item();
        out.cycle_used = c.used;
        out.cycle_skipped = c.skipped;
    }
    out.total = g.value(total).item();
    Ok((total, out))
}

/// Delete-cut-paste onto unlabeled pair `t` of `dest`, with a labeled source
/// pair at the same frame interval.
pub fn augment_pair<R: Rng + ?Sized>(dest: &Sequence, pair: PairRef, labeled: &[Sequence], gamma: f64, rng: &mut R) -> Option<(Frame, Frame, Box3D, Box3D)> {
    let (t0, t) = (pair.prev(), pair.t);
    for _ in 0..SOURCE_RETRIES {
        let src = labeled.choose(rng)?;
        if src.len() <= pair.gap {
            continue;
        }
        let s = rng.gen_range(pair.gap..src.len());
        let s0 = s - pair.gap;
        let out = delete_cut_paste(
            [
                (&dest.frames[t0].points, *dest.target.box_at(t0)),
                (&dest.frames[t].points, *dest.target.box_at(t)),
            ],
            [
                (&src.frames[s0].points, *src.target.box_at(s0)),
                (&src.frames[s].points, *src.target.box_at(s)),
            ],
            gamma,
        );
        match out {
            Some(o) => {
                let [p0, p1] = o.points;
                let f0 = Frame::new(dest.frames[t0].frame_id, p0);
                let f1 = Frame::new(dest.frames[t].frame_id, p1);
                return Some((f0, f1, o.boxes[0], o.boxes[1]));
            }
            None => log::warn!("delete-cut-paste: empty source object in {} at {s}", src.name),
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Labeled(PairRef),
    Pseudo(PairRef),
}

fn mixed_sample(origin: Origin, labeled: &[Sequence], pseudo: &[Sequence], cfg: &SemiConfig, key: u64) -> MixedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, STREAM_SAMPLE, key));
    match origin {
        Origin::Labeled(p) => {
            MixedSample { sample: make_sample(&labeled[p.seq], p, &cfg.train, &mut rng), labeled_like: true, from_unlabeled: false }
        }
        Origin::Pseudo(p) => {
            let seq = &pseudo[p.seq];
            let mut drng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, STREAM_DCP, key));
            if drng.gen::<f64>() < cfg.paste_p {
                if let Some((f0, f1, b0, b1)) = augment_pair(seq, p, labeled, cfg.gamma, &mut drng) {
                    let sample = make_sample_from(&f0, &f1, &b0, &b1, true, &cfg.train, &mut rng);
                    return MixedSample { sample, labeled_like: true, from_unlabeled: true };
                }
            }
            MixedSample { sample: make_sample(seq, p, &cfg.train, &mut rng), labeled_like: false, from_unlabeled: true }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiEpochMetrics {
    pub epoch: usize,
    pub loss: SemiLoss,
    pub augmented: usize,
    pub val_success: Option<f64>,
    pub val_precision: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub const SEMI_METRICS_HEADER: &str =
    "epoch,loss_total,loss_forward,loss_cycle,cycle_skipped,augmented,val_success,val_precision,lr,wall_seconds";

impl SemiEpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{},{:e},{:.2}",
            self.epoch,
            self.loss.total,
            self.loss.forward.total,
            self.loss.cycle,
            self.loss.cycle_skipped,
            self.augmented,
            opt(self.val_success),
            opt(self.val_precision),
            self.lr,
            self.wall_seconds
        )
    }
}

/// Mixed training from scratch on labeled and pseudo-labeled sequences.
pub fn train_mixed(
    labeled: &[Sequence],
    pseudo: &[Sequence],
    val: &[Sequence],
    cfg: &SemiConfig,
    out_dir: Option<&Path>,
) -> Result<(Model, Vec<SemiEpochMetrics>)> {
    cfg.validate()?;
    let tc = &cfg.train;
    let mut items: Vec<Origin> = frame_pairs(labeled, tc.max_gap).into_iter().map(Origin::Labeled).collect();
    items.extend(frame_pairs(pseudo, tc.max_gap).into_iter().map(Origin::Pseudo));
    if items.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let mut model = tc.new_model()?;
    let mut log = format!("{SEMI_METRICS_HEADER}\n");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = Vec::new();
    for epoch in 0..tc.epochs {
        let t0 = Instant::now();
        let lr = learning_rate(tc.lr, epoch, tc.decay_every);
        let mut order = items.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tc.seed, STREAM_EPOCH, epoch as u64)));
        order.truncate(tc.pairs_per_epoch.unwrap_or(order.len()).max(1));
        let mut sum = SemiLoss::default();
        let (mut batches, mut augmented) = (0usize, 0usize);
        for (b, chunk) in order.chunks(tc.batch).enumerate() {
            let base = (epoch as u64) << 32 | (b * tc.batch) as u64;
            let batch: Vec<MixedSample> =
                parallel_map(chunk.len(), tc.threads, |i| mixed_sample(chunk[i], labeled, pseudo, cfg, base + i as u64))
                    .into_iter()
                    .filter(|m| !m.sample.degenerate)
                    .collect();
            if batch.is_empty() {
                continue;
            }
            augmented += batch.iter().filter(|m| m.labeled_like && m.from_unlabeled).count();
            let (loss, grads, stats) = {
                let mut g = Graph::new(&model.store, true);
                let (total, loss) = semi_batch_loss(&mut g, &model, &batch, cfg)?;
                let grads = g.backward(total)?;
                (loss, grads, g.take_stats())
            };
            apply_update(&mut model, grads, &stats, lr, Some(cfg.clip))?;
            sum.total += loss.total;
            sum.forward.add_scaled(&loss.forward, 1.0);
            sum.cycle += loss.cycle;
            sum.cycle_used += loss.cycle_used;
            sum.cycle_skipped += loss.cycle_skipped;
            batches += 1;
        }
        let k = 1.0 / batches.max(1) as f64;
        let mut loss = SemiLoss { total: sum.total * k, cycle: sum.cycle * k, ..sum };
        loss.forward = LossValues::default();
        loss.forward.add_scaled(&sum.forward, k);
        let (val_success, val_precision) = if tc.val_every > 0 && !val.is_empty() && (epoch + 1) % tc.val_every == 0 {
            let (s, p) = validate_model(&model, val, tc.seed, tc.threads)?;
            (Some(s), Some(p))
        } else {
            (None, None)
        };
        model.store.set_meta("epoch", (epoch + 1) as f64);
        let m = SemiEpochMetrics {
            epoch: epoch + 1,
            loss,
            augmented,
            val_success,
            val_precision,
            lr,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!("mixed epoch {} loss {:.5} cycle {:.5} augmented {}", m.epoch, m.loss.total, m.loss.cycle, augmented);
        if let Some(dir) = out_dir {
            let _ = writeln!(log, "{}", m.csv_row());
            let path = dir.join("metrics.csv");
            std::fs::write(&path, &log).map_err(|e| Error::io(&path, e))?;
            model.save(&checkpoint_path(dir, epoch + 1))?;
            model.save(&dir.join("last.ckpt"))?;
        }
        history.push(m);
    }
    Ok((model, history))
}

#[derive(Debug, Clone)]
pub struct SemiOutcome {
    pub pretrained: TrainOutcome,
    pub pseudo: Vec<PseudoTracklet>,
    /// Pseudo-label success/precision against hidden ground truth, if known.
    pub pseudo_quality: Option<(f64, f64)>,
    pub model: Model,
    pub history: Vec<SemiEpochMetrics>,
}

/// The three-stage pipeline: supervised pre-training on the labeled split,
/// pseudo-labeling the unlabeled split with the last pre-trained model, then
/// mixed training from scratch.
pub fn train_semim(
    labeled: &[Sequence],
    unlabeled: &[UnlabeledSequence],
    val: &[Sequence],
    cfg: &SemiConfig,
    out_dir: Option<&Path>,
) -> Result<SemiOutcome> {
    cfg.validate()?;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::InvalidInput("semi-supervised training needs labeled and unlabeled sequences".into()));
    }
    log::info!("stage 1/3: pre-training on {} labeled sequences", labeled.len());
    let pre_dir = out_dir.map(|d| d.join("pretrain"));
    let pretrained = train_supervised(labeled, val, &cfg.train, &RunPaths { out_dir: pre_dir.clone(), resume: None })?;
    log::info!("stage 2/3: pseudo-labeling {} unlabeled sequences", unlabeled.len());
    let source = match &pre_dir {
        Some(d) => d.join("last.ckpt").display().to_string(),
        None => format!("pretrain-epoch-{}", cfg.train.epochs),
    };
    let tracker = model_tracker(&pretrained.model, cfg.train.seed);
    let pseudo = generate_pseudo_labels(tracker.as_ref(), unlabeled, cfg.train.threads, &source)?;
    drop(tracker);
    let pseudo_quality = pseudo_label_quality(unlabeled, &pseudo)?;
    if let Some((s, p)) = pseudo_quality {
        log::info!("pseudo labels: success {s:.2} precision {p:.2}");
    }
    if let Some(d) = out_dir {
        write_pseudo_labels(&d.join("pseudo_labels.jsonl"), &pseudo)?;
    }
    log::info!("stage 3/3: mixed training");
    let seqs = pseudo_sequences(unlabeled, &pseudo)?;
    let mixed_dir = out_dir.map(|d| d.join("mixed"));
    let (model, history) = train_mixed(labeled, &seqs, val, cfg, mixed_dir.as_deref())?;
    Ok(SemiOutcome { pretrained, pseudo, pseudo_quality, model, history })
}
