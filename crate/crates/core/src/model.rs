//! Differentiable composition of the tracking pipelines on top of [`crate::nn`].
//!
//! Poses and motions travel through the graph as B×4 rows `[x, y, z, yaw]` /
//! `[dx, dy, dz, dθ]`. Network inputs are expressed in the canonical frame of
//! each sample's input (previous) box.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{canonical_keypoints, points_in_box, to_canonical_point, wrap_angle, Box3D, Rtm4, Size3, Vec3};
use crate::nn::{checkpoint, segment_ids, Graph, ParamStore, SegNet, Stage1Net, Stage2Net, Tensor, Var, VanillaNet, Widths};

/// Motion-class index meaning "dynamic".
pub const DYNAMIC: usize = 1;
/// Distance floor inside box-aware square roots.
const DIST_EPS: f64 = 1e-12;

pub fn pose_row(b: &Box3D) -> [f64; 4] {
    [b.center.x, b.center.y, b.center.z, b.yaw.radians()]
}

pub fn pose_tensor(boxes: &[Box3D]) -> Tensor {
    Tensor::from_vec(boxes.len(), 4, boxes.iter().flat_map(pose_row).collect())
}

/// Reads row `i` of a pose tensor back into a box of the given size (yaw wrapped).
pub fn pose_to_box(t: &Tensor, i: usize, size: Size3) -> Box3D {
    let r = t.row(i);
    Box3D::new(Vec3::new(r[0], r[1], r[2]), wrap_angle(r[3]), size)
}

pub fn rtm_from_row(t: &Tensor, i: usize) -> Rtm4 {
    let r = t.row(i);
    Rtm4::new(r[0], r[1], r[2], r[3])
}

fn cols(g: &mut Graph, v: Var) -> [Var; 4] {
    [g.slice_cols(v, 0, 1), g.slice_cols(v, 1, 2), g.slice_cols(v, 2, 3), g.slice_cols(v, 3, 4)]
}

/// Applies `rtm` in each pose's local frame.
pub fn g_transform(g: &mut Graph, pose: Var, rtm: Var) -> Var {
    let [x, y, z, yaw] = cols(g, pose);
    let [dx, dy, dz, dt] = cols(g, rtm);
    let (c, s) = (g.cos(yaw), g.sin(yaw));
    let cdx = g.mul(c, dx);
    let sdy = g.mul(s, dy);
    let sdx = g.mul(s, dx);
    let cdy = g.mul(c, dy);
    let ox = g.sub(cdx, sdy);
    let oy = g.add(sdx, cdy);
    let nx = g.add(x, ox);
    let ny = g.add(y, oy);
    let nz = g.add(z, dz);
    let nt = g.add(yaw, dt);
    g.concat_cols(&[nx, ny, nz, nt])
}

/// Motion carrying pose `a` onto pose `b`, with the yaw difference wrapped
/// by a constant multiple of 2π chosen from the forward values.
pub fn g_rtm_between(g: &mut Graph, a: Var, b: Var) -> Var {
    let [ax, ay, az, at] = cols(g, a);
    let [bx, by, bz, bt] = cols(g, b);
    let ex = g.sub(bx, ax);
    let ey = g.sub(by, ay);
    let ez = g.sub(bz, az);
    let raw = g.sub(bt, at);
    let (c, s) = (g.cos(at), g.sin(at));
    let cex = g.mul(c, ex);
    let sey = g.mul(s, ey);
    let sex = g.mul(s, ex);
    let cey = g.mul(c, ey);
    let lx = g.add(cex, sey);
    let ly = g.sub(cey, sex);
    let shift: Vec<f64> = g.value(raw).data.iter().map(|d| wrap_angle(*d) - d).collect();
    let shift = g.constant(Tensor::column(shift));
    let dt = g.add(raw, shift);
    g.concat_cols(&[lx, ly, ez, dt])
}

/// Points (N×3 constant, world) into the frames of per-row poses (N×4).
pub fn g_canonical(g: &mut Graph, points: &[Vec3], pose_rows: Var) -> Var {
    let px = g.constant(Tensor::column(points.iter().map(|p| p.x).collect()));
    let py = g.constant(Tensor::column(points.iter().map(|p| p.y).collect()));
    let pz = g.constant(Tensor::column(points.iter().map(|p| p.z).collect()));
    let [cx, cy, cz, yaw] = cols(g, pose_rows);
    let dx = g.sub(px, cx);
    let dy = g.sub(py, cy);
    let dz = g.sub(pz, cz);
    let (c, s) = (g.cos(yaw), g.sin(yaw));
    let cdx = g.mul(c, dx);
    let sdy = g.mul(s, dy);
    let sdx = g.mul(s, dx);
    let cdy = g.mul(c, dy);
    let lx = g.add(cdx, sdy);
    let ly = g.sub(cdy, sdx);
    g.concat_cols(&[lx, ly, dz])
}

/// Distances from canonical points to each row's box keypoints, zeroed where `keep` is 0.
fn g_box_aware(g: &mut Graph, local: Var, sizes: &[Size3], keep: &[f64]) -> Var {
    let kps: Vec<[Vec3; 9]> = sizes.iter().map(|s| canonical_keypoints(*s)).collect();
    let mut dists = Vec::with_capacity(9);
    for k in 0..9 {
        let kp = g.constant(Tensor::from_vec(sizes.len(), 3, kps.iter().flat_map(|q| q[k].to_array()).collect()));
        let d = g.sub(local, kp);
        let sq = g.mul(d, d);
        let m = g.row_mean(sq);
        let m = g.scale(m, 3.0);
        dists.push(g.sqrt(m, DIST_EPS));
    }
    let ba = g.concat_cols(&dists);
    let mask = g.constant(Tensor::from_vec(keep.len(), 9, keep.iter().flat_map(|k| [*k; 9]).collect()));
    g.mul(ba, mask)
}

/// One previous/current crop pair in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub prev: Vec<Vec3>,
    pub cur: Vec<Vec3>,
    pub size: Size3,
}

/// Row-stacked stamped cloud of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacked {
    pub points: Vec<Vec3>,
    /// 0 previous frame, 1 current frame.
    pub time: Vec<u8>,
    pub offsets: Vec<usize>,
    pub sizes: Vec<Size3>,
}

impl Stacked {
    pub fn new(batch: &[PairInput]) -> Self {
        let mut s = Stacked { points: Vec::new(), time: Vec::new(), offsets: vec![0], sizes: Vec::new() };
        for p in batch {
            for (pts, t) in [(&p.prev, 0u8), (&p.cur, 1u8)] {
                s.points.extend_from_slice(pts);
                s.time.extend(std::iter::repeat_n(t, pts.len()));
                s.sizes.extend(std::iter::repeat_n(p.size, pts.len()));
            }
            s.offsets.push(s.points.len());
        }
        s
    }

    pub fn rows(&self, sample: usize) -> std::ops::Range<usize> {
        self.offsets[sample]..self.offsets[sample + 1]
    }
}

/// Builds the 14-channel input (canonical xyz, time, prior-targetness,
/// box-aware) relative to `poses` (B×4). Prior-targetness is fixed from the
/// forward values of `poses`. Returns (input, canonical xyz).
pub fn stamped_input(g: &mut Graph, st: &Stacked, poses: Var) -> (Var, Var) {
    let ids = segment_ids(&st.offsets);
    let pose_vals = g.value(poses).clone();
    let pose_rows = g.gather(poses, &ids);
    let local = g_canonical(g, &st.points, pose_rows);
    let mut prior = Vec::with_capacity(st.points.len());
    for (i, p) in st.points.iter().enumerate() {
        prior.push(if st.time[i] == 1 {
            0.5
        } else {
            let b = pose_to_box(&pose_vals, ids[i], st.sizes[i]);
            if points_in_box(std::slice::from_ref(p), &b, 1.0)[0] {
                1.0
            } else {
                0.0
            }
        });
    }
    let keep: Vec<f64> = st.time.iter().map(|&t| if t == 0 { 1.0 } else { 0.0 }).collect();
    let ba = g_box_aware(g, local, &st.sizes, &keep);
    let time = g.constant(Tensor::column(st.time.iter().map(|&t| t as f64).collect()));
    let prior = g.constant(Tensor::column(prior));
    (g.concat_cols(&[local, time, prior, ba]), local)
}

#[derive(Debug, Clone, PartialEq)]
pub struct M2TrackNets {
    pub seg: SegNet,
    pub stage1: Stage1Net,
    pub stage2: Stage2Net,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Nets {
    M2Track(M2TrackNets),
    Vanilla(VanillaNet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    M2Track,
    Vanilla,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m2track" => Ok(Arch::M2Track),
            "vanilla" | "m-vanilla" => Ok(Arch::Vanilla),
            other => Err(Error::Config(format!("unknown model {other:?} (m2track, vanilla)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::M2Track => "m2track",
            Arch::Vanilla => "vanilla",
        }
    }
}

/// Network structure plus weights, running statistics and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub nets: Nets,
    pub store: ParamStore,
}

impl Model {
    pub fn new(arch: Arch, widths: &Widths, points: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let nets = match arch {
            Arch::M2Track => {
                let n = M2TrackNets {
                    seg: SegNet::new(widths),
                    stage1: Stage1Net::new(widths),
                    stage2: Stage2Net::new(widths),
                };
                n.seg.init(&mut store, &mut rng);
                n.stage1.init(&mut store, &mut rng);
                n.stage2.init(&mut store, &mut rng);
                Nets::M2Track(n)
            }
            Arch::Vanilla => {
                let n = VanillaNet::new(widths);
                n.init(&mut store, &mut rng);
                Nets::Vanilla(n)
            }
        };
        store.set_meta("points", points as f64);
        Model { nets, store }
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let nets = if store.contains("van.point.0.w") {
            Nets::Vanilla(VanillaNet::infer(&store)?)
        } else {
            Nets::M2Track(M2TrackNets {
                seg: SegNet::infer(&store)?,
                stage1: Stage1Net::infer(&store)?,
                stage2: Stage2Net::infer(&store)?,
            })
        };
        if store.meta("points").is_none() {
            return Err(Error::Checkpoint("missing meta.points".into()));
        }
        Ok(Model { nets, store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    pub fn arch(&self) -> Arch {
        match self.nets {
            Nets::M2Track(_) => Arch::M2Track,
            Nets::Vanilla(_) => Arch::Vanilla,
        }
    }

    /// Points sampled per frame crop.
    pub fn points(&self) -> usize {
        self.store.meta("points").unwrap_or(1024.0) as usize
    }
}

/// Switches for one batched forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardOpts {
    /// Apply feature normalization (disabled for gradient-check purity).
    pub no_norm: bool,
    /// When the predicted mask selects nothing, fall back to this many points
    /// with the largest target margin instead of declaring the sample degenerate.
    pub fallback_top: Option<usize>,
    /// Replaces the predicted per-row target mask.
    pub mask_override: Option<Vec<bool>>,
    pub force_static: bool,
}

#[derive(Debug, Clone)]
pub struct StageVars {
    /// Selected stacked-row indices, grouped per sample.
    pub selected: Vec<usize>,
    pub sel_offsets: Vec<usize>,
    pub motion: Var,
    pub motion_logits: Var,
    pub refine: Var,
    pub dynamic: Vec<bool>,
    pub refined_prev: Var,
    pub coarse: Var,
    pub stage2: Var,
    pub refined: Var,
    /// Stage-II canonical xyz of the selected rows.
    pub merged_local: Var,
}

#[derive(Debug, Clone)]
pub struct M2Out {
    pub stacked: Stacked,
    pub seg_logits: Var,
    pub box_aware: Var,
    /// Per-row target decision actually used (after any override).
    pub mask: Vec<bool>,
    /// Samples whose mask selected no point.
    pub empty_mask: Vec<bool>,
    /// Absent when a sample had an empty mask and no fallback was allowed.
    pub stages: Option<StageVars>,
}

#[derive(Debug, Clone)]
pub struct Stage1Vars {
    pub motion: Var,
    pub logits: Var,
    pub refine: Var,
    pub dynamic: Vec<bool>,
    pub refined_prev: Var,
    pub coarse: Var,
}

/// Stage I over per-sample target rows `x` (canonical xyz, time, box-aware)
/// relative to `poses`.
pub fn stage1_forward(
    g: &mut Graph,
    net: &Stage1Net,
    x: Var,
    offsets: &[usize],
    poses: Var,
    force_static: bool,
    norm: bool,
) -> Stage1Vars {
    let out = net.forward(g, x, offsets, norm);
    let b = offsets.len() - 1;
    let refined_prev = g_transform(g, poses, out.refine);
    let ml = g.value(out.logits).clone();
    let dynamic: Vec<bool> = (0..b).map(|s| !force_static && ml.get(s, DYNAMIC) > ml.get(s, 1 - DYNAMIC)).collect();
    g.note_branch(dynamic.iter().map(|&d| d as usize));
    let moved = g_transform(g, refined_prev, out.rtm);
    let both = g.concat_rows(&[refined_prev, moved]);
    let pick: Vec<usize> = (0..b).map(|s| if dynamic[s] { b + s } else { s }).collect();
    let coarse = g.gather(both, &pick);
    Stage1Vars { motion: out.rtm, logits: out.logits, refine: out.refine, dynamic, refined_prev, coarse }
}

#[derive(Debug, Clone)]
pub struct Stage2Vars {
    pub rtm: Var,
    pub refined: Var,
    pub merged_local: Var,
}

/// Stage II on the selected target points (world coordinates, grouped by `offsets`).
#[allow(clippy::too_many_arguments)]
pub fn stage2_forward(
    g: &mut Graph,
    net: &Stage2Net,
    points: &[Vec3],
    time: &[u8],
    offsets: &[usize],
    box_aware: Var,
    s1: &Stage1Vars,
    norm: bool,
) -> Stage2Vars {
    let b = offsets.len() - 1;
    // Previous target points in the refined previous frame coincide with their
    // motion-transported copies in the coarse frame, so one gather covers both cases.
    let frames = g.concat_rows(&[s1.refined_prev, s1.coarse]);
    let ids = segment_ids(offsets);
    let frame_idx: Vec<usize> = time.iter().zip(&ids).map(|(&t, &s)| if t == 0 { s } else { b + s }).collect();
    let frame_rows = g.gather(frames, &frame_idx);
    let merged_local = g_canonical(g, points, frame_rows);
    let x = g.concat_cols(&[merged_local, box_aware]);
    let rtm = net.forward(g, x, offsets, norm);
    let refined = g_transform(g, s1.coarse, rtm);
    Stage2Vars { rtm, refined, merged_local }
}

pub fn m2track_forward(
    g: &mut Graph,
    nets: &M2TrackNets,
    st: Stacked,
    poses: Var,
    opts: &ForwardOpts,
) -> M2Out {
    let norm = !opts.no_norm;
    let (x, local) = stamped_input(g, &st, poses);
    let seg = nets.seg.forward(g, x, &st.offsets, norm);
    let seg_logits = g.slice_cols(seg, 0, 2);
    let box_aware = g.slice_cols(seg, 2, 11);
    let logits = g.value(seg_logits).clone();
    let mask: Vec<bool> = match &opts.mask_override {
        Some(m) => m.clone(),
        None => (0..logits.rows).map(|i| logits.get(i, 1) > logits.get(i, 0)).collect(),
    };
    let b = st.offsets.len() - 1;
    let mut selected = Vec::new();
    let mut sel_offsets = vec![0];
    let mut empty_mask = vec![false; b];
    for s in 0..b {
        let rows = st.rows(s);
        let before = selected.len();
        selected.extend(rows.clone().filter(|&i| mask.get(i).copied().unwrap_or(false)));
        if selected.len() == before {
            empty_mask[s] = true;
            let Some(k) = opts.fallback_top else {
                return M2Out { stacked: st, seg_logits, box_aware, mask, empty_mask, stages: None };
            };
            let mut order: Vec<usize> = rows.collect();
            let margin = |i: usize| logits.get(i, 1) - logits.get(i, 0);
            order.sort_by(|&p, &q| margin(q).total_cmp(&margin(p)).then(p.cmp(&q)));
            order.truncate(k.max(1));
            order.sort_unstable();
            selected.extend(order);
        }
        sel_offsets.push(selected.len());
    }
    g.note_branch(selected.iter().copied());

    let time = g.constant(Tensor::column(st.time.iter().map(|&t| t as f64).collect()));
    let feats = g.concat_cols(&[local, time, box_aware]);
    let s1_in = g.gather(feats, &selected);
    let s1 = stage1_forward(g, &nets.stage1, s1_in, &sel_offsets, poses, opts.force_static, norm);
    let sel_points: Vec<Vec3> = selected.iter().map(|&i| st.points[i]).collect();
    let sel_time: Vec<u8> = selected.iter().map(|&i| st.time[i]).collect();
    let ba_sel = g.gather(box_aware, &selected);
    let s2 = stage2_forward(g, &nets.stage2, &sel_points, &sel_time, &sel_offsets, ba_sel, &s1, norm);
    M2Out {
        stacked: st,
        seg_logits,
        box_aware,
        mask,
        empty_mask,
        stages: Some(StageVars {
            selected,
            sel_offsets,
            motion: s1.motion,
            motion_logits: s1.logits,
            refine: s1.refine,
            dynamic: s1.dynamic,
            refined_prev: s1.refined_prev,
            coarse: s1.coarse,
            stage2: s2.rtm,
            refined: s2.refined,
            merged_local: s2.merged_local,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct VanillaOut {
    pub stacked: Stacked,
    pub rtm: Var,
    pub pred: Var,
}

pub fn vanilla_forward(g: &mut Graph, net: &VanillaNet, st: Stacked, poses: Var, opts: &ForwardOpts) -> VanillaOut {
    let (x, _) = stamped_input(g, &st, poses);
    let rtm = net.forward(g, x, &st.offsets, !opts.no_norm);
    let pred = g_transform(g, poses, rtm);
    VanillaOut { stacked: st, rtm, pred }
}

/// Stage-II input cloud outside the graph: previous target points carried by
/// `motion` (when dynamic) merged with current target points, canonical to `coarse`.
pub fn merge_targets(
    prev_targets: &[Vec3],
    cur_targets: &[Vec3],
    refined_prev: &Box3D,
    motion: Rtm4,
    dynamic: bool,
    coarse: &Box3D,
) -> Vec<Vec3> {
    let carried = prev_targets.iter().map(|p| {
        if dynamic {
            crate::geom::transform_point(*p, refined_prev, motion)
        } else {
            *p
        }
    });
    carried.chain(cur_targets.iter().copied()).map(|p| to_canonical_point(p, coarse)).collect()
}

/// Stage-I box composition outside the graph.
pub fn compose_stage1(prev_box: &Box3D, refine: Rtm4, motion: Rtm4, dynamic: bool) -> (Box3D, Box3D) {
    let refined_prev = crate::geom::transform_box(prev_box, refine);
    let coarse = if dynamic { crate::geom::transform_box(&refined_prev, motion) } else { refined_prev };
    (refined_prev, coarse)
}
