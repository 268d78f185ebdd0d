//! The segmentation network, the two M²-Track stages and the M-Vanilla regressor.
//!
//! Every network consumes row-stacked points of a batch; `offsets` delimit the
//! rows of each sample (`offsets[s]..offsets[s + 1]`).

use rand::Rng;

use super::{Graph, Mlp, ParamStore, Var};
use crate::error::{Error, Result};

/// Segmentation input: xyz, time, prior-targetness, 9 box-aware distances.
pub const SEG_IN: usize = 14;
/// Mask logits (2) followed by predicted box-aware distances (9).
pub const SEG_OUT: usize = 11;
/// Stage-I input: xyz, time, predicted box-aware.
pub const STAGE1_IN: usize = 13;
/// Stage-II input: xyz, predicted box-aware.
pub const STAGE2_IN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Widths {
    /// Five per-point layers; the second one's output feeds the skip connection.
    pub seg_enc: Vec<usize>,
    pub seg_dec: Vec<usize>,
    pub s1_point: Vec<usize>,
    /// Post-pool layers; the last width is the shared embedding.
    pub s1_pool: Vec<usize>,
    pub s1_head: Vec<usize>,
    pub s2_point: Vec<usize>,
    pub s2_pool: Vec<usize>,
}

impl Widths {
    pub fn paper() -> Self {
        Widths {
            seg_enc: vec![64, 64, 64, 128, 1024],
            seg_dec: vec![512, 256, 128, 128],
            s1_point: vec![64, 128, 256, 512],
            s1_pool: vec![512, 256],
            s1_head: vec![128, 128, 128],
            s2_point: vec![64, 128, 256, 512],
            s2_pool: vec![512, 256],
        }
    }

    /// Narrow layers for single-CPU experiments.
    pub fn desk() -> Self {
        Widths {
            seg_enc: vec![32, 32, 32, 64, 128],
            seg_dec: vec![128, 64, 64, 64],
            s1_point: vec![32, 64, 64, 128],
            s1_pool: vec![128, 64],
            s1_head: vec![64, 64, 64],
            s2_point: vec![32, 64, 64, 128],
            s2_pool: vec![128, 64],
        }
    }

    /// Tiny layers for gradient checks and fast unit tests.
    pub fn tiny() -> Self {
        Widths {
            seg_enc: vec![6, 6, 6, 8, 10],
            seg_dec: vec![8, 8, 6, 6],
            s1_point: vec![6, 8, 8, 10],
            s1_pool: vec![8, 6],
            s1_head: vec![6, 6, 6],
            s2_point: vec![6, 8, 8, 10],
            s2_pool: vec![8, 6],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown width preset {other:?} (paper, desk, tiny)"))),
        }
    }
}

/// Row → sample index for a segment layout.
pub fn segment_ids(offsets: &[usize]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    for s in 0..offsets.len().saturating_sub(1) {
        ids.extend(std::iter::repeat_n(s, offsets[s + 1] - offsets[s]));
    }
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub enc_a: Mlp,
    pub enc_b: Mlp,
    pub dec: Mlp,
}

impl SegNet {
    pub fn new(w: &Widths) -> Self {
        let e = &w.seg_enc;
        let mut dec = w.seg_dec.clone();
        dec.push(SEG_OUT);
        SegNet {
            enc_a: Mlp::new("seg.enc_a", SEG_IN, &e[..2], false),
            enc_b: Mlp::new("seg.enc_b", e[1], &e[2..], false),
            dec: Mlp::new("seg.dec", e[e.len() - 1] + e[1], &dec, true),
        }
    }

    pub fn infer(store: &ParamStore) -> Result<Self> {
        Ok(SegNet {
            enc_a: Mlp::infer(store, "seg.enc_a", false)?,
            enc_b: Mlp::infer(store, "seg.enc_b", false)?,
            dec: Mlp::infer(store, "seg.dec", true)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.enc_a.init(store, rng);
        self.enc_b.init(store, rng);
        self.dec.init(store, rng);
    }

    /// (N × 14) → (N × 11): per-point global feature concatenated with the
    /// second-layer feature, then decoded.
    pub fn forward(&self, g: &mut Graph, x: Var, offsets: &[usize], norm: bool) -> Var {
        let h2 = self.enc_a.forward(g, x, norm);
        let h = self.enc_b.forward(g, h2, norm);
        let pooled = g.segment_max(h, offsets);
        let spread = g.gather(pooled, &segment_ids(offsets));
        let cat = g.concat_cols(&[spread, h2]);
        self.dec.forward(g, cat, norm)
    }
}

/// Per-point MLP, max-pool, post-pool MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub point: Mlp,
    pub pool: Mlp,
}

impl PointEncoder {
    pub fn new(prefix: &str, input: usize, point: &[usize], pool: &[usize], plain_last: bool) -> Self {
        PointEncoder {
            point: Mlp::new(format!("{prefix}.point"), input, point, false),
            pool: Mlp::new(format!("{prefix}.pool"), *point.last().unwrap(), pool, plain_last),
        }
    }

    pub fn infer(store: &ParamStore, prefix: &str, plain_last: bool) -> Result<Self> {
        Ok(PointEncoder {
            point: Mlp::infer(store, &format!("{prefix}.point"), false)?,
            pool: Mlp::infer(store, &format!("{prefix}.pool"), plain_last)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.point.init(store, rng);
        self.pool.init(store, rng);
    }

    pub fn forward(&self, g: &mut Graph, x: Var, offsets: &[usize], norm: bool) -> Var {
        let h = self.point.forward(g, x, norm);
        let pooled = g.segment_max(h, offsets);
        self.pool.forward(g, pooled, norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Net {
    pub enc: PointEncoder,
    /// 4 RTM values then 2 motion-class logits.
    pub motion: Mlp,
    pub refine: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub struct Stage1Out {
    pub rtm: Var,
    pub logits: Var,
    pub refine: Var,
}

impl Stage1Net {
    pub fn new(w: &Widths) -> Self {
        let emb = *w.s1_pool.last().unwrap();
        let mut motion = w.s1_head.clone();
        motion.push(6);
        let mut refine = w.s1_head.clone();
        refine.push(4);
        Stage1Net {
            enc: PointEncoder::new("s1", STAGE1_IN, &w.s1_point, &w.s1_pool, false),
            motion: Mlp::new("s1.motion", emb, &motion, true),
            refine: Mlp::new("s1.refine", emb, &refine, true),
        }
    }

    pub fn infer(store: &ParamStore) -> Result<Self> {
        Ok(Stage1Net {
            enc: PointEncoder::infer(store, "s1", false)?,
            motion: Mlp::infer(store, "s1.motion", true)?,
            refine: Mlp::infer(store, "s1.refine", true)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.enc.init(store, rng);
        self.motion.init(store, rng);
        self.refine.init(store, rng);
    }

    /// Both heads read the same pooled embedding.
    pub fn forward(&self, g: &mut Graph, x: Var, offsets: &[usize], norm: bool) -> Stage1Out {
        let emb = self.enc.forward(g, x, offsets, norm);
        let m = self.motion.forward(g, emb, norm);
        let rtm = g.slice_cols(m, 0, 4);
        let logits = g.slice_cols(m, 4, 6);
        let refine = self.refine.forward(g, emb, norm);
        Stage1Out { rtm, logits, refine }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Net {
    pub enc: PointEncoder,
}

impl Stage2Net {
    pub fn new(w: &Widths) -> Self {
        let mut pool = w.s2_pool.clone();
        pool.push(4);
        Stage2Net { enc: PointEncoder::new("s2", STAGE2_IN, &w.s2_point, &pool, true) }
    }

    pub fn infer(store: &ParamStore) -> Result<Self> {
        Ok(Stage2Net { enc: PointEncoder::infer(store, "s2", true)? })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.enc.init(store, rng);
    }

    /// (N × 12) canonical points → (B × 4) RTM.
    pub fn forward(&self, g: &mut Graph, x: Var, offsets: &[usize], norm: bool) -> Var {
        self.enc.forward(g, x, offsets, norm)
    }
}

/// Single-stage regressor over the whole stamped cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaNet {
    pub enc: PointEncoder,
    pub head: Mlp,
}

impl VanillaNet {
    pub fn new(w: &Widths) -> Self {
        let emb = *w.s1_pool.last().unwrap();
        let mut head = w.s1_head.clone();
        head.push(4);
        VanillaNet {
            enc: PointEncoder::new("van", SEG_IN, &w.s1_point, &w.s1_pool, false),
            head: Mlp::new("van.head", emb, &head, true),
        }
    }

    pub fn infer(store: &ParamStore) -> Result<Self> {
        Ok(VanillaNet { enc: PointEncoder::infer(store, "van", false)?, head: Mlp::infer(store, "van.head", true)? })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        self.enc.init(store, rng);
        self.head.init(store, rng);
    }

    pub fn forward(&self, g: &mut Graph, x: Var, offsets: &[usize], norm: bool) -> Var {
        let emb = self.enc.forward(g, x, offsets, norm);
        self.head.forward(g, emb, norm)
    }
}
