//! Procedural LiDAR scenes: one tracked car, same-category distractors,
//! ground returns and small clutter objects, seen from a fixed sensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, Frame, Sequence, Tracklet};
use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::geom::{from_canonical_point, intersection_volume, transform_box, Box3D, Rtm4, Size3, Vec3};

pub const SENSOR: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.8 };

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: (f64, f64),
    pub length: (f64, f64),
    pub height: (f64, f64),
    /// Forward displacement per frame (m).
    pub speed: (f64, f64),
    /// Per-frame speed change bound (m/frame).
    pub accel: f64,
    /// Turn-rate bound (degrees per frame).
    pub turn_deg: f64,
    pub static_prob: f64,
    pub distractors: usize,
    pub parked_prob: f64,
    pub object_points: (usize, usize),
    /// Ground returns per square meter.
    pub clutter_density: f64,
    pub clutter_objects: usize,
    pub dropout: f64,
    pub occlusion: f64,
    /// Standard deviation of per-point jitter (m).
    pub noise: f64,
    pub start_distance: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 20,
            width: (1.6, 2.0),
            length: (3.6, 4.8),
            height: (1.4, 1.7),
            speed: (0.3, 1.2),
            accel: 0.1,
            turn_deg: 4.0,
            static_prob: 0.25,
            distractors: 2,
            parked_prob: 0.5,
            object_points: (60, 160),
            clutter_density: 0.75,
            clutter_objects: 6,
            dropout: 0.1,
            occlusion: 0.1,
            noise: 0.02,
            start_distance: (8.0, 25.0),
        }
    }
}

fn range_ok(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

fn prob_ok(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        for (name, r) in [("width", self.width), ("length", self.length), ("height", self.height)] {
            if !range_ok(r) || r.0 <= 0.0 {
                return bad(&format!("{name} range must be positive and ordered"));
            }
        }
        if !range_ok(self.speed) || self.speed.0 < 0.0 {
            return bad("speed range must be non-negative and ordered");
        }
        if !range_ok(self.start_distance) || self.start_distance.0 < 0.0 {
            return bad("start_distance range must be non-negative and ordered");
        }
        if self.object_points.0 == 0 || self.object_points.0 > self.object_points.1 {
            return bad("object_points range must be positive and ordered");
        }
        for (name, v) in [
            ("accel", self.accel),
            ("turn_deg", self.turn_deg),
            ("clutter_density", self.clutter_density),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        for (name, p) in [
            ("static_prob", self.static_prob),
            ("parked_prob", self.parked_prob),
            ("dropout", self.dropout),
            ("occlusion", self.occlusion),
        ] {
            if !prob_ok(p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::new();
        let r = |v: (f64, f64)| format!("{},{}", v.0, v.1);
        c.set("frames", self.frames);
        c.set("width", r(self.width));
        c.set("length", r(self.length));
        c.set("height", r(self.height));
        c.set("speed", r(self.speed));
        c.set("accel", self.accel);
        c.set("turn_deg", self.turn_deg);
        c.set("static_prob", self.static_prob);
        c.set("distractors", self.distractors);
        c.set("parked_prob", self.parked_prob);
        c.set("object_points", format!("{},{}", self.object_points.0, self.object_points.1));
        c.set("clutter_density", self.clutter_density);
        c.set("clutter_objects", self.clutter_objects);
        c.set("dropout", self.dropout);
        c.set("occlusion", self.occlusion);
        c.set("noise", self.noise);
        c.set("start_distance", r(self.start_distance));
        c
    }

    /// Reads known keys, falling back to defaults; other keys are ignored.
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = SynthConfig::default();
        let pts = c.get_range("object_points", (d.object_points.0 as f64, d.object_points.1 as f64))?;
        if pts.0 < 0.0 || pts.1 < 0.0 || pts.0.fract() != 0.0 || pts.1.fract() != 0.0 {
            return Err(Error::Config("object_points must be two non-negative integers".into()));
        }
        let cfg = SynthConfig {
            frames: c.get_or("frames", d.frames)?,
            width: c.get_range("width", d.width)?,
            length: c.get_range("length", d.length)?,
            height: c.get_range("height", d.height)?,
            speed: c.get_range("speed", d.speed)?,
            accel: c.get_or("accel", d.accel)?,
            turn_deg: c.get_or("turn_deg", d.turn_deg)?,
            static_prob: c.get_or("static_prob", d.static_prob)?,
            distractors: c.get_or("distractors", d.distractors)?,
            parked_prob: c.get_or("parked_prob", d.parked_prob)?,
            object_points: (pts.0 as usize, pts.1 as usize),
            clutter_density: c.get_or("clutter_density", d.clutter_density)?,
            clutter_objects: c.get_or("clutter_objects", d.clutter_objects)?,
            dropout: c.get_or("dropout", d.dropout)?,
            occlusion: c.get_or("occlusion", d.occlusion)?,
            noise: c.get_or("noise", d.noise)?,
            start_distance: c.get_range("start_distance", d.start_distance)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    pub target: Tracklet,
    pub distractors: Vec<Tracklet>,
    /// Motion commanded between consecutive frames; `commanded[i]` carries box i to box i + 1.
    pub commanded: Vec<Rtm4>,
}

fn uniform<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

fn symmetric<R: Rng>(rng: &mut R, h: f64) -> f64 {
    if h > 0.0 {
        rng.gen_range(-h..=h)
    } else {
        0.0
    }
}

/// Speed/turn random walk. A static object gets identity motion throughout.
fn motion_plan<R: Rng>(cfg: &SynthConfig, moving: bool, rng: &mut R) -> Vec<Rtm4> {
    let steps = cfg.frames - 1;
    if !moving {
        return vec![Rtm4::IDENTITY; steps];
    }
    let turn = cfg.turn_deg.to_radians();
    let mut v = uniform(rng, cfg.speed);
    let mut w = symmetric(rng, turn);
    (0..steps)
        .map(|_| {
            let rtm = Rtm4::new(0.0, v, 0.0, w);
            v = (v + symmetric(rng, cfg.accel)).clamp(cfg.speed.0, cfg.speed.1);
            w = (w + symmetric(rng, turn / 4.0)).clamp(-turn, turn);
            rtm
        })
        .collect()
}

fn roll_out(start: Box3D, plan: &[Rtm4]) -> Vec<Box3D> {
    let mut boxes = Vec::with_capacity(plan.len() + 1);
    boxes.push(start);
    for rtm in plan {
        let last = *boxes.last().unwrap();
        boxes.push(transform_box(&last, *rtm));
    }
    boxes
}

fn random_size<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Size3 {
    Size3::new(uniform(rng, cfg.width), uniform(rng, cfg.length), uniform(rng, cfg.height))
}

fn overlaps(a: &[Box3D], b: &[Box3D], gap: f64) -> bool {
    a.iter().zip(b).any(|(x, y)| intersection_volume(&x.enlarged(gap), y) > 0.0)
}

/// Sub-boxes (canonical center, size) of a body-plus-cabin car shape.
/// Gap between the car's surfaces and its labeled box, so jittered returns
/// stay inside the label the way annotated objects do.
const BODY_INSET: f64 = 0.06;

fn car_parts(size: Size3) -> [(Vec3, Size3); 2] {
    let (w, l, h) = (size.width, size.length, size.height);
    let i = BODY_INSET;
    [
        (Vec3::new(0.0, 0.0, -0.2 * h), Size3::new(w - 2.0 * i, l - 2.0 * i, 0.6 * h)),
        (Vec3::new(0.0, -0.05 * l, 0.3 * h - i / 2.0), Size3::new(0.9 * w, 0.55 * l, 0.4 * h - i)),
    ]
}

struct Face {
    /// Owner box in world coordinates.
    owner: Box3D,
    axis: usize,
    sign: f64,
    area: f64,
}

fn axis_component(v: Vec3, a: usize) -> f64 {
    [v.x, v.y, v.z][a]
}

fn unit(a: usize, s: f64) -> Vec3 {
    let mut v = [0.0; 3];
    v[a] = s;
    Vec3::from(v)
}

fn visible_faces(parts: &[Box3D], out: &mut Vec<Face>) {
    for b in parts {
        let half = b.size.half();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let center = from_canonical_point(unit(axis, sign * axis_component(half, axis)), b);
                let normal = unit(axis, sign).rotate_z(b.yaw.radians());
                if normal.dot(SENSOR - center) > 0.0 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let area = 4.0 * axis_component(half, u) * axis_component(half, v);
                    out.push(Face { owner: *b, axis, sign, area });
                }
            }
        }
    }
}

/// Area-weighted uniform samples on the sensor-facing faces of `parts`.
fn sample_surface<R: Rng>(parts: &[Box3D], n: usize, rng: &mut R) -> Vec<Vec3> {
    let mut faces = Vec::new();
    visible_faces(parts, &mut faces);
    let total: f64 = faces.iter().map(|f| f.area).sum();
    if faces.is_empty() || total <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let face = faces
                .iter()
                .find(|f| {
                    pick -= f.area;
                    pick < 0.0
                })
                .unwrap_or(faces.last().unwrap());
            let half = face.owner.size.half();
            let mut local = [0.0; 3];
            for (a, slot) in local.iter_mut().enumerate() {
                let h = axis_component(half, a);
                *slot = if a == face.axis { face.sign * h } else { symmetric(rng, h) };
            }
            from_canonical_point(Vec3::from(local), &face.owner)
        })
        .collect()
}

fn car_points<R: Rng>(b: &Box3D, cfg: &SynthConfig, rng: &mut R) -> Vec<Vec3> {
    let parts: Vec<Box3D> = car_parts(b.size)
        .iter()
        .map(|(c, s)| Box3D::new(from_canonical_point(*c, b), b.yaw.radians(), *s))
        .collect();
    let n = rng.gen_range(cfg.object_points.0..=cfg.object_points.1);
    let mut pts = sample_surface(&parts, n, rng);
    if cfg.occlusion > 0.0 && rng.gen_bool(cfg.occlusion) {
        // Hide one end of the car behind an imaginary occluder.
        let cut = uniform(rng, (-0.2, 0.2)) * b.size.length;
        let keep_front = rng.gen_bool(0.5);
        pts.retain(|p| {
            let y = crate::geom::to_canonical_point(*p, b).y;
            (y > cut) == keep_front
        });
    }
    pts
}

struct Clutter {
    b: Box3D,
    points: (usize, usize),
}

/// Generates one sequence; the same `(cfg, seed)` always yields identical output.
pub fn synth_sequence(cfg: &SynthConfig, seed: u64) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = random_size(cfg, &mut rng);
    let dist = uniform(&mut rng, cfg.start_distance);
    let bearing = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let start = Box3D::new(Vec3::new(dist * bearing.cos(), dist * bearing.sin(), size.height / 2.0), yaw, size);
    let moving = !rng.gen_bool(cfg.static_prob);
    let commanded = motion_plan(cfg, moving, &mut rng);
    let target = roll_out(start, &commanded);

    // Distractors: parked or moving cars in adjacent lanes or the same lane ahead/behind.
    let mut distractors: Vec<Vec<Box3D>> = Vec::new();
    for _ in 0..cfg.distractors {
        for _attempt in 0..50 {
            let dsize = random_size(cfg, &mut rng);
            let same_lane = rng.gen_bool(0.3);
            let (lat, lon) = if same_lane {
                let gap = uniform(&mut rng, (0.8, 2.5));
                let lon = (size.length + dsize.length) / 2.0 + gap;
                (symmetric(&mut rng, 0.3), if rng.gen_bool(0.5) { lon } else { -lon })
            } else {
                let lat = (size.width + dsize.width) / 2.0 + uniform(&mut rng, (0.4, 1.4));
                (if rng.gen_bool(0.5) { lat } else { -lat }, symmetric(&mut rng, 5.0))
            };
            let c = from_canonical_point(Vec3::new(lat, lon, 0.0), &start);
            let b0 = Box3D::new(
                Vec3::new(c.x, c.y, dsize.height / 2.0),
                yaw + symmetric(&mut rng, 0.15),
                dsize,
            );
            let parked = rng.gen_bool(cfg.parked_prob);
            let plan = motion_plan(cfg, !parked, &mut rng);
            let track = roll_out(b0, &plan);
            if overlaps(&track, &target, 0.2) || distractors.iter().any(|d| overlaps(&track, d, 0.2)) {
                continue;
            }
            distractors.push(track);
            break;
        }
    }

    // Static clutter objects and the ground patch around the trajectory.
    let (mut lo, mut hi) = (Vec3::new(f64::MAX, f64::MAX, 0.0), Vec3::new(f64::MIN, f64::MIN, 0.0));
    for b in &target {
        lo = Vec3::new(lo.x.min(b.center.x), lo.y.min(b.center.y), 0.0);
        hi = Vec3::new(hi.x.max(b.center.x), hi.y.max(b.center.y), 0.0);
    }
    let pad = 8.0;
    let (lo, hi) = (lo - Vec3::new(pad, pad, 0.0), hi + Vec3::new(pad, pad, 0.0));
    let mut clutter: Vec<Clutter> = Vec::new();
    for _ in 0..cfg.clutter_objects {
        for _attempt in 0..20 {
            let s = Size3::new(uniform(&mut rng, (0.2, 1.0)), uniform(&mut rng, (0.2, 1.0)), uniform(&mut rng, (0.4, 2.0)));
            let c = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), s.height / 2.0);
            let b = Box3D::new(c, rng.gen_range(-3.0..3.0), s);
            let frozen = vec![b; target.len()];
            if overlaps(&frozen, &target, 0.5) || distractors.iter().any(|d| overlaps(&frozen, d, 0.5)) {
                continue;
            }
            clutter.push(Clutter { b, points: (10, 40) });
            break;
        }
    }
    let ground = (cfg.clutter_density * (hi.x - lo.x) * (hi.y - lo.y)).round() as usize;

    let jitter = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut frames = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let mut pts = car_points(&target[i], cfg, &mut rng);
        for d in &distractors {
            pts.extend(car_points(&d[i], cfg, &mut rng));
        }
        for c in &clutter {
            let n = rng.gen_range(c.points.0..=c.points.1);
            pts.extend(sample_surface(std::slice::from_ref(&c.b), n, &mut rng));
        }
        for _ in 0..ground {
            pts.push(Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), 0.0));
        }
        if cfg.dropout > 0.0 {
            pts.retain(|_| !rng.gen_bool(cfg.dropout));
        }
        if cfg.noise > 0.0 {
            for p in &mut pts {
                *p = *p + Vec3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
            }
        }
        // Stored clouds are f32; quantize so disk round trips are exact.
        for p in &mut pts {
            *p = Vec3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64);
        }
        frames.push(Frame::new(i as u32, pts));
    }

    let to_tracklet = |id: String, boxes: &[Box3D]| {
        Tracklet::new("", id, "Car", boxes.iter().enumerate().map(|(i, b)| (i as u32, *b)).collect())
    };
    Ok(SynthSequence {
        frames,
        target: to_tracklet("0".into(), &target)?,
        distractors: distractors
            .iter()
            .enumerate()
            .map(|(k, d)| to_tracklet((k + 1).to_string(), d))
            .collect::<Result<_>>()?,
        commanded,
    })
}

/// `count` sequences named `{prefix}_{index:04}`, one scene each.
pub fn synth_dataset(cfg: &SynthConfig, count: usize, seed: u64, prefix: &str) -> Result<Vec<Sequence>> {
    let stream = prefix.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    (0..count)
        .map(|i| {
            let s = synth_sequence(cfg, derive_seed(seed, stream, i as u64))?;
            let name = format!("{prefix}_{i:04}");
            let mut target = s.target;
            target.seq = name.clone();
            let others = s
                .distractors
                .into_iter()
                .map(|mut d| {
                    d.seq = name.clone();
                    d
                })
                .collect();
            Ok(Sequence { name, scene: i, frames: s.frames, target, others })
        })
        .collect()
}
