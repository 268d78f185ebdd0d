use rand::seq::index;
use rand::Rng;

use super::Frame;
use crate::geom::{distance_map, points_in_box, Box3D, Vec3};

/// Size margin (meters) added to the previous box to form the search subregion.
pub const DEFAULT_CROP_MARGIN: f64 = 2.0;

/// Keeps the points inside `anchor` grown by `margin` along every dimension.
pub fn crop_subregion(frame: &Frame, anchor: &Box3D, margin: f64) -> Frame {
    let region = anchor.enlarged(margin);
    let mask = points_in_box(&frame.points, &region, 1.0);
    let points = frame.points.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
    let reflectance = frame
        .reflectance
        .as_ref()
        .map(|r| r.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect());
    Frame { frame_id: frame.frame_id, points, reflectance }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub points: Vec<Vec3>,
    /// The source was empty and `points` holds sentinel copies.
    pub degenerate: bool,
}

/// Draws exactly `n` points. Without replacement when enough points exist;
/// otherwise every point once and the remainder with replacement. An empty
/// source yields `n` copies of `sentinel`, flagged degenerate.
pub fn resample<R: Rng + ?Sized>(points: &[Vec3], n: usize, sentinel: Vec3, rng: &mut R) -> Sampled {
    assert!(n > 0, "resample needs n > 0");
    if points.is_empty() {
        return Sampled { points: vec![sentinel; n], degenerate: true };
    }
    let out = if points.len() >= n {
        index::sample(rng, points.len(), n).into_iter().map(|i| points[i]).collect()
    } else {
        let mut out = points.to_vec();
        out.extend((points.len()..n).map(|_| points[rng.gen_range(0..points.len())]));
        out
    };
    Sampled { points: out, degenerate: false }
}

/// Two-frame point set with time flags, prior-targetness and box-aware features.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedCloud {
    pub points: Vec<Vec3>,
    /// 0 for previous-frame points, 1 for current-frame points.
    pub time: Vec<u8>,
    pub prior_targetness: Vec<f64>,
    /// Distances to the previous box's 9 keypoints; all-zero for current points.
    pub box_aware: Vec<[f64; 9]>,
}

impl StampedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_prev(&self) -> usize {
        self.time.iter().filter(|t| **t == 0).count()
    }

    /// Row-major (N × 14) input: xyz, time, prior-targetness, box-aware 9.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 14);
        for i in 0..self.len() {
            let p = self.points[i];
            out.extend_from_slice(&[p.x, p.y, p.z, self.time[i] as f64, self.prior_targetness[i]]);
            out.extend_from_slice(&self.box_aware[i]);
        }
        out
    }
}

pub fn build_stamped(prev: &[Vec3], cur: &[Vec3], prev_box: &Box3D) -> StampedCloud {
    let inside = points_in_box(prev, prev_box, 1.0);
    let mut points = Vec::with_capacity(prev.len() + cur.len());
    points.extend_from_slice(prev);
    points.extend_from_slice(cur);
    let mut time = vec![0u8; prev.len()];
    time.extend(std::iter::repeat_n(1u8, cur.len()));
    let mut prior: Vec<f64> = inside.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    prior.extend(std::iter::repeat_n(0.5, cur.len()));
    let mut box_aware = distance_map(prev, prev_box);
    box_aware.extend(std::iter::repeat_n([0.0; 9], cur.len()));
    StampedCloud { points, time, prior_targetness: prior, box_aware }
}

/// Half-ranges of the uniform training-time box perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub horizontal: f64,
    pub vertical: f64,
    pub yaw_deg: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { horizontal: 0.3, vertical: 0.1, yaw_deg: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerturbDraw {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
}

impl PerturbConfig {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PerturbDraw {
        let u = |rng: &mut R, h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
        PerturbDraw {
            dx: u(rng, self.horizontal),
            dy: u(rng, self.horizontal),
            dz: u(rng, self.vertical),
            dyaw: u(rng, self.yaw_deg.to_radians()),
        }
    }
}

/// World-frame center shift and yaw offset; size untouched.
pub fn perturb_with(b: &Box3D, d: PerturbDraw) -> Box3D {
    Box3D::new(b.center + Vec3::new(d.dx, d.dy, d.dz), b.yaw.radians() + d.dyaw, b.size)
}

pub fn perturb_box<R: Rng + ?Sized>(b: &Box3D, cfg: &PerturbConfig, rng: &mut R) -> Box3D {
    perturb_with(b, cfg.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Size3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn unit_box() -> Box3D {
        Box3D::new(Vec3::ZERO, 0.0, Size3::new(2.0, 4.0, 2.0))
    }

    #[test]
    fn crop_margin_zero_equals_membership() {
        let b = Box3D::new(Vec3::new(1.0, 1.0, 0.0), 0.5, Size3::new(2.0, 4.0, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<Vec3> =
            (0..500).map(|_| Vec3::new(rng.gen_range(-4.0..6.0), rng.gen_range(-4.0..6.0), rng.gen_range(-2.0..2.0))).collect();
        let f = Frame::new(3, pts.clone());
        let crop = crop_subregion(&f, &b, 0.0);
        let expected: Vec<Vec3> =
            pts.iter().zip(points_in_box(&pts, &b, 1.0)).filter(|(_, m)| *m).map(|(p, _)| *p).collect();
        assert_eq!(crop.points, expected);
        assert_eq!(crop.frame_id, 3);
    }

    #[test]
    fn crop_margin_reaches_one_meter_per_side() {
        let b = unit_box();
        // 0.9 m beyond the +x face (face at x = 1).
        let f = Frame::new(0, vec![Vec3::new(1.9, 0.0, 0.0), Vec3::new(2.1, 0.0, 0.0)]);
        assert_eq!(crop_subregion(&f, &b, 2.0).points, vec![Vec3::new(1.9, 0.0, 0.0)]);
        assert!(crop_subregion(&Frame::default(), &b, 2.0).is_empty());
    }

    #[test]
    fn resample_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let many: Vec<Vec3> = (0..2000).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let s = resample(&many, 1024, Vec3::ZERO, &mut rng);
        assert_eq!(s.points.len(), 1024);
        let distinct: HashSet<u64> = s.points.iter().map(|p| p.x.to_bits()).collect();
        assert_eq!(distinct.len(), 1024);

        let few: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 1.0, 0.0)).collect();
        let s = resample(&few, 1024, Vec3::ZERO, &mut rng);
        assert_eq!(s.points.len(), 1024);
        let support: HashSet<u64> = s.points.iter().map(|p| p.x.to_bits()).collect();
        assert_eq!(support.len(), 10);
        assert!(!s.degenerate);

        let a = resample(&many, 64, Vec3::ZERO, &mut ChaCha8Rng::seed_from_u64(9));
        let b = resample(&many, 64, Vec3::ZERO, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);

        let e = resample(&[], 8, Vec3::new(1.0, 2.0, 3.0), &mut rng);
        assert!(e.degenerate);
        assert_eq!(e.points, vec![Vec3::new(1.0, 2.0, 3.0); 8]);
    }

    #[test]
    fn stamped_cloud_follows_prior_table() {
        let b = unit_box();
        let prev = vec![Vec3::new(0.5, 0.5, 0.0), Vec3::new(5.0, 0.0, 0.0)];
        let cur = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(9.0, 9.0, 9.0)];
        let s = build_stamped(&prev, &cur, &b);
        assert_eq!(s.time, vec![0, 0, 1, 1]);
        assert_eq!(s.prior_targetness, vec![1.0, 0.0, 0.5, 0.5]);
        assert_eq!(s.box_aware[2], [0.0; 9]);
        assert_eq!(s.box_aware[3], [0.0; 9]);
        assert_eq!(s.box_aware[0], distance_map(&prev[..1], &b)[0]);
        assert_eq!(s.features().len(), 4 * 14);
        assert_eq!(s.num_prev(), 2);
    }

    #[test]
    fn perturbation_bounds() {
        let b = Box3D::new(Vec3::new(3.0, 4.0, 1.0), 0.2, Size3::new(1.8, 4.0, 1.5));
        assert_eq!(perturb_with(&b, PerturbDraw::default()), b);
        let cfg = PerturbConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut max = [0.0f64; 3];
        for _ in 0..10_000 {
            let p = perturb_box(&b, &cfg, &mut rng);
            assert_eq!(p.size, b.size);
            let d = p.center - b.center;
            max[0] = max[0].max(d.x.abs());
            max[1] = max[1].max(d.y.abs());
            max[2] = max[2].max(d.z.abs());
            let dyaw = crate::geom::wrap_angle(p.yaw.radians() - b.yaw.radians());
            assert!(dyaw.abs() <= 5f64.to_radians() + 1e-12);
        }
        assert!(max[0] <= 0.3 && max[1] <= 0.3 && max[2] <= 0.1);
        assert!(max[0] > 0.29 && max[2] > 0.09);
    }
}
