//! 4DOF rigid-motion algebra and oriented-box geometry.
//!
//! World frame is right-handed with z up. A box's canonical frame has its
//! origin at the box center, x along the width, y along the length and z
//! along the height; it is rotated about world z by the box yaw.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Area below which a clipped BEV polygon is considered empty.
pub const MIN_POLYGON_AREA: f64 = 1e-12;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotates about the z axis by `angle` radians.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Heading angle about world z, always held in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct Yaw(f64);

impl Yaw {
    pub fn new(radians: f64) -> Self {
        Yaw(wrap_angle(radians))
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl From<f64> for Yaw {
    fn from(r: f64) -> Self {
        Yaw::new(r)
    }
}

impl From<Yaw> for f64 {
    fn from(y: Yaw) -> f64 {
        y.0
    }
}

/// Relative target motion: translation and yaw offset expressed in the
/// canonical frame of an anchor box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rtm4 {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: Yaw,
}

impl Rtm4 {
    pub const IDENTITY: Rtm4 = Rtm4 { dx: 0.0, dy: 0.0, dz: 0.0, dtheta: Yaw(0.0) };

    pub fn new(dx: f64, dy: f64, dz: f64, dtheta: f64) -> Self {
        Rtm4 { dx, dy, dz, dtheta: Yaw::new(dtheta) }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Rtm4::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dz, self.dtheta.radians()]
    }

    pub fn translation(self) -> Vec3 {
        Vec3::new(self.dx, self.dy, self.dz)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size3 {
    pub width: f64,
    pub length: f64,
    pub height: f64,
}

impl Size3 {
    pub const fn new(width: f64, length: f64, height: f64) -> Self {
        Size3 { width, length, height }
    }

    pub fn half(self) -> Vec3 {
        Vec3::new(self.width * 0.5, self.length * 0.5, self.height * 0.5)
    }

    pub fn volume(self) -> f64 {
        self.width * self.length * self.height
    }

    pub fn is_valid(self) -> bool {
        [self.width, self.length, self.height].iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vec3,
    pub yaw: Yaw,
    pub size: Size3,
}

impl Box3D {
    pub fn new(center: Vec3, yaw: f64, size: Size3) -> Self {
        Box3D { center, yaw: Yaw::new(yaw), size }
    }

    /// Same pose, every size dimension grown by `margin` (half on each side).
    pub fn enlarged(&self, margin: f64) -> Box3D {
        Box3D {
            size: Size3::new(
                self.size.width + margin,
                self.size.length + margin,
                self.size.height + margin,
            ),
            ..*self
        }
    }

    /// The pose as an RTM relative to the world origin.
    pub fn pose(&self) -> Rtm4 {
        Rtm4 { dx: self.center.x, dy: self.center.y, dz: self.center.z, dtheta: self.yaw }
    }
}

/// Row-major homogeneous 4×4 transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }

    /// Inverse of a rigid transform (orthonormal rotation block).
    pub fn rigid_inverse(&self) -> Mat4 {
        let m = &self.0;
        let mut out = Mat4::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = m[j][i];
            }
        }
        for i in 0..3 {
            out.0[i][3] = -(0..3).map(|j| m[j][i] * m[j][3]).sum::<f64>();
        }
        out
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Mat4> {
        let mut a = self.0;
        let mut inv = Mat4::IDENTITY.0;
        for col in 0..4 {
            let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[pivot][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for j in 0..4 {
                a[col][j] /= p;
                inv[col][j] /= p;
            }
            for i in 0..4 {
                if i != col {
                    let f = a[i][col];
                    for j in 0..4 {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
        Some(Mat4(inv))
    }
}

impl Mul for Mat4 {
    type Output = Mat4;
    fn mul(self, o: Mat4) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat4(out)
    }
}

pub fn rtm_to_matrix(rtm: Rtm4) -> Mat4 {
    let (s, c) = rtm.dtheta.radians().sin_cos();
    Mat4([
        [c, -s, 0.0, rtm.dx],
        [s, c, 0.0, rtm.dy],
        [0.0, 0.0, 1.0, rtm.dz],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Maps the box's canonical frame into the world frame.
pub fn box_pose_matrix(b: &Box3D) -> Mat4 {
    rtm_to_matrix(b.pose())
}

/// Applies `rtm` to `p` in the canonical frame of `anchor`:
/// T(anchor) · T(rtm) · T(anchor)⁻¹ · p.
pub fn transform_point(p: Vec3, anchor: &Box3D, rtm: Rtm4) -> Vec3 {
    let local = to_canonical_point(p, anchor);
    let moved = local.rotate_z(rtm.dtheta.radians()) + rtm.translation();
    from_canonical_point(moved, anchor)
}

/// Moves a box by an RTM expressed in its own canonical frame. Size is copied.
pub fn transform_box(b: &Box3D, rtm: Rtm4) -> Box3D {
    Box3D {
        center: b.center + rtm.translation().rotate_z(b.yaw.radians()),
        yaw: Yaw::new(b.yaw.radians() + rtm.dtheta.radians()),
        size: b.size,
    }
}

/// The RTM carrying `a` onto `b` (center and yaw; size ignored).
pub fn rtm_between(a: &Box3D, b: &Box3D) -> Rtm4 {
    let d = (b.center - a.center).rotate_z(-a.yaw.radians());
    Rtm4::new(d.x, d.y, d.z, b.yaw.radians() - a.yaw.radians())
}

pub fn to_canonical_point(p: Vec3, b: &Box3D) -> Vec3 {
    (p - b.center).rotate_z(-b.yaw.radians())
}

pub fn from_canonical_point(p: Vec3, b: &Box3D) -> Vec3 {
    p.rotate_z(b.yaw.radians()) + b.center
}

pub fn to_canonical(points: &[Vec3], b: &Box3D) -> Vec<Vec3> {
    points.iter().map(|&p| to_canonical_point(p, b)).collect()
}

pub fn from_canonical(points: &[Vec3], b: &Box3D) -> Vec<Vec3> {
    points.iter().map(|&p| from_canonical_point(p, b)).collect()
}

/// Closed-box membership of a canonical-frame point against half extents.
pub fn inside_half_extents(local: Vec3, half: Vec3) -> bool {
    local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z
}

pub fn point_in_box(p: Vec3, b: &Box3D, scale: f64) -> bool {
    inside_half_extents(to_canonical_point(p, b), b.size.half() * scale)
}

/// Membership mask with the box size multiplied by `scale`; boundary inclusive.
pub fn points_in_box(points: &[Vec3], b: &Box3D, scale: f64) -> Vec<bool> {
    points.iter().map(|&p| point_in_box(p, b, scale)).collect()
}

/// Canonical-frame corner signs; index = 4·z + 2·y + x with bit 1 meaning '+'.
pub fn corner_signs() -> [Vec3; 8] {
    let mut out = [Vec3::ZERO; 8];
    for (i, c) in out.iter_mut().enumerate() {
        let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
        *c = Vec3::new(s(1), s(2), s(4));
    }
    out
}

/// Keypoints in the box's canonical frame: 8 corners then the center.
pub fn canonical_keypoints(size: Size3) -> [Vec3; 9] {
    let h = size.half();
    let mut out = [Vec3::ZERO; 9];
    for (o, s) in out.iter_mut().zip(corner_signs()) {
        *o = Vec3::new(s.x * h.x, s.y * h.y, s.z * h.z);
    }
    out
}

pub fn box_corners(b: &Box3D) -> [Vec3; 8] {
    let kp = canonical_keypoints(b.size);
    let mut out = [Vec3::ZERO; 8];
    for (o, k) in out.iter_mut().zip(kp.iter()) {
        *o = from_canonical_point(*k, b);
    }
    out
}

pub fn keypoints9(b: &Box3D) -> [Vec3; 9] {
    let mut out = [b.center; 9];
    out[..8].copy_from_slice(&box_corners(b));
    out
}

/// Per-point Euclidean distances to the 9 box keypoints.
pub fn distance_map(points: &[Vec3], b: &Box3D) -> Vec<[f64; 9]> {
    let kp = keypoints9(b);
    points
        .iter()
        .map(|&p| {
            let mut row = [0.0; 9];
            for (r, k) in row.iter_mut().zip(kp.iter()) {
                *r = p.distance(*k);
            }
            row
        })
        .collect()
}

pub fn center_error(a: &Box3D, b: &Box3D) -> f64 {
    a.center.distance(b.center)
}

/// BEV footprint as a counter-clockwise quad.
pub fn bev_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let h = b.size.half();
    let local = [[-h.x, -h.y], [h.x, -h.y], [h.x, h.y], [-h.x, h.y]];
    let (s, c) = b.yaw.radians().sin_cos();
    local.map(|[x, y]| [c * x - s * y + b.center.x, s * x + c * y + b.center.y])
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Sutherland–Hodgman clip of `subject` by a convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Volume of the intersection of two boxes (BEV clip area × vertical overlap).
pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let za = (a.center.z - a.size.height * 0.5, a.center.z + a.size.height * 0.5);
    let zb = (b.center.z - b.size.height * 0.5, b.center.z + b.size.height * 0.5);
    let dz = za.1.min(zb.1) - za.0.max(zb.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let area = polygon_area(&clip_convex(&bev_corners(a), &bev_corners(b)));
    if area < MIN_POLYGON_AREA {
        return 0.0;
    }
    area * dz
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.size.volume() + b.size.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_box(rng: &mut impl Rng) -> Box3D {
        Box3D::new(
            Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-2.0..2.0)),
            rng.gen_range(-PI..PI),
            Size3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..6.0), rng.gen_range(0.5..2.5)),
        )
    }

    fn random_rtm(rng: &mut impl Rng) -> Rtm4 {
        Rtm4::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-PI..PI),
        )
    }

    fn assert_mat_close(a: &Mat4, b: &Mat4, tol: f64) {
        for i in 0..4 {
            for j in 0..4 {
                assert!((a.0[i][j] - b.0[i][j]).abs() < tol, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn wrap_keeps_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
        assert!((wrap_angle(-0.25) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rtm_matrix_identity_and_quarter_turn() {
        assert_eq!(rtm_to_matrix(Rtm4::IDENTITY), Mat4::IDENTITY);
        let m = rtm_to_matrix(Rtm4::new(1.0, 2.0, 3.0, FRAC_PI_2));
        let expected = Mat4([
            [0.0, -1.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 2.0],
            [0.0, 0.0, 1.0, 3.0],
            [0.0, 0.0, 0.0, 1.0],
        ]);
        assert_mat_close(&m, &expected, 1e-15);
    }

    #[test]
    fn rtm_matrix_times_general_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = rtm_to_matrix(random_rtm(&mut rng));
            let inv = m.inverse().unwrap();
            assert_mat_close(&(m * inv), &Mat4::IDENTITY, 1e-12);
            assert_mat_close(&m.rigid_inverse(), &inv, 1e-12);
        }
    }

    #[test]
    fn box_pose_matrix_cases() {
        let unit = Size3::new(1.0, 1.0, 1.0);
        assert_eq!(box_pose_matrix(&Box3D::new(Vec3::ZERO, 0.0, unit)), Mat4::IDENTITY);
        let m = box_pose_matrix(&Box3D::new(Vec3::new(5.0, 0.0, 0.0), PI, unit));
        let expected = Mat4([
            [-1.0, 0.0, 0.0, 5.0],
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]);
        assert_mat_close(&m, &expected, 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let b = random_box(&mut rng);
            let c = box_pose_matrix(&b).apply(Vec3::ZERO);
            assert!(c.distance(b.center) < 1e-12);
        }
    }

    #[test]
    fn transform_point_conjugates_in_anchor_frame() {
        let size = Size3::new(2.0, 4.0, 1.5);
        let c = Vec3::new(3.0, -1.0, 0.5);
        let a0 = Box3D::new(c, 0.0, size);
        let r = Rtm4::new(1.0, 0.0, 0.0, 0.0);
        assert!(transform_point(c, &a0, r).distance(c + Vec3::new(1.0, 0.0, 0.0)) < 1e-12);
        let a90 = Box3D::new(c, FRAC_PI_2, size);
        assert!(transform_point(c, &a90, r).distance(c + Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
        let p = Vec3::new(7.0, 2.0, -1.0);
        assert!(transform_point(p, &a90, Rtm4::IDENTITY).distance(p) < 1e-12);
    }

    #[test]
    fn transform_point_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let b = random_box(&mut rng);
            let r = random_rtm(&mut rng);
            let p = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-2.0..2.0));
            let tb = box_pose_matrix(&b);
            let m = tb * rtm_to_matrix(r) * tb.inverse().unwrap();
            assert!(m.apply(p).distance(transform_point(p, &b, r)) < 1e-9);
        }
    }

    #[test]
    fn transform_box_cases() {
        let size = Size3::new(2.0, 4.0, 1.5);
        let b = Box3D::new(Vec3::ZERO, 0.0, size);
        assert_eq!(transform_box(&b, Rtm4::IDENTITY), b);
        let moved = transform_box(&b, Rtm4::new(1.0, 2.0, 0.0, PI / 4.0));
        assert!(moved.center.distance(Vec3::new(1.0, 2.0, 0.0)) < 1e-12);
        assert!((moved.yaw.radians() - PI / 4.0).abs() < 1e-12);
        assert_eq!(moved.size, size);
    }

    #[test]
    fn rtm_between_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = random_box(&mut rng);
            let r = random_rtm(&mut rng);
            let b = transform_box(&a, r);
            assert_eq!(b.size, a.size);
            let back = rtm_between(&a, &b);
            for (u, v) in back.to_array().iter().zip(r.to_array()) {
                assert!(wrap_angle(u - v).abs() < 1e-9, "{back:?} vs {r:?}");
            }
            // Undo with the RTM that carries the moved box back.
            let home = transform_box(&b, rtm_between(&b, &a));
            assert!(home.center.distance(a.center) < 1e-9);
            assert!(wrap_angle(home.yaw.radians() - a.yaw.radians()).abs() < 1e-9);
        }
        let s = Size3::new(1.0, 2.0, 1.0);
        let a = Box3D::new(Vec3::ZERO, 0.0, s);
        assert_eq!(rtm_between(&a, &a), Rtm4::IDENTITY);
        let b = Box3D::new(Vec3::new(3.0, 0.0, 0.0), 0.0, s);
        assert_eq!(rtm_between(&a, &b), Rtm4::new(3.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn membership_boundary_inclusive() {
        let b = Box3D::new(Vec3::ZERO, 0.0, Size3::new(2.0, 4.0, 1.0));
        let pts = [Vec3::ZERO, Vec3::new(1.0, 2.0, 0.5), Vec3::new(1.0 + 1e-9, 0.0, 0.0)];
        assert_eq!(points_in_box(&pts, &b, 1.0), vec![true, true, false]);
        assert_eq!(points_in_box(&pts[2..], &b, 1.1), vec![true]);
    }

    #[test]
    fn membership_matches_rejection_oracle() {
        // Oracle: a point is inside iff it is a convex combination of the
        // corners, checked here through the signed distance to each face plane.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Box3D::new(Vec3::new(1.0, -2.0, 0.3), 0.7, Size3::new(1.8, 4.2, 1.6));
        let corners = box_corners(&b);
        let ex = corners[1] - corners[0];
        let ey = corners[2] - corners[0];
        let ez = corners[4] - corners[0];
        let pts: Vec<Vec3> = (0..100_000)
            .map(|_| Vec3::new(rng.gen_range(-3.0..5.0), rng.gen_range(-6.0..2.0), rng.gen_range(-1.0..1.6)))
            .collect();
        let mask = points_in_box(&pts, &b, 1.0);
        for (p, m) in pts.iter().zip(mask) {
            let d = *p - corners[0];
            let u = d.dot(ex) / ex.dot(ex);
            let v = d.dot(ey) / ey.dot(ey);
            let w = d.dot(ez) / ez.dot(ez);
            let oracle = (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) && (0.0..=1.0).contains(&w);
            assert_eq!(m, oracle);
        }
    }

    #[test]
    fn canonical_round_trip_and_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let b = random_box(&mut rng);
            let pts: Vec<Vec3> = (0..64)
                .map(|_| Vec3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let back = from_canonical(&to_canonical(&pts, &b), &b);
            for (p, q) in pts.iter().zip(back) {
                assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9 && (p.z - q.z).abs() < 1e-9);
            }
            assert!(to_canonical_point(b.center, &b).norm() < 1e-12);
            let tip = b.center + Vec3::new(0.0, b.size.length / 2.0, 0.0).rotate_z(b.yaw.radians());
            let local = to_canonical_point(tip, &b);
            assert!(local.distance(Vec3::new(0.0, b.size.length / 2.0, 0.0)) < 1e-9);
        }
    }

    #[test]
    fn corner_order_and_keypoints() {
        let b = Box3D::new(Vec3::ZERO, 0.0, Size3::new(1.0, 1.0, 1.0));
        let c = box_corners(&b);
        assert_eq!(c[0], Vec3::new(-0.5, -0.5, -0.5));
        assert_eq!(c[1], Vec3::new(0.5, -0.5, -0.5));
        assert_eq!(c[2], Vec3::new(-0.5, 0.5, -0.5));
        assert_eq!(c[7], Vec3::new(0.5, 0.5, 0.5));
        let k = keypoints9(&b);
        assert_eq!(k[8], b.center);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_box(&mut rng);
        let spun = Box3D { yaw: Yaw::new(r.yaw.radians() + 2.0 * PI), ..r };
        for (p, q) in box_corners(&r).iter().zip(box_corners(&spun)) {
            assert!(p.distance(q) < 1e-9);
        }
    }

    #[test]
    fn distance_map_cases() {
        let b = Box3D::new(Vec3::new(1.0, 2.0, 3.0), 0.4, Size3::new(2.0, 4.0, 1.5));
        let row = distance_map(&[b.center], &b)[0];
        assert_eq!(row[8], 0.0);
        let half_diag = b.size.half().norm();
        for d in &row[..8] {
            assert!((d - half_diag).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let b = random_box(&mut rng);
            let r = random_rtm(&mut rng);
            let pts: Vec<Vec3> = (0..32)
                .map(|_| Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0)))
                .collect();
            // Rigid motion applied jointly to points and box through a common anchor.
            let anchor = random_box(&mut rng);
            let moved_pts: Vec<Vec3> = pts.iter().map(|&p| transform_point(p, &anchor, r)).collect();
            let moved_center = transform_point(b.center, &anchor, r);
            let moved_box = Box3D::new(moved_center, b.yaw.radians() + r.dtheta.radians(), b.size);
            let d0 = distance_map(&pts, &b);
            let d1 = distance_map(&moved_pts, &moved_box);
            for (u, v) in d0.iter().zip(d1.iter()) {
                for k in 0..9 {
                    assert!(u[k] >= 0.0 && u[k].is_finite());
                    assert!((u[k] - v[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn iou_closed_forms() {
        let unit = Size3::new(1.0, 1.0, 1.0);
        let a = Box3D::new(Vec3::ZERO, 0.0, unit);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let far = Box3D::new(Vec3::new(5.0, 0.0, 0.0), 0.3, unit);
        assert_eq!(iou_3d(&a, &far), 0.0);
        let off = Box3D::new(Vec3::new(0.5, 0.0, 0.0), 0.0, unit);
        assert!((iou_3d(&a, &off) - 1.0 / 3.0).abs() < 1e-9);
        let above = Box3D::new(Vec3::new(0.0, 0.0, 1.0), 0.0, unit);
        assert_eq!(iou_3d(&a, &above), 0.0);
    }

    #[test]
    fn center_error_cases() {
        let s = Size3::new(1.0, 1.0, 1.0);
        let a = Box3D::new(Vec3::ZERO, 0.0, s);
        let b = Box3D::new(Vec3::new(3.0, 4.0, 0.0), 1.0, s);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_eq!(center_error(&a, &b), 5.0);
        assert_eq!(center_error(&b, &a), 5.0);
    }
}
