//! KITTI tracking labels, calibration and velodyne sweeps.
//!
//! Label rows: `frame track_id type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]`
//! with the box bottom-centered in the rectified camera frame (x right, y down, z forward).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Frame, Sequence, Tracklet};
use crate::error::{Error, Result};
use crate::geom::{Box3D, Size3, Vec3};

pub const KNOWN_TYPES: &[&str] =
    &["Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc"];

/// Affine map from rectified camera coordinates into the z-up world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraToWorld {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for CameraToWorld {
    /// Pure axis change: world (x, y, z) = camera (z, −x, −y).
    fn default() -> Self {
        CameraToWorld {
            rotation: [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            translation: [0.0; 3],
        }
    }
}

impl CameraToWorld {
    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn point(&self, p: [f64; 3]) -> Vec3 {
        let q = self.rotate(p);
        Vec3::new(q[0] + self.translation[0], q[1] + self.translation[1], q[2] + self.translation[2])
    }

    /// Converts a KITTI camera box to a world box whose length axis is the heading.
    pub fn kitti_box(&self, h: f64, w: f64, l: f64, bottom: [f64; 3], rotation_y: f64) -> Box3D {
        let center = self.point([bottom[0], bottom[1] - h / 2.0, bottom[2]]);
        let heading = self.rotate([rotation_y.cos(), 0.0, -rotation_y.sin()]);
        // Canonical +y (length) is R(yaw)·(0, 1) = (−sin yaw, cos yaw).
        let yaw = (-heading[0]).atan2(heading[1]);
        Box3D::new(center, yaw, Size3::new(w, l, h))
    }

    /// Builds the camera→velodyne map from a tracking calib file
    /// (`R_rect` and `Tr_velo_cam` rows).
    pub fn from_calib(text: &str) -> Result<Self> {
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let Some(key) = it.next() else { continue };
            let vals: std::result::Result<Vec<f64>, _> = it.map(str::parse).collect();
            let vals = vals.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            rows.insert(key.trim_end_matches(':').to_string(), vals);
        }
        let get = |k: &str, n: usize| -> Result<&Vec<f64>> {
            rows.get(k)
                .filter(|v| v.len() == n)
                .ok_or_else(|| Error::Format(format!("calib: missing or malformed {k}")))
        };
        let rr = get("R_rect", 9)?;
        let tv = get("Tr_velo_cam", 12)?;
        // cam_rect = R_rect · (R_vc · velo + t_vc)  ⇒  velo = R_vcᵀ · (R_rectᵀ · cam_rect − t_vc)
        let r_rect = [[rr[0], rr[1], rr[2]], [rr[3], rr[4], rr[5]], [rr[6], rr[7], rr[8]]];
        let r_vc = [[tv[0], tv[1], tv[2]], [tv[4], tv[5], tv[6]], [tv[8], tv[9], tv[10]]];
        let t_vc = [tv[3], tv[7], tv[11]];
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                // (R_vcᵀ R_rectᵀ)[i][j] = Σ_k R_vc[k][i] R_rect[j][k]
                *v = (0..3).map(|k| r_vc[k][i] * r_rect[j][k]).sum();
            }
        }
        let mut translation = [0.0; 3];
        for (i, t) in translation.iter_mut().enumerate() {
            *t = -(0..3).map(|k| r_vc[k][i] * t_vc[k]).sum::<f64>();
        }
        Ok(CameraToWorld { rotation, translation })
    }
}

/// Parses label text with the default axis-change mapping.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<Tracklet>> {
    parse_kitti_labels_with(text, "", &CameraToWorld::default())
}

/// One tracklet per track id (order of first appearance). `DontCare` rows are
/// skipped; unknown types are skipped with a warning. Box sizes within a
/// track are unified to the size at its first frame.
pub fn parse_kitti_labels_with(text: &str, seq: &str, cam: &CameraToWorld) -> Result<Vec<Tracklet>> {
    let mut order: Vec<i64> = Vec::new();
    let mut tracks: BTreeMap<i64, (String, Vec<(u32, Box3D)>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 17 && f.len() != 18 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 17 or 18 fields, got {}", f.len()) });
        }
        let kind = f[2];
        if kind == "DontCare" {
            continue;
        }
        if !KNOWN_TYPES.contains(&kind) {
            log::warn!("line {lineno}: skipping unknown object type {kind:?}");
            continue;
        }
        let num = |idx: usize| -> Result<f64> {
            f[idx].parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("field {} is not a number: {:?}", idx + 1, f[idx]),
            })
        };
        let frame: u32 = f[0]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("bad frame id {:?}", f[0]) })?;
        let track: i64 = f[1]
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("bad track id {:?}", f[1]) })?;
        for idx in 3..f.len() {
            num(idx)?;
        }
        let (h, w, l) = (num(10)?, num(11)?, num(12)?);
        if !(h > 0.0 && w > 0.0 && l > 0.0) {
            return Err(Error::Parse { line: lineno, msg: "non-positive box dimension".into() });
        }
        let b = cam.kitti_box(h, w, l, [num(13)?, num(14)?, num(15)?], num(16)?);
        let entry = tracks.entry(track).or_insert_with(|| {
            order.push(track);
            (kind.to_string(), Vec::new())
        });
        entry.1.push((frame, b));
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let (cat, mut boxes) = tracks.remove(&id).unwrap_or_default();
        boxes.sort_by_key(|(f, _)| *f);
        if let Some(w) = boxes.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput(format!("track {id}: duplicate frame {}", w[0].0)));
        }
        let size = boxes[0].1.size;
        for (_, b) in &mut boxes {
            b.size = size;
        }
        out.push(Tracklet::new(seq, id.to_string(), cat, boxes)?);
    }
    Ok(out)
}

/// Decodes little-endian f32 quadruples (x, y, z, reflectance).
pub fn read_point_bin(bytes: &[u8]) -> Result<Frame> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!("point buffer length {} is not a multiple of 16", bytes.len())));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut refl = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(16) {
        let v = |i: usize| f32::from_le_bytes([chunk[i], chunk[i + 1], chunk[i + 2], chunk[i + 3]]);
        points.push(Vec3::new(v(0) as f64, v(4) as f64, v(8) as f64));
        refl.push(v(12));
    }
    Ok(Frame { frame_id: 0, points, reflectance: Some(refl) })
}

/// Encodes a frame as little-endian f32 quadruples; missing reflectance is written as 0.
pub fn write_point_bin(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.len() * 16);
    for (i, p) in frame.points.iter().enumerate() {
        let r = frame.reflectance.as_ref().and_then(|r| r.get(i)).copied().unwrap_or(0.0);
        for v in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Loads every tracklet of `category` in one KITTI tracking scene as SOT sequences.
/// Expects `label_02/SSSS.txt`, `velodyne/SSSS/FFFFFF.bin` and, if present,
/// `calib/SSSS.txt` under `root`.
pub fn load_kitti_scene(root: &Path, scene: usize, category: &str) -> Result<Vec<Sequence>> {
    let name = format!("{scene:04}");
    let label_path = root.join("label_02").join(format!("{name}.txt"));
    let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
    let calib_path = root.join("calib").join(format!("{name}.txt"));
    let cam = match fs::read_to_string(&calib_path) {
        Ok(c) => CameraToWorld::from_calib(&c)?,
        Err(_) => CameraToWorld::default(),
    };
    let tracklets = parse_kitti_labels_with(&text, &name, &cam)?;
    let mut cache: BTreeMap<u32, Frame> = BTreeMap::new();
    let mut load = |id: u32| -> Result<Frame> {
        if let Some(f) = cache.get(&id) {
            return Ok(f.clone());
        }
        let p = root.join("velodyne").join(&name).join(format!("{id:06}.bin"));
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let mut f = read_point_bin(&bytes)?;
        f.frame_id = id;
        cache.insert(id, f.clone());
        Ok(f)
    };
    let mut out = Vec::new();
    for t in tracklets.iter().filter(|t| t.category == category) {
        let frames = t.boxes.iter().map(|(id, _)| load(*id)).collect::<Result<Vec<_>>>()?;
        let others = tracklets.iter().filter(|o| o.instance_id != t.instance_id).cloned().collect();
        out.push(Sequence {
            name: format!("{name}_{}", t.instance_id),
            scene,
            frames,
            target: t.clone(),
            others,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_field_mapping() {
        let ts = parse_kitti_labels("0 1 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.5 10.0 0.1").unwrap();
        assert_eq!(ts.len(), 1);
        let b = ts[0].boxes[0].1;
        assert_eq!(b.size, Size3::new(1.6, 3.9, 1.5));
        assert_eq!(ts[0].instance_id, "1");
        assert_eq!(ts[0].category, "Car");
        // Bottom-center y=1.5 (down) with h=1.5 → volumetric center 0.75 below the camera.
        assert!(b.center.distance(Vec3::new(10.0, -2.0, -0.75)) < 1e-12);
        assert!((b.yaw.radians() - (std::f64::consts::PI - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn heading_maps_to_length_axis() {
        // rotation_y = 0 faces camera +x, i.e. world −y.
        let ts = parse_kitti_labels("0 1 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 0 0 10 0").unwrap();
        let b = ts[0].boxes[0].1;
        let axis = Vec3::new(0.0, 1.0, 0.0).rotate_z(b.yaw.radians());
        assert!(axis.distance(Vec3::new(0.0, -1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn interleaved_tracks_are_grouped_and_sorted() {
        let text = "\
1 2 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 1 1.5 10 0
0 1 Pedestrian 0 0 0 0 0 0 0 1.7 0.6 0.8 2 1.5 12 0
0 2 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 1 1.5 9 0
1 1 Pedestrian 0 0 0 0 0 0 0 1.7 0.6 0.8 2 1.5 12.5 0
0 -1 DontCare -1 -1 -10 0 0 0 0 -1000 -1000 -1000 -10 -1 -1 -10
0 5 Spaceship 0 0 0 0 0 0 0 1 1 1 0 0 0 0
";
        let ts = parse_kitti_labels(text).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].instance_id, "2");
        assert_eq!(ts[0].frame_ids(), vec![0, 1]);
        assert!((ts[0].boxes[0].1.center.x - 9.0).abs() < 1e-12);
        assert_eq!(ts[1].category, "Pedestrian");
    }

    #[test]
    fn short_row_is_an_error_at_its_line() {
        let text = "0 1 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.5 10.0 0.1\n0 1 Car 0 0 0 0 0 0 0 1.5 1.6 3.9 2.0 1.5 10.0\n";
        assert!(matches!(parse_kitti_labels(text), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_kitti_labels("0 1 Car 0 0 0 0 0 0 0 1.5 x 3.9 2.0 1.5 10.0 0.1"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn point_bin_cases() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let f = read_point_bin(&bytes).unwrap();
        assert_eq!(f.points, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
        assert_eq!(f.reflectance.as_deref(), Some(&[0.5f32, 0.1][..]));
        assert_eq!(write_point_bin(&f), bytes);
        assert!(read_point_bin(&[]).unwrap().is_empty());
        assert!(matches!(read_point_bin(&[0u8; 17]), Err(Error::Format(_))));
    }

    #[test]
    fn calib_identity_extrinsics_reduce_to_axis_change() {
        let calib = "R_rect 1 0 0 0 1 0 0 0 1\nTr_velo_cam 0 -1 0 0 0 0 -1 0 1 0 0 0\n";
        let cam = CameraToWorld::from_calib(calib).unwrap();
        let d = CameraToWorld::default();
        for i in 0..3 {
            for j in 0..3 {
                assert!((cam.rotation[i][j] - d.rotation[i][j]).abs() < 1e-12);
            }
        }
        let shifted = "R_rect 1 0 0 0 1 0 0 0 1\nTr_velo_cam 0 -1 0 0.5 0 0 -1 0 1 0 0 0\n";
        let cam = CameraToWorld::from_calib(shifted).unwrap();
        // velo = R_vcᵀ(cam − t): cam origin maps to −R_vcᵀ t = (0, 0.5, 0).
        assert!(cam.point([0.0, 0.0, 0.0]).distance(Vec3::new(0.0, 0.5, 0.0)) < 1e-12);
    }
}
