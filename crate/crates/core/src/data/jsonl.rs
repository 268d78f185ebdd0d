//! JSON Lines tracklet store: one object per box.

use serde::{Deserialize, Serialize};

use super::Tracklet;
use crate::error::{Error, Result};
use crate::geom::{Box3D, Size3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub seq: String,
    pub frame: u32,
    pub track: String,
    pub cat: String,
    pub center: [f64; 3],
    pub yaw: f64,
    pub size: [f64; 3],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pseudo: bool,
    /// Checkpoint that produced a pseudo label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl BoxRecord {
    pub fn to_box(&self) -> Box3D {
        Box3D::new(Vec3::from(self.center), self.yaw, Size3::new(self.size[0], self.size[1], self.size[2]))
    }
}

pub fn tracklet_records(t: &Tracklet) -> Vec<BoxRecord> {
    t.boxes
        .iter()
        .map(|(frame, b)| BoxRecord {
            seq: t.seq.clone(),
            frame: *frame,
            track: t.instance_id.clone(),
            cat: t.category.clone(),
            center: b.center.to_array(),
            yaw: b.yaw.radians(),
            size: [b.size.width, b.size.length, b.size.height],
            pseudo: t.is_pseudo,
            source: None,
        })
        .collect()
}

pub fn write_tracklets(tracklets: &[Tracklet]) -> Result<String> {
    let mut out = String::new();
    for t in tracklets {
        for r in tracklet_records(t) {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Groups records by (seq, track) in order of first appearance; frames are sorted.
pub fn read_tracklets(text: &str) -> Result<Vec<Tracklet>> {
    let mut out: Vec<Tracklet> = Vec::new();
    let mut index: std::collections::HashMap<(String, String), usize> = Default::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: BoxRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        let key = (r.seq.clone(), r.track.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            out.push(Tracklet {
                seq: r.seq.clone(),
                instance_id: r.track.clone(),
                category: r.cat.clone(),
                boxes: Vec::new(),
                is_pseudo: r.pseudo,
            });
            out.len() - 1
        });
        out[slot].boxes.push((r.frame, r.to_box()));
    }
    for t in &mut out {
        t.boxes.sort_by_key(|(f, _)| *f);
        t.validate()?;
    }
    Ok(out)
}
