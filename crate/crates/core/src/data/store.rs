//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.txt                          flat key=value
//! <root>/<split>/tracklets.jsonl               target boxes
//! <root>/<split>/distractors.jsonl             other annotated objects
//! <root>/<split>/velodyne/<seq>/<frame>.bin    16-byte points, frame zero-padded to 6 digits
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::jsonl::{read_tracklets, write_tracklets};
use super::kitti::{read_point_bin, write_point_bin};
use super::{Sequence, Tracklet};
use crate::config::FlatConfig;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn frame_path(root: &Path, split: &str, seq: &str, frame: u32) -> PathBuf {
    root.join(split).join("velodyne").join(seq).join(format!("{frame:06}.bin"))
}

pub fn write_manifest(root: &Path, manifest: &FlatConfig) -> Result<()> {
    write_file(&root.join(MANIFEST), manifest.to_text().as_bytes())
}

pub fn read_manifest(root: &Path) -> Result<FlatConfig> {
    FlatConfig::parse(&read_text(&root.join(MANIFEST))?)
}

pub fn write_split(root: &Path, split: &str, seqs: &[Sequence]) -> Result<()> {
    let dir = root.join(split);
    let targets: Vec<Tracklet> = seqs.iter().map(|s| s.target.clone()).collect();
    write_file(&dir.join("tracklets.jsonl"), write_tracklets(&targets)?.as_bytes())?;
    let others: Vec<Tracklet> = seqs.iter().flat_map(|s| s.others.iter().cloned()).collect();
    write_file(&dir.join("distractors.jsonl"), write_tracklets(&others)?.as_bytes())?;
    for s in seqs {
        s.validate()?;
        for f in &s.frames {
            write_file(&frame_path(root, split, &s.name, f.frame_id), &write_point_bin(f))?;
        }
    }
    Ok(())
}

/// Sequences in file order; `scene` is the position in `tracklets.jsonl`.
pub fn read_split(root: &Path, split: &str) -> Result<Vec<Sequence>> {
    let dir = root.join(split);
    let targets = read_tracklets(&read_text(&dir.join("tracklets.jsonl"))?)?;
    let others_path = dir.join("distractors.jsonl");
    let others = if others_path.exists() { read_tracklets(&read_text(&others_path)?)? } else { Vec::new() };
    let mut by_seq: HashMap<&str, Vec<Tracklet>> = HashMap::new();
    for o in &others {
        by_seq.entry(o.seq.as_str()).or_default().push(o.clone());
    }
    targets
        .into_iter()
        .enumerate()
        .map(|(scene, target)| {
            let frames = target
                .frame_ids()
                .into_iter()
                .map(|id| {
                    let p = frame_path(root, split, &target.seq, id);
                    let mut f = read_point_bin(&fs::read(&p).map_err(|e| Error::io(&p, e))?)?;
                    f.frame_id = id;
                    Ok(f)
                })
                .collect::<Result<Vec<_>>>()?;
            let seq = Sequence {
                name: target.seq.clone(),
                scene,
                frames,
                others: by_seq.get(target.seq.as_str()).cloned().unwrap_or_default(),
                target,
            };
            seq.validate()?;
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};

    #[test]
    fn split_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { frames: 4, ..Default::default() };
        let seqs = synth_dataset(&cfg, 2, 11, "val").unwrap();
        write_split(dir.path(), "val", &seqs).unwrap();
        let back = read_split(dir.path(), "val").unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in seqs.iter().zip(&back) {
            assert_eq!(a.target, b.target);
            assert_eq!(a.others, b.others);
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                assert_eq!(fa.points, fb.points);
            }
        }
        assert!(matches!(read_split(dir.path(), "nope"), Err(Error::Io { .. })));
    }
}
