use super::{Sequence, SequenceDataset, UnlabeledSequence};
use crate::error::{Error, Result};

/// Scenes `0..=k` keep their labels; later scenes keep only each target's first box.
pub fn split_breakpoint(dataset: &[Sequence], k: i64) -> Result<SequenceDataset> {
    let max_scene = dataset
        .iter()
        .map(|s| s.scene)
        .max()
        .ok_or_else(|| Error::InvalidInput("cannot split an empty dataset".into()))?;
    if k < 0 || k as usize > max_scene {
        return Err(Error::InvalidInput(format!("breakpoint {k} outside scene range 0..={max_scene}")));
    }
    let mut out = SequenceDataset::default();
    for s in dataset {
        if s.scene as i64 <= k {
            out.labeled.push(s.clone());
        } else {
            out.unlabeled.push(UnlabeledSequence::from_sequence(s));
        }
    }
    Ok(out)
}

/// Smallest scene breakpoint whose labeled frames reach `ratio` of all frames.
pub fn split_by_ratio(dataset: &[Sequence], ratio: f64) -> Result<SequenceDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidInput(format!("label ratio {ratio} not in (0, 1]")));
    }
    let total: usize = dataset.iter().map(Sequence::len).sum();
    let mut scenes: Vec<usize> = dataset.iter().map(|s| s.scene).collect();
    scenes.sort_unstable();
    scenes.dedup();
    let mut labeled = 0usize;
    for &scene in &scenes {
        labeled += dataset.iter().filter(|s| s.scene == scene).map(Sequence::len).sum::<usize>();
        if labeled as f64 >= ratio * total as f64 - 1e-9 {
            return split_breakpoint(dataset, scene as i64);
        }
    }
    split_breakpoint(dataset, *scenes.last().unwrap_or(&0) as i64)
}
