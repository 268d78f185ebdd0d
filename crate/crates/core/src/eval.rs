//! One-pass evaluation, baselines and distractor statistics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::{Sequence, Tracklet};
use crate::error::{Error, Result};
use crate::geom::{bev_corners, center_error, iou_3d, Box3D};

/// Threshold grids for the two AUC metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpeGrid {
    /// Overlap thresholds `i / overlap_steps`, compared with strict `>`.
    pub overlap_steps: usize,
    /// Error thresholds `error_max · i / error_steps`, compared with `<=`.
    pub error_steps: usize,
    pub error_max: f64,
}

impl Default for OpeGrid {
    fn default() -> Self {
        OpeGrid { overlap_steps: 20, error_steps: 20, error_max: 2.0 }
    }
}

impl OpeGrid {
    pub fn overlap_thresholds(&self) -> Vec<f64> {
        (0..=self.overlap_steps).map(|i| i as f64 / self.overlap_steps as f64).collect()
    }

    pub fn error_thresholds(&self) -> Vec<f64> {
        (0..=self.error_steps).map(|i| self.error_max * i as f64 / self.error_steps as f64).collect()
    }

    /// Fraction of overlaps above each threshold, in percent.
    pub fn success_curve(&self, overlaps: &[f64]) -> Vec<f64> {
        self.overlap_thresholds().iter().map(|t| percent(overlaps.iter().filter(|o| **o > *t).count(), overlaps.len())).collect()
    }

    pub fn precision_curve(&self, errors: &[f64]) -> Vec<f64> {
        self.error_thresholds().iter().map(|d| percent(errors.iter().filter(|e| **e <= *d).count(), errors.len())).collect()
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpeResult {
    pub success: f64,
    pub precision: f64,
    pub frames: usize,
    pub overlaps: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn ope(pred: &Tracklet, gt: &Tracklet) -> Result<OpeResult> {
    ope_with(pred, gt, &OpeGrid::default())
}

/// Scores every ground-truth frame except the first (which is given, not predicted).
pub fn ope_with(pred: &Tracklet, gt: &Tracklet, grid: &OpeGrid) -> Result<OpeResult> {
    let by_frame: HashMap<u32, &Box3D> = pred.boxes.iter().map(|(f, b)| (*f, b)).collect();
    let gt_frames: HashMap<u32, ()> = gt.boxes.iter().map(|(f, _)| (*f, ())).collect();
    let missing_in_pred: Vec<u32> = gt.boxes.iter().map(|(f, _)| *f).filter(|f| !by_frame.contains_key(f)).collect();
    let missing_in_gt: Vec<u32> = pred.boxes.iter().map(|(f, _)| *f).filter(|f| !gt_frames.contains_key(f)).collect();
    if !missing_in_pred.is_empty() || !missing_in_gt.is_empty() {
        return Err(Error::FrameMismatch { missing_in_pred, missing_in_gt });
    }
    let mut overlaps = Vec::new();
    let mut errors = Vec::new();
    for (f, g) in gt.boxes.iter().skip(1) {
        let p = by_frame[f];
        overlaps.push(iou_3d(p, g));
        errors.push(center_error(p, g));
    }
    Ok(scores(overlaps, errors, grid))
}

/// Builds a result from per-frame overlaps and center errors.
pub fn scores(overlaps: Vec<f64>, errors: Vec<f64>, grid: &OpeGrid) -> OpeResult {
    let (success, precision) = if overlaps.is_empty() {
        (0.0, 0.0)
    } else {
        (mean(&grid.success_curve(&overlaps)), mean(&grid.precision_curve(&errors)))
    };
    OpeResult { success, precision, frames: overlaps.len(), overlaps, errors }
}

/// Frame-weighted average; per-frame lists are concatenated.
pub fn weighted_mean(results: &[OpeResult]) -> Result<OpeResult> {
    let total: usize = results.iter().map(|r| r.frames).sum();
    if results.is_empty() || total == 0 {
        return Err(Error::InvalidInput("weighted mean of no frames".into()));
    }
    let w = |f: fn(&OpeResult) -> f64| results.iter().map(|r| f(r) * r.frames as f64).sum::<f64>() / total as f64;
    Ok(OpeResult {
        success: w(|r| r.success),
        precision: w(|r| r.precision),
        frames: total,
        overlaps: results.iter().flat_map(|r| r.overlaps.iter().copied()).collect(),
        errors: results.iter().flat_map(|r| r.errors.iter().copied()).collect(),
    })
}

/// Repeats the first ground-truth box over every frame of `gt`.
pub fn zero_motion_baseline(gt: &Tracklet) -> Tracklet {
    let first = gt.first_box().copied();
    Tracklet { boxes: gt.boxes.iter().map(|(f, b)| (*f, first.unwrap_or(*b))).collect(), is_pseudo: false, ..gt.clone() }
}

/// Target frames grouped by how many same-category objects touch the 2 m-enlarged target box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DistractorHistogram {
    /// Bins for 0, 1, 2 and at least 3 distractors.
    pub bins: [u64; 4],
}

impl DistractorHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }
}

pub const DISTRACTOR_MARGIN: f64 = 2.0;

/// Closed-set intersection test (touching boxes intersect), by separating axes.
pub fn boxes_touch(a: &Box3D, b: &Box3D) -> bool {
    const TOL: f64 = 1e-9;
    let (za, zb) = (a.size.height * 0.5, b.size.height * 0.5);
    if (a.center.z - b.center.z).abs() > za + zb + TOL {
        return false;
    }
    let (pa, pb) = (bev_corners(a), bev_corners(b));
    for poly in [&pa, &pb] {
        for i in 0..4 {
            let (p, q) = (poly[i], poly[(i + 1) % 4]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let proj = |c: &[[f64; 2]; 4]| {
                c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let ((alo, ahi), (blo, bhi)) = (proj(&pa), proj(&pb));
            let scale = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
            if alo > bhi + TOL * scale || blo > ahi + TOL * scale {
                return false;
            }
        }
    }
    true
}

pub fn distractor_count(target: &Box3D, others: &[Box3D]) -> usize {
    let zone = target.enlarged(DISTRACTOR_MARGIN);
    others.iter().filter(|o| boxes_touch(&zone, o)).count()
}

pub fn distractor_stats(sequences: &[Sequence]) -> DistractorHistogram {
    let mut h = DistractorHistogram::default();
    for s in sequences {
        for (f, b) in &s.target.boxes {
            let others: Vec<Box3D> = s
                .others
                .iter()
                .filter(|o| o.category == s.target.category)
                .filter_map(|o| o.boxes.iter().find(|(g, _)| g == f).map(|(_, b)| *b))
                .collect();
            h.bins[distractor_count(b, &others).min(3)] += 1;
        }
    }
    h
}

/// One report line: a category (or a baseline) aggregated over sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub overall: ReportRow,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
}

/// Evaluates predictions against ground truth, grouped by category, matching
/// tracklets on `(seq, instance_id)`.
pub fn evaluate(preds: &[Tracklet], gts: &[Tracklet], grid: &OpeGrid) -> Result<(Report, OpeResult)> {
    let index: HashMap<(&str, &str), &Tracklet> = preds.iter().map(|t| ((t.seq.as_str(), t.instance_id.as_str()), t)).collect();
    let mut per_cat: Vec<(String, Vec<OpeResult>)> = Vec::new();
    for g in gts {
        let p = index
            .get(&(g.seq.as_str(), g.instance_id.as_str()))
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for {}/{}", g.seq, g.instance_id)))?;
        let r = ope_with(p, g, grid)?;
        match per_cat.iter_mut().find(|(c, _)| *c == g.category) {
            Some((_, v)) => v.push(r),
            None => per_cat.push((g.category.clone(), vec![r])),
        }
    }
    let mut rows = Vec::new();
    let mut cats = Vec::new();
    for (c, rs) in &per_cat {
        let m = weighted_mean(rs)?;
        rows.push(ReportRow { name: c.clone(), frames: m.frames, success: m.success, precision: m.precision });
        cats.push(m);
    }
    let all = weighted_mean(&cats)?;
    let report = Report {
        rows,
        overall: ReportRow { name: "overall".into(), frames: all.frames, success: all.success, precision: all.precision },
        success_curve: grid.success_curve(&all.overlaps),
        precision_curve: grid.precision_curve(&all.errors),
    };
    Ok((report, all))
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,frames,success,precision\n");
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(out, "{},{},{:.4},{:.4}", r.name, r.frames, r.success, r.precision);
        }
        out
    }

    pub fn write(&self, csv: &Path, json: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(json, text).map_err(|e| Error::io(json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Size3, Vec3};
    use proptest::prelude::*;

    fn b(x: f64) -> Box3D {
        Box3D::new(Vec3::new(x, 0.0, 0.0), 0.0, Size3::new(2.0, 4.0, 1.5))
    }

    fn track(xs: &[f64]) -> Tracklet {
        Tracklet::new("s", "0", "Car", xs.iter().enumerate().map(|(i, x)| (i as u32, b(*x))).collect()).unwrap()
    }

    #[test]
    fn perfect_tracklet_hits_grid_maxima() {
        let gt = track(&[0.0, 1.0, 2.0, 3.0]);
        let r = ope(&gt, &gt).unwrap();
        assert_eq!(r.frames, 3);
        assert!((r.success - 100.0 * 20.0 / 21.0).abs() < 1e-9);
        assert_eq!(r.precision, 100.0);
    }

    #[test]
    fn far_boxes_score_zero() {
        let gt = track(&[0.0, 0.0, 0.0]);
        let pred = track(&[0.0, 10.0, -10.0]);
        let r = ope(&pred, &gt).unwrap();
        assert_eq!((r.success, r.precision), (0.0, 0.0));
    }

    #[test]
    fn constant_overlap_and_error_counts_thresholds() {
        let r = scores(vec![0.5; 4], vec![1.0; 4], &OpeGrid::default());
        assert!((r.success - 100.0 * 10.0 / 21.0).abs() < 1e-9);
        assert!((r.precision - 100.0 * 11.0 / 21.0).abs() < 1e-9);
    }

    #[test]
    fn missing_frames_are_listed() {
        let gt = track(&[0.0, 1.0, 2.0]);
        let pred = Tracklet::new("s", "0", "Car", vec![(0, b(0.0)), (2, b(2.0))]).unwrap();
        let e = ope(&pred, &gt).unwrap_err().to_string();
        assert!(e.contains("[1]"), "{e}");
    }

    #[test]
    fn weighted_mean_arithmetic() {
        let mk = |s: f64, f: usize| OpeResult { success: s, precision: s, frames: f, overlaps: vec![], errors: vec![] };
        let m = weighted_mean(&[mk(60.0, 1), mk(80.0, 3)]).unwrap();
        assert!((m.success - 75.0).abs() < 1e-12);
        let m2 = weighted_mean(&[mk(60.0, 10), mk(80.0, 30)]).unwrap();
        assert!((m2.success - 75.0).abs() < 1e-12);
        assert_eq!(weighted_mean(&[mk(60.0, 2)]).unwrap().success, 60.0);
        assert!(weighted_mean(&[]).is_err());
    }

    #[test]
    fn zero_motion_on_static_and_moving_targets() {
        let st = track(&[1.0; 5]);
        let r = ope(&zero_motion_baseline(&st), &st).unwrap();
        assert!((r.success - 100.0 * 20.0 / 21.0).abs() < 1e-9);
        let fast = track(&[0.0, 3.0, 6.0, 9.0, 12.0]);
        let r = ope(&zero_motion_baseline(&fast), &fast).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(zero_motion_baseline(&fast), zero_motion_baseline(&fast));
    }

    #[test]
    fn distractor_bins() {
        assert_eq!(distractor_count(&b(0.0), &[]), 0);
        // Two 2 m-wide boxes 1 m apart each see the other.
        assert_eq!(distractor_count(&b(0.0), &[b(3.0)]), 1);
        assert_eq!(distractor_count(&b(3.0), &[b(0.0)]), 1);
        assert_eq!(distractor_count(&b(0.0), &[b(3.01)]), 0);
        let turned = Box3D::new(Vec3::new(0.0, 4.2, 0.0), 0.7, Size3::new(2.0, 4.0, 1.5));
        assert!(boxes_touch(&b(0.0), &turned) == (crate::geom::intersection_volume(&b(0.0), &turned) > 0.0));
        assert_eq!(distractor_count(&b(0.0), &[b(3.0), b(-3.0), b(2.5), b(-2.5)]), 4);
    }

    #[test]
    fn report_csv_sums_frames() {
        let gt = track(&[0.0, 1.0, 2.0]);
        let mut other = gt.clone();
        other.seq = "t".into();
        other.category = "Van".into();
        let (rep, all) = evaluate(&[gt.clone(), other.clone()], &[gt, other], &OpeGrid::default()).unwrap();
        assert_eq!(rep.rows.iter().map(|r| r.frames).sum::<usize>(), all.frames);
        assert!(rep.to_csv().lines().count() == 4);
    }

    proptest! {
        #[test]
        fn metrics_bounded_monotone_and_order_free(
            ov in proptest::collection::vec(0.0f64..1.0, 1..30),
            er in proptest::collection::vec(0.0f64..3.0, 1..30),
            bump in 0.0f64..0.3,
        ) {
            let n = ov.len().min(er.len());
            let (ov, er) = (ov[..n].to_vec(), er[..n].to_vec());
            let g = OpeGrid::default();
            let r = scores(ov.clone(), er.clone(), &g);
            prop_assert!((0.0..=100.0).contains(&r.success) && (0.0..=100.0).contains(&r.precision));
            let better = scores(ov.iter().map(|o| (o + bump).min(1.0)).collect(), er.iter().map(|e| (e - bump).max(0.0)).collect(), &g);
            prop_assert!(better.success >= r.success && better.precision >= r.precision);
            let rev = scores(ov.iter().rev().copied().collect(), er.iter().rev().copied().collect(), &g);
            prop_assert!((rev.success - r.success).abs() < 1e-9 && (rev.precision - r.precision).abs() < 1e-9);
        }
    }
}
