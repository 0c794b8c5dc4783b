//! Lane detection metrics.
//!
//! 3D: predictions and ground truth are resampled at the fixed y
//! positions, matched one-to-one by optimal assignment on the mean
//! point-wise (x, z) distance capped at 1.5 m per slot; a matched pair
//! is a true positive when at least 75% of the ground truth's covered
//! positions lie within the cap. X/Z errors are split at y = 40 m into
//! near and far. 2D: lanes rasterize to 30 px strokes and match by mask
//! IoU at 0.5.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::Y_SAMPLES_3D;
use crate::geometry::ImageSize;
use crate::lane::{resample_at_y, Lane2D, Lane3D};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("frame count mismatch: {pred} predictions vs {gt} ground truth")]
    FrameMismatch { pred: usize, gt: usize },
}

/// Matching thresholds for the 3D metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Max allowed point-wise distance for a position to count matched.
    pub max_dist: f64,
    /// Fraction of covered positions that must match for a true positive.
    pub coverage_frac: f64,
    /// Fixed longitudinal sampling positions.
    pub y_samples: Vec<f64>,
    /// Near/far boundary for the error statistics.
    pub near_far_split: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_dist: 1.5,
            coverage_frac: 0.75,
            y_samples: Y_SAMPLES_3D.to_vec(),
            near_far_split: 40.0,
        }
    }
}

/// Aggregated detection quality over a frame set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub x_err_near: f64,
    pub x_err_far: f64,
    pub z_err_near: f64,
    pub z_err_far: f64,
    /// Fraction of true-positive lanes with the correct category.
    pub category_accuracy: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl EvalReport {
    /// Fixed-width human-readable rendering.
    pub fn to_table(&self) -> String {
        format!(
            "f_score           {:>10.6}\n\
             precision         {:>10.6}\n\
             recall            {:>10.6}\n\
             x_err_near (m)    {:>10.6}\n\
             x_err_far  (m)    {:>10.6}\n\
             z_err_near (m)    {:>10.6}\n\
             z_err_far  (m)    {:>10.6}\n\
             category_accuracy {:>10.6}\n\
             tp/fp/fn          {:>4} {:>4} {:>4}\n",
            self.f_score,
            self.precision,
            self.recall,
            self.x_err_near,
            self.x_err_far,
            self.z_err_near,
            self.z_err_far,
            self.category_accuracy,
            self.true_positives,
            self.false_positives,
            self.false_negatives
        )
    }
}

/// Point-wise distances between a prediction and a ground-truth lane at
/// the fixed y positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LanePairDistance {
    /// Euclidean (x, z) distance per y sample; where the prediction is
    /// missing the value is `max_dist`.
    pub dists: Vec<f64>,
    /// True where the ground truth is visible ("covered").
    pub covered: Vec<bool>,
}

impl LanePairDistance {
    /// Mean capped distance over covered positions; `max_dist` when the
    /// ground truth covers nothing.
    pub fn mean_cost(&self, max_dist: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for (d, &c) in self.dists.iter().zip(&self.covered) {
            if c {
                sum += d.min(max_dist);
                n += 1;
            }
        }
        if n == 0 {
            max_dist
        } else {
            sum / n as f64
        }
    }

    /// True-positive test: at least `coverage_frac` of covered positions
    /// strictly within `max_dist`.
    pub fn is_match(&self, cfg: &MatchConfig) -> bool {
        let covered = self.covered.iter().filter(|&&c| c).count();
        if covered == 0 {
            return false;
        }
        let hits = self
            .dists
            .iter()
            .zip(&self.covered)
            .filter(|(d, &c)| c && **d < cfg.max_dist)
            .count();
        hits as f64 >= cfg.coverage_frac * covered as f64
    }
}

/// Distance profile of one prediction/ground-truth pair.
pub fn lane_pair_distance(pred: &Lane3D, gt: &Lane3D, cfg: &MatchConfig) -> LanePairDistance {
    let gt_rs = resample_at_y(gt, &cfg.y_samples);
    let pred_rs = resample_at_y(pred, &cfg.y_samples);
    let n = cfg.y_samples.len();
    let mut dists = vec![cfg.max_dist; n];
    let mut covered = vec![false; n];
    if let Ok(g) = gt_rs {
        for k in 0..n {
            covered[k] = g.vis[k];
            if !covered[k] {
                dists[k] = 0.0;
                continue;
            }
            dists[k] = match &pred_rs {
                Ok(p) if p.vis[k] => {
                    let dx = p.x[k] - g.x[k];
                    let dz = p.z[k] - g.z[k];
                    (dx * dx + dz * dz).sqrt()
                }
                // Missing prediction counts as the max distance.
                _ => cfg.max_dist,
            };
        }
    }
    LanePairDistance { dists, covered }
}

/// Minimum-cost one-to-one assignment on a square cost matrix
/// (Kuhn-Munkres with potentials, O(n^3)). Returns the column assigned
/// to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if assigned_row[j] > 0 {
            row_to_col[assigned_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// One frame's matching outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// (pred index, gt index) for every true-positive pair.
    pub tp_pairs: Vec<(usize, usize)>,
    pub false_positives: u64,
    pub false_negatives: u64,
}

/// Optimal one-to-one matching between predictions and ground truth.
pub fn match_lanes(preds: &[Lane3D], gts: &[Lane3D], cfg: &MatchConfig) -> FrameMatch {
    let np = preds.len();
    let ng = gts.len();
    if np == 0 || ng == 0 {
        return FrameMatch {
            tp_pairs: Vec::new(),
            false_positives: np as u64,
            false_negatives: ng as u64,
        };
    }
    let pair: Vec<Vec<LanePairDistance>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| lane_pair_distance(p, g, cfg)).collect())
        .collect();
    // Square padding: unmatched slots cost strictly more than any real
    // pair, so the optimum always prefers real matches.
    let n = np.max(ng);
    let pad = cfg.max_dist + 1.0;
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < np && j < ng { pair[i][j].mean_cost(cfg.max_dist) } else { pad })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);

    let mut m = FrameMatch::default();
    let mut matched_gt = vec![false; ng];
    for (pi, &gj) in assign.iter().enumerate().take(np) {
        if gj < ng && pair[pi][gj].is_match(cfg) {
            m.tp_pairs.push((pi, gj));
            matched_gt[gj] = true;
        } else {
            m.false_positives += 1;
        }
    }
    m.false_negatives = matched_gt.iter().filter(|&&x| !x).count() as u64;
    m
}

#[derive(Debug, Clone, Default)]
struct ErrorAccum {
    x_near: (f64, u64),
    x_far: (f64, u64),
    z_near: (f64, u64),
    z_far: (f64, u64),
    cat_hits: u64,
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl ErrorAccum {
    fn merge(mut self, o: ErrorAccum) -> ErrorAccum {
        self.x_near = (self.x_near.0 + o.x_near.0, self.x_near.1 + o.x_near.1);
        self.x_far = (self.x_far.0 + o.x_far.0, self.x_far.1 + o.x_far.1);
        self.z_near = (self.z_near.0 + o.z_near.0, self.z_near.1 + o.z_near.1);
        self.z_far = (self.z_far.0 + o.z_far.0, self.z_far.1 + o.z_far.1);
        self.cat_hits += o.cat_hits;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self
    }
}

fn frame_errors(preds: &[Lane3D], gts: &[Lane3D], cfg: &MatchConfig) -> ErrorAccum {
    let m = match_lanes(preds, gts, cfg);
    let mut acc = ErrorAccum {
        tp: m.tp_pairs.len() as u64,
        fp: m.false_positives,
        fn_: m.false_negatives,
        ..Default::default()
    };
    for &(pi, gi) in &m.tp_pairs {
        let pred = &preds[pi];
        let gt = &gts[gi];
        if pred.category == gt.category {
            acc.cat_hits += 1;
        }
        let (Ok(p), Ok(g)) = (resample_at_y(pred, &cfg.y_samples), resample_at_y(gt, &cfg.y_samples))
        else {
            continue;
        };
        for k in 0..cfg.y_samples.len() {
            if !(g.vis[k] && p.vis[k]) {
                continue;
            }
            let dx = (p.x[k] - g.x[k]).abs();
            let dz = (p.z[k] - g.z[k]).abs();
            if cfg.y_samples[k] < cfg.near_far_split {
                acc.x_near = (acc.x_near.0 + dx, acc.x_near.1 + 1);
                acc.z_near = (acc.z_near.0 + dz, acc.z_near.1 + 1);
            } else {
                acc.x_far = (acc.x_far.0 + dx, acc.x_far.1 + 1);
                acc.z_far = (acc.z_far.0 + dz, acc.z_far.1 + 1);
            }
        }
    }
    acc
}

fn report_from(acc: ErrorAccum) -> EvalReport {
    let p_den = acc.tp + acc.fp;
    let r_den = acc.tp + acc.fn_;
    let precision = if p_den > 0 { acc.tp as f64 / p_den as f64 } else { 0.0 };
    let recall = if r_den > 0 { acc.tp as f64 / r_den as f64 } else { 0.0 };
    let f_score =
        if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let mean = |(s, n): (f64, u64)| if n > 0 { s / n as f64 } else { 0.0 };
    EvalReport {
        f_score,
        precision,
        recall,
        x_err_near: mean(acc.x_near),
        x_err_far: mean(acc.x_far),
        z_err_near: mean(acc.z_near),
        z_err_far: mean(acc.z_far),
        category_accuracy: if acc.tp > 0 { acc.cat_hits as f64 / acc.tp as f64 } else { 0.0 },
        true_positives: acc.tp,
        false_positives: acc.fp,
        false_negatives: acc.fn_,
    }
}

/// Aggregate the 3D metric over aligned frame lists.
pub fn eval3d(
    pred_frames: &[Vec<Lane3D>],
    gt_frames: &[Vec<Lane3D>],
    cfg: &MatchConfig,
) -> Result<EvalReport, EvalError> {
    if pred_frames.len() != gt_frames.len() {
        return Err(EvalError::FrameMismatch { pred: pred_frames.len(), gt: gt_frames.len() });
    }
    // Parallel per-frame matching, then a sequential in-order fold:
    // float accumulation order must not depend on work stealing, or
    // byte-identical reports would not be reproducible.
    let per_frame: Vec<ErrorAccum> = pred_frames
        .par_iter()
        .zip(gt_frames.par_iter())
        .map(|(p, g)| frame_errors(p, g, cfg))
        .collect();
    let acc = per_frame.into_iter().fold(ErrorAccum::default(), ErrorAccum::merge);
    Ok(report_from(acc))
}

// ── 2D stroke-IoU metric ────────────────────────────────────────────────

/// Rasterize a 2D lane as a stroke of the given width (pixels whose
/// distance to the polyline is at most width/2).
pub fn rasterize_stroke(lane: &Lane2D, img: ImageSize, width_px: f64) -> Vec<bool> {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut mask = vec![false; (w * h) as usize];
    let r = width_px / 2.0;
    for win in lane.points.windows(2) {
        let (a, b) = (win[0], win[1]);
        let (minx, maxx) = ((a.u.min(b.u) - r).floor() as i64, (a.u.max(b.u) + r).ceil() as i64);
        let (miny, maxy) = ((a.v.min(b.v) - r).floor() as i64, (a.v.max(b.v) + r).ceil() as i64);
        for py in miny.max(0)..=maxy.min(h - 1) {
            for px in minx.max(0)..=maxx.min(w - 1) {
                if mask[(py * w + px) as usize] {
                    continue;
                }
                let d = point_segment_dist(px as f64, py as f64, a.u, a.v, b.u, b.v);
                if d <= r {
                    mask[(py * w + px) as usize] = true;
                }
            }
        }
    }
    mask
}

pub(crate) fn point_segment_dist(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { ((px - x0) * dx + (py - y0) * dy) / len2 } else { 0.0 };
    let t = t.clamp(0.0, 1.0);
    let (cx, cy) = (x0 + t * dx, y0 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// CULane-style 2D metric: stroke masks, optimal IoU matching, true
/// positive at IoU >= threshold. Reports F-score and counts only.
pub fn eval2d_culane(
    pred_frames: &[Vec<Lane2D>],
    gt_frames: &[Vec<Lane2D>],
    img: ImageSize,
    iou_thresh: f64,
    stroke_width_px: f64,
) -> Result<EvalReport, EvalError> {
    if pred_frames.len() != gt_frames.len() {
        return Err(EvalError::FrameMismatch { pred: pred_frames.len(), gt: gt_frames.len() });
    }
    let frames: Vec<(u64, u64, u64)> = pred_frames
        .par_iter()
        .zip(gt_frames.par_iter())
        .map(|(preds, gts)| {
            let np = preds.len();
            let ng = gts.len();
            if np == 0 || ng == 0 {
                return (0, np as u64, ng as u64);
            }
            let pm: Vec<Vec<bool>> =
                preds.iter().map(|l| rasterize_stroke(l, img, stroke_width_px)).collect();
            let gm: Vec<Vec<bool>> =
                gts.iter().map(|l| rasterize_stroke(l, img, stroke_width_px)).collect();
            let n = np.max(ng);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i < np && j < ng {
                                1.0 - mask_iou(&pm[i], &gm[j])
                            } else {
                                2.0
                            }
                        })
                        .collect()
                })
                .collect();
            let assign = hungarian(&cost);
            let mut tp = 0u64;
            for (pi, &gj) in assign.iter().enumerate().take(np) {
                if gj < ng && 1.0 - cost[pi][gj] >= iou_thresh {
                    tp += 1;
                }
            }
            (tp, np as u64 - tp, ng as u64 - tp)
        })
        .collect();
    let (tp, fp, fn_) = frames
        .into_iter()
        .fold((0, 0, 0), |(a, b, c), (x, y, z)| (a + x, b + y, c + z));
    Ok(report_from(ErrorAccum { tp, fp, fn_, ..Default::default() }))
}
