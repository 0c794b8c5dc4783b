//! Training objectives: 15-way lane classification, masked L1 offset
//! regression, visibility BCE, BEV segmentation rasterization and loss,
//! and the exp-weighted total.
//!
//! Reductions: L1 averages over visible target slots, classification and
//! visibility terms average over anchors. Background anchors contribute
//! classification only. Logits are clamped to +-20 so hard-label losses
//! stay finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{LanePrediction, LaneTargets, NUM_CLASSES};
use crate::geometry::BevGridSpec;
use crate::lane::Lane3D;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub const LOGIT_CLAMP: f64 = 20.0;

/// Positive loss weights, parameterized by their logarithms so they stay
/// positive when learned. Serialized as the log values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub log_alpha: f64,
    pub log_beta: f64,
    pub log_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { log_alpha: 0.0, log_beta: 0.0, log_gamma: 0.0 }
    }
}

impl LossWeights {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }
}

fn clamp_logit(x: f64) -> f64 {
    x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Cross-entropy of one sample from raw logits (clamped).
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let clamped: Vec<f64> = logits.iter().map(|&l| clamp_logit(l)).collect();
    let max = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = clamped.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    log_sum - clamped[class]
}

// d(CE)/d(logit) = softmax - onehot, zero where the clamp is active.
fn cross_entropy_backward(logits: &[f64], class: usize, scale: f64, grad: &mut [f64]) {
    let clamped: Vec<f64> = logits.iter().map(|&l| clamp_logit(l)).collect();
    let p = crate::tensor::softmax(&clamped);
    for (i, g) in grad.iter_mut().enumerate() {
        let inside = logits[i].abs() < LOGIT_CLAMP;
        if inside {
            let target = if i == class { 1.0 } else { 0.0 };
            *g += scale * (p[i] - target);
        }
    }
}

/// Numerically stable binary cross-entropy from a logit (clamped).
fn bce_logit(logit: f64, target: f64) -> f64 {
    let l = clamp_logit(logit);
    l.max(0.0) - l * target + (-l.abs()).exp().ln_1p()
}

fn bce_logit_backward(logit: f64, target: f64) -> f64 {
    if logit.abs() >= LOGIT_CLAMP {
        return 0.0;
    }
    let l = clamp_logit(logit);
    1.0 / (1.0 + (-l).exp()) - target
}

fn check_pair(pred: &LanePrediction, tgt: &LaneTargets) -> Result<(), LossError> {
    if pred.class_logits_3d.len() != NUM_CLASSES
        || pred.class_logits_2d.len() != NUM_CLASSES
        || pred.x_offsets.len() != tgt.x_offsets.len()
        || pred.z_values.len() != tgt.z_values.len()
        || pred.vis_bev_logits.len() != tgt.vis_bev.len()
        || pred.u_offsets.len() != tgt.u_offsets.len()
        || pred.vis_fv_logits.len() != tgt.vis_fv.len()
    {
        return Err(LossError::ShapeMismatch("prediction/target field lengths differ".into()));
    }
    Ok(())
}

/// 3D branch loss: classification over all anchors, L1 on (x, z) at
/// visible target slots and visibility BCE on foreground anchors.
pub fn loss_3d(preds: &[LanePrediction], tgts: &[LaneTargets]) -> Result<f64, LossError> {
    if preds.len() != tgts.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            tgts.len()
        )));
    }
    let mut ce_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut vis_sum = 0.0;
    let mut n_fg = 0usize;
    for (pred, tgt) in preds.iter().zip(tgts) {
        check_pair(pred, tgt)?;
        ce_sum += cross_entropy(&pred.class_logits_3d, tgt.class as usize);
        if tgt.is_background() {
            continue;
        }
        n_fg += 1;
        let n_vis = tgt.vis_bev.iter().filter(|&&v| v).count();
        if n_vis > 0 {
            let mut l1 = 0.0;
            for k in 0..tgt.x_offsets.len() {
                if tgt.vis_bev[k] {
                    l1 += (pred.x_offsets[k] - tgt.x_offsets[k]).abs()
                        + (pred.z_values[k] - tgt.z_values[k]).abs();
                }
            }
            reg_sum += l1 / n_vis as f64;
        }
        let mut bce = 0.0;
        for k in 0..tgt.vis_bev.len() {
            bce += bce_logit(pred.vis_bev_logits[k], if tgt.vis_bev[k] { 1.0 } else { 0.0 });
        }
        vis_sum += bce / tgt.vis_bev.len() as f64;
    }
    let n = preds.len().max(1) as f64;
    let fg = n_fg.max(1) as f64;
    Ok(ce_sum / n + reg_sum / fg + vis_sum / fg)
}

/// 2D branch loss: mirror of [`loss_3d`] without the height term.
pub fn loss_2d(preds: &[LanePrediction], tgts: &[LaneTargets]) -> Result<f64, LossError> {
    if preds.len() != tgts.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            tgts.len()
        )));
    }
    let mut ce_sum = 0.0;
    let mut reg_sum = 0.0;
    let mut vis_sum = 0.0;
    let mut n_fg = 0usize;
    for (pred, tgt) in preds.iter().zip(tgts) {
        check_pair(pred, tgt)?;
        ce_sum += cross_entropy(&pred.class_logits_2d, tgt.class as usize);
        if tgt.is_background() {
            continue;
        }
        n_fg += 1;
        let n_vis = tgt.vis_fv.iter().filter(|&&v| v).count();
        if n_vis > 0 {
            let mut l1 = 0.0;
            for k in 0..tgt.u_offsets.len() {
                if tgt.vis_fv[k] {
                    l1 += (pred.u_offsets[k] - tgt.u_offsets[k]).abs();
                }
            }
            reg_sum += l1 / n_vis as f64;
        }
        let mut bce = 0.0;
        for k in 0..tgt.vis_fv.len() {
            bce += bce_logit(pred.vis_fv_logits[k], if tgt.vis_fv[k] { 1.0 } else { 0.0 });
        }
        vis_sum += bce / tgt.vis_fv.len() as f64;
    }
    let n = preds.len().max(1) as f64;
    let fg = n_fg.max(1) as f64;
    Ok(ce_sum / n + reg_sum / fg + vis_sum / fg)
}

/// Gradient of [`loss_3d`] with respect to every prediction field.
pub fn loss_3d_backward(
    preds: &[LanePrediction],
    tgts: &[LaneTargets],
) -> Result<Vec<LanePrediction>, LossError> {
    let n = preds.len().max(1) as f64;
    let n_fg = tgts.iter().filter(|t| !t.is_background()).count().max(1) as f64;
    let mut grads: Vec<LanePrediction> = preds
        .iter()
        .map(|p| LanePrediction {
            class_logits_3d: vec![0.0; p.class_logits_3d.len()],
            class_logits_2d: vec![0.0; p.class_logits_2d.len()],
            x_offsets: vec![0.0; p.x_offsets.len()],
            z_values: vec![0.0; p.z_values.len()],
            vis_bev_logits: vec![0.0; p.vis_bev_logits.len()],
            u_offsets: vec![0.0; p.u_offsets.len()],
            vis_fv_logits: vec![0.0; p.vis_fv_logits.len()],
        })
        .collect();
    for ((pred, tgt), grad) in preds.iter().zip(tgts).zip(grads.iter_mut()) {
        check_pair(pred, tgt)?;
        cross_entropy_backward(
            &pred.class_logits_3d,
            tgt.class as usize,
            1.0 / n,
            &mut grad.class_logits_3d,
        );
        if tgt.is_background() {
            continue;
        }
        let n_vis = tgt.vis_bev.iter().filter(|&&v| v).count();
        if n_vis > 0 {
            for k in 0..tgt.x_offsets.len() {
                if tgt.vis_bev[k] {
                    grad.x_offsets[k] =
                        (pred.x_offsets[k] - tgt.x_offsets[k]).signum() / n_vis as f64 / n_fg;
                    grad.z_values[k] =
                        (pred.z_values[k] - tgt.z_values[k]).signum() / n_vis as f64 / n_fg;
                }
            }
        }
        for k in 0..tgt.vis_bev.len() {
            grad.vis_bev_logits[k] = bce_logit_backward(
                pred.vis_bev_logits[k],
                if tgt.vis_bev[k] { 1.0 } else { 0.0 },
            ) / tgt.vis_bev.len() as f64
                / n_fg;
        }
    }
    Ok(grads)
}

/// Binary BEV occupancy map over the grid cells, row 0 at the near edge.
/// Targets hold {0, 1}; predictions hold probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevSegMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl BevSegMap {
    pub fn zeros(spec: &BevGridSpec) -> Self {
        Self {
            width: spec.width_cells,
            height: spec.height_cells,
            data: vec![0.0; spec.width_cells * spec.height_cells],
        }
    }

    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize) {
        self.data[row * self.width + col] = 1.0;
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

/// Rasterize visible lane segments into the BEV grid with 1-cell-wide
/// Bresenham strokes.
pub fn rasterize_bev_segmentation(lanes: &[Lane3D], spec: &BevGridSpec) -> BevSegMap {
    let mut map = BevSegMap::zeros(spec);
    let cell_w = spec.cell_width();
    let cell_h = spec.cell_height();
    let to_cell = |x: f64, y: f64| -> (i64, i64) {
        (
            (((x - spec.x_min) / cell_w).floor() as i64).min(spec.width_cells as i64 - 1),
            (((y - spec.y_min) / cell_h).floor() as i64).min(spec.height_cells as i64 - 1),
        )
    };
    for lane in lanes {
        for i in 0..lane.points.len().saturating_sub(1) {
            if !(lane.visibility[i] && lane.visibility[i + 1]) {
                continue;
            }
            let (a, b) = (lane.points[i], lane.points[i + 1]);
            let (c0, r0) = to_cell(a.x, a.y);
            let (c1, r1) = to_cell(b.x, b.y);
            bresenham(c0, r0, c1, r1, &mut |c, r| {
                if c >= 0 && (c as usize) < spec.width_cells && r >= 0 && (r as usize) < spec.height_cells {
                    map.set(c as usize, r as usize);
                }
            });
        }
    }
    map
}

/// Classic integer Bresenham over cell coordinates.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, plot: &mut impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        plot(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Mean binary cross-entropy between probability maps; probabilities are
/// clamped to the sigmoid of the logit clamp.
pub fn loss_seg(pred: &BevSegMap, tgt: &BevSegMap) -> Result<f64, LossError> {
    if pred.width != tgt.width || pred.height != tgt.height {
        return Err(LossError::ShapeMismatch(format!(
            "segmentation maps {}x{} vs {}x{}",
            pred.width, pred.height, tgt.width, tgt.height
        )));
    }
    let lo = 1.0 / (1.0 + LOGIT_CLAMP.exp());
    let hi = 1.0 - lo;
    let mut sum = 0.0;
    for (p, t) in pred.data.iter().zip(&tgt.data) {
        let p = p.clamp(lo, hi);
        sum += -t * p.ln() - (1.0 - t) * (1.0 - p).ln();
    }
    Ok(sum / pred.data.len() as f64)
}

/// Weighted total: alpha * l2d + beta * l3d + gamma * lseg.
pub fn total_loss(l2d: f64, l3d: f64, lseg: f64, w: &LossWeights) -> f64 {
    w.alpha() * l2d + w.beta() * l3d + w.gamma() * lseg
}

/// Gradient of [`total_loss`] with respect to the log-weights.
pub fn total_loss_backward(l2d: f64, l3d: f64, lseg: f64, w: &LossWeights) -> [f64; 3] {
    [w.alpha() * l2d, w.beta() * l3d, w.gamma() * lseg]
}
