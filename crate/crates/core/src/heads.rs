//! Anchor-conditioned prediction heads.
//!
//! The 3D head samples BEV features along each anchor's ray at the fixed
//! y positions, flattens them and applies one linear map emitting class
//! logits, lateral offsets, heights and visibility logits. The 2D head
//! does the analog on front-view features at the fixed image rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorSet, LanePrediction, NUM_CLASSES, N_V_SAMPLES_2D, Y_SAMPLES_3D};
use crate::geometry::ImageSize;
use crate::tensor::Tensor;
use crate::transformer::{bilinear_sample, pixel_to_feature, TransformerError};

const N3: usize = Y_SAMPLES_3D.len();
const OUT_3D: usize = NUM_CLASSES + 3 * N3;
const OUT_2D: usize = NUM_CLASSES + 2 * N_V_SAMPLES_2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub channels: usize,
    /// [10 * C, 15 + 10 + 10 + 10]
    pub w3d: Tensor,
    pub b3d: Vec<f64>,
    /// [72 * C, 15 + 72 + 72]
    pub w2d: Tensor,
    pub b2d: Vec<f64>,
}

impl HeadWeights {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            w3d: Tensor::zeros(&[N3 * channels, OUT_3D]),
            b3d: vec![0.0; OUT_3D],
            w2d: Tensor::zeros(&[N_V_SAMPLES_2D * channels, OUT_2D]),
            b2d: vec![0.0; OUT_2D],
        }
    }

    pub fn seeded(seed: u64, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w3d = Tensor::zeros(&[N3 * channels, OUT_3D]);
        for v in w3d.data.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        let mut w2d = Tensor::zeros(&[N_V_SAMPLES_2D * channels, OUT_2D]);
        for v in w2d.data.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        Self { channels, w3d, b3d: vec![0.0; OUT_3D], w2d, b2d: vec![0.0; OUT_2D] }
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        if self.w3d.shape != [N3 * self.channels, OUT_3D]
            || self.b3d.len() != OUT_3D
            || self.w2d.shape != [N_V_SAMPLES_2D * self.channels, OUT_2D]
            || self.b2d.len() != OUT_2D
        {
            return Err(TransformerError::ShapeMismatch("head weight shapes".into()));
        }
        Ok(())
    }
}

/// Run both heads over every anchor. `f_bev` is [H, W, C] over the
/// anchor set's BEV extents; `f_fv` is [H, W, C] over the image plane.
pub fn prediction_heads(
    f_bev: &Tensor,
    f_fv: &Tensor,
    anchors: &AnchorSet,
    weights: &HeadWeights,
    img: ImageSize,
) -> Result<Vec<LanePrediction>, TransformerError> {
    weights.validate()?;
    let c = weights.channels;
    if f_bev.rank() != 3 || f_bev.shape[2] != c || f_fv.rank() != 3 || f_fv.shape[2] != c {
        return Err(TransformerError::ShapeMismatch(format!(
            "features {:?} / {:?} vs {c} channels",
            f_bev.shape, f_fv.shape
        )));
    }
    let spec = &anchors.spec;
    let (hb, wb) = (f_bev.shape[0], f_bev.shape[1]);
    let col_of = |x: f64| (x - spec.x_min) / (spec.x_max - spec.x_min) * wb as f64 - 0.5;
    let row_of = |y: f64| (y - spec.y_min) / (spec.y_max - spec.y_min) * hb as f64 - 0.5;

    let mut out = Vec::with_capacity(anchors.len());
    for anchor in &anchors.anchors {
        // 3D branch: gather along the BEV ray.
        let mut feat3 = Vec::with_capacity(N3 * c);
        for (k, &y) in anchors.y_samples.iter().enumerate() {
            feat3.extend(bilinear_sample(f_bev, col_of(anchor.xs[k]), row_of(y)));
        }
        let mut y3 = weights.b3d.clone();
        for (i, &x) in feat3.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = weights.w3d.row(i);
            for (o, yo) in y3.iter_mut().enumerate() {
                *yo += x * row[o];
            }
        }

        // 2D branch: gather along the projected line.
        let mut feat2 = Vec::with_capacity(N_V_SAMPLES_2D * c);
        for (k, &v) in anchors.v_samples.iter().enumerate() {
            let uf = pixel_to_feature(anchor.us[k], f_fv.shape[1], img.width);
            let vf = pixel_to_feature(v, f_fv.shape[0], img.height);
            feat2.extend(bilinear_sample(f_fv, uf, vf));
        }
        let mut y2 = weights.b2d.clone();
        for (i, &x) in feat2.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = weights.w2d.row(i);
            for (o, yo) in y2.iter_mut().enumerate() {
                *yo += x * row[o];
            }
        }

        out.push(LanePrediction {
            class_logits_3d: y3[..NUM_CLASSES].to_vec(),
            x_offsets: y3[NUM_CLASSES..NUM_CLASSES + N3].to_vec(),
            z_values: y3[NUM_CLASSES + N3..NUM_CLASSES + 2 * N3].to_vec(),
            vis_bev_logits: y3[NUM_CLASSES + 2 * N3..].to_vec(),
            class_logits_2d: y2[..NUM_CLASSES].to_vec(),
            u_offsets: y2[NUM_CLASSES..NUM_CLASSES + N_V_SAMPLES_2D].to_vec(),
            vis_fv_logits: y2[NUM_CLASSES + N_V_SAMPLES_2D..].to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::build_anchor_set;
    use crate::geometry::{BevGridSpec, CameraParams};

    fn setup() -> (AnchorSet, Tensor, Tensor, ImageSize) {
        let spec = BevGridSpec::new((-6.0, 6.0), (0.0, 100.0), 16, 100).unwrap();
        let cam = CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5).unwrap();
        let img = ImageSize::default();
        let set = build_anchor_set(&spec, &cam, img);
        let f_bev = Tensor::seeded_range(41, &[10, 16, 4], -1.0, 1.0);
        let f_fv = Tensor::seeded_range(42, &[9, 12, 4], -1.0, 1.0);
        (set, f_bev, f_fv, img)
    }

    #[test]
    fn zero_weights_zero_logits() {
        let (set, f_bev, f_fv, img) = setup();
        let w = HeadWeights::zeros(4);
        let preds = prediction_heads(&f_bev, &f_fv, &set, &w, img).unwrap();
        assert_eq!(preds.len(), set.len());
        for p in preds {
            assert!(p.class_logits_3d.iter().all(|&x| x == 0.0));
            assert!(p.x_offsets.iter().all(|&x| x == 0.0));
            assert!(p.u_offsets.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let (set, f_bev, f_fv, img) = setup();
        let w = HeadWeights::seeded(9, 4);
        let preds = prediction_heads(&f_bev, &f_fv, &set, &w, img).unwrap();

        // Independent slow path for a few anchors.
        for ai in [0usize, 5, 13] {
            let anchor = &set.anchors[ai];
            let mut feat = Vec::new();
            for (k, &y) in set.y_samples.iter().enumerate() {
                let cx = (anchor.xs[k] - set.spec.x_min) / (set.spec.x_max - set.spec.x_min)
                    * f_bev.shape[1] as f64
                    - 0.5;
                let cy = (y - set.spec.y_min) / (set.spec.y_max - set.spec.y_min)
                    * f_bev.shape[0] as f64
                    - 0.5;
                feat.extend(bilinear_sample(&f_bev, cx, cy));
            }
            let mut want = w.b3d.clone();
            for (i, &x) in feat.iter().enumerate() {
                for o in 0..OUT_3D {
                    want[o] += x * w.w3d.at2(i, o);
                }
            }
            for (k, &got) in preds[ai].class_logits_3d.iter().enumerate() {
                assert!((got - want[k]).abs() < 1e-12);
            }
            for (k, &got) in preds[ai].x_offsets.iter().enumerate() {
                assert!((got - want[NUM_CLASSES + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anchor_outside_grid_sees_zero_features() {
        let (set, _, f_fv, img) = setup();
        // Features covering only a sliver far from every anchor column.
        let f_bev = Tensor::zeros(&[10, 16, 4]);
        let w = HeadWeights::seeded(10, 4);
        let preds = prediction_heads(&f_bev, &f_fv, &set, &w, img).unwrap();
        // With all-zero gathered features the 3D branch reduces to bias.
        for p in preds {
            for (o, &v) in p.class_logits_3d.iter().enumerate() {
                assert_eq!(v, w.b3d[o]);
            }
        }
    }
}
