//! Unified BEV/front-view lane anchors.
//!
//! Anchors are straight rays in the BEV grid, fanned at seven incline
//! angles from starting positions spaced every 8 grid columns along the
//! near edge. Each BEV anchor is projected once with the average camera
//! to obtain its paired front-view anchor, so 2D and 3D targets are
//! regressed against the same template.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_ground_to_pixel, BevGridSpec, CameraParams, GroundPoint, ImageSize};
use crate::lane::{resample_at_v, resample_at_y, Lane2D, Lane3D, LaneCategory, LaneError};

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("ground-truth lane count {gt} exceeds anchor count {anchors}")]
    NoAnchorAvailable { gt: usize, anchors: usize },
    #[error("lane degenerate: {0}")]
    DegenerateLane(String),
}

impl From<LaneError> for AnchorError {
    fn from(e: LaneError) -> Self {
        match e {
            LaneError::DegenerateLane(msg) => AnchorError::DegenerateLane(msg),
        }
    }
}

/// Fixed longitudinal sampling positions for 3D anchors, meters.
pub const Y_SAMPLES_3D: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0];

/// Number of equally spaced image rows sampled by 2D anchors.
pub const N_V_SAMPLES_2D: usize = 72;

/// Anchor starting positions sit every this many BEV grid columns,
/// inclusive of column 0.
pub const START_COLUMN_SPACING: usize = 8;

/// Cotangents of the seven grid-coordinate incline angles, i.e. lateral
/// grid cells per forward grid cell: {pi/2, arctan(+-0.5), arctan(+-1),
/// arctan(+-2)} expressed exactly. Ascending in angle.
pub const ANGLE_COTS: [f64; 7] = [2.0, 1.0, 0.5, 0.0, -0.5, -1.0, -2.0];

/// Class index reserved for anchors matching no lane.
pub const BACKGROUND_CLASS: u8 = 14;

/// 14 lane categories plus background.
pub const NUM_CLASSES: usize = 15;

/// One anchor: a BEV ray plus its projected front-view line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Starting x (meters) on the near edge of the grid.
    pub start_x: f64,
    /// y (meters) of the starting row.
    pub start_y: f64,
    /// Incline angle in grid coordinates, radians in (0, pi).
    pub angle_grid: f64,
    /// Metric lateral slope dx/dy; exactly 0 for the vertical anchor.
    pub slope: f64,
    /// x at each of the fixed y samples.
    pub xs: Vec<f64>,
    /// False where the ray has left the lateral extent of the grid.
    pub valid_3d: Vec<bool>,
    /// u at each of the fixed v samples (projected line, extended where
    /// invalid).
    pub us: Vec<f64>,
    /// False where the v sample maps outside the anchor's ground span.
    pub valid_2d: Vec<bool>,
    /// Image-space incline angle of the projected line, radians in (0, pi).
    pub angle_image: f64,
}

impl Anchor {
    /// Lateral position of the BEV ray at longitudinal position `y`.
    pub fn x_at(&self, y: f64) -> f64 {
        self.start_x + self.slope * (y - self.start_y)
    }
}

/// The full anchor grid plus the sampling positions shared by targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub spec: BevGridSpec,
    pub avg_cam: CameraParams,
    pub img: ImageSize,
    pub starts_x: Vec<f64>,
    pub angles: Vec<f64>,
    pub y_samples: Vec<f64>,
    pub v_samples: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Build the anchor set: starting columns 0, 8, 16, ... times the seven
/// angles, each projected to the front view with the average camera.
pub fn build_anchor_set(spec: &BevGridSpec, avg_cam: &CameraParams, img: ImageSize) -> AnchorSet {
    let cell_w = spec.cell_width();
    let cell_h = spec.cell_height();

    let starts_x: Vec<f64> = (0..spec.width_cells)
        .step_by(START_COLUMN_SPACING)
        .map(|col| spec.x_min + (col as f64 + 0.5) * cell_w)
        .collect();
    let angles: Vec<f64> = ANGLE_COTS.iter().map(|&c| f64::atan2(1.0, c)).collect();
    let y_samples: Vec<f64> = Y_SAMPLES_3D.to_vec();
    let v_samples: Vec<f64> = (0..N_V_SAMPLES_2D)
        .map(|k| (img.height as f64 - 1.0) * k as f64 / (N_V_SAMPLES_2D as f64 - 1.0))
        .collect();

    let mut anchors = Vec::with_capacity(starts_x.len() * ANGLE_COTS.len());
    for &start_x in &starts_x {
        for (ai, &cot) in ANGLE_COTS.iter().enumerate() {
            let slope = cot * cell_w / cell_h;
            let start_y = spec.y_min;

            // Longitudinal span before the ray leaves the lateral extent.
            let y_exit = if slope == 0.0 {
                spec.y_max
            } else {
                let bound = if slope > 0.0 { spec.x_max } else { spec.x_min };
                (start_y + (bound - start_x) / slope).min(spec.y_max)
            };

            let xs: Vec<f64> = y_samples.iter().map(|&y| start_x + slope * (y - start_y)).collect();
            let valid_3d: Vec<bool> = y_samples
                .iter()
                .map(|&y| y >= start_y && y <= y_exit)
                .collect();

            // The BEV ray projects to a straight image line; two ground
            // points determine it.
            let near_dy = (5.0 - start_y).max(1.0);
            let pa = project_ground_to_pixel(
                GroundPoint::on_ground(start_x + slope * near_dy, start_y + near_dy),
                avg_cam,
            );
            let far_y = start_y + (y_exit - start_y).max(2.0);
            let pb = project_ground_to_pixel(
                GroundPoint::on_ground(start_x + slope * (far_y - start_y), far_y),
                avg_cam,
            );
            let (us, valid_2d, angle_image) = match (pa, pb) {
                (Ok(pa), Ok(pb)) => {
                    let dv = pb.v - pa.v;
                    let line_slope = if dv.abs() < 1e-12 { 0.0 } else { (pb.u - pa.u) / dv };
                    let angle_image =
                        f64::atan2(-(pb.v - pa.v), pb.u - pa.u).rem_euclid(std::f64::consts::PI);
                    let mut us = Vec::with_capacity(v_samples.len());
                    let mut valid_2d = Vec::with_capacity(v_samples.len());
                    for &v in &v_samples {
                        us.push(pa.u + line_slope * (v - pa.v));
                        valid_2d.push(match ground_y_of_row(avg_cam, v) {
                            Some(y) => y >= start_y && y <= y_exit,
                            None => false,
                        });
                    }
                    (us, valid_2d, angle_image)
                }
                // A camera that cannot see the ground span (extreme
                // upward pitch) leaves the 2D side fully invalid.
                _ => (
                    vec![0.0; v_samples.len()],
                    vec![false; v_samples.len()],
                    std::f64::consts::FRAC_PI_2,
                ),
            };

            anchors.push(Anchor {
                start_x,
                start_y,
                angle_grid: angles[ai],
                slope,
                xs,
                valid_3d,
                us,
                valid_2d,
                angle_image,
            });
        }
    }

    AnchorSet {
        spec: *spec,
        avg_cam: *avg_cam,
        img,
        starts_x,
        angles,
        y_samples,
        v_samples,
        anchors,
    }
}

/// Ground-plane y whose projection lands on image row `v`, if the row is
/// below the horizon.
fn ground_y_of_row(cam: &CameraParams, v: f64) -> Option<f64> {
    let (s, c) = cam.pitch_rad.sin_cos();
    let dv = (v - cam.cy) / cam.fy;
    let den = dv * c + s;
    if den <= 0.0 {
        return None;
    }
    Some(cam.height_m * (c - dv * s) / den)
}

/// Mean absolute lateral offset between a resampled lane and an anchor
/// polyline over the positions where the lane is visible. Positive
/// infinity when no position is visible.
pub fn anchor_distance(lane_vals: &[f64], lane_vis: &[bool], anchor_vals: &[f64]) -> f64 {
    debug_assert_eq!(lane_vals.len(), anchor_vals.len());
    debug_assert_eq!(lane_vals.len(), lane_vis.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..lane_vals.len() {
        if lane_vis[i] {
            sum += (lane_vals[i] - anchor_vals[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Assign each ground-truth lane to an anchor, greedily by ascending
/// distance with claimed anchors excluded. Lanes with no visible samples
/// stay unassigned.
///
/// Returns, per ground-truth lane, the index of its anchor.
pub fn associate(gt_lanes: &[Lane3D], anchors: &AnchorSet) -> Result<Vec<Option<usize>>, AnchorError> {
    if gt_lanes.len() > anchors.len() {
        return Err(AnchorError::NoAnchorAvailable {
            gt: gt_lanes.len(),
            anchors: anchors.len(),
        });
    }
    let mut costs: Vec<(f64, usize, usize)> = Vec::new();
    for (li, lane) in gt_lanes.iter().enumerate() {
        let rs = resample_at_y(lane, &anchors.y_samples)?;
        for (ai, anchor) in anchors.anchors.iter().enumerate() {
            let d = anchor_distance(&rs.x, &rs.vis, &anchor.xs);
            if d.is_finite() {
                costs.push((d, li, ai));
            }
        }
    }
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut lane_claimed = vec![false; gt_lanes.len()];
    let mut anchor_claimed = vec![false; anchors.len()];
    let mut out = vec![None; gt_lanes.len()];
    for (_, li, ai) in costs {
        if !lane_claimed[li] && !anchor_claimed[ai] {
            lane_claimed[li] = true;
            anchor_claimed[ai] = true;
            out[li] = Some(ai);
        }
    }
    Ok(out)
}

/// Per-anchor regression and classification targets.
///
/// `class` is the lane category code 0-13, or [`BACKGROUND_CLASS`].
/// Offset vectors always have length 10 (3D) and 72 (2D); background
/// anchors carry zeros there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneTargets {
    pub class: u8,
    pub x_offsets: Vec<f64>,
    pub z_values: Vec<f64>,
    pub vis_bev: Vec<bool>,
    pub u_offsets: Vec<f64>,
    pub vis_fv: Vec<bool>,
}

impl LaneTargets {
    pub fn background() -> Self {
        Self {
            class: BACKGROUND_CLASS,
            x_offsets: vec![0.0; Y_SAMPLES_3D.len()],
            z_values: vec![0.0; Y_SAMPLES_3D.len()],
            vis_bev: vec![false; Y_SAMPLES_3D.len()],
            u_offsets: vec![0.0; N_V_SAMPLES_2D],
            vis_fv: vec![false; N_V_SAMPLES_2D],
        }
    }

    pub fn is_background(&self) -> bool {
        self.class == BACKGROUND_CLASS
    }
}

/// Raw per-anchor head outputs: logits and unshifted regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePrediction {
    pub class_logits_3d: Vec<f64>,
    pub class_logits_2d: Vec<f64>,
    pub x_offsets: Vec<f64>,
    pub z_values: Vec<f64>,
    pub vis_bev_logits: Vec<f64>,
    pub u_offsets: Vec<f64>,
    pub vis_fv_logits: Vec<f64>,
}

impl LanePrediction {
    pub fn zeros() -> Self {
        Self {
            class_logits_3d: vec![0.0; NUM_CLASSES],
            class_logits_2d: vec![0.0; NUM_CLASSES],
            x_offsets: vec![0.0; Y_SAMPLES_3D.len()],
            z_values: vec![0.0; Y_SAMPLES_3D.len()],
            vis_bev_logits: vec![0.0; Y_SAMPLES_3D.len()],
            u_offsets: vec![0.0; N_V_SAMPLES_2D],
            vis_fv_logits: vec![0.0; N_V_SAMPLES_2D],
        }
    }

    pub fn argmax_class_3d(&self) -> u8 {
        argmax(&self.class_logits_3d) as u8
    }

    /// Harden logits into target form (argmax class, visibility at 0).
    pub fn to_targets(&self) -> LaneTargets {
        LaneTargets {
            class: self.argmax_class_3d(),
            x_offsets: self.x_offsets.clone(),
            z_values: self.z_values.clone(),
            vis_bev: self.vis_bev_logits.iter().map(|&l| l > 0.0).collect(),
            u_offsets: self.u_offsets.clone(),
            vis_fv: self.vis_fv_logits.iter().map(|&l| l > 0.0).collect(),
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Encode an associated ground-truth pair against its anchor: lateral
/// offsets at the fixed y samples, absolute heights, and the 2D analogs.
pub fn encode_targets(
    gt_3d: &Lane3D,
    gt_2d: &Lane2D,
    anchor: &Anchor,
    anchors: &AnchorSet,
) -> Result<LaneTargets, AnchorError> {
    let r3 = resample_at_y(gt_3d, &anchors.y_samples)?;
    let r2 = resample_at_v(gt_2d, &anchors.v_samples)?;
    Ok(LaneTargets {
        class: gt_3d.category.code(),
        x_offsets: r3.x.iter().zip(&anchor.xs).map(|(x, a)| x - a).collect(),
        z_values: r3.z,
        vis_bev: r3.vis,
        u_offsets: r2.u.iter().zip(&anchor.us).map(|(u, a)| u - a).collect(),
        vis_fv: r2.vis,
    })
}

/// Invert [`encode_targets`]: anchor plus offsets back to lanes at the
/// fixed sampling positions.
pub fn decode_prediction(
    anchor: &Anchor,
    anchors: &AnchorSet,
    raw: &LaneTargets,
) -> Result<(Lane3D, Lane2D), AnchorError> {
    if raw.is_background() {
        return Err(AnchorError::DegenerateLane("background anchor has no lane".into()));
    }
    let category = LaneCategory::from_code(raw.class)
        .ok_or_else(|| AnchorError::DegenerateLane(format!("class code {} invalid", raw.class)))?;
    let points: Vec<GroundPoint> = anchors
        .y_samples
        .iter()
        .enumerate()
        .map(|(k, &y)| GroundPoint::new(anchor.xs[k] + raw.x_offsets[k], y, raw.z_values[k]))
        .collect();
    let lane3d = Lane3D {
        points,
        visibility: raw.vis_bev.clone(),
        category,
        track_id: 0,
        importance_slot: None,
    };
    let points2d: Vec<crate::geometry::PixelPoint> = anchors
        .v_samples
        .iter()
        .enumerate()
        .map(|(k, &v)| crate::geometry::PixelPoint::new(anchor.us[k] + raw.u_offsets[k], v))
        .collect();
    let lane2d = Lane2D {
        points: points2d,
        visibility: raw.vis_fv.clone(),
        category,
        track_id: 0,
    };
    Ok((lane3d, lane2d))
}

/// Build the full per-anchor target table for a frame: associated lanes
/// encoded, everything else background.
pub fn encode_frame(
    gts_3d: &[Lane3D],
    gts_2d: &[Lane2D],
    assignment: &[Option<usize>],
    anchors: &AnchorSet,
) -> Result<Vec<LaneTargets>, AnchorError> {
    debug_assert_eq!(gts_3d.len(), assignment.len());
    debug_assert_eq!(gts_3d.len(), gts_2d.len());
    let mut table = vec![LaneTargets::background(); anchors.len()];
    for (li, assigned) in assignment.iter().enumerate() {
        if let Some(ai) = assigned {
            table[*ai] = encode_targets(&gts_3d[li], &gts_2d[li], &anchors.anchors[*ai], anchors)?;
        }
    }
    Ok(table)
}
