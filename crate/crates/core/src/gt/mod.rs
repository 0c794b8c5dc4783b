//! LiDAR-based 3D lane label generation.
//!
//! Per segment: object-box points are removed, the remaining cloud is
//! filtered to an image-space radius around each 2D lane annotation,
//! the annotation points are lifted to 3D by inverse-distance depth
//! interpolation, the lifted lanes are spliced across frames through the
//! ego poses, visibility is marked against the current frame's 2D
//! annotation, and a robust cubic fit smooths the result. Lanes that are
//! not a function of y are fitted in a rotated frame (see [`fit`]).

pub mod fit;
pub mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_ground_to_pixel, BevGridSpec, CameraParams, GroundPoint, ImageSize};
use crate::lane::{Lane2D, Lane3D};

pub use fit::{fit_with_rotation, smooth_fit};
pub use synth::{synth_scene, LaneDef, LanePath, SceneSpec, SynthScene};

#[derive(Debug, Error, PartialEq)]
pub enum GtError {
    #[error("pose missing for frame {frame}")]
    PoseMissing { frame: usize },
    #[error("track {track_id}: no LiDAR support within radius")]
    InsufficientSupport { track_id: u64 },
    #[error("track {track_id}: point set is multivalued even after rotation")]
    StillMultivalued { track_id: u64 },
    #[error("degenerate lane: {0}")]
    DegenerateLane(String),
}

/// Ego pose in the world frame: planar translation plus yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub tx: f64,
    pub ty: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn identity() -> Self {
        Self { tx: 0.0, ty: 0.0, yaw: 0.0 }
    }

    pub fn to_world(&self, p: GroundPoint) -> GroundPoint {
        let (s, c) = self.yaw.sin_cos();
        GroundPoint::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty, p.z)
    }

    pub fn to_ego(&self, p: GroundPoint) -> GroundPoint {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p.x - self.tx, p.y - self.ty);
        GroundPoint::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    }

    /// self applied after `other` (composition of rigid transforms).
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let moved = self.to_world(GroundPoint::new(other.tx, other.ty, 0.0));
        Pose2D { tx: moved.x, ty: moved.y, yaw: self.yaw + other.yaw }
    }
}

/// Axis-aligned 3D box in the ego frame; LiDAR returns inside object
/// boxes are discarded before lane filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl ObjectBox {
    pub fn contains(&self, p: GroundPoint) -> bool {
        p.x >= self.min[0]
            && p.x <= self.max[0]
            && p.y >= self.min[1]
            && p.y <= self.max[1]
            && p.z >= self.min[2]
            && p.z <= self.max[2]
    }
}

/// One frame's point cloud in the ego frame, with the frame's world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarFrame {
    pub points: Vec<GroundPoint>,
    pub pose: Pose2D,
    pub object_boxes: Vec<ObjectBox>,
}

/// One input frame of the labeling pipeline: 2D annotations plus LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFrame {
    pub camera: CameraParams,
    pub lanes_2d: Vec<Lane2D>,
    pub lidar: LidarFrame,
}

/// Pipeline knobs. The image-space filter radius defaults to 8 px.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtConfig {
    /// Keep LiDAR points whose projection is within this distance of a
    /// 2D lane polyline.
    pub radius_px: f64,
    /// Nearest projected points used for depth interpolation.
    pub k_nearest: usize,
    /// A 2D annotation point with no support inside this radius is
    /// dropped.
    pub support_radius_px: f64,
    /// Output resampling step of the fitted lanes.
    pub fit_step_m: f64,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self { radius_px: 8.0, k_nearest: 4, support_radius_px: 12.0, fit_step_m: 0.5 }
    }
}

/// Remove LiDAR returns inside any object box.
pub fn remove_points_in_boxes(frame: &LidarFrame) -> Vec<GroundPoint> {
    frame
        .points
        .iter()
        .copied()
        .filter(|p| !frame.object_boxes.iter().any(|b| b.contains(*p)))
        .collect()
}

fn polyline_dist_px(u: f64, v: f64, lane: &Lane2D) -> f64 {
    let mut best = f64::INFINITY;
    for win in lane.points.windows(2) {
        let d = crate::eval::point_segment_dist(u, v, win[0].u, win[0].v, win[1].u, win[1].v);
        best = best.min(d);
    }
    if lane.points.len() == 1 {
        let p = lane.points[0];
        best = ((u - p.u).powi(2) + (v - p.v).powi(2)).sqrt();
    }
    best
}

/// Keep points whose image projection lies within `radius_px` of the 2D
/// polyline. Points behind the camera never qualify.
pub fn filter_points_near_lane(
    points: &[GroundPoint],
    lane2d: &Lane2D,
    cam: &CameraParams,
    radius_px: f64,
) -> Vec<GroundPoint> {
    points
        .iter()
        .copied()
        .filter(|&p| match project_ground_to_pixel(p, cam) {
            Ok(px) => polyline_dist_px(px.u, px.v, lane2d) <= radius_px,
            Err(_) => false,
        })
        .collect()
}

/// Lift each 2D annotation point to 3D: estimate its height by inverse-
/// distance weighting over the k nearest projected support points, then
/// place the point where its camera ray crosses that height. Annotation
/// points with no support in the radius are dropped; the lifted point
/// re-projects onto the annotation pixel exactly.
pub fn interpolate_lane_3d(
    lane2d: &Lane2D,
    support: &[GroundPoint],
    cam: &CameraParams,
    cfg: &GtConfig,
) -> Result<Lane3D, GtError> {
    // Project the support cloud once.
    let projected: Vec<(f64, f64, f64)> = support
        .iter()
        .filter_map(|&p| project_ground_to_pixel(p, cam).ok().map(|px| (px.u, px.v, p.z)))
        .collect();
    if projected.is_empty() {
        return Err(GtError::InsufficientSupport { track_id: lane2d.track_id });
    }

    let rot = cam.rotation_cam_to_ego();
    let mut points = Vec::new();
    let mut visibility = Vec::new();
    for (i, ann) in lane2d.points.iter().enumerate() {
        let mut nearest: Vec<(f64, f64)> = projected
            .iter()
            .map(|&(u, v, z)| (((ann.u - u).powi(2) + (ann.v - v).powi(2)).sqrt(), z))
            .filter(|&(d, _)| d <= cfg.support_radius_px)
            .collect();
        if nearest.is_empty() {
            continue;
        }
        nearest.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nearest.truncate(cfg.k_nearest.max(1));
        let mut wsum = 0.0;
        let mut zsum = 0.0;
        for (d, z) in nearest {
            let w = 1.0 / d.max(1e-9);
            wsum += w;
            zsum += w * z;
        }
        let z_hat = zsum / wsum;
        // Intersect the annotation pixel's ray with the plane z = z_hat.
        let dir_cam =
            nalgebra::Vector3::new((ann.u - cam.cx) / cam.fx, (ann.v - cam.cy) / cam.fy, 1.0);
        let d_ego = rot * dir_cam;
        if d_ego.z.abs() < 1e-12 {
            continue; // ray parallel to the height plane
        }
        let t = (z_hat - cam.height_m) / d_ego.z;
        if t <= 0.0 {
            continue; // intersection behind the camera
        }
        points.push(GroundPoint::new(t * d_ego.x, t * d_ego.y, z_hat));
        visibility.push(lane2d.visibility[i]);
    }
    if points.len() < 2 {
        return Err(GtError::InsufficientSupport { track_id: lane2d.track_id });
    }
    Ok(Lane3D {
        points,
        visibility,
        category: lane2d.category,
        track_id: lane2d.track_id,
        importance_slot: None,
    })
}

/// Transform per-frame lifted lanes into the world frame and concatenate
/// per track id, ordered along the principal direction.
pub fn splice_segment(
    per_frame_lanes: &[Vec<Lane3D>],
    poses: &[Pose2D],
) -> Result<BTreeMap<u64, Lane3D>, GtError> {
    if poses.len() < per_frame_lanes.len() {
        return Err(GtError::PoseMissing { frame: poses.len() });
    }
    let mut tracks: BTreeMap<u64, Lane3D> = BTreeMap::new();
    for (fi, lanes) in per_frame_lanes.iter().enumerate() {
        let pose = &poses[fi];
        for lane in lanes {
            let entry = tracks.entry(lane.track_id).or_insert_with(|| Lane3D {
                points: Vec::new(),
                visibility: Vec::new(),
                category: lane.category,
                track_id: lane.track_id,
                importance_slot: None,
            });
            for (&p, &vis) in lane.points.iter().zip(&lane.visibility) {
                entry.points.push(pose.to_world(p));
                entry.visibility.push(vis);
            }
        }
    }
    for lane in tracks.values_mut() {
        sort_along_principal_axis(lane);
    }
    Ok(tracks)
}

fn sort_along_principal_axis(lane: &mut Lane3D) {
    let n = lane.points.len();
    if n < 2 {
        return;
    }
    let (mut mx, mut my) = (0.0, 0.0);
    for p in &lane.points {
        mx += p.x;
        my += p.y;
    }
    mx /= n as f64;
    my /= n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &lane.points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (dx, dy) = fit::principal_direction(sxx, sxy, syy);
    let mut order: Vec<usize> = (0..n).collect();
    let key = |p: &GroundPoint| (p.x - mx) * dx + (p.y - my) * dy;
    order.sort_by(|&a, &b| key(&lane.points[a]).partial_cmp(&key(&lane.points[b])).unwrap());
    lane.points = order.iter().map(|&i| lane.points[i]).collect();
    lane.visibility = order.iter().map(|&i| lane.visibility[i]).collect();
}

/// Mark visibility of a spliced lane (already in the current ego frame)
/// against the frame's 2D annotation: points projecting above the
/// annotation's far end, outside the image or behind the camera are
/// invisible.
pub fn mark_visibility(
    spliced_ego: &Lane3D,
    lane2d: Option<&Lane2D>,
    cam: &CameraParams,
    img: ImageSize,
) -> Lane3D {
    let v_end = lane2d.and_then(|l| {
        let vs: Vec<f64> = l
            .points
            .iter()
            .zip(&l.visibility)
            .filter(|(_, &vis)| vis)
            .map(|(p, _)| p.v)
            .collect();
        if vs.is_empty() {
            None
        } else {
            Some(vs.iter().cloned().fold(f64::INFINITY, f64::min))
        }
    });
    let mut out = spliced_ego.clone();
    for (i, &p) in spliced_ego.points.iter().enumerate() {
        out.visibility[i] = match (project_ground_to_pixel(p, cam), v_end) {
            (Ok(px), Some(v_end)) => img.contains(px) && px.v >= v_end,
            _ => false,
        };
    }
    out
}

/// Why a track produced no output lane in a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropNote {
    pub frame: usize,
    pub track_id: u64,
    pub reason: String,
}

/// Labeling output: per-frame 3D lanes in ego coordinates plus the drop
/// log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtOutput {
    pub frames: Vec<Vec<Lane3D>>,
    pub dropped: Vec<DropNote>,
}

/// Run the full labeling pipeline over a segment.
pub fn generate_labels(
    frames: &[SegmentFrame],
    cfg: &GtConfig,
    grid: &BevGridSpec,
    img: ImageSize,
) -> Result<GtOutput, GtError> {
    use rayon::prelude::*;

    // Phase 1, parallel over frames: filter the cloud per lane and lift.
    let lift_results: Vec<(Vec<Lane3D>, Vec<DropNote>)> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, frame)| {
            let clean = remove_points_in_boxes(&frame.lidar);
            let mut frame_lanes = Vec::new();
            let mut drops = Vec::new();
            for lane2d in &frame.lanes_2d {
                let support =
                    filter_points_near_lane(&clean, lane2d, &frame.camera, cfg.radius_px);
                match interpolate_lane_3d(lane2d, &support, &frame.camera, cfg) {
                    Ok(lane) => frame_lanes.push(lane),
                    Err(e) => drops.push(DropNote {
                        frame: fi,
                        track_id: lane2d.track_id,
                        reason: e.to_string(),
                    }),
                }
            }
            (frame_lanes, drops)
        })
        .collect();
    let mut dropped = Vec::new();
    let mut lifted = Vec::with_capacity(frames.len());
    for (lanes, drops) in lift_results {
        lifted.push(lanes);
        dropped.extend(drops);
    }

    // Barrier: splicing needs every frame's lift.
    let poses: Vec<Pose2D> = frames.iter().map(|f| f.lidar.pose).collect();
    let spliced = splice_segment(&lifted, &poses)?;

    // Phase 2, parallel over frames: transform back, trim, mark
    // visibility, fit.
    let frame_results: Vec<(Vec<Lane3D>, Vec<DropNote>)> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, frame)| {
            let pose = &poses[fi];
            let mut frame_out = Vec::new();
            let mut drops = Vec::new();
            for (track_id, world_lane) in &spliced {
                let mut ego = world_lane.clone();
                ego.points = world_lane.points.iter().map(|&p| pose.to_ego(p)).collect();
                // Trim to the working range before visibility marking.
                let keep: Vec<usize> = (0..ego.points.len())
                    .filter(|&i| ego.points[i].y <= grid.y_max)
                    .collect();
                if keep.len() < 4 {
                    drops.push(DropNote {
                        frame: fi,
                        track_id: *track_id,
                        reason: "fewer than 4 points in range".into(),
                    });
                    continue;
                }
                ego.points = keep.iter().map(|&i| ego.points[i]).collect();
                ego.visibility = keep.iter().map(|&i| ego.visibility[i]).collect();

                let ann = frame.lanes_2d.iter().find(|l| l.track_id == *track_id);
                let marked = mark_visibility(&ego, ann, &frame.camera, img);
                if !marked.visibility.iter().any(|&v| v) {
                    drops.push(DropNote {
                        frame: fi,
                        track_id: *track_id,
                        reason: "no visible points in this frame".into(),
                    });
                    continue;
                }

                // Gate outliers before routing: wild far-range lifts would
                // otherwise read as curvature structure.
                let fitted = fit::reject_outliers(&marked).and_then(|gated| {
                    if fit::needs_rotation(&gated.points) {
                        fit_with_rotation(&gated, cfg.fit_step_m)
                    } else {
                        smooth_fit(&gated, cfg.fit_step_m)
                    }
                });
                match fitted {
                    Ok(lane) => frame_out.push(lane),
                    Err(e) => drops.push(DropNote {
                        frame: fi,
                        track_id: *track_id,
                        reason: e.to_string(),
                    }),
                }
            }
            (frame_out, drops)
        })
        .collect();
    let mut out_frames = Vec::with_capacity(frames.len());
    for (lanes, drops) in frame_results {
        out_frames.push(lanes);
        dropped.extend(drops);
    }
    Ok(GtOutput { frames: out_frames, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_depth;
    use crate::lane::{project_lane, LaneCategory};

    fn cam() -> CameraParams {
        CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5).unwrap()
    }

    fn flat_lane(x: f64) -> Lane3D {
        Lane3D {
            points: (1..=20).map(|k| GroundPoint::on_ground(x, 5.0 * k as f64)).collect(),
            visibility: vec![true; 20],
            category: LaneCategory::SingleWhiteSolid,
            track_id: 7,
            importance_slot: None,
        }
    }

    #[test]
    fn pose_round_trip() {
        let pose = Pose2D { tx: 3.0, ty: -2.0, yaw: 0.7 };
        let p = GroundPoint::new(1.5, 4.0, 0.3);
        let back = pose.to_ego(pose.to_world(p));
        assert!((back.x - p.x).abs() < 1e-12);
        assert!((back.y - p.y).abs() < 1e-12);
        assert_eq!(back.z, p.z);
    }

    #[test]
    fn box_filter_removes_inside_points() {
        let frame = LidarFrame {
            points: vec![
                GroundPoint::new(0.0, 10.0, 0.5),
                GroundPoint::new(5.0, 10.0, 0.5),
            ],
            pose: Pose2D::identity(),
            object_boxes: vec![ObjectBox { min: [-1.0, 8.0, 0.0], max: [1.0, 12.0, 2.0] }],
        };
        let kept = remove_points_in_boxes(&frame);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].x, 5.0);
    }

    #[test]
    fn radius_zero_keeps_only_exact_hits() {
        let camera = cam();
        let lane3d = flat_lane(2.0);
        let lane2d = project_lane(&lane3d, &camera, ImageSize::default()).unwrap();
        // Points exactly on the lane project exactly onto the polyline.
        let on = GroundPoint::on_ground(2.0, 12.5);
        let off = GroundPoint::on_ground(2.3, 12.5);
        let kept = filter_points_near_lane(&[on, off], &lane2d, &camera, 1e-9);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].x, 2.0);
        // Infinite radius keeps everything in front of the camera.
        let all = filter_points_near_lane(&[on, off], &lane2d, &camera, f64::INFINITY);
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn filter_matches_per_point_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let camera = cam();
        let lane3d = flat_lane(0.0);
        let lane2d = project_lane(&lane3d, &camera, ImageSize::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<GroundPoint> = (0..500)
            .map(|_| {
                GroundPoint::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(3.0..90.0),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let kept = filter_points_near_lane(&pts, &lane2d, &camera, 8.0);
        // Brute-force oracle: per point, min distance over segments.
        let mut want = Vec::new();
        for &p in &pts {
            if let Ok(px) = project_ground_to_pixel(p, &camera) {
                let mut best = f64::INFINITY;
                for w in lane2d.points.windows(2) {
                    let d = crate::eval::point_segment_dist(
                        px.u, px.v, w[0].u, w[0].v, w[1].u, w[1].v,
                    );
                    best = best.min(d);
                }
                if best <= 8.0 {
                    want.push(p);
                }
            }
        }
        assert_eq!(kept, want);
    }

    #[test]
    fn noiseless_flat_scene_recovers_zero_height() {
        use rand::Rng;
        use rand::SeedableRng;
        let camera = cam();
        let lane3d = flat_lane(1.0);
        let lane2d = project_lane(&lane3d, &camera, ImageSize::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let support: Vec<GroundPoint> = (0..3000)
            .map(|_| {
                GroundPoint::on_ground(
                    1.0 + rng.random_range(-0.15..0.15),
                    rng.random_range(4.0..101.0),
                )
            })
            .collect();
        let support = filter_points_near_lane(&support, &lane2d, &camera, 8.0);
        let lifted = interpolate_lane_3d(&lane2d, &support, &camera, &GtConfig::default()).unwrap();
        for p in &lifted.points {
            assert!(p.z.abs() < 1e-6, "z = {}", p.z);
        }
        // Lifted points re-project onto their annotation pixels.
        assert_eq!(lifted.points.len(), lane2d.points.len(), "no annotation point dropped");
        for (p, ann) in lifted.points.iter().zip(&lane2d.points) {
            let px = project_ground_to_pixel(*p, &camera).unwrap();
            assert!((px.u - ann.u).abs() < 1e-9);
            assert!((px.v - ann.v).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_hill_height_recovered_within_two_centimeters() {
        use rand::Rng;
        use rand::SeedableRng;
        let camera = cam();
        // Lane on a 2% grade, within the range where the surface stays
        // clearly below the camera (it crosses camera height at 75 m,
        // where ray-surface lifting degenerates for any method).
        let grade = 0.02;
        let lane3d = Lane3D {
            points: (1..=20)
                .map(|k| {
                    let y = 3.0 * k as f64;
                    GroundPoint::new(1.0, y, grade * y)
                })
                .collect(),
            visibility: vec![true; 20],
            category: LaneCategory::SingleWhiteSolid,
            track_id: 0,
            importance_slot: None,
        };
        let lane2d = project_lane(&lane3d, &camera, ImageSize::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let support: Vec<GroundPoint> = (0..12000)
            .map(|_| {
                let y = rng.random_range(2.0..66.0);
                GroundPoint::new(1.0 + rng.random_range(-0.1..0.1), y, grade * y)
            })
            .collect();
        let support = filter_points_near_lane(&support, &lane2d, &camera, 8.0);
        let lifted = interpolate_lane_3d(&lane2d, &support, &camera, &GtConfig::default()).unwrap();
        for p in &lifted.points {
            let err = (p.z - grade * p.y).abs();
            assert!(err < 0.02, "height error {err} at y {}", p.y);
        }
    }

    #[test]
    fn single_support_point_sets_height_exactly() {
        let camera = cam();
        let lane2d = Lane2D {
            points: vec![
                crate::geometry::PixelPoint::new(240.0, 300.0),
                crate::geometry::PixelPoint::new(240.0, 250.0),
            ],
            visibility: vec![true, true],
            category: LaneCategory::SingleWhiteDash,
            track_id: 0,
        };
        let support = vec![GroundPoint::new(0.1, 12.0, 0.35)];
        let cfg = GtConfig { support_radius_px: 1e9, ..Default::default() };
        let lifted = interpolate_lane_3d(&lane2d, &support, &camera, &cfg).unwrap();
        for p in &lifted.points {
            assert_eq!(p.z, 0.35);
        }
        // Still in front of the camera and on the annotation rays.
        for (p, ann) in lifted.points.iter().zip(&lane2d.points) {
            assert!(point_depth(*p, &camera) > 0.0);
            let px = project_ground_to_pixel(*p, &camera).unwrap();
            assert!((px.u - ann.u).abs() < 1e-9);
            assert!((px.v - ann.v).abs() < 1e-9);
        }
    }

    #[test]
    fn no_support_drops_lane() {
        let camera = cam();
        let lane2d = Lane2D {
            points: vec![
                crate::geometry::PixelPoint::new(240.0, 300.0),
                crate::geometry::PixelPoint::new(240.0, 250.0),
            ],
            visibility: vec![true, true],
            category: LaneCategory::SingleWhiteDash,
            track_id: 9,
        };
        let err = interpolate_lane_3d(&lane2d, &[], &camera, &GtConfig::default()).unwrap_err();
        assert_eq!(err, GtError::InsufficientSupport { track_id: 9 });
    }

    #[test]
    fn single_frame_splice_is_identity() {
        let lane = flat_lane(2.0);
        let spliced = splice_segment(&[vec![lane.clone()]], &[Pose2D::identity()]).unwrap();
        let got = &spliced[&7];
        assert_eq!(got.points, lane.points);
    }

    #[test]
    fn translated_frames_concatenate() {
        // Frame 1 sees y in [5, 50]; frame 2 (10 m ahead) sees the next
        // span of the same world lane.
        let mut lane_f0 = flat_lane(1.0);
        lane_f0.points.retain(|p| p.y <= 50.0);
        lane_f0.visibility.truncate(lane_f0.points.len());
        let mut lane_f1 = flat_lane(1.0);
        for p in lane_f1.points.iter_mut() {
            p.y += 40.0; // world y 50..140 seen from ty=10 at ego y 40..130
            p.y -= 10.0;
        }
        let poses = [Pose2D::identity(), Pose2D { tx: 0.0, ty: 10.0, yaw: 0.0 }];
        let spliced = splice_segment(&[vec![lane_f0], vec![lane_f1]], &poses).unwrap();
        let got = &spliced[&7];
        // Concatenation equals the analytic union in world coordinates.
        let ys: Vec<f64> = got.points.iter().map(|p| p.y).collect();
        assert!(ys.windows(2).all(|w| w[0] <= w[1]), "sorted by world y");
        assert_eq!(got.points.len(), 10 + 20);
        assert!((ys[0] - 5.0).abs() < 1e-12);
        assert!((ys.last().unwrap() - 140.0).abs() < 1e-12);
    }

    #[test]
    fn missing_pose_is_an_error() {
        let lanes = vec![vec![flat_lane(0.0)], vec![flat_lane(0.0)]];
        assert!(matches!(
            splice_segment(&lanes, &[Pose2D::identity()]),
            Err(GtError::PoseMissing { frame: 1 })
        ));
    }

    #[test]
    fn visibility_marked_against_annotation_end() {
        let camera = cam();
        let img = ImageSize::default();
        let lane = flat_lane(1.0); // y from 5 to 100
        // Annotation stops at y = 50: its far end pixel bounds visibility.
        let mut short = lane.clone();
        short.points.retain(|p| p.y <= 50.0);
        short.visibility.truncate(short.points.len());
        let ann = project_lane(&short, &camera, img).unwrap();
        let marked = mark_visibility(&lane, Some(&ann), &camera, img);
        for (p, &vis) in marked.points.iter().zip(&marked.visibility) {
            let in_img = project_ground_to_pixel(*p, &camera).map(|px| img.contains(px));
            if p.y <= 49.9 && in_img == Ok(true) {
                assert!(vis, "y {} should be visible", p.y);
            }
            if p.y > 50.1 {
                assert!(!vis, "y {} beyond the annotation end", p.y);
            }
        }
        // Without any annotation everything is invisible.
        let none = mark_visibility(&lane, None, &camera, img);
        assert!(none.visibility.iter().all(|&v| !v));
        // Fully covered annotation keeps every in-image point visible.
        let full_ann = project_lane(&lane, &camera, img).unwrap();
        let full = mark_visibility(&lane, Some(&full_ann), &camera, img);
        for (p, &vis) in full.points.iter().zip(&full.visibility) {
            let px = project_ground_to_pixel(*p, &camera).unwrap();
            assert_eq!(vis, img.contains(px), "y {}", p.y);
        }
    }
}
