//! Synthetic segment generator: analytic lanes on an analytic road
//! surface, rendered to per-frame 2D annotations and LiDAR clouds, with
//! the exact 3D truth returned for comparison. Everything is a pure
//! function of the scene spec (the seed included).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LidarFrame, ObjectBox, Pose2D, SegmentFrame};
use crate::geometry::{BevGridSpec, CameraParams, GroundPoint, ImageSize};
use crate::lane::{project_lane, Lane3D, LaneCategory};

/// World-frame lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LanePath {
    /// x(y) = x0 + c1 y + c2 y^2 + c3 y^3 over the world y span.
    Poly { x0: f64, c1: f64, c2: f64, c3: f64, y_start: f64, y_end: f64 },
    /// Circular arc swept from angle a0 to a1 (radians).
    Arc { cx: f64, cy: f64, radius: f64, a0: f64, a1: f64 },
}

impl LanePath {
    /// Point at parameter t in [0, 1].
    pub fn point_at(&self, t: f64) -> (f64, f64) {
        match *self {
            LanePath::Poly { x0, c1, c2, c3, y_start, y_end } => {
                let y = y_start + t * (y_end - y_start);
                (x0 + c1 * y + c2 * y * y + c3 * y * y * y, y)
            }
            LanePath::Arc { cx, cy, radius, a0, a1 } => {
                let a = a0 + t * (a1 - a0);
                (cx + radius * a.cos(), cy + radius * a.sin())
            }
        }
    }

    /// Rough arc length, for choosing sample counts.
    pub fn approx_length(&self) -> f64 {
        let mut len = 0.0;
        let mut prev = self.point_at(0.0);
        for k in 1..=64 {
            let cur = self.point_at(k as f64 / 64.0);
            len += ((cur.0 - prev.0).powi(2) + (cur.1 - prev.1).powi(2)).sqrt();
            prev = cur;
        }
        len
    }
}

/// Road height profile z(y) in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GradeProfile {
    Flat,
    /// Constant grade: z = slope * y.
    Linear { slope: f64 },
    /// Rolling hills: z = amp * sin(y / wavelength).
    Sine { amp: f64, wavelength: f64 },
}

impl GradeProfile {
    pub fn z_at(&self, y: f64) -> f64 {
        match *self {
            GradeProfile::Flat => 0.0,
            GradeProfile::Linear { slope } => slope * y,
            GradeProfile::Sine { amp, wavelength } => amp * (y / wavelength).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneDef {
    pub path: LanePath,
    pub category: LaneCategory,
}

/// Full description of a synthetic segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frame_count: usize,
    /// Ego advance per frame, meters.
    pub frame_step_m: f64,
    pub lanes: Vec<LaneDef>,
    pub grade: GradeProfile,
    pub camera: CameraParams,
    pub img: ImageSize,
    pub grid: BevGridSpec,
    /// Along-lane spacing of LiDAR returns.
    pub lidar_step_m: f64,
    /// Lateral sampling radius around each lane.
    pub lidar_lateral_radius_m: f64,
    /// Gaussian noise applied to LiDAR z (and half of it to x, y).
    pub lidar_noise_m: f64,
    /// 2D annotation point spacing along the lane.
    pub annotation_step_m: f64,
    /// Parked-vehicle boxes per frame; their interior returns must be
    /// filtered out by the pipeline.
    pub boxes_per_frame: usize,
}

impl SceneSpec {
    /// Three parallel straight lanes on a flat road.
    pub fn flat_demo(seed: u64) -> Self {
        Self {
            seed,
            frame_count: 20,
            frame_step_m: 4.0,
            lanes: three_parallel_lanes(200.0),
            grade: GradeProfile::Flat,
            camera: CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5).unwrap(),
            img: ImageSize::default(),
            grid: BevGridSpec::default(),
            lidar_step_m: 0.3,
            lidar_lateral_radius_m: 1.0,
            lidar_noise_m: 0.0,
            annotation_step_m: 1.0,
            boxes_per_frame: 1,
        }
    }

    /// Gently rolling road, curved lanes.
    pub fn rolling_demo(seed: u64) -> Self {
        Self {
            grade: GradeProfile::Sine { amp: 0.5, wavelength: 60.0 },
            lanes: vec![
                LaneDef {
                    path: LanePath::Poly {
                        x0: -1.8,
                        c1: 0.004,
                        c2: 1.5e-4,
                        c3: 0.0,
                        y_start: 0.0,
                        y_end: 200.0,
                    },
                    category: LaneCategory::SingleYellowSolid,
                },
                LaneDef {
                    path: LanePath::Poly {
                        x0: 1.7,
                        c1: 0.004,
                        c2: 1.5e-4,
                        c3: 0.0,
                        y_start: 0.0,
                        y_end: 200.0,
                    },
                    category: LaneCategory::SingleWhiteDash,
                },
            ],
            ..Self::flat_demo(seed)
        }
    }

    /// Two truly parallel lanes on a constant 5% grade, short segment.
    pub fn graded_demo(seed: u64, slope: f64, gap: f64) -> Self {
        Self {
            frame_count: 3,
            frame_step_m: 2.0,
            grade: GradeProfile::Linear { slope },
            lanes: vec![
                LaneDef {
                    path: LanePath::Poly {
                        x0: -gap / 2.0,
                        c1: 0.0,
                        c2: 0.0,
                        c3: 0.0,
                        y_start: 0.0,
                        y_end: 200.0,
                    },
                    category: LaneCategory::SingleWhiteSolid,
                },
                LaneDef {
                    path: LanePath::Poly {
                        x0: gap / 2.0,
                        c1: 0.0,
                        c2: 0.0,
                        c3: 0.0,
                        y_start: 0.0,
                        y_end: 200.0,
                    },
                    category: LaneCategory::SingleWhiteSolid,
                },
            ],
            lidar_step_m: 0.1,
            lidar_lateral_radius_m: 0.5,
            boxes_per_frame: 0,
            ..Self::flat_demo(seed)
        }
    }

    /// A straight lane plus a U-turn lane, exercising the rotated fit.
    pub fn uturn_demo(seed: u64) -> Self {
        Self {
            frame_count: 4,
            frame_step_m: 2.0,
            lanes: vec![
                LaneDef {
                    path: LanePath::Poly {
                        x0: -6.0,
                        c1: 0.0,
                        c2: 0.0,
                        c3: 0.0,
                        y_start: 0.0,
                        y_end: 120.0,
                    },
                    category: LaneCategory::SingleWhiteSolid,
                },
                LaneDef {
                    // Near-quadrant arc bending hard left: steep enough at
                    // the far end that a direct x(y) fit is hopeless.
                    path: LanePath::Arc {
                        cx: -13.0,
                        cy: 28.0,
                        radius: 15.0,
                        a0: 0.0,
                        a1: 85f64.to_radians(),
                    },
                    category: LaneCategory::DoubleYellowSolid,
                },
            ],
            lidar_step_m: 0.15,
            lidar_lateral_radius_m: 0.6,
            boxes_per_frame: 0,
            ..Self::flat_demo(seed)
        }
    }
}

fn three_parallel_lanes(y_end: f64) -> Vec<LaneDef> {
    [-3.5, 0.0, 3.5]
        .iter()
        .zip([
            LaneCategory::SingleWhiteSolid,
            LaneCategory::DoubleYellowDash,
            LaneCategory::SingleWhiteSolid,
        ])
        .map(|(&x0, category)| LaneDef {
            path: LanePath::Poly { x0, c1: 0.0, c2: 0.0, c3: 0.0, y_start: 0.0, y_end },
            category,
        })
        .collect()
}

/// Generated segment: pipeline inputs plus the exact per-frame truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frames: Vec<SegmentFrame>,
    /// Ego-frame analytic truth per frame, clipped to the working grid.
    pub truth: Vec<Vec<Lane3D>>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Render the scene: per frame, the ego-frame truth lanes, their 2D
/// projections and a LiDAR cloud sampled on the road surface near the
/// lanes.
pub fn synth_scene(spec: &SceneSpec) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut truth = Vec::with_capacity(spec.frame_count);

    for fi in 0..spec.frame_count {
        let pose = Pose2D { tx: 0.0, ty: fi as f64 * spec.frame_step_m, yaw: 0.0 };

        // Ego-frame truth, sampled along each path.
        let mut frame_truth: Vec<Lane3D> = Vec::new();
        for (li, lane) in spec.lanes.iter().enumerate() {
            let n = (lane.path.approx_length() / spec.annotation_step_m).ceil().max(2.0) as usize;
            let mut pts = Vec::new();
            for k in 0..=n {
                let (xw, yw) = lane.path.point_at(k as f64 / n as f64);
                let p = pose.to_ego(GroundPoint::new(xw, yw, spec.grade.z_at(yw)));
                if p.y >= spec.grid.y_min.max(0.5) && p.y <= spec.grid.y_max {
                    pts.push(p);
                }
            }
            if pts.len() >= 2 {
                frame_truth.push(Lane3D {
                    visibility: vec![true; pts.len()],
                    points: pts,
                    category: lane.category,
                    track_id: li as u64,
                    importance_slot: None,
                });
            }
        }

        // 2D annotations from the truth.
        let lanes_2d = frame_truth
            .iter()
            .filter_map(|l| project_lane(l, &spec.camera, spec.img).ok())
            .collect();

        // LiDAR returns on the road surface around each lane.
        let mut points = Vec::new();
        for lane in &spec.lanes {
            let n = (lane.path.approx_length() / spec.lidar_step_m).ceil().max(2.0) as usize;
            for k in 0..=n {
                let (xw, yw) = lane.path.point_at(k as f64 / n as f64);
                let lateral =
                    rng.random_range(-spec.lidar_lateral_radius_m..spec.lidar_lateral_radius_m);
                let (mut x, y) = (xw + lateral, yw);
                let mut z = spec.grade.z_at(y);
                let mut yj = y;
                if spec.lidar_noise_m > 0.0 {
                    z += spec.lidar_noise_m * gaussian(&mut rng);
                    x += 0.5 * spec.lidar_noise_m * gaussian(&mut rng);
                    yj += 0.5 * spec.lidar_noise_m * gaussian(&mut rng);
                }
                let p = pose.to_ego(GroundPoint::new(x, yj, z));
                if p.y >= 0.5 && p.y <= spec.grid.y_max + 10.0 {
                    points.push(p);
                }
            }
        }

        // Vehicles straddling a lane corridor: their elevated returns
        // project near the lane polyline and would corrupt the height
        // interpolation unless the box filter removes them. The box floor
        // sits above the road so surface returns survive.
        let mut object_boxes = Vec::new();
        for b in 0..spec.boxes_per_frame {
            let by = 12.0 + 11.0 * b as f64 + rng.random_range(0.0..2.0);
            let bx = if b % 2 == 0 { 0.3 } else { -0.5 };
            let bbox = ObjectBox { min: [bx - 1.0, by, 0.05], max: [bx + 1.0, by + 4.0, 1.6] };
            for _ in 0..40 {
                points.push(GroundPoint::new(
                    rng.random_range(bbox.min[0]..bbox.max[0]),
                    rng.random_range(bbox.min[1]..bbox.max[1]),
                    rng.random_range(0.2..bbox.max[2]),
                ));
            }
            object_boxes.push(bbox);
        }

        frames.push(SegmentFrame {
            camera: spec.camera,
            lanes_2d,
            lidar: LidarFrame { points, pose, object_boxes },
        });
        truth.push(frame_truth);
    }
    SynthScene { frames, truth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_noiseless_points_lie_on_ground() {
        let mut spec = SceneSpec::flat_demo(3);
        spec.boxes_per_frame = 0;
        let scene = synth_scene(&spec);
        for frame in &scene.frames {
            for p in &frame.lidar.points {
                assert_eq!(p.z, 0.0);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_scenes() {
        let spec = SceneSpec::rolling_demo(11);
        let a = synth_scene(&spec);
        let b = synth_scene(&spec);
        assert_eq!(a, b);
        let c = synth_scene(&SceneSpec::rolling_demo(12));
        assert_ne!(a, c);
    }

    #[test]
    fn lateral_offsets_match_sampling_radius() {
        let mut spec = SceneSpec::flat_demo(5);
        spec.boxes_per_frame = 0;
        spec.frame_count = 1;
        spec.lanes = three_parallel_lanes(200.0)[1..2].to_vec(); // single center lane
        let scene = synth_scene(&spec);
        let pts = &scene.frames[0].lidar.points;
        assert!(pts.len() > 300);
        let r = spec.lidar_lateral_radius_m;
        // Counting oracle: uniform lateral offsets put about half the
        // points within r/2 of the centerline, and none beyond r.
        let within_half = pts.iter().filter(|p| p.x.abs() <= r / 2.0).count();
        let frac = within_half as f64 / pts.len() as f64;
        assert!((frac - 0.5).abs() < 0.08, "frac {frac}");
        assert!(pts.iter().all(|p| p.x.abs() <= r));
    }

    #[test]
    fn truth_respects_grid_clip() {
        let scene = synth_scene(&SceneSpec::flat_demo(7));
        for (fi, frame_truth) in scene.truth.iter().enumerate() {
            for lane in frame_truth {
                for p in &lane.points {
                    assert!(p.y >= 0.5 && p.y <= 100.0, "frame {fi} y {}", p.y);
                }
            }
        }
    }

    #[test]
    fn annotations_project_from_truth() {
        let scene = synth_scene(&SceneSpec::flat_demo(9));
        let frame = &scene.frames[0];
        assert_eq!(frame.lanes_2d.len(), scene.truth[0].len());
        for (l2, l3) in frame.lanes_2d.iter().zip(&scene.truth[0]) {
            assert_eq!(l2.track_id, l3.track_id);
            assert_eq!(l2.category, l3.category);
        }
    }
}
