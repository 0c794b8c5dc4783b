//! Lane representations: ordered point sequences with per-point
//! visibility, the 14-category taxonomy, fixed-position resampling and
//! 3D-to-2D lane projection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project_ground_to_pixel, CameraParams, GroundPoint, ImageSize, PixelPoint,
};

#[derive(Debug, Error, PartialEq)]
pub enum LaneError {
    #[error("lane degenerate: {0}")]
    DegenerateLane(String),
}

/// The 14 lane categories, with stable integer codes 0-13.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneCategory {
    SingleWhiteDash,
    SingleWhiteSolid,
    DoubleWhiteDash,
    DoubleWhiteSolid,
    DoubleWhiteDashSolid,
    DoubleWhiteSolidDash,
    SingleYellowDash,
    SingleYellowSolid,
    DoubleYellowDash,
    DoubleYellowSolid,
    DoubleYellowDashSolid,
    DoubleYellowSolidDash,
    LeftCurbside,
    RightCurbside,
}

impl LaneCategory {
    pub const ALL: [LaneCategory; 14] = [
        LaneCategory::SingleWhiteDash,
        LaneCategory::SingleWhiteSolid,
        LaneCategory::DoubleWhiteDash,
        LaneCategory::DoubleWhiteSolid,
        LaneCategory::DoubleWhiteDashSolid,
        LaneCategory::DoubleWhiteSolidDash,
        LaneCategory::SingleYellowDash,
        LaneCategory::SingleYellowSolid,
        LaneCategory::DoubleYellowDash,
        LaneCategory::DoubleYellowSolid,
        LaneCategory::DoubleYellowDashSolid,
        LaneCategory::DoubleYellowSolidDash,
        LaneCategory::LeftCurbside,
        LaneCategory::RightCurbside,
    ];

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl Serialize for LaneCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for LaneCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        LaneCategory::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("lane category code {code} out of range 0-13")))
    }
}

/// A 3D lane: ego-frame points ordered by increasing `y` once canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane3D {
    pub points: Vec<GroundPoint>,
    pub visibility: Vec<bool>,
    pub category: LaneCategory,
    pub track_id: u64,
    /// Position slot 1-4 relative to ego (left-left .. right-right).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_slot: Option<u8>,
}

/// A 2D lane in the front-view image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane2D {
    pub points: Vec<PixelPoint>,
    pub visibility: Vec<bool>,
    pub category: LaneCategory,
    pub track_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weather {
    Clear,
    PartlyCloud,
    Overcast,
    Rainy,
    Foggy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scene {
    Residential,
    Urban,
    Suburbs,
    Highway,
    ParkingLot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hours {
    Daytime,
    Night,
    DawnDusk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTags {
    pub weather: Weather,
    pub scene: Scene,
    pub hours: Hours,
}

impl Default for SceneTags {
    fn default() -> Self {
        Self { weather: Weather::Clear, scene: Scene::Suburbs, hours: Hours::Daytime }
    }
}

/// Closest-in-path object annotation: importance level 1-4 plus a 2D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipoObject {
    pub level: u8,
    /// (u_min, v_min, u_max, v_max) in pixels.
    pub bbox: [f64; 4],
}

/// One frame's full annotation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub camera: CameraParams,
    pub lanes_3d: Vec<Lane3D>,
    pub lanes_2d: Vec<Lane2D>,
    pub scene_tags: SceneTags,
    pub cipo: Vec<CipoObject>,
    /// Unknown fields preserved for lossless round trips.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl FrameRecord {
    /// Check the invariants that the parser cannot express structurally.
    /// Returns the first violated invariant as a message.
    pub fn validate(&self) -> Result<(), String> {
        self.camera.validate().map_err(|e| e.to_string())?;
        for (i, lane) in self.lanes_3d.iter().enumerate() {
            if lane.points.len() < 2 {
                return Err(format!("lanes_3d[{i}] has fewer than 2 points"));
            }
            if lane.points.len() != lane.visibility.len() {
                return Err(format!("lanes_3d[{i}] visibility length mismatch"));
            }
            if let Some(slot) = lane.importance_slot {
                if !(1..=4).contains(&slot) {
                    return Err(format!("lanes_3d[{i}] importance_slot {slot} outside 1-4"));
                }
            }
        }
        for (i, lane) in self.lanes_2d.iter().enumerate() {
            if lane.points.len() < 2 {
                return Err(format!("lanes_2d[{i}] has fewer than 2 points"));
            }
            if lane.points.len() != lane.visibility.len() {
                return Err(format!("lanes_2d[{i}] visibility length mismatch"));
            }
        }
        for (i, obj) in self.cipo.iter().enumerate() {
            if !(1..=4).contains(&obj.level) {
                return Err(format!("cipo[{i}] level {} outside 1-4", obj.level));
            }
        }
        if self.cipo.iter().filter(|o| o.level == 1).count() > 1 {
            return Err("more than one CIPO level-1 object".into());
        }
        Ok(())
    }
}

/// Result of resampling a 3D lane at fixed longitudinal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled3D {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub vis: Vec<bool>,
}

/// Result of resampling a 2D lane at fixed image rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled2D {
    pub u: Vec<f64>,
    pub vis: Vec<bool>,
}

// Piecewise-linear interpolation of (t, value) samples sorted by t.
// Queries at a vertex return the vertex value exactly; queries beyond
// either end extend the end segment linearly.
fn interp_polyline(ts: &[f64], vals: &[f64], q: f64) -> f64 {
    let n = ts.len();
    debug_assert!(n >= 2);
    // Exact vertex hits first.
    if let Ok(i) = ts.binary_search_by(|t| t.partial_cmp(&q).unwrap()) {
        return vals[i];
    }
    let seg = if q <= ts[0] {
        0
    } else if q >= ts[n - 1] {
        n - 2
    } else {
        match ts.binary_search_by(|t| t.partial_cmp(&q).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    };
    let (t0, t1) = (ts[seg], ts[seg + 1]);
    let (v0, v1) = (vals[seg], vals[seg + 1]);
    if t1 == t0 {
        return v0;
    }
    v0 + (v1 - v0) * (q - t0) / (t1 - t0)
}

// Span [min, max] over parameter values of visible points, if any.
fn visible_span(ts: &[f64], vis: &[bool]) -> Option<(f64, f64)> {
    let mut span: Option<(f64, f64)> = None;
    for (&t, &v) in ts.iter().zip(vis) {
        if v {
            span = Some(match span {
                None => (t, t),
                Some((lo, hi)) => (lo.min(t), hi.max(t)),
            });
        }
    }
    span
}

/// Linearly interpolate lane `x` and `z` at the requested `y` positions.
///
/// A query is visible iff it falls inside the span of the lane's visible
/// points; queries beyond the polyline get end-segment extensions with
/// `vis = false`.
pub fn resample_at_y(lane: &Lane3D, y_positions: &[f64]) -> Result<Resampled3D, LaneError> {
    if lane.points.len() < 2 {
        return Err(LaneError::DegenerateLane(format!(
            "resample needs >= 2 points, got {}",
            lane.points.len()
        )));
    }
    let mut idx: Vec<usize> = (0..lane.points.len()).collect();
    idx.sort_by(|&a, &b| lane.points[a].y.partial_cmp(&lane.points[b].y).unwrap());
    let ys: Vec<f64> = idx.iter().map(|&i| lane.points[i].y).collect();
    let xs: Vec<f64> = idx.iter().map(|&i| lane.points[i].x).collect();
    let zs: Vec<f64> = idx.iter().map(|&i| lane.points[i].z).collect();
    let vis_sorted: Vec<bool> = idx.iter().map(|&i| lane.visibility[i]).collect();
    let span = visible_span(&ys, &vis_sorted);

    let mut out = Resampled3D {
        x: Vec::with_capacity(y_positions.len()),
        z: Vec::with_capacity(y_positions.len()),
        vis: Vec::with_capacity(y_positions.len()),
    };
    for &y in y_positions {
        out.x.push(interp_polyline(&ys, &xs, y));
        out.z.push(interp_polyline(&ys, &zs, y));
        out.vis.push(match span {
            Some((lo, hi)) => y >= lo && y <= hi,
            None => false,
        });
    }
    Ok(out)
}

/// Mirror of [`resample_at_y`] in image space: interpolate `u` as a
/// function of `v`.
pub fn resample_at_v(lane: &Lane2D, v_positions: &[f64]) -> Result<Resampled2D, LaneError> {
    if lane.points.len() < 2 {
        return Err(LaneError::DegenerateLane(format!(
            "resample needs >= 2 points, got {}",
            lane.points.len()
        )));
    }
    let mut idx: Vec<usize> = (0..lane.points.len()).collect();
    idx.sort_by(|&a, &b| lane.points[a].v.partial_cmp(&lane.points[b].v).unwrap());
    let vs: Vec<f64> = idx.iter().map(|&i| lane.points[i].v).collect();
    let us: Vec<f64> = idx.iter().map(|&i| lane.points[i].u).collect();
    let vis_sorted: Vec<bool> = idx.iter().map(|&i| lane.visibility[i]).collect();
    let span = visible_span(&vs, &vis_sorted);

    let mut out = Resampled2D {
        u: Vec::with_capacity(v_positions.len()),
        vis: Vec::with_capacity(v_positions.len()),
    };
    for &v in v_positions {
        out.u.push(interp_polyline(&vs, &us, v));
        out.vis.push(match span {
            Some((lo, hi)) => v >= lo && v <= hi,
            None => false,
        });
    }
    Ok(out)
}

/// Project a 3D lane point-wise into the image. Points behind the camera
/// are dropped; visibility is carried over and AND-ed with the in-image
/// test.
pub fn project_lane(lane: &Lane3D, cam: &CameraParams, img: ImageSize) -> Result<Lane2D, LaneError> {
    let mut points = Vec::with_capacity(lane.points.len());
    let mut visibility = Vec::with_capacity(lane.points.len());
    for (&g, &vis) in lane.points.iter().zip(&lane.visibility) {
        if let Ok(p) = project_ground_to_pixel(g, cam) {
            points.push(p);
            visibility.push(vis && img.contains(p));
        }
    }
    if points.len() < 2 {
        return Err(LaneError::DegenerateLane(format!(
            "only {} points survive projection",
            points.len()
        )));
    }
    Ok(Lane2D { points, visibility, category: lane.category, track_id: lane.track_id })
}

/// Whether lateral position is a single-valued function of `y` for the
/// point set: no 1 m longitudinal bin spans a lateral range wider than
/// lane-scatter scale. U-turn-like point sets fail.
pub fn single_valued_in_y(points: &[GroundPoint]) -> bool {
    if points.len() < 2 {
        return true;
    }
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let mut bins: std::collections::BTreeMap<i64, (f64, f64)> = Default::default();
    for p in points {
        let e = bins.entry((p.y - y0).floor() as i64).or_insert((p.x, p.x));
        e.0 = e.0.min(p.x);
        e.1 = e.1.max(p.x);
    }
    bins.values().all(|&(lo, hi)| hi - lo < 1.5)
}

/// Sort by `y`, merge exact duplicate-`y` points (mean position, OR-ed
/// visibility) and clip to the working `y` range. Lanes that are not a
/// function of `y` in the window (U-turn-like) are rejected; the label
/// generation pipeline handles those earlier via its rotated fit.
pub fn canonicalize(lane: &Lane3D, y_min: f64, y_max: f64) -> Result<Lane3D, LaneError> {
    if lane.points.len() < 2 {
        return Err(LaneError::DegenerateLane("fewer than 2 points".into()));
    }
    let mut idx: Vec<usize> = (0..lane.points.len()).collect();
    idx.sort_by(|&a, &b| lane.points[a].y.partial_cmp(&lane.points[b].y).unwrap());

    let mut points: Vec<GroundPoint> = Vec::new();
    let mut visibility: Vec<bool> = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let y = lane.points[idx[i]].y;
        let mut j = i;
        let (mut sx, mut sz, mut any_vis) = (0.0, 0.0, false);
        while j < idx.len() && lane.points[idx[j]].y == y {
            sx += lane.points[idx[j]].x;
            sz += lane.points[idx[j]].z;
            any_vis |= lane.visibility[idx[j]];
            j += 1;
        }
        let n = (j - i) as f64;
        if (y_min..=y_max).contains(&y) {
            points.push(GroundPoint::new(sx / n, y, sz / n));
            visibility.push(any_vis);
        }
        i = j;
    }
    if points.len() < 2 {
        return Err(LaneError::DegenerateLane(format!(
            "only {} points remain after merge/clip",
            points.len()
        )));
    }
    if !single_valued_in_y(&points) {
        return Err(LaneError::DegenerateLane("lane is not a function of y in the window".into()));
    }
    Ok(Lane3D {
        points,
        visibility,
        category: lane.category,
        track_id: lane.track_id,
        importance_slot: lane.importance_slot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ipm_pixel_to_ground;

    fn straight_lane(x: f64, ys: &[f64]) -> Lane3D {
        Lane3D {
            points: ys.iter().map(|&y| GroundPoint::on_ground(x, y)).collect(),
            visibility: vec![true; ys.len()],
            category: LaneCategory::SingleWhiteDash,
            track_id: 0,
            importance_slot: None,
        }
    }

    #[test]
    fn category_codes_round_trip() {
        for cat in LaneCategory::ALL {
            assert_eq!(LaneCategory::from_code(cat.code()), Some(cat));
            let json = serde_json::to_string(&cat).unwrap();
            let back: LaneCategory = serde_json::from_str(&json).unwrap();
            assert_eq!(back, cat);
        }
        assert!(LaneCategory::from_code(14).is_none());
        assert!(serde_json::from_str::<LaneCategory>("14").is_err());
    }

    #[test]
    fn constant_lane_resamples_flat() {
        let lane = straight_lane(2.0, &[0.0, 50.0, 100.0]);
        let ys: Vec<f64> = (1..=20).map(|k| k as f64 * 5.0).collect();
        let r = resample_at_y(&lane, &ys).unwrap();
        assert!(r.x.iter().all(|&x| x == 2.0));
        assert!(r.z.iter().all(|&z| z == 0.0));
        assert!(r.vis.iter().all(|&v| v));
    }

    #[test]
    fn out_of_span_query_is_invisible() {
        let lane = straight_lane(1.0, &[5.0, 50.0]);
        let r = resample_at_y(&lane, &[80.0]).unwrap();
        assert!(!r.vis[0]);
        // End-segment extension keeps the value defined.
        assert_eq!(r.x[0], 1.0);
    }

    #[test]
    fn piecewise_interpolation_matches_manual_oracle() {
        let lane = Lane3D {
            points: vec![
                GroundPoint::new(0.0, 0.0, 0.0),
                GroundPoint::new(10.0, 10.0, 1.0),
                GroundPoint::new(20.0, 20.0, 1.0),
            ],
            visibility: vec![true; 3],
            category: LaneCategory::SingleWhiteSolid,
            track_id: 1,
            importance_slot: None,
        };
        // Manual segment-wise interpolation on the second segment at y=15:
        // x = 10 + (20-10)*(15-10)/(20-10) = 15, z = 1.
        let r = resample_at_y(&lane, &[15.0]).unwrap();
        assert_eq!(r.x[0], 15.0);
        assert_eq!(r.z[0], 1.0);
    }

    #[test]
    fn resample_exact_on_vertices() {
        let lane = Lane3D {
            points: vec![
                GroundPoint::new(0.3, 5.0, 0.07),
                GroundPoint::new(1.7, 23.0, 0.21),
                GroundPoint::new(2.9, 61.0, 0.33),
            ],
            visibility: vec![true; 3],
            category: LaneCategory::DoubleYellowSolid,
            track_id: 2,
            importance_slot: None,
        };
        let r = resample_at_y(&lane, &[5.0, 23.0, 61.0]).unwrap();
        assert_eq!(r.x, vec![0.3, 1.7, 2.9]);
        assert_eq!(r.z, vec![0.07, 0.21, 0.33]);
    }

    #[test]
    fn resample_v_vertical_line() {
        let lane = Lane2D {
            points: vec![PixelPoint::new(240.0, 350.0), PixelPoint::new(240.0, 100.0)],
            visibility: vec![true, true],
            category: LaneCategory::SingleWhiteDash,
            track_id: 0,
        };
        let r = resample_at_v(&lane, &[150.0, 200.0, 300.0]).unwrap();
        assert!(r.u.iter().all(|&u| u == 240.0));
        assert!(r.vis.iter().all(|&v| v));
    }

    #[test]
    fn resample_v_limited_span() {
        let lane = Lane2D {
            points: vec![PixelPoint::new(100.0, 360.0), PixelPoint::new(150.0, 200.0)],
            visibility: vec![true, true],
            category: LaneCategory::SingleWhiteDash,
            track_id: 0,
        };
        let r = resample_at_v(&lane, &[100.0]).unwrap();
        assert!(!r.vis[0]);
    }

    #[test]
    fn resample_v_segment_oracle() {
        let lane = Lane2D {
            points: vec![
                PixelPoint::new(100.0, 300.0),
                PixelPoint::new(140.0, 200.0),
                PixelPoint::new(200.0, 100.0),
            ],
            visibility: vec![true; 3],
            category: LaneCategory::SingleYellowSolid,
            track_id: 0,
        };
        // Mid-segment at v=150: u = 140 + (200-140)*(150-200)/(100-200) = 170.
        let r = resample_at_v(&lane, &[150.0]).unwrap();
        assert_eq!(r.u[0], 170.0);
    }

    #[test]
    fn axial_lane_projects_to_principal_column() {
        let cam = CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5).unwrap();
        let lane = straight_lane(0.0, &[10.0, 20.0, 40.0, 80.0]);
        let proj = project_lane(&lane, &cam, ImageSize::default()).unwrap();
        for p in &proj.points {
            assert!((p.u - cam.cx).abs() < 1e-9);
        }
    }

    #[test]
    fn project_then_lift_recovers_flat_lane() {
        let cam = CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.08, 1.6).unwrap();
        let lane = Lane3D {
            points: (1..=9)
                .map(|k| GroundPoint::on_ground(0.5 * k as f64 - 2.0, 8.0 * k as f64))
                .collect(),
            visibility: vec![true; 9],
            category: LaneCategory::SingleWhiteSolid,
            track_id: 3,
            importance_slot: None,
        };
        let proj = project_lane(&lane, &cam, ImageSize { width: 480, height: 360 }).unwrap();
        assert_eq!(proj.points.len(), lane.points.len());
        for (p, g) in proj.points.iter().zip(&lane.points) {
            let lifted = ipm_pixel_to_ground(*p, &cam).unwrap();
            assert!((lifted.x - g.x).abs() < 1e-6);
            assert!((lifted.y - g.y).abs() < 1e-6);
        }
    }

    #[test]
    fn behind_camera_points_dropped() {
        let cam = CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5).unwrap();
        let lane = straight_lane(1.0, &[-10.0, -5.0, 10.0]);
        assert!(matches!(
            project_lane(&lane, &cam, ImageSize::default()),
            Err(LaneError::DegenerateLane(_))
        ));
    }

    #[test]
    fn canonicalize_sorted_unchanged() {
        let lane = straight_lane(0.0, &[5.0, 10.0, 20.0]);
        let c = canonicalize(&lane, 0.0, 100.0).unwrap();
        assert_eq!(c, lane);
    }

    #[test]
    fn canonicalize_reverses_reversed() {
        let lane = straight_lane(0.0, &[20.0, 10.0, 5.0]);
        let c = canonicalize(&lane, 0.0, 100.0).unwrap();
        let ys: Vec<f64> = c.points.iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![5.0, 10.0, 20.0]);
    }

    #[test]
    fn canonicalize_merges_duplicates() {
        let mut lane = straight_lane(0.0, &[5.0, 10.0, 20.0]);
        lane.points.push(GroundPoint::new(2.0, 10.0, 0.4));
        lane.visibility.push(false);
        let c = canonicalize(&lane, 0.0, 100.0).unwrap();
        assert_eq!(c.points.len(), 3);
        let merged = c.points[1];
        assert_eq!(merged.x, 1.0);
        assert_eq!(merged.z, 0.2);
        assert!(c.visibility[1]);
    }

    #[test]
    fn canonicalize_clips_and_rejects_degenerate() {
        let lane = straight_lane(0.0, &[5.0, 10.0, 200.0]);
        let c = canonicalize(&lane, 0.0, 100.0).unwrap();
        assert_eq!(c.points.len(), 2);
        let far = straight_lane(0.0, &[150.0, 200.0, 300.0]);
        assert!(canonicalize(&far, 0.0, 100.0).is_err());
    }

    #[test]
    fn canonicalize_rejects_uturn_like_lanes() {
        // A hairpin: two branches several meters apart at the same y.
        let points: Vec<GroundPoint> = (0..=20)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 20.0;
                GroundPoint::on_ground(6.0 * a.cos(), 30.0 + 6.0 * a.sin())
            })
            .collect();
        let lane = Lane3D {
            visibility: vec![true; points.len()],
            points,
            category: LaneCategory::SingleWhiteDash,
            track_id: 0,
            importance_slot: None,
        };
        assert!(matches!(
            canonicalize(&lane, 0.0, 100.0),
            Err(LaneError::DegenerateLane(_))
        ));
        assert!(!single_valued_in_y(&lane.points));
    }

    #[test]
    fn frame_record_validation() {
        let cam = CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.1, 1.5).unwrap();
        let mut rec = FrameRecord {
            camera: cam,
            lanes_3d: vec![straight_lane(0.0, &[5.0, 10.0])],
            lanes_2d: vec![],
            scene_tags: SceneTags::default(),
            cipo: vec![
                CipoObject { level: 1, bbox: [0.0, 0.0, 10.0, 10.0] },
                CipoObject { level: 2, bbox: [5.0, 5.0, 20.0, 20.0] },
            ],
            extra: Default::default(),
        };
        assert!(rec.validate().is_ok());
        rec.cipo.push(CipoObject { level: 1, bbox: [1.0, 1.0, 2.0, 2.0] });
        assert!(rec.validate().unwrap_err().contains("level-1"));
    }
}
