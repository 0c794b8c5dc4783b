//! Camera model and ground-plane geometry.
//!
//! Conventions, used everywhere in this crate:
//!
//! * Ego frame: `x` lateral (right), `y` longitudinal (forward), `z` up.
//!   The camera center sits at `(0, 0, height)`.
//! * Image frame: `u` grows right, `v` grows down. Pixel centers sit at
//!   integer coordinates.
//! * The only extrinsic degrees of freedom are pitch (positive = tilted
//!   down toward the ground) and mounting height.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// The back-projected ray never meets the ground plane (pixel at or
    /// above the horizon line).
    #[error("pixel ({u}, {v}) lies at or above the horizon")]
    Horizon { u: f64, v: f64 },
    /// Intrinsic matrix is not invertible.
    #[error("singular camera intrinsics: {0}")]
    SingularCamera(String),
    /// A point with non-positive depth cannot be projected.
    #[error("point has depth {depth} behind the camera")]
    BehindCamera { depth: f64 },
    #[error("invalid camera parameters: {0}")]
    InvalidCamera(String),
    #[error("invalid BEV grid: {0}")]
    InvalidGrid(String),
}

/// A pixel position in the front-view image. May lie outside the image
/// bounds for projected-but-clipped points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A point in the ego frame, `z` measured above the flat ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GroundPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn on_ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }
}

/// Image dimensions in pixels. Defaults to the 480x360 model-input size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageSize {
    fn default() -> Self {
        Self { width: 480, height: 360 }
    }
}

impl ImageSize {
    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= 0.0 && p.u < self.width as f64 && p.v >= 0.0 && p.v < self.height as f64
    }
}

/// Pinhole camera with pitch-only extrinsics.
///
/// Stored flat as `{fx, fy, cx, cy, pitch_rad, height_m}`, matching the
/// frame-annotation serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rotation about the camera's lateral axis, radians, positive = down.
    pub pitch_rad: f64,
    /// Camera center above the ground plane, meters.
    pub height_m: f64,
}

impl CameraParams {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        pitch_rad: f64,
        height_m: f64,
    ) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, pitch_rad, height_m };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy, self.pitch_rad, self.height_m]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(GeometryError::InvalidCamera("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::SingularCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.height_m <= 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "height must be positive, got {}",
                self.height_m
            )));
        }
        if self.pitch_rad.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(GeometryError::InvalidCamera(format!(
                "|pitch| must be below pi/2, got {}",
                self.pitch_rad
            )));
        }
        Ok(())
    }

    /// Intrinsic matrix `K`; last row is (0, 0, 1) by construction.
    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Rotation taking camera axes (x right, y down, z optical) to ego
    /// axes (x right, y forward, z up), including the pitch tilt.
    pub fn rotation_cam_to_ego(&self) -> Matrix3<f64> {
        let (s, c) = self.pitch_rad.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, -s, c, 0.0, -c, -s)
    }

    /// Image row of the vanishing line of the ground plane.
    ///
    /// Pixels strictly below this row back-project onto the ground in
    /// front of the camera; pixels at or above it do not.
    pub fn horizon_row(&self) -> f64 {
        self.cy - self.fy * self.pitch_rad.tan()
    }
}

/// Back-project an image pixel onto the `z = 0` ground plane.
///
/// The ray `d = R * K^-1 * (u, v, 1)` from the camera center at
/// `(0, 0, h)` is intersected with the ground; the scale applied to the
/// ray is `h / (downward component of d)`.
pub fn ipm_pixel_to_ground(p: PixelPoint, cam: &CameraParams) -> Result<GroundPoint, GeometryError> {
    cam.validate()?;
    let dir_cam = Vector3::new((p.u - cam.cx) / cam.fx, (p.v - cam.cy) / cam.fy, 1.0);
    let d = cam.rotation_cam_to_ego() * dir_cam;
    if d.z >= 0.0 {
        return Err(GeometryError::Horizon { u: p.u, v: p.v });
    }
    let t = cam.height_m / -d.z;
    Ok(GroundPoint::new(t * d.x, t * d.y, 0.0))
}

/// Project an ego-frame point (any height) through the pinhole camera.
pub fn project_ground_to_pixel(g: GroundPoint, cam: &CameraParams) -> Result<PixelPoint, GeometryError> {
    cam.validate()?;
    let rel = Vector3::new(g.x, g.y, g.z - cam.height_m);
    let pc = cam.rotation_cam_to_ego().transpose() * rel;
    if pc.z <= 0.0 {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    Ok(PixelPoint::new(
        cam.fx * pc.x / pc.z + cam.cx,
        cam.fy * pc.y / pc.z + cam.cy,
    ))
}

/// Depth (optical-axis distance) of an ego-frame point, without the
/// in-front check. Positive means in front of the camera.
pub fn point_depth(g: GroundPoint, cam: &CameraParams) -> f64 {
    let rel = Vector3::new(g.x, g.y, g.z - cam.height_m);
    (cam.rotation_cam_to_ego().transpose() * rel).z
}

/// Homography `H` with `H * (x, y, 1)^T ~ (u, v, 1)^T` for ground-plane
/// points, equal to the projection path on `z = 0`.
pub fn ground_homography(cam: &CameraParams) -> Result<Matrix3<f64>, GeometryError> {
    cam.validate()?;
    let (s, c) = cam.pitch_rad.sin_cos();
    let h = cam.height_m;
    let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, -s, c * h, 0.0, c, s * h);
    Ok(cam.intrinsic_matrix() * m)
}

/// Extents and resolution of the BEV grid.
///
/// Columns index `x` (lateral), rows index `y` (longitudinal); row 0 is
/// the near edge (`y_min` side). Cell centers sit half a cell in from
/// the extent edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width_cells: usize,
    pub height_cells: usize,
}

impl Default for BevGridSpec {
    /// 20 m lateral by 100 m longitudinal at 208 x 108 cells.
    fn default() -> Self {
        Self { x_min: -10.0, x_max: 10.0, y_min: 0.0, y_max: 100.0, width_cells: 208, height_cells: 108 }
    }
}

impl BevGridSpec {
    pub fn new(
        x_extent: (f64, f64),
        y_extent: (f64, f64),
        width_cells: usize,
        height_cells: usize,
    ) -> Result<Self, GeometryError> {
        let spec = Self {
            x_min: x_extent.0,
            x_max: x_extent.1,
            y_min: y_extent.0,
            y_max: y_extent.1,
            width_cells,
            height_cells,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x_min < self.x_max) {
            return Err(GeometryError::InvalidGrid("x_min must be below x_max".into()));
        }
        if !(0.0 <= self.y_min && self.y_min < self.y_max) {
            return Err(GeometryError::InvalidGrid("need 0 <= y_min < y_max".into()));
        }
        if self.width_cells < 2 || self.height_cells < 2 {
            return Err(GeometryError::InvalidGrid("need at least 2x2 cells".into()));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.x_max - self.x_min) / self.width_cells as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.y_max - self.y_min) / self.height_cells as f64
    }

    /// Metric center of the cell at (col, row).
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_width(),
            self.y_min + (row as f64 + 0.5) * self.cell_height(),
        )
    }

    /// Fractional column coordinate of a metric x (cell centers at integers).
    pub fn col_of_x(&self, x: f64) -> f64 {
        (x - self.x_min) / self.cell_width() - 0.5
    }

    /// Fractional row coordinate of a metric y (cell centers at integers).
    pub fn row_of_y(&self, y: f64) -> f64 {
        (y - self.y_min) / self.cell_height() - 0.5
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// One BEV cell's front-view lookup position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmCell {
    pub u: f64,
    pub v: f64,
    /// False for cells that project behind the camera or above the horizon.
    pub valid: bool,
}

/// Per-cell front-view coordinate table, row-major with row 0 at `y_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpmGrid {
    pub spec: BevGridSpec,
    pub cells: Vec<IpmCell>,
}

impl IpmGrid {
    pub fn cell(&self, col: usize, row: usize) -> IpmCell {
        self.cells[row * self.spec.width_cells + col]
    }

    pub fn valid_fraction(&self) -> f64 {
        let n = self.cells.len();
        if n == 0 {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.valid).count() as f64 / n as f64
    }
}

/// Build the IPM coordinate table mapping every BEV cell center to its
/// front-view pixel. Invalid cells are flagged, never fatal.
pub fn build_ipm_grid(cam: &CameraParams, spec: &BevGridSpec) -> Result<IpmGrid, GeometryError> {
    cam.validate()?;
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.width_cells * spec.height_cells);
    for row in 0..spec.height_cells {
        for col in 0..spec.width_cells {
            let (x, y) = spec.cell_center(col, row);
            match project_ground_to_pixel(GroundPoint::on_ground(x, y), cam) {
                Ok(p) => cells.push(IpmCell { u: p.u, v: p.v, valid: true }),
                Err(_) => cells.push(IpmCell { u: 0.0, v: 0.0, valid: false }),
            }
        }
    }
    Ok(IpmGrid { spec: *spec, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cam() -> CameraParams {
        CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.1, 1.5).unwrap()
    }

    #[test]
    fn principal_point_projects_from_optical_axis() {
        let cam = test_cam();
        // Ground intersection of the optical axis.
        let y = cam.height_m * cam.pitch_rad.cos() / cam.pitch_rad.sin();
        let p = project_ground_to_pixel(GroundPoint::on_ground(0.0, y), &cam).unwrap();
        assert!((p.u - cam.cx).abs() < 1e-9);
        assert!((p.v - cam.cy).abs() < 1e-9);
    }

    #[test]
    fn lateral_symmetry() {
        let cam = test_cam();
        let a = project_ground_to_pixel(GroundPoint::on_ground(-3.0, 25.0), &cam).unwrap();
        let b = project_ground_to_pixel(GroundPoint::on_ground(3.0, 25.0), &cam).unwrap();
        let mid = project_ground_to_pixel(GroundPoint::on_ground(0.0, 25.0), &cam).unwrap();
        assert!((0.5 * (a.u + b.u) - mid.u).abs() < 1e-9);
        assert!((a.v - b.v).abs() < 1e-9);
    }

    #[test]
    fn horizon_pixels_rejected() {
        let cam = test_cam();
        let horizon = cam.horizon_row();
        let above = PixelPoint::new(240.0, horizon - 1.0);
        assert!(matches!(
            ipm_pixel_to_ground(above, &cam),
            Err(GeometryError::Horizon { .. })
        ));
        let below = PixelPoint::new(240.0, horizon + 1.0);
        assert!(ipm_pixel_to_ground(below, &cam).is_ok());
    }

    #[test]
    fn round_trip_ground_points() {
        let cam = test_cam();
        for &(x, y) in &[(0.0, 10.0), (-4.0, 35.0), (6.5, 80.0), (2.0, 5.0)] {
            let g = GroundPoint::on_ground(x, y);
            let p = project_ground_to_pixel(g, &cam).unwrap();
            let back = ipm_pixel_to_ground(p, &cam).unwrap();
            assert!((back.x - g.x).abs() < 1e-9, "x {} vs {}", back.x, g.x);
            assert!((back.y - g.y).abs() < 1e-9, "y {} vs {}", back.y, g.y);
            assert_eq!(back.z, 0.0);
        }
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = test_cam();
        assert!(matches!(
            project_ground_to_pixel(GroundPoint::on_ground(0.0, -5.0), &cam),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn homography_matches_projection() {
        let cam = test_cam();
        let h = ground_homography(&cam).unwrap();
        for &(x, y) in &[(1.0, 12.0), (-7.0, 60.0), (9.0, 95.0)] {
            let hp = h * Vector3::new(x, y, 1.0);
            let proj = project_ground_to_pixel(GroundPoint::on_ground(x, y), &cam).unwrap();
            assert!((hp.x / hp.z - proj.u).abs() < 1e-9);
            assert!((hp.y / hp.z - proj.v).abs() < 1e-9);
        }
    }

    #[test]
    fn homography_invertible() {
        let cam = test_cam();
        let h = ground_homography(&cam).unwrap();
        let hinv = h.try_inverse().expect("ground homography must be invertible");
        let id = h * hinv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_pitch_horizon_is_principal_row() {
        let cam = CameraParams::new(800.0, 820.0, 320.0, 200.0, 0.0, 1.5).unwrap();
        assert_eq!(cam.horizon_row(), cam.cy);
        // Vanishing line via the homography: image of the point at infinity
        // in the forward direction.
        let h = ground_homography(&cam).unwrap();
        let vp = h * Vector3::new(0.0, 1.0, 0.0);
        assert!((vp.y / vp.z - cam.cy).abs() < 1e-9);
    }

    #[test]
    fn grid_cells_round_trip() {
        let cam = test_cam();
        let spec = BevGridSpec::new((-1.0, 1.0), (10.0, 12.0), 2, 2).unwrap();
        let grid = build_ipm_grid(&cam, &spec).unwrap();
        assert_eq!(grid.cells.len(), 4);
        for row in 0..2 {
            for col in 0..2 {
                let cell = grid.cell(col, row);
                assert!(cell.valid);
                let g = ipm_pixel_to_ground(PixelPoint::new(cell.u, cell.v), &cam).unwrap();
                let (x, y) = spec.cell_center(col, row);
                assert!((g.x - x).abs() < 1e-9);
                assert!((g.y - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_camera_params_rejected() {
        assert!(CameraParams::new(0.0, 1000.0, 240.0, 180.0, 0.1, 1.5).is_err());
        assert!(CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.1, -1.0).is_err());
        assert!(CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 1.6, 1.5).is_err());
        assert!(BevGridSpec::new((1.0, -1.0), (0.0, 100.0), 10, 10).is_err());
        assert!(BevGridSpec::new((-1.0, 1.0), (-5.0, 100.0), 10, 10).is_err());
        assert!(BevGridSpec::new((-1.0, 1.0), (0.0, 100.0), 1, 10).is_err());
    }
}
