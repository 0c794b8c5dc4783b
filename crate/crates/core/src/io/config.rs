//! Run configuration: one JSON document with the same conventions as
//! the frame format. Every field has a default, so partial files work.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::eval::MatchConfig;
use crate::geometry::{BevGridSpec, CameraParams, ImageSize};
use crate::gt::GtConfig;

/// Reference training schedule, recorded for completeness; nothing in
/// this crate runs an optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConstants {
    pub optimizer: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainingConstants {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Model-space image size.
    pub image: ImageSize,
    /// Working BEV grid.
    pub grid: BevGridSpec,
    /// Average camera used for anchor projection and demos.
    pub camera: CameraParams,
    pub match3d: MatchConfig,
    pub gt: GtConfig,
    /// 2D metric settings.
    pub culane_iou_thresh: f64,
    pub culane_stroke_px: f64,
    /// Worker threads for per-frame stages (0 = library default).
    pub workers: usize,
    pub training: TrainingConstants,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image: ImageSize::default(),
            grid: BevGridSpec::default(),
            camera: CameraParams::new(1000.0, 1000.0, 240.0, 180.0, 0.05, 1.5)
                .expect("default camera is valid"),
            match3d: MatchConfig::default(),
            gt: GtConfig::default(),
            culane_iou_thresh: 0.5,
            culane_stroke_px: 30.0,
            workers: 0,
            training: TrainingConstants::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| IoError::from_json(&e))?;
        cfg.camera.validate().map_err(|e| IoError::Validation(e.to_string()))?;
        cfg.grid.validate().map_err(|e| IoError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pin_the_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.image.width, 480);
        assert_eq!(cfg.image.height, 360);
        assert_eq!(cfg.grid.width_cells, 208);
        assert_eq!(cfg.grid.height_cells, 108);
        assert_eq!(cfg.grid.x_max - cfg.grid.x_min, 20.0);
        assert_eq!(cfg.grid.y_max - cfg.grid.y_min, 100.0);
        assert_eq!(cfg.match3d.max_dist, 1.5);
        assert_eq!(cfg.match3d.coverage_frac, 0.75);
        assert_eq!(cfg.match3d.near_far_split, 40.0);
        assert_eq!(cfg.gt.radius_px, 8.0);
        assert_eq!(cfg.culane_iou_thresh, 0.5);
        assert_eq!(cfg.culane_stroke_px, 30.0);
        assert_eq!(cfg.training.optimizer, "adam");
        assert_eq!(cfg.training.learning_rate, 2e-4);
        assert_eq!(cfg.training.batch_size, 8);
        assert_eq!(cfg.training.epochs, 100);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, "{\"culane_iou_thresh\": 0.3}\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.culane_iou_thresh, 0.3);
        assert_eq!(cfg.grid.width_cells, 208);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = RunConfig::default();
        std::fs::write(&path, cfg.to_json()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}
