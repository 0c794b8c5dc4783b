//! Monocular 3D lane-detection building blocks, validated end to end on
//! synthetic scenes with known ground truth.
//!
//! The crate covers the full algorithmic stack at desk scale:
//!
//! 1. **geometry** — pinhole camera with pitch-only extrinsics, inverse
//!    perspective mapping onto the ground plane, the ground homography
//!    and the per-cell BEV-to-front-view coordinate table.
//! 2. **lane** — 2D/3D lane polylines with per-point visibility, the
//!    14-category taxonomy and fixed-position resampling.
//! 3. **anchor** / **heads** — the unified BEV/front-view anchor grid,
//!    ground-truth association by minimum average lateral distance,
//!    offset encoding/decoding, and the anchor-conditioned prediction
//!    heads.
//! 4. **tensor** / **transformer** — a small dense-tensor core with BEV
//!    query self-attention and IPM-seeded deformable cross-attention,
//!    plus hand-written backward passes.
//! 5. **gradcheck** — central finite-difference verification of every
//!    differentiable op.
//! 6. **loss** — classification/regression/visibility losses, BEV
//!    segmentation rasterization and the weighted total.
//! 7. **gt** — the LiDAR-based 3D lane label generation pipeline with a
//!    synthetic-scene oracle.
//! 8. **eval** — 3D lane metrics (F-score, X/Z near/far errors, category
//!    accuracy) and the stroke-IoU 2D metric.
//! 9. **io** — frame-annotation files, the tensor file format and the
//!    run configuration.

pub mod anchor;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod gt;
pub mod heads;
pub mod io;
pub mod lane;
pub mod loss;
pub mod tensor;
pub mod transformer;

pub use geometry::{BevGridSpec, CameraParams, GroundPoint, ImageSize, PixelPoint};
pub use lane::{FrameRecord, Lane2D, Lane3D, LaneCategory};
