//! Camera models, distortion images, hybrid reprojection losses, and
//! evaluation metrics for human mesh recovery under perspective distortion.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: perspective and weak-perspective cameras, focal and
//!   translation conversions, crop transforms.
//! * [`body`]: a procedural articulated body with parts, UVs and a joint
//!   regressor.
//! * [`raster`]: a z-buffer rasterizer producing depth, IUV, part and
//!   distortion images.
//! * [`loss`]: reprojection and dense losses with analytic gradients.
//! * [`metrics`]: MPJPE, PA-MPJPE, PVE, mIoU and protocol buckets.
//! * [`synth`]: random camera sampling, dataset generation, dolly-zoom analysis.
//! * [`fit`]: optimization-based recovery of depth, weak camera and joints.

pub mod body;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod raster;
pub mod synth;
