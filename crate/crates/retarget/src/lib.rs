//! Content-aware image retargeting by mesh-warp energy minimization.
//!
//! The engine changes an image's aspect ratio by optimizing a deformed mesh
//! against object-consistency, geometric-preservation and boundary
//! objectives, then backward-warping the input through the mesh pair. It
//! ships the distortion-error quality metric and crop/scale baselines used
//! by the benchmark harness.

pub mod bench;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metric;
pub mod objective;
pub mod optimize;
pub mod pipeline;
pub mod viz;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{
    apply_motion, build_rigid_mesh, check_foldover, locate_in_deformed, locate_in_rigid, map_box,
    map_box_corners, map_point, rescale_mesh, CellCoord, Mesh, MotionField, ObjectBox, Vec2,
};
pub use image::Image;
pub use objective::{
    boundary_loss, geometric_loss, object_loss, total_loss, LossReport, LossWeights, RetargetJob,
};
pub use io::JobConfig;
pub use metric::{baseline_cr, baseline_scl, distortion_error, measure_result, DistortionReport, MappedBox};
pub use optimize::{adam_step, grad_boundary, grad_geometric, grad_object_fd, optimize_motion, OptimConfig, OptimOutcome};
pub use pipeline::{retarget_auto, retarget_enlarge, retarget_reduce, EnlargeMode, RetargetOutput, WarpDirection};
pub use warp::{retarget_warp, WarpOutput};
