//! End-to-end retargeting: optimize at the working resolution, upsample the
//! deformed mesh, warp the full-resolution input.

pub use crate::io::EnlargeMode;

use crate::error::{Error, Result};
use crate::geometry::{
    apply_motion, build_rigid_mesh, check_foldover, rescale_mesh, Mesh, MotionField, ObjectBox,
};
use crate::image::{resize_bilinear, Image};
use crate::io::{warn_oversized_boxes, JobConfig};
use crate::objective::{clip_boxes, LossReport, RetargetJob};
use crate::optimize::{optimize_motion, TraceEntry};
use crate::warp::{retarget_warp, warp_lenient};

/// Which warp the pipeline executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    /// Output pixels located in the deformed output-space mesh.
    Reduce,
    /// Output pixels located in the rigid output mesh, evaluated in the
    /// deformed input-sized mesh.
    EnlargeInvert,
    /// Enlargement optimized directly at the output size.
    EnlargeDirect,
}

/// Full pipeline result.
#[derive(Debug, Clone)]
pub struct RetargetOutput {
    pub image: Image,
    /// Full-resolution deformed mesh: covers the output rectangle for
    /// `Reduce` and `EnlargeDirect`, the input rectangle for
    /// `EnlargeInvert`.
    pub mesh: Mesh,
    /// Raw working-resolution motion field.
    pub motion: MotionField,
    /// Loss at the returned iterate, working resolution.
    pub report: LossReport,
    pub trace: Vec<TraceEntry>,
    pub direction: WarpDirection,
    /// Output pixels no mesh cell covered (black in the image).
    pub uncovered: u64,
    /// The input had no usable boxes; plain scaling was used instead.
    pub scl_fallback: bool,
}

fn empty_report() -> LossReport {
    LossReport { total: 0.0, object: 0.0, geometric: 0.0, boundary: 0.0, foldover: false }
}

struct WorkingProblem {
    image: Image,
    job: RetargetJob,
}

/// Downsamples a problem so its long input side is at most the working
/// resolution; never upscales.
fn working_problem(
    input: &Image,
    boxes: &[ObjectBox],
    out_width: u32,
    out_height: u32,
    config: &JobConfig,
) -> Result<WorkingProblem> {
    let (in_w, in_h) = (input.width(), input.height());
    let eta = (config.working_res as f64 / in_w.max(in_h) as f64).min(1.0);
    let work_in_w = ((in_w as f64 * eta).round() as u32).max(1);
    let work_in_h = ((in_h as f64 * eta).round() as u32).max(1);
    let work_out_w = ((out_width as f64 * eta).round() as u32).max(1);
    let work_out_h = ((out_height as f64 * eta).round() as u32).max(1);

    let image = if (work_in_w, work_in_h) == (in_w, in_h) {
        input.clone()
    } else {
        resize_bilinear(input, work_in_w, work_in_h)?
    };
    let kx = work_in_w as f64 / in_w as f64;
    let ky = work_in_h as f64 / in_h as f64;
    let work_boxes = clip_boxes(
        &boxes.iter().map(|b| b.scaled(kx, ky)).collect::<Vec<_>>(),
        work_in_w as f64,
        work_in_h as f64,
    );

    let mut job = RetargetJob::new(
        work_in_w,
        work_in_h,
        work_out_w,
        work_out_h,
        config.rows,
        config.cols,
        config.weights,
        work_boxes,
    )?;
    job.normalize_losses = config.normalize_losses;
    job.squared_geometric = config.squared_geometric;
    // Auto scale from the true sizes, not the rounded working ones.
    job.scale_s = config.scale_s.unwrap_or_else(|| {
        crate::objective::auto_scale(in_w, in_h, out_width, out_height)
    });
    Ok(WorkingProblem { image, job })
}

fn scl_fallback(input: &Image, out_width: u32, out_height: u32, config: &JobConfig, direction: WarpDirection) -> Result<RetargetOutput> {
    log::warn!("no usable object boxes; falling back to plain scaling");
    let image = resize_bilinear(input, out_width, out_height)?;
    let mesh = build_rigid_mesh(out_width as f64, out_height as f64, config.rows, config.cols)?;
    Ok(RetargetOutput {
        image,
        mesh,
        motion: MotionField::zeros(config.rows, config.cols),
        report: empty_report(),
        trace: Vec::new(),
        direction,
        uncovered: 0,
        scl_fallback: true,
    })
}

/// Content-aware reduction: optimizes the motion field at the working
/// resolution, upsamples the deformed mesh to the true output size and
/// backward-warps the full-resolution input.
pub fn retarget_reduce(
    input: &Image,
    boxes: &[ObjectBox],
    out_width: u32,
    out_height: u32,
    config: &JobConfig,
) -> Result<RetargetOutput> {
    let (in_w, in_h) = (input.width(), input.height());
    if out_width == 0 || out_height == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    if out_width > in_w || out_height > in_h {
        return Err(Error::InvalidArgument(format!(
            "reduction target {out_width}x{out_height} exceeds input {in_w}x{in_h}"
        )));
    }
    warn_oversized_boxes(boxes, in_w, in_h);
    let usable = clip_boxes(boxes, in_w as f64, in_h as f64);
    if usable.is_empty() {
        return scl_fallback(input, out_width, out_height, config, WarpDirection::Reduce);
    }

    let started = std::time::Instant::now();
    let problem = working_problem(input, &usable, out_width, out_height, config)?;
    let outcome = optimize_motion(&problem.image, &problem.job, &config.optimizer)?;

    let mesh_out_work = build_rigid_mesh(
        problem.job.out_width as f64,
        problem.job.out_height as f64,
        config.rows,
        config.cols,
    )?;
    let mesh_f_work = apply_motion(&mesh_out_work, &outcome.motion)?;
    if outcome.foldover_flagged {
        return Err(Error::FoldOver(check_foldover(&mesh_f_work)));
    }
    let mesh_full = rescale_mesh(&mesh_f_work, out_width as f64, out_height as f64)?;
    let mesh_in_full = build_rigid_mesh(in_w as f64, in_h as f64, config.rows, config.cols)?;
    let warped = retarget_warp(input, &mesh_in_full, &mesh_full, out_width, out_height)?;
    log::info!(
        "reduce {}x{} -> {}x{}: {} iterations, {:.3}s",
        in_w,
        in_h,
        out_width,
        out_height,
        outcome.iterations,
        started.elapsed().as_secs_f64()
    );

    Ok(RetargetOutput {
        image: warped.image,
        mesh: mesh_full,
        motion: outcome.motion,
        report: outcome.report,
        trace: outcome.trace,
        direction: WarpDirection::Reduce,
        uncovered: warped.uncovered,
        scl_fallback: false,
    })
}

/// Content-aware enlargement. The `Invert` mode optimizes the reduction from
/// the virtual enlarged image back to the input size, rescales the deformed
/// mesh onto the input and warps with the mesh roles exchanged; `Direct`
/// optimizes the enlargement objective as-is.
pub fn retarget_enlarge(
    input: &Image,
    boxes: &[ObjectBox],
    out_width: u32,
    out_height: u32,
    config: &JobConfig,
) -> Result<RetargetOutput> {
    let (in_w, in_h) = (input.width(), input.height());
    if out_width < in_w && out_height < in_h {
        return Err(Error::InvalidArgument("enlargement target must exceed the input in the resized dimension".into()));
    }
    if out_width == in_w && out_height == in_h {
        return Err(Error::InvalidArgument("enlargement target equals the input size".into()));
    }
    warn_oversized_boxes(boxes, in_w, in_h);
    let usable = clip_boxes(boxes, in_w as f64, in_h as f64);
    match config.enlarge_mode {
        EnlargeMode::Invert => {
            if out_width < in_w || out_height < in_h {
                return Err(Error::Unsupported(
                    "mixed reduce/enlarge targets are not supported by the inverted path; run two passes".into(),
                ));
            }
            if usable.is_empty() {
                return scl_fallback(input, out_width, out_height, config, WarpDirection::EnlargeInvert);
            }
            let started = std::time::Instant::now();
            // The virtual large image: the input stretched to the target
            // size; reducing it back to the input size is the problem the
            // optimizer sees.
            let virtual_large = resize_bilinear(input, out_width, out_height)?;
            let virtual_boxes: Vec<ObjectBox> = usable
                .iter()
                .map(|b| b.scaled(out_width as f64 / in_w as f64, out_height as f64 / in_h as f64))
                .collect();
            let problem = working_problem(&virtual_large, &virtual_boxes, in_w, in_h, config)?;
            let outcome = optimize_motion(&problem.image, &problem.job, &config.optimizer)?;

            let mesh_out_work = build_rigid_mesh(
                problem.job.out_width as f64,
                problem.job.out_height as f64,
                config.rows,
                config.cols,
            )?;
            let mesh_f_work = apply_motion(&mesh_out_work, &outcome.motion)?;
            if outcome.foldover_flagged {
                return Err(Error::FoldOver(check_foldover(&mesh_f_work)));
            }
            // M_f resized onto the input; the warp locates output pixels in
            // the rigid output mesh and evaluates them here.
            let mesh_f_input = rescale_mesh(&mesh_f_work, in_w as f64, in_h as f64)?;
            let mesh_out_full = build_rigid_mesh(out_width as f64, out_height as f64, config.rows, config.cols)?;
            let warped = warp_lenient(input, &mesh_out_full, &mesh_f_input, out_width, out_height)?;
            log::info!(
                "enlarge {}x{} -> {}x{} (invert): {} iterations, {:.3}s",
                in_w,
                in_h,
                out_width,
                out_height,
                outcome.iterations,
                started.elapsed().as_secs_f64()
            );
            Ok(RetargetOutput {
                image: warped.image,
                mesh: mesh_f_input,
                motion: outcome.motion,
                report: outcome.report,
                trace: outcome.trace,
                direction: WarpDirection::EnlargeInvert,
                uncovered: warped.uncovered,
                scl_fallback: false,
            })
        }
        EnlargeMode::Direct => {
            if usable.is_empty() {
                return scl_fallback(input, out_width, out_height, config, WarpDirection::EnlargeDirect);
            }
            let started = std::time::Instant::now();
            let problem = working_problem(input, &usable, out_width, out_height, config)?;
            let outcome = optimize_motion(&problem.image, &problem.job, &config.optimizer)?;
            let mesh_out_work = build_rigid_mesh(
                problem.job.out_width as f64,
                problem.job.out_height as f64,
                config.rows,
                config.cols,
            )?;
            let mesh_f_work = apply_motion(&mesh_out_work, &outcome.motion)?;
            if outcome.foldover_flagged {
                return Err(Error::FoldOver(check_foldover(&mesh_f_work)));
            }
            let mesh_full = rescale_mesh(&mesh_f_work, out_width as f64, out_height as f64)?;
            let mesh_in_full = build_rigid_mesh(in_w as f64, in_h as f64, config.rows, config.cols)?;
            let warped = retarget_warp(input, &mesh_in_full, &mesh_full, out_width, out_height)?;
            log::info!(
                "enlarge {}x{} -> {}x{} (direct): {} iterations, {:.3}s",
                in_w,
                in_h,
                out_width,
                out_height,
                outcome.iterations,
                started.elapsed().as_secs_f64()
            );
            Ok(RetargetOutput {
                image: warped.image,
                mesh: mesh_full,
                motion: outcome.motion,
                report: outcome.report,
                trace: outcome.trace,
                direction: WarpDirection::EnlargeDirect,
                uncovered: warped.uncovered,
                scl_fallback: false,
            })
        }
    }
}

/// Dispatches to reduction or enlargement by comparing target and input
/// sizes.
pub fn retarget_auto(
    input: &Image,
    boxes: &[ObjectBox],
    out_width: u32,
    out_height: u32,
    config: &JobConfig,
) -> Result<RetargetOutput> {
    let (in_w, in_h) = (input.width(), input.height());
    if out_width <= in_w && out_height <= in_h {
        retarget_reduce(input, boxes, out_width, out_height, config)
    } else {
        retarget_enlarge(input, boxes, out_width, out_height, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::optimize::OptimConfig;

    fn quick_config(max_iters: usize) -> JobConfig {
        JobConfig {
            optimizer: OptimConfig { max_iters, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn identity_target_reproduces_input() {
        let f = &fixtures::suite()[0];
        let out = retarget_reduce(&f.image, &f.boxes, 224, 224, &quick_config(60)).unwrap();
        assert_eq!(out.image.width(), 224);
        assert!(f.image.max_abs_diff(&out.image) < 1e-3);
        assert_eq!(out.uncovered, 0);
        assert!(!out.scl_fallback);
    }

    #[test]
    fn empty_boxes_degrade_to_scaling() {
        let img = fixtures::textured_background(200, 150, 21);
        let out = retarget_reduce(&img, &[], 100, 150, &quick_config(50)).unwrap();
        assert!(out.scl_fallback);
        let scl = resize_bilinear(&img, 100, 150).unwrap();
        assert!(out.image.max_abs_diff(&scl) <= 1e-12);
    }

    #[test]
    fn reduce_rejects_larger_target() {
        let img = fixtures::textured_background(100, 100, 1);
        assert!(retarget_reduce(&img, &[], 150, 100, &quick_config(10)).is_err());
    }

    #[test]
    fn enlarge_zero_motion_equals_upscale() {
        // With no iterations the deformed mesh stays rigid and the inverted
        // warp reduces to plain bilinear upscaling.
        let f = &fixtures::suite()[1];
        let out = retarget_enlarge(&f.image, &f.boxes, 280, 224, &quick_config(0)).unwrap();
        let up = resize_bilinear(&f.image, 280, 224).unwrap();
        assert!(out.image.max_abs_diff(&up) <= 1e-6);
        assert_eq!(out.direction, WarpDirection::EnlargeInvert);
        assert_eq!(out.uncovered, 0);
        // The returned mesh covers the input rectangle.
        assert!((out.mesh.width() - 224.0).abs() < 1e-9);
    }

    #[test]
    fn enlarge_then_reduce_round_trip_on_smooth_image() {
        let img = fixtures::smooth_image(160, 120);
        let cfg = quick_config(0);
        let big = retarget_enlarge(&img, &[], 320, 120, &cfg).unwrap();
        let back = retarget_reduce(&big.image, &[], 160, 120, &cfg).unwrap();
        let diff = img.mean_abs_diff(&back.image);
        assert!(diff < 0.02, "round-trip mean abs diff {diff}");
    }

    #[test]
    fn reduce_runs_on_real_aspect() {
        let f = &fixtures::suite()[2];
        let out = retarget_reduce(&f.image, &f.boxes, 112, 224, &quick_config(40)).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (112, 224));
        assert!(!out.report.foldover);
        assert!(out.trace.len() > 1);
        // Boundary loss keeps the mesh close to the output rectangle.
        assert!(out.uncovered < (112 * 224) / 20, "uncovered {}", out.uncovered);
    }

    #[test]
    fn auto_dispatch() {
        let f = &fixtures::suite()[3];
        let cfg = quick_config(5);
        let r = retarget_auto(&f.image, &f.boxes, 112, 224, &cfg).unwrap();
        assert_eq!(r.direction, WarpDirection::Reduce);
        let e = retarget_auto(&f.image, &f.boxes, 280, 224, &cfg).unwrap();
        assert_eq!(e.direction, WarpDirection::EnlargeInvert);
    }

    #[test]
    fn direct_enlarge_mode_runs() {
        let f = &fixtures::suite()[4];
        let mut cfg = quick_config(8);
        cfg.enlarge_mode = EnlargeMode::Direct;
        let out = retarget_enlarge(&f.image, &f.boxes, 280, 224, &cfg).unwrap();
        assert_eq!(out.direction, WarpDirection::EnlargeDirect);
        assert_eq!((out.image.width(), out.image.height()), (280, 224));
    }
}
