//! The retargeting objective: object, geometric and boundary losses.

use crate::error::{Error, Result};
use crate::geometry::{
    apply_motion, build_rigid_mesh, check_foldover, map_box, Mesh, MotionField, ObjectBox, Vec2,
};
use crate::image::{crop_len, crop_resample, resize_bilinear, Image, MAX_CHANNELS};
use crate::warp::warp_lenient;
use serde::{Deserialize, Serialize};

/// Weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_o: f64,
    pub lambda_g: f64,
    pub lambda_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_o: 1.0, lambda_g: 0.1, lambda_b: 0.01 }
    }
}

/// One retargeting problem: sizes, mesh resolution, scale, weights, boxes.
#[derive(Debug, Clone)]
pub struct RetargetJob {
    pub in_width: u32,
    pub in_height: u32,
    pub out_width: u32,
    pub out_height: u32,
    /// Vertical cell count U.
    pub rows: usize,
    /// Horizontal cell count V.
    pub cols: usize,
    pub scale_s: f64,
    pub weights: LossWeights,
    /// Object boxes in input pixel space.
    pub boxes: Vec<ObjectBox>,
    /// Divide the geometric loss by the number of active edges and the
    /// boundary loss by the number of boundary vertices.
    pub normalize_losses: bool,
    /// Use squared edge deviations in the geometric loss.
    pub squared_geometric: bool,
}

impl RetargetJob {
    pub fn new(
        in_width: u32,
        in_height: u32,
        out_width: u32,
        out_height: u32,
        rows: usize,
        cols: usize,
        weights: LossWeights,
        boxes: Vec<ObjectBox>,
    ) -> Result<Self> {
        if in_width == 0 || in_height == 0 || out_width == 0 || out_height == 0 {
            return Err(Error::InvalidArgument("job sizes must be positive".into()));
        }
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidArgument(format!("mesh must be at least 2x2 cells, got {rows}x{cols}")));
        }
        let scale_s = auto_scale(in_width, in_height, out_width, out_height);
        Ok(RetargetJob {
            in_width,
            in_height,
            out_width,
            out_height,
            rows,
            cols,
            scale_s,
            weights,
            boxes,
            normalize_losses: true,
            squared_geometric: false,
        })
    }

    /// Overrides the auto-derived scale, e.g. for ablations.
    pub fn with_scale(mut self, s: f64) -> Self {
        self.scale_s = s;
        self
    }

    /// Horizontal slack bound for vertices on the top/bottom boundary.
    pub fn d_u(&self) -> f64 {
        self.out_width as f64 / (2.0 * self.cols as f64)
    }

    /// Vertical slack bound for vertices on the left/right boundary.
    pub fn d_v(&self) -> f64 {
        self.out_height as f64 / (2.0 * self.rows as f64)
    }

    /// Boxes clipped to the input rectangle; logs when clipping changes one.
    pub fn clipped_boxes(&self) -> Vec<ObjectBox> {
        clip_boxes(&self.boxes, self.in_width as f64, self.in_height as f64)
    }
}

/// Uniform object scale implied by the area change.
pub fn auto_scale(in_width: u32, in_height: u32, out_width: u32, out_height: u32) -> f64 {
    ((out_width as f64 * out_height as f64) / (in_width as f64 * in_height as f64)).sqrt()
}

pub(crate) fn clip_boxes(boxes: &[ObjectBox], width: f64, height: f64) -> Vec<ObjectBox> {
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        match b.intersect(0.0, 0.0, width, height) {
            Some(clipped) => {
                if clipped != *b {
                    log::warn!("box '{}' extends outside the {width}x{height} rectangle; clipped", b.id);
                }
                out.push(clipped);
            }
            None => {
                log::warn!("box '{}' lies entirely outside the {width}x{height} rectangle; dropped", b.id);
            }
        }
    }
    out
}

/// Evaluated loss components. When `normalize_losses` is on, `geometric` and
/// `boundary` are the per-edge / per-vertex means that enter `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub object: f64,
    pub geometric: f64,
    pub boundary: f64,
    #[serde(skip)]
    pub foldover: bool,
}

// ---------------------------------------------------------------------------
// Object loss
// ---------------------------------------------------------------------------

/// Motion-independent part of one object term: the downsampled input crop.
#[derive(Debug, Clone)]
pub(crate) struct DCrop {
    pub box_in: ObjectBox,
    /// D(O^I): input crop downsampled isotropically by the job scale.
    pub d: Image,
}

pub(crate) fn build_d_crops(input: &Image, boxes_in: &[ObjectBox], scale_s: f64) -> Result<Vec<DCrop>> {
    if !(scale_s > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale_s}")));
    }
    let mut crops = Vec::with_capacity(boxes_in.len());
    for b in boxes_in {
        let wc = crop_len(b.width());
        let hc = crop_len(b.height());
        let crop = crop_resample(input, b, wc, hc)?;
        let wd = crop_len(wc as f64 * scale_s);
        let hd = crop_len(hc as f64 * scale_s);
        let d = if wd == wc && hd == hc { crop } else { resize_bilinear(&crop, wd, hd)? };
        crops.push(DCrop { box_in: b.clone(), d });
    }
    Ok(crops)
}

/// Geometry of one object comparison: frozen output box, crop grid and the
/// zero-padded common rectangle.
#[derive(Debug, Clone)]
pub(crate) struct CropPlan {
    pub out_box: ObjectBox,
    pub wo: u32,
    pub ho: u32,
    pub cw: u32,
    pub ch: u32,
}

impl CropPlan {
    pub(crate) fn new(d: &DCrop, out_box: &ObjectBox, out_width: u32, out_height: u32) -> CropPlan {
        let clipped = out_box
            .intersect(0.0, 0.0, out_width as f64, out_height as f64)
            .unwrap_or_else(|| {
                // Entirely outside: fall back to a one-pixel window clamped
                // onto the nearest edge so the comparison stays defined.
                let cx = out_box.x0.clamp(0.0, out_width as f64 - 1.0);
                let cy = out_box.y0.clamp(0.0, out_height as f64 - 1.0);
                ObjectBox::new(out_box.id.clone(), cx, cy, cx + 1.0, cy + 1.0).expect("1px box")
            });
        let wo = crop_len(clipped.width());
        let ho = crop_len(clipped.height());
        CropPlan {
            out_box: clipped,
            wo,
            ho,
            cw: wo.max(d.d.width()),
            ch: ho.max(d.d.height()),
        }
    }

    /// Output-space sample position of output-crop pixel (jx, iy).
    #[inline]
    pub(crate) fn position(&self, jx: u32, iy: u32) -> Vec2 {
        Vec2::new(
            self.out_box.x0 + (jx as f64 + 0.5) * self.out_box.width() / self.wo as f64,
            self.out_box.y0 + (iy as f64 + 0.5) * self.out_box.height() / self.ho as f64,
        )
    }
}

/// Mean squared error of one padded crop pair, sampling the warped output
/// through `sample`.
pub(crate) fn crop_mse(
    d: &DCrop,
    plan: &CropPlan,
    channels: usize,
    mut sample: impl FnMut(Vec2, &mut [f64]),
) -> f64 {
    let (wd, hd) = (d.d.width(), d.d.height());
    let mut acc = 0.0;
    let mut px = [0.0; MAX_CHANNELS];
    for iy in 0..plan.ch {
        for jx in 0..plan.cw {
            let have_o = jx < plan.wo && iy < plan.ho;
            if have_o {
                sample(plan.position(jx, iy), &mut px[..channels]);
            }
            for c in 0..channels {
                let dv = if jx < wd && iy < hd { d.d.get(jx, iy, c) } else { 0.0 };
                let ov = if have_o { px[c] } else { 0.0 };
                let e = dv - ov;
                acc += e * e;
            }
        }
    }
    acc / (plan.cw as f64 * plan.ch as f64 * channels as f64)
}

/// Appearance loss between corresponding object crops of the input and the
/// warped output. `boxes_out` must be index-aligned with `boxes_in`.
pub fn object_loss(
    input: &Image,
    warped: &Image,
    boxes_in: &[ObjectBox],
    boxes_out: &[ObjectBox],
    scale_s: f64,
) -> Result<f64> {
    if boxes_in.is_empty() {
        return Err(Error::DegenerateInput("object loss needs at least one box".into()));
    }
    if boxes_in.len() != boxes_out.len() {
        return Err(Error::InvalidArgument("input and output box lists must be index-aligned".into()));
    }
    let boxes_in = clip_boxes(boxes_in, input.width() as f64, input.height() as f64);
    if boxes_in.len() != boxes_out.len() {
        return Err(Error::DegenerateInput("a box was dropped by clipping".into()));
    }
    let d_crops = build_d_crops(input, &boxes_in, scale_s)?;
    let channels = input.channels();
    let mut total = 0.0;
    for (d, out_box) in d_crops.iter().zip(boxes_out) {
        let plan = CropPlan::new(d, out_box, warped.width(), warped.height());
        total += crop_mse(d, &plan, channels, |p, out| warped.sample_bilinear_into(p, out));
    }
    Ok(total / d_crops.len() as f64)
}

// ---------------------------------------------------------------------------
// Geometric loss
// ---------------------------------------------------------------------------

/// A mesh edge by its two vertex indices, (row, col) each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Edge {
    pub a: (usize, usize),
    pub b: (usize, usize),
}

/// Edges whose endpoints both lie inside a single input box (closed
/// containment), horizontal then vertical, in row-major order.
pub(crate) fn beta_edges(mesh_in: &Mesh, boxes: &[ObjectBox]) -> Vec<Edge> {
    let inside = |i: usize, j: usize, k: usize, l: usize| {
        let p = mesh_in.vertex(i, j);
        let q = mesh_in.vertex(k, l);
        boxes.iter().any(|b| b.contains(p) && b.contains(q))
    };
    let mut edges = Vec::new();
    for i in 0..=mesh_in.rows() {
        for j in 0..mesh_in.cols() {
            if inside(i, j, i, j + 1) {
                edges.push(Edge { a: (i, j), b: (i, j + 1) });
            }
        }
    }
    for i in 0..mesh_in.rows() {
        for j in 0..=mesh_in.cols() {
            if inside(i, j, i + 1, j) {
                edges.push(Edge { a: (i, j), b: (i + 1, j) });
            }
        }
    }
    edges
}

pub(crate) fn geometric_loss_terms(
    mesh_in: &Mesh,
    mesh_f: &Mesh,
    edges: &[Edge],
    scale_s: f64,
    squared: bool,
) -> f64 {
    let mut sum = 0.0;
    for e in edges {
        let rigid = mesh_in.vertex(e.b.0, e.b.1) - mesh_in.vertex(e.a.0, e.a.1);
        let deformed = mesh_f.vertex(e.b.0, e.b.1) - mesh_f.vertex(e.a.0, e.a.1);
        let n = (scale_s * rigid - deformed).norm();
        sum += if squared { n * n } else { n };
    }
    sum
}

/// Deviation of in-box deformed edges from an exact scale-by-s transform of
/// their rigid counterparts. Plain sum over edges (no normalization here).
pub fn geometric_loss(mesh_in: &Mesh, mesh_f: &Mesh, boxes_in: &[ObjectBox], scale_s: f64) -> f64 {
    let edges = beta_edges(mesh_in, boxes_in);
    geometric_loss_terms(mesh_in, mesh_f, &edges, scale_s, false)
}

// ---------------------------------------------------------------------------
// Boundary loss
// ---------------------------------------------------------------------------

/// Number of distinct vertices on the mesh boundary.
pub(crate) fn boundary_vertex_count(rows: usize, cols: usize) -> usize {
    2 * (cols + 1) + 2 * (rows + 1) - 4
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Rectangularity penalty: boundary-normal displacements plus tangential
/// displacements beyond the slack bounds. Corner vertices belong to both
/// boundary groups and contribute to both. Plain sum (no normalization).
pub fn boundary_loss(motion: &MotionField, d_u: f64, d_v: f64) -> f64 {
    let rows = motion.rows();
    let cols = motion.cols();
    let mut sum = 0.0;
    // Top and bottom rows.
    for i in [0, rows] {
        for j in 0..=cols {
            let f = motion.get(i, j);
            sum += f.y.abs() + relu(f.x.abs() - d_u);
        }
    }
    // Left and right columns.
    for j in [0, cols] {
        for i in 0..=rows {
            let f = motion.get(i, j);
            sum += f.x.abs() + relu(f.y.abs() - d_v);
        }
    }
    sum
}

// ---------------------------------------------------------------------------
// Total loss
// ---------------------------------------------------------------------------

pub(crate) struct JobMeshes {
    pub mesh_in: Mesh,
    pub mesh_out_rigid: Mesh,
}

pub(crate) fn job_meshes(job: &RetargetJob) -> Result<JobMeshes> {
    Ok(JobMeshes {
        mesh_in: build_rigid_mesh(job.in_width as f64, job.in_height as f64, job.rows, job.cols)?,
        mesh_out_rigid: build_rigid_mesh(job.out_width as f64, job.out_height as f64, job.rows, job.cols)?,
    })
}

pub(crate) struct LossBreakdown {
    pub report: LossReport,
    pub n_beta_edges: usize,
}

pub(crate) fn assemble_report(
    job: &RetargetJob,
    object: f64,
    geometric_raw: f64,
    boundary_raw: f64,
    n_beta_edges: usize,
    foldover: bool,
) -> LossReport {
    let (geometric, boundary) = if job.normalize_losses {
        (
            geometric_raw / n_beta_edges.max(1) as f64,
            boundary_raw / boundary_vertex_count(job.rows, job.cols) as f64,
        )
    } else {
        (geometric_raw, boundary_raw)
    };
    let total = job.weights.lambda_o * object + job.weights.lambda_g * geometric + job.weights.lambda_b * boundary;
    LossReport { total, object, geometric, boundary, foldover }
}

pub(crate) fn total_loss_impl(input: &Image, motion: &MotionField, job: &RetargetJob) -> Result<LossBreakdown> {
    let boxes_in = job.clipped_boxes();
    if boxes_in.is_empty() {
        return Err(Error::DegenerateInput("total loss needs at least one object box".into()));
    }
    let meshes = job_meshes(job)?;
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, motion)?;
    let foldover = !check_foldover(&mesh_f).is_empty();

    // Current-mesh box mapping; the warp below then renders the crops.
    let mut boxes_out = Vec::with_capacity(boxes_in.len());
    for b in &boxes_in {
        boxes_out.push(map_box(&meshes.mesh_in, &mesh_f, b)?);
    }
    let warped = warp_lenient(input, &mesh_f, &meshes.mesh_in, job.out_width, job.out_height)?;
    let object = object_loss(input, &warped.image, &boxes_in, &boxes_out, job.scale_s)?;

    let edges = beta_edges(&meshes.mesh_in, &boxes_in);
    let geometric_raw = geometric_loss_terms(&meshes.mesh_in, &mesh_f, &edges, job.scale_s, job.squared_geometric);
    let boundary_raw = boundary_loss(motion, job.d_u(), job.d_v());

    Ok(LossBreakdown {
        report: assemble_report(job, object, geometric_raw, boundary_raw, edges.len(), foldover),
        n_beta_edges: edges.len(),
    })
}

/// Full objective at a motion field: warps at the job resolution, maps boxes
/// through the current mesh and combines the three weighted losses.
pub fn total_loss(input: &Image, motion: &MotionField, job: &RetargetJob) -> Result<LossReport> {
    Ok(total_loss_impl(input, motion, job)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rescale_mesh;

    fn flat_image(w: u32, h: u32, value: f64) -> Image {
        Image::from_fn(w, h, 1, |_, _| [value, 0.0, 0.0]).unwrap()
    }

    fn textured(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, 3, |x, y| {
            let g = 0.5 + 0.4 * ((x as f64 * 0.11).sin() * (y as f64 * 0.07).cos());
            [g, 1.0 - g, 0.3 + 0.2 * g]
        })
        .unwrap()
    }

    #[test]
    fn object_loss_zero_for_identity() {
        let img = textured(128, 128);
        let boxes = vec![ObjectBox::new("a", 30.0, 30.0, 90.0, 80.0).unwrap()];
        let l = object_loss(&img, &img, &boxes, &boxes, 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn object_loss_constant_crops_match() {
        let img = flat_image(64, 64, 0.5);
        let b_in = vec![ObjectBox::new("a", 10.0, 10.0, 30.0, 30.0).unwrap()];
        let b_out = vec![ObjectBox::new("a", 5.0, 5.0, 15.0, 15.0).unwrap()];
        // s = 0.5: D is 10x10 of 0.5, output crop 10x10 of 0.5.
        let l = object_loss(&img, &img, &b_in, &b_out, 0.5).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn object_loss_padding_penalty_hand_computed() {
        // Input crop constant 1.0 of 20x20, s = 0.5 -> D is 10x10 of ones.
        // Output crop constant 1.0 of 10x8 -> common 10x10, 20 padded pixels
        // of (1-0)^2 -> MSE = 20/100.
        let input = flat_image(40, 40, 1.0);
        let warped = flat_image(40, 40, 1.0);
        let b_in = vec![ObjectBox::new("a", 5.0, 5.0, 25.0, 25.0).unwrap()];
        let b_out = vec![ObjectBox::new("a", 5.0, 5.0, 15.0, 13.0).unwrap()];
        let l = object_loss(&input, &warped, &b_in, &b_out, 0.5).unwrap();
        assert!((l - 0.2).abs() < 1e-12, "got {l}");

        // Brute-force pixel loop over the same padded rectangles.
        let mut acc = 0.0;
        for iy in 0..10 {
            for jx in 0..10 {
                let d = 1.0;
                let o = if jx < 10 && iy < 8 { 1.0 } else { 0.0 };
                acc += (d as f64 - o as f64).powi(2);
            }
        }
        assert!((l - acc / 100.0).abs() < 1e-12);
    }

    #[test]
    fn object_loss_rejects_empty_and_misaligned() {
        let img = flat_image(32, 32, 0.5);
        assert!(object_loss(&img, &img, &[], &[], 1.0).is_err());
        let b = vec![ObjectBox::new("a", 1.0, 1.0, 9.0, 9.0).unwrap()];
        assert!(object_loss(&img, &img, &b, &[], 1.0).is_err());
    }

    #[test]
    fn geometric_loss_zero_at_exact_scale() {
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let s = 0.5f64.sqrt();
        let mesh_f = rescale_mesh(&mesh_in, 224.0 * s, 224.0 * s).unwrap();
        let boxes = vec![ObjectBox::new("a", 28.0, 28.0, 196.0, 196.0).unwrap()];
        let l = geometric_loss(&mesh_in, &mesh_f, &boxes, s);
        assert!(l < 1e-9, "got {l}");
    }

    #[test]
    fn geometric_loss_zero_without_boxes() {
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mesh_f = rescale_mesh(&mesh_in, 112.0, 224.0).unwrap();
        assert_eq!(geometric_loss(&mesh_in, &mesh_f, &[], 0.5f64.sqrt()), 0.0);
    }

    #[test]
    fn geometric_loss_single_edge_arithmetic() {
        // One horizontal in-box edge of rigid length 28, deformed kept at 28:
        // contribution |sqrt(0.5)*28 - 28|.
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mesh_f = mesh_in.clone();
        // Box tightly around the edge from vertex (4,4) to (4,5).
        let boxes = vec![ObjectBox::new("a", 111.9, 111.9, 140.1, 112.1).unwrap()];
        let edges = beta_edges(&mesh_in, &boxes);
        assert_eq!(edges.len(), 1);
        let s = 0.5f64.sqrt();
        let l = geometric_loss(&mesh_in, &mesh_f, &boxes, s);
        let expect = 28.0 * (1.0 - s);
        assert!((l - expect).abs() < 1e-9, "got {l}, expected {expect}");
        assert!((expect - 8.201).abs() < 1e-3);

        // Independent edge-loop accumulation over all edges.
        let mut acc = 0.0;
        for i in 0..=8usize {
            for j in 0..8usize {
                let a = mesh_in.vertex(i, j);
                let b = mesh_in.vertex(i, j + 1);
                if boxes[0].contains(a) && boxes[0].contains(b) {
                    let e = b - a;
                    let e2 = mesh_f.vertex(i, j + 1) - mesh_f.vertex(i, j);
                    acc += (s * e - e2).norm();
                }
            }
        }
        for i in 0..8usize {
            for j in 0..=8usize {
                let a = mesh_in.vertex(i, j);
                let b = mesh_in.vertex(i + 1, j);
                if boxes[0].contains(a) && boxes[0].contains(b) {
                    let e = b - a;
                    let e2 = mesh_f.vertex(i + 1, j) - mesh_f.vertex(i, j);
                    acc += (s * e - e2).norm();
                }
            }
        }
        assert!((l - acc).abs() < 1e-12);
    }

    #[test]
    fn geometric_loss_translation_invariant() {
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let boxes = vec![ObjectBox::new("a", 28.0, 28.0, 140.0, 140.0).unwrap()];
        let mut motion = MotionField::zeros(8, 8);
        for i in 0..=8 {
            for j in 0..=8 {
                motion.set(i, j, Vec2::new(5.0, -3.0));
            }
        }
        let translated = apply_motion(&mesh_in, &motion).unwrap();
        let l0 = geometric_loss(&mesh_in, &mesh_in, &boxes, 0.8);
        let l1 = geometric_loss(&mesh_in, &translated, &boxes, 0.8);
        assert!((l0 - l1).abs() < 1e-9);
    }

    #[test]
    fn shrunk_box_disables_geometric_loss() {
        // A box too small to contain a complete edge gives no active edges.
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mesh_f = rescale_mesh(&mesh_in, 112.0, 224.0).unwrap();
        let boxes = vec![ObjectBox::new("a", 30.0, 30.0, 50.0, 50.0).unwrap()];
        assert!(beta_edges(&mesh_in, &boxes).is_empty());
        assert_eq!(geometric_loss(&mesh_in, &mesh_f, &boxes, 0.5), 0.0);
    }

    #[test]
    fn boundary_loss_examples() {
        let mut motion = MotionField::zeros(8, 8);
        assert_eq!(boundary_loss(&motion, 7.0, 14.0), 0.0);

        motion.set(0, 3, Vec2::new(0.0, 3.0));
        assert!((boundary_loss(&motion, 7.0, 14.0) - 3.0).abs() < 1e-12);

        let mut motion = MotionField::zeros(8, 8);
        motion.set(0, 3, Vec2::new(10.0, 0.0));
        // d_u = 112 / (2*8) = 7 -> relu(10 - 7) = 3.
        assert!((boundary_loss(&motion, 7.0, 14.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_loss_uniform_horizontal_shift() {
        // Uniform f = (t, 0) with |t| <= d_u: the side columns contribute
        // 2*(U+1)*|t|, the top/bottom relu terms stay silent.
        let rows = 8;
        let cols = 8;
        let t = 5.0;
        let mut motion = MotionField::zeros(rows, cols);
        for i in 0..=rows {
            for j in 0..=cols {
                motion.set(i, j, Vec2::new(t, 0.0));
            }
        }
        let l = boundary_loss(&motion, 7.0, 14.0);
        assert!((l - 2.0 * (rows as f64 + 1.0) * t).abs() < 1e-12);
    }

    #[test]
    fn total_loss_identity_is_zero() {
        let img = textured(96, 96);
        let boxes = vec![ObjectBox::new("a", 24.0, 24.0, 72.0, 72.0).unwrap()];
        let job = RetargetJob::new(96, 96, 96, 96, 8, 8, LossWeights::default(), boxes).unwrap();
        assert!((job.scale_s - 1.0).abs() < 1e-12);
        let motion = MotionField::zeros(8, 8);
        let report = total_loss(&img, &motion, &job).unwrap();
        assert!(report.total <= 1e-9, "total = {}", report.total);
        // The identity warp reconstructs sample positions to ~1e-15 px, so
        // the object MSE sits at the squared-noise floor rather than 0.
        assert!(report.object <= 1e-30, "object = {}", report.object);
        assert!(report.geometric < 1e-12);
        assert_eq!(report.boundary, 0.0);
        assert!(!report.foldover);
    }

    #[test]
    fn total_loss_decomposes() {
        let img = textured(96, 96);
        let boxes = vec![ObjectBox::new("a", 24.0, 24.0, 72.0, 72.0).unwrap()];
        let job = RetargetJob::new(96, 96, 48, 96, 8, 8, LossWeights::default(), boxes).unwrap();
        let mut motion = MotionField::zeros(8, 8);
        motion.set(4, 4, Vec2::new(2.0, -1.0));
        motion.set(0, 2, Vec2::new(1.0, 0.5));
        let r = total_loss(&img, &motion, &job).unwrap();
        let recomputed = job.weights.lambda_o * r.object
            + job.weights.lambda_g * r.geometric
            + job.weights.lambda_b * r.boundary;
        assert!((r.total - recomputed).abs() <= 1e-12 * r.total.max(1.0));
        assert!(r.object >= 0.0 && r.geometric >= 0.0 && r.boundary >= 0.0);
    }

    #[test]
    fn pure_width_halving_leaves_geometric_residual() {
        // Halving width scales horizontal edges by 0.5 and vertical ones by
        // 1.0; neither equals s = sqrt(0.5), so the in-box geometric term
        // stays strictly positive. This asymmetry is what drives non-uniform
        // deformation.
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mesh_f = rescale_mesh(&mesh_in, 112.0, 224.0).unwrap();
        let boxes = vec![ObjectBox::new("a", 28.0, 28.0, 196.0, 196.0).unwrap()];
        let l = geometric_loss(&mesh_in, &mesh_f, &boxes, 0.5f64.sqrt());
        assert!(l > 1.0, "expected a clear residual, got {l}");
    }
}
