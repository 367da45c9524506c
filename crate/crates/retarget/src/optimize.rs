//! Motion-field optimization: analytic gradients for the geometric and
//! boundary losses, central finite differences for the object loss, Adam
//! updates and convergence control.

use crate::error::{Error, Result};
use crate::geometry::{apply_motion, check_foldover, map_box, Mesh, MotionField, ObjectBox, Vec2};
use crate::image::{Image, MAX_CHANNELS};
use crate::objective::{
    assemble_report, beta_edges, boundary_loss, boundary_vertex_count, build_d_crops, crop_mse,
    geometric_loss_terms, job_meshes, CropPlan, DCrop, JobMeshes, LossReport, RetargetJob,
};
use crate::warp::WarpKernel;
use serde::{Deserialize, Serialize};

/// Object-loss values at or below this are treated as the exact global
/// minimum: the loss cannot go lower, so the gradient is zero by definition.
/// The identity warp leaves squared reconstruction noise of ~1e-32.
const OBJECT_LOSS_FLOOR: f64 = 1e-24;

/// Edge terms shorter than this contribute a zero subgradient.
const GEOM_SUBGRADIENT_EPS: f64 = 1e-12;

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Initial step size in pixels per unit gradient.
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor per iteration.
    pub decay: f64,
    pub max_iters: usize,
    /// Stop when the relative total-loss improvement over a 10-iteration
    /// window falls below this.
    pub tolerance: f64,
    /// Central-difference step (pixels) for the object-loss gradient.
    pub fd_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Carried into harness runs for fixture generation; the optimizer
    /// itself is deterministic and draws no random numbers.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.5,
            decay: 0.995,
            max_iters: 500,
            tolerance: 1e-5,
            fd_step: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidArgument("decay must be in (0, 1]".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidArgument("fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the optimization trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub total: f64,
    pub object: f64,
    pub geometric: f64,
    pub boundary: f64,
}

impl TraceEntry {
    fn from_report(iter: usize, r: &LossReport) -> Self {
        TraceEntry { iter, total: r.total, object: r.object, geometric: r.geometric, boundary: r.boundary }
    }
}

/// Result of [`optimize_motion`]: the best-loss iterate, not the last.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub motion: MotionField,
    pub report: LossReport,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    /// A fold-over triggered the halved-learning-rate restart.
    pub restarted: bool,
    /// The restart still ended with folded cells.
    pub foldover_flagged: bool,
}

// ---------------------------------------------------------------------------
// Analytic gradients
// ---------------------------------------------------------------------------

fn geometric_divisor(job: &RetargetJob, n_edges: usize) -> f64 {
    if job.normalize_losses {
        n_edges.max(1) as f64
    } else {
        1.0
    }
}

fn boundary_divisor(job: &RetargetJob) -> f64 {
    if job.normalize_losses {
        boundary_vertex_count(job.rows, job.cols) as f64
    } else {
        1.0
    }
}

/// Exact gradient of the geometric component (as it enters the loss report)
/// with respect to every vertex displacement.
pub fn grad_geometric(mesh_in: &Mesh, motion: &MotionField, job: &RetargetJob) -> Result<MotionField> {
    let boxes = job.clipped_boxes();
    let mut grad = MotionField::zeros(job.rows, job.cols);
    let edges = beta_edges(mesh_in, &boxes);
    if edges.is_empty() {
        return Ok(grad);
    }
    let meshes = job_meshes(job)?;
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, motion)?;
    let inv = 1.0 / geometric_divisor(job, edges.len());
    for e in &edges {
        let rigid = mesh_in.vertex(e.b.0, e.b.1) - mesh_in.vertex(e.a.0, e.a.1);
        let deformed = mesh_f.vertex(e.b.0, e.b.1) - mesh_f.vertex(e.a.0, e.a.1);
        let diff = deformed - job.scale_s * rigid;
        let g = if job.squared_geometric {
            2.0 * diff
        } else {
            let n = diff.norm();
            if n < GEOM_SUBGRADIENT_EPS {
                continue;
            }
            diff * (1.0 / n)
        };
        let gb = grad.get(e.b.0, e.b.1) + g * inv;
        grad.set(e.b.0, e.b.1, gb);
        let ga = grad.get(e.a.0, e.a.1) - g * inv;
        grad.set(e.a.0, e.a.1, ga);
    }
    Ok(grad)
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic subgradient of the boundary component: d|f|/df = sign(f) with 0
/// at 0, and the relu terms switch on strictly past the slack bound.
pub fn grad_boundary(motion: &MotionField, job: &RetargetJob) -> MotionField {
    let rows = motion.rows();
    let cols = motion.cols();
    let d_u = job.d_u();
    let d_v = job.d_v();
    let inv = 1.0 / boundary_divisor(job);
    let mut grad = MotionField::zeros(rows, cols);
    for i in [0, rows] {
        for j in 0..=cols {
            let f = motion.get(i, j);
            let mut g = grad.get(i, j);
            g.y += sign0(f.y) * inv;
            if f.x.abs() > d_u {
                g.x += sign0(f.x) * inv;
            }
            grad.set(i, j, g);
        }
    }
    for j in [0, cols] {
        for i in 0..=rows {
            let f = motion.get(i, j);
            let mut g = grad.get(i, j);
            g.x += sign0(f.x) * inv;
            if f.y.abs() > d_v {
                g.y += sign0(f.y) * inv;
            }
            grad.set(i, j, g);
        }
    }
    grad
}

/// Weighted geometric-plus-boundary objective, matching the report fields;
/// the scalar that the analytic gradients differentiate.
pub(crate) fn gb_objective(mesh_in: &Mesh, mesh_out_rigid: &Mesh, motion: &MotionField, job: &RetargetJob) -> Result<f64> {
    let boxes = job.clipped_boxes();
    let edges = beta_edges(mesh_in, &boxes);
    let mesh_f = apply_motion(mesh_out_rigid, motion)?;
    let geometric = geometric_loss_terms(mesh_in, &mesh_f, &edges, job.scale_s, job.squared_geometric)
        / geometric_divisor(job, edges.len());
    let boundary = boundary_loss(motion, job.d_u(), job.d_v()) / boundary_divisor(job);
    Ok(job.weights.lambda_g * geometric + job.weights.lambda_b * boundary)
}

// ---------------------------------------------------------------------------
// Object-loss gradient via central finite differences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Aabb {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Aabb {
    fn inflate(&self, m: f64) -> Aabb {
        Aabb { x0: self.x0 - m, y0: self.y0 - m, x1: self.x1 + m, y1: self.y1 + m }
    }

    fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    fn overlaps_box(&self, b: &ObjectBox) -> bool {
        b.overlaps_rect(self.x0, self.y0, self.x1, self.y1)
    }
}

/// Union AABB of the cells incident to vertex (vi, vj).
fn incident_aabb(mesh: &Mesh, vi: usize, vj: usize) -> Aabb {
    let mut out = Aabb { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY };
    let r0 = vi.saturating_sub(1);
    let c0 = vj.saturating_sub(1);
    for r in r0..=vi.min(mesh.rows() - 1) {
        for c in c0..=vj.min(mesh.cols() - 1) {
            let (min, max) = mesh.cell_aabb(r, c);
            out.x0 = out.x0.min(min.x);
            out.y0 = out.y0.min(min.y);
            out.x1 = out.x1.max(max.x);
            out.y1 = out.y1.max(max.y);
        }
    }
    out
}

/// Pixel-index support of a clamped bilinear sample at `p`.
fn sample_support(p: Vec2, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let cx = p.x.clamp(0.5, width as f64 - 0.5) - 0.5;
    let cy = p.y.clamp(0.5, height as f64 - 0.5) - 0.5;
    let x0 = cx.floor() as u32;
    let y0 = cy.floor() as u32;
    (x0, (x0 + 1).min(width - 1), y0, (y0 + 1).min(height - 1))
}

struct ObjectEvalCtx<'a> {
    input: &'a Image,
    mesh_in: &'a Mesh,
    d_crops: &'a [DCrop],
    plans: &'a [CropPlan],
    out_width: u32,
    out_height: u32,
}

impl<'a> ObjectEvalCtx<'a> {
    /// Warps the minimal pixel block supporting the given crop positions and
    /// returns it with its offset.
    fn warp_block(&self, mesh_f: &Mesh, positions: &[Vec2]) -> Result<Option<(Image, u32, u32)>> {
        if positions.is_empty() {
            return Ok(None);
        }
        let mut bx0 = u32::MAX;
        let mut bx1 = 0u32;
        let mut by0 = u32::MAX;
        let mut by1 = 0u32;
        for &p in positions {
            let (x0, x1, y0, y1) = sample_support(p, self.out_width, self.out_height);
            bx0 = bx0.min(x0);
            bx1 = bx1.max(x1);
            by0 = by0.min(y0);
            by1 = by1.max(y1);
        }
        let w = bx1 - bx0 + 1;
        let h = by1 - by0 + 1;
        let mut block = Image::new(w, h, self.input.channels())?;
        let kernel = WarpKernel::new(self.input, mesh_f, self.mesh_in)?;
        kernel.warp_rect(bx0, by0, w, h, &mut block, 0, 0);
        Ok(Some((block, bx0, by0)))
    }

    /// Full object loss at a deformed mesh, warping only the crop supports.
    fn eval(&self, mesh_f: &Mesh) -> Result<f64> {
        let channels = self.input.channels();
        let mut total = 0.0;
        for (d, plan) in self.d_crops.iter().zip(self.plans) {
            let mut positions = Vec::with_capacity((plan.wo * plan.ho) as usize);
            for iy in 0..plan.ho {
                for jx in 0..plan.wo {
                    positions.push(plan.position(jx, iy));
                }
            }
            let Some((block, ox, oy)) = self.warp_block(mesh_f, &positions)? else {
                continue;
            };
            total += crop_mse(d, plan, channels, |p, out| {
                block.sample_bilinear_into(Vec2::new(p.x - ox as f64, p.y - oy as f64), out)
            });
        }
        Ok(total / self.d_crops.len() as f64)
    }

    /// Central-difference contribution of one perturbed component, summing
    /// squared-error deltas only over crop pixels inside `affected`.
    fn fd_delta(&self, mesh_plus: &Mesh, mesh_minus: &Mesh, affected: &Aabb) -> Result<f64> {
        let channels = self.input.channels();
        let mut delta = 0.0;
        let mut pp = [0.0; MAX_CHANNELS];
        let mut pm = [0.0; MAX_CHANNELS];
        for (d, plan) in self.d_crops.iter().zip(self.plans) {
            if !affected.overlaps_box(&plan.out_box) {
                continue;
            }
            let mut positions = Vec::new();
            let mut coords = Vec::new();
            for iy in 0..plan.ho {
                for jx in 0..plan.wo {
                    let p = plan.position(jx, iy);
                    if affected.contains(p) {
                        positions.push(p);
                        coords.push((jx, iy));
                    }
                }
            }
            let Some((bp, pox, poy)) = self.warp_block(mesh_plus, &positions)? else {
                continue;
            };
            let (bm, mox, moy) = self
                .warp_block(mesh_minus, &positions)?
                .expect("same positions produce a block");
            let (wd, hd) = (d.d.width(), d.d.height());
            let mut acc = 0.0;
            for (&p, &(jx, iy)) in positions.iter().zip(&coords) {
                bp.sample_bilinear_into(Vec2::new(p.x - pox as f64, p.y - poy as f64), &mut pp[..channels]);
                bm.sample_bilinear_into(Vec2::new(p.x - mox as f64, p.y - moy as f64), &mut pm[..channels]);
                for c in 0..channels {
                    let dv = if jx < wd && iy < hd { d.d.get(jx, iy, c) } else { 0.0 };
                    let ep = dv - pp[c];
                    let em = dv - pm[c];
                    acc += ep * ep - em * em;
                }
            }
            delta += acc / (plan.cw as f64 * plan.ch as f64 * channels as f64);
        }
        Ok(delta / self.d_crops.len() as f64)
    }
}

/// Central finite-difference gradient of the object loss. Output boxes are
/// frozen at the current mesh, so the gradient flows through pixel values
/// only. Vertices whose incident cells stay clear of every box are skipped
/// with an exact zero.
pub fn grad_object_fd(input: &Image, motion: &MotionField, job: &RetargetJob, fd_step: f64) -> Result<MotionField> {
    let mut grad = MotionField::zeros(job.rows, job.cols);
    let boxes_in = job.clipped_boxes();
    if boxes_in.is_empty() {
        return Ok(grad);
    }
    let meshes = job_meshes(job)?;
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, motion)?;
    let mut boxes_out = Vec::with_capacity(boxes_in.len());
    for b in &boxes_in {
        boxes_out.push(map_box(&meshes.mesh_in, &mesh_f, b)?);
    }
    let d_crops = build_d_crops(input, &boxes_in, job.scale_s)?;
    let plans: Vec<CropPlan> = d_crops
        .iter()
        .zip(&boxes_out)
        .map(|(d, ob)| CropPlan::new(d, ob, job.out_width, job.out_height))
        .collect();
    let ctx = ObjectEvalCtx {
        input,
        mesh_in: &meshes.mesh_in,
        d_crops: &d_crops,
        plans: &plans,
        out_width: job.out_width,
        out_height: job.out_height,
    };

    // At the exact global minimum the loss cannot decrease in any direction.
    if ctx.eval(&mesh_f)? <= OBJECT_LOSS_FLOOR {
        return Ok(grad);
    }

    let n_comps = grad.n_components();
    for k in 0..n_comps {
        let (vi, vj) = grad.comp_vertex(k);
        // Locality: skip vertices whose surroundings touch no box on either
        // side of the warp.
        let out_region = incident_aabb(&mesh_f, vi, vj).inflate(fd_step + 2.0);
        let in_region = incident_aabb(&meshes.mesh_in, vi, vj).inflate(2.0);
        let touches_out = plans.iter().any(|p| out_region.overlaps_box(&p.out_box));
        let touches_in = boxes_in.iter().any(|b| in_region.overlaps_box(b));
        if !touches_out && !touches_in {
            continue;
        }

        let axis_offset = |sign: f64| {
            if k % 2 == 0 {
                Vec2::new(sign * fd_step, 0.0)
            } else {
                Vec2::new(0.0, sign * fd_step)
            }
        };
        let mesh_plus = mesh_f.with_vertex_offset(vi, vj, axis_offset(1.0))?;
        let mesh_minus = mesh_f.with_vertex_offset(vi, vj, axis_offset(-1.0))?;
        let affected = out_region.inflate(1.0);
        let delta = ctx.fd_delta(&mesh_plus, &mesh_minus, &affected)?;
        grad.set_comp(k, delta / (2.0 * fd_step));
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment state for Adam, flattened over motion components.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    pub fn new(n_components: usize) -> Self {
        AdamState { m: vec![0.0; n_components], v: vec![0.0; n_components], step: 0 }
    }
}

/// One bias-corrected Adam update in place; the learning rate decays as
/// `learning_rate * decay^t`.
pub fn adam_step(state: &mut AdamState, motion: &mut MotionField, gradient: &MotionField, cfg: &OptimConfig) {
    let lr_t = cfg.learning_rate * cfg.decay.powi(state.step as i32);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for k in 0..motion.n_components() {
        let g = gradient.comp(k);
        let m = cfg.adam_beta1 * state.m[k] + (1.0 - cfg.adam_beta1) * g;
        let v = cfg.adam_beta2 * state.v[k] + (1.0 - cfg.adam_beta2) * g * g;
        state.m[k] = m;
        state.v[k] = v;
        let update = lr_t * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
        motion.set_comp(k, motion.comp(k) - update);
    }
}

// ---------------------------------------------------------------------------
// Optimization loop
// ---------------------------------------------------------------------------

struct LoopResult {
    motion: MotionField,
    report: LossReport,
    trace: Vec<TraceEntry>,
    iterations: usize,
}

fn fast_report(input: &Image, motion: &MotionField, job: &RetargetJob, meshes: &JobMeshes, d_crops: &[DCrop]) -> Result<LossReport> {
    let boxes_in = job.clipped_boxes();
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, motion)?;
    let foldover = !check_foldover(&mesh_f).is_empty();
    let mut boxes_out = Vec::with_capacity(boxes_in.len());
    for b in &boxes_in {
        boxes_out.push(map_box(&meshes.mesh_in, &mesh_f, b)?);
    }
    let plans: Vec<CropPlan> = d_crops
        .iter()
        .zip(&boxes_out)
        .map(|(d, ob)| CropPlan::new(d, ob, job.out_width, job.out_height))
        .collect();
    let ctx = ObjectEvalCtx {
        input,
        mesh_in: &meshes.mesh_in,
        d_crops,
        plans: &plans,
        out_width: job.out_width,
        out_height: job.out_height,
    };
    let object = ctx.eval(&mesh_f)?;
    let edges = beta_edges(&meshes.mesh_in, &boxes_in);
    let geometric_raw = geometric_loss_terms(&meshes.mesh_in, &mesh_f, &edges, job.scale_s, job.squared_geometric);
    let boundary_raw = boundary_loss(motion, job.d_u(), job.d_v());
    Ok(assemble_report(job, object, geometric_raw, boundary_raw, edges.len(), foldover))
}

fn run_loop(input: &Image, job: &RetargetJob, cfg: &OptimConfig) -> Result<LoopResult> {
    let meshes = job_meshes(job)?;
    let boxes_in = job.clipped_boxes();
    if boxes_in.is_empty() {
        return Err(Error::DegenerateInput("optimization needs at least one object box".into()));
    }
    let d_crops = build_d_crops(input, &boxes_in, job.scale_s)?;

    let mut motion = MotionField::zeros(job.rows, job.cols);
    let mut adam = AdamState::new(motion.n_components());
    let initial = fast_report(input, &motion, job, &meshes, &d_crops)?;
    let mut best_motion = motion.clone();
    let mut best_report = initial;
    let mut trace = vec![TraceEntry::from_report(0, &initial)];
    let mut window: Vec<f64> = vec![initial.total];
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let gg = grad_geometric(&meshes.mesh_in, &motion, job)?;
        let gb = grad_boundary(&motion, job);
        let go = grad_object_fd(input, &motion, job, cfg.fd_step)?;
        let mut grad = MotionField::zeros(job.rows, job.cols);
        for k in 0..grad.n_components() {
            grad.set_comp(
                k,
                job.weights.lambda_o * go.comp(k)
                    + job.weights.lambda_g * gg.comp(k)
                    + job.weights.lambda_b * gb.comp(k),
            );
        }
        adam_step(&mut adam, &mut motion, &grad, cfg);

        let report = fast_report(input, &motion, job, &meshes, &d_crops)?;
        if !report.total.is_finite() || !motion.is_finite() {
            log::warn!("optimizer diverged at iteration {iter}; trace: {trace:?}");
            return Err(Error::OptimizerDiverged { iter, loss: report.total });
        }
        trace.push(TraceEntry::from_report(iter, &report));
        if report.total < best_report.total {
            best_report = report;
            best_motion = motion.clone();
        }
        window.push(report.total);
        if window.len() > 11 {
            window.remove(0);
        }
        if window.len() == 11 {
            let start = window[0];
            let improvement = (start - report.total) / start.abs().max(1e-12);
            if improvement < cfg.tolerance {
                break;
            }
        }
    }

    Ok(LoopResult { motion: best_motion, report: best_report, trace, iterations })
}

/// Minimizes the total loss over the motion field, starting from zero
/// displacement (the pure-scale warp). Returns the best-loss iterate; on a
/// folded final mesh, restarts once from zero with half the learning rate
/// and flags the result if the fold persists.
pub fn optimize_motion(input: &Image, job: &RetargetJob, cfg: &OptimConfig) -> Result<OptimOutcome> {
    cfg.validate()?;
    let meshes = job_meshes(job)?;
    let first = run_loop(input, job, cfg)?;
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, &first.motion)?;
    if check_foldover(&mesh_f).is_empty() {
        return Ok(OptimOutcome {
            motion: first.motion,
            report: first.report,
            trace: first.trace,
            iterations: first.iterations,
            restarted: false,
            foldover_flagged: false,
        });
    }

    log::warn!("optimized mesh has folded cells; restarting with halved learning rate");
    let mut half = *cfg;
    half.learning_rate = cfg.learning_rate / 2.0;
    let second = run_loop(input, job, &half)?;
    let mesh_f = apply_motion(&meshes.mesh_out_rigid, &second.motion)?;
    let still_folded = !check_foldover(&mesh_f).is_empty();
    Ok(OptimOutcome {
        motion: second.motion,
        report: second.report,
        trace: second.trace,
        iterations: second.iterations,
        restarted: true,
        foldover_flagged: still_folded,
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Settings for the analytic-vs-finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Central-difference step for the check.
    pub fd_step: f64,
    /// Debug knob: adds this offset to one analytic component so the check
    /// must fail (negative control).
    pub corrupt: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { trials: 20, seed: 0, fd_step: 1e-4, corrupt: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub checked_components: usize,
    pub excluded_components: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Verifies the combined analytic gradient of the weighted geometric and
/// boundary losses against central finite differences on random motion
/// fields and random boxes. Components within 1e-6 of a kink of |.| or relu,
/// or of a vanishing edge term, are excluded and counted.
pub fn gradcheck_gb(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut excluded = 0usize;

    for trial in 0..cfg.trials {
        let mut boxes = Vec::new();
        for b in 0..rng.random_range(1..=2) {
            let x0 = rng.random_range(10.0..120.0);
            let y0 = rng.random_range(10.0..120.0);
            let w = rng.random_range(40.0..90.0);
            let h = rng.random_range(40.0..90.0);
            boxes.push(ObjectBox::new(
                format!("t{trial}b{b}"),
                x0,
                y0,
                (x0 + w).min(220.0),
                (y0 + h).min(220.0),
            )?);
        }
        let job = RetargetJob::new(224, 224, 112, 224, 8, 8, Default::default(), boxes)?;
        let meshes = job_meshes(&job)?;

        let mut motion = MotionField::zeros(job.rows, job.cols);
        for k in 0..motion.n_components() {
            motion.set_comp(k, rng.random_range(-10.0..10.0));
        }

        let gg = grad_geometric(&meshes.mesh_in, &motion, &job)?;
        let gb = grad_boundary(&motion, &job);
        let edges = beta_edges(&meshes.mesh_in, &job.clipped_boxes());
        let mesh_f = apply_motion(&meshes.mesh_out_rigid, &motion)?;

        // Components adjacent to a nondifferentiable point.
        let mut kink = vec![false; motion.n_components()];
        let mark = |kink: &mut Vec<bool>, i: usize, j: usize, axis: usize| {
            kink[(i * (job.cols + 1) + j) * 2 + axis] = true;
        };
        for i in [0, job.rows] {
            for j in 0..=job.cols {
                let f = motion.get(i, j);
                if f.y.abs() < 1e-6 {
                    mark(&mut kink, i, j, 1);
                }
                if (f.x.abs() - job.d_u()).abs() < 1e-6 {
                    mark(&mut kink, i, j, 0);
                }
            }
        }
        for j in [0, job.cols] {
            for i in 0..=job.rows {
                let f = motion.get(i, j);
                if f.x.abs() < 1e-6 {
                    mark(&mut kink, i, j, 0);
                }
                if (f.y.abs() - job.d_v()).abs() < 1e-6 {
                    mark(&mut kink, i, j, 1);
                }
            }
        }
        for e in &edges {
            let rigid = meshes.mesh_in.vertex(e.b.0, e.b.1) - meshes.mesh_in.vertex(e.a.0, e.a.1);
            let deformed = mesh_f.vertex(e.b.0, e.b.1) - mesh_f.vertex(e.a.0, e.a.1);
            if (deformed - job.scale_s * rigid).norm() < 1e-6 {
                for (i, j) in [e.a, e.b] {
                    mark(&mut kink, i, j, 0);
                    mark(&mut kink, i, j, 1);
                }
            }
        }

        for k in 0..motion.n_components() {
            if kink[k] {
                excluded += 1;
                continue;
            }
            let mut analytic = job.weights.lambda_g * gg.comp(k) + job.weights.lambda_b * gb.comp(k);
            if trial == 0 && k == 0 {
                analytic += cfg.corrupt;
            }
            let base = motion.comp(k);
            let mut probe = motion.clone();
            probe.set_comp(k, base + cfg.fd_step);
            let fp = gb_objective(&meshes.mesh_in, &meshes.mesh_out_rigid, &probe, &job)?;
            probe.set_comp(k, base - cfg.fd_step);
            let fm = gb_objective(&meshes.mesh_in, &meshes.mesh_out_rigid, &probe, &job)?;
            let fd = (fp - fm) / (2.0 * cfg.fd_step);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }

    let total = checked + excluded;
    Ok(GradCheckReport {
        trials: cfg.trials,
        checked_components: checked,
        excluded_components: excluded,
        max_rel_err: max_rel,
        pass: max_rel <= 1e-4 && excluded * 20 <= total,
    })
}
