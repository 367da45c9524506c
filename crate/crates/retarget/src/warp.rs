//! Backward warping of an image through a mesh pair.
//!
//! Every output pixel center is located in the output-space mesh, its local
//! cell coordinates are transferred to the input-space mesh, and the input is
//! sampled there. Pixels that fall outside the output-space mesh are black
//! and counted.

use crate::error::{Error, Result};
use crate::geometry::{
    check_foldover, eval_cell_coord, locate_in_deformed, locate_in_rigid, CellCoord, Mesh, Vec2,
};
use crate::image::{Image, MAX_CHANNELS};

/// Warp result plus the number of output pixels no mesh cell covered.
#[derive(Debug, Clone)]
pub struct WarpOutput {
    pub image: Image,
    pub uncovered: u64,
}

pub(crate) struct WarpKernel<'a> {
    input: &'a Image,
    locate_mesh: &'a Mesh,
    eval_mesh: &'a Mesh,
    locate_rigid: bool,
}

impl<'a> WarpKernel<'a> {
    pub(crate) fn new(input: &'a Image, locate_mesh: &'a Mesh, eval_mesh: &'a Mesh) -> Result<Self> {
        if locate_mesh.rows() != eval_mesh.rows() || locate_mesh.cols() != eval_mesh.cols() {
            return Err(Error::InvalidArgument("warp meshes must share cell counts".into()));
        }
        Ok(WarpKernel {
            input,
            locate_mesh,
            eval_mesh,
            locate_rigid: locate_mesh.is_rigid(),
        })
    }

    fn locate(&self, q: Vec2, hint: Option<CellCoord>) -> Result<CellCoord> {
        if self.locate_rigid {
            locate_in_rigid(self.locate_mesh, q)
        } else {
            locate_in_deformed(self.locate_mesh, q, hint)
        }
    }

    /// Warps the pixel rectangle [x0, x0+w) x [y0, y0+h) of the output,
    /// writing into `out` at offset (ox, oy). Returns the uncovered count.
    pub(crate) fn warp_rect(
        &self,
        x0: u32,
        y0: u32,
        w: u32,
        h: u32,
        out: &mut Image,
        ox: u32,
        oy: u32,
    ) -> u64 {
        let mut uncovered = 0u64;
        let mut px = [0.0; MAX_CHANNELS];
        let channels = self.input.channels();
        let mut row_hint: Option<CellCoord> = None;
        for dy in 0..h {
            let qy = (y0 + dy) as f64 + 0.5;
            let mut hint = row_hint;
            let mut first_in_row: Option<CellCoord> = None;
            for dx in 0..w {
                let q = Vec2::new((x0 + dx) as f64 + 0.5, qy);
                match self.locate(q, hint) {
                    Ok(coord) => {
                        if first_in_row.is_none() {
                            first_in_row = Some(coord);
                        }
                        hint = Some(coord);
                        let p = eval_cell_coord(self.eval_mesh, &coord);
                        self.input.sample_bilinear_into(p, &mut px[..channels]);
                        for c in 0..channels {
                            out.set(ox + dx, oy + dy, c, px[c]);
                        }
                    }
                    Err(_) => {
                        uncovered += 1;
                        for c in 0..channels {
                            out.set(ox + dx, oy + dy, c, 0.0);
                        }
                    }
                }
            }
            row_hint = first_in_row.or(row_hint);
        }
        uncovered
    }
}

/// Backward warp without a fold-over precheck; callers that require safety
/// use [`retarget_warp`].
pub(crate) fn warp_lenient(
    input: &Image,
    locate_mesh: &Mesh,
    eval_mesh: &Mesh,
    out_width: u32,
    out_height: u32,
) -> Result<WarpOutput> {
    let kernel = WarpKernel::new(input, locate_mesh, eval_mesh)?;
    let mut image = Image::new(out_width, out_height, input.channels())?;
    let uncovered = kernel.warp_rect(0, 0, out_width, out_height, &mut image, 0, 0);
    Ok(WarpOutput { image, uncovered })
}

/// Renders the retargeted image: `mesh_in` is the rigid mesh over the input,
/// `mesh_out` the (deformed) mesh in output space. Refuses meshes with
/// folded cells.
pub fn retarget_warp(
    input: &Image,
    mesh_in: &Mesh,
    mesh_out: &Mesh,
    out_width: u32,
    out_height: u32,
) -> Result<WarpOutput> {
    if (mesh_in.width() - input.width() as f64).abs() > 1e-6
        || (mesh_in.height() - input.height() as f64).abs() > 1e-6
    {
        return Err(Error::InvalidArgument(format!(
            "input mesh covers {}x{} but image is {}x{}",
            mesh_in.width(),
            mesh_in.height(),
            input.width(),
            input.height()
        )));
    }
    if !mesh_out.is_rigid() {
        let folded = check_foldover(mesh_out);
        if !folded.is_empty() {
            return Err(Error::FoldOver(folded));
        }
    }
    warp_lenient(input, mesh_out, mesh_in, out_width, out_height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_motion, build_rigid_mesh, eval_in_cell, MotionField};
    use crate::image::resize_bilinear;

    fn checkerboard(w: u32, h: u32, cell: u32) -> Image {
        Image::from_fn(w, h, 1, |x, y| {
            let v = if ((x / cell) + (y / cell)) % 2 == 0 { 1.0 } else { 0.0 };
            [v, 0.0, 0.0]
        })
        .unwrap()
    }

    fn gradient(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, 3, |x, y| {
            let g = x as f64 / w as f64;
            let r = y as f64 / h as f64;
            [r, g, 0.25 + 0.5 * r * g]
        })
        .unwrap()
    }

    #[test]
    fn identity_warp_reproduces_input() {
        let img = gradient(224, 160);
        let mesh = build_rigid_mesh(224.0, 160.0, 8, 8).unwrap();
        let out = retarget_warp(&img, &mesh, &mesh, 224, 160).unwrap();
        assert_eq!(out.uncovered, 0);
        assert!(img.max_abs_diff(&out.image) <= 1e-6);
    }

    #[test]
    fn rigid_scale_warp_equals_resize() {
        let img = gradient(224, 160);
        let mesh_in = build_rigid_mesh(224.0, 160.0, 8, 8).unwrap();
        for k in [0.5f64, 0.75, 1.25] {
            let w = (224.0 * k).round() as u32;
            let mesh_out = build_rigid_mesh(w as f64, 160.0, 8, 8).unwrap();
            let warped = retarget_warp(&img, &mesh_in, &mesh_out, w, 160).unwrap();
            let resized = resize_bilinear(&img, w, 160).unwrap();
            assert!(warped.image.max_abs_diff(&resized) <= 1e-6, "k = {k}");
        }
    }

    #[test]
    fn warp_refuses_folded_mesh() {
        let img = gradient(112, 112);
        let mesh_in = build_rigid_mesh(112.0, 112.0, 4, 4).unwrap();
        let mut motion = MotionField::zeros(4, 4);
        motion.set(2, 2, Vec2::new(40.0, 0.0));
        let folded = apply_motion(&mesh_in, &motion).unwrap();
        match retarget_warp(&img, &mesh_in, &folded, 112, 112) {
            Err(Error::FoldOver(cells)) => assert!(!cells.is_empty()),
            other => panic!("expected fold-over error, got {other:?}"),
        }
    }

    /// Independent inverse: shrinking-grid 2D bisection of the bilinear map,
    /// no shared code with the Newton/quadratic solver.
    fn bisect_invert(mesh: &Mesh, q: Vec2) -> Option<(usize, usize, f64, f64)> {
        for row in 0..mesh.rows() {
            for col in 0..mesh.cols() {
                let (min, max) = mesh.cell_aabb(row, col);
                if q.x < min.x - 1e-9 || q.x > max.x + 1e-9 || q.y < min.y - 1e-9 || q.y > max.y + 1e-9 {
                    continue;
                }
                let mut cu = 0.5;
                let mut cv = 0.5;
                let mut half = 0.5;
                let mut best = (f64::INFINITY, 0.5, 0.5);
                for _ in 0..7 {
                    let n = 25;
                    for iu in 0..n {
                        for iv in 0..n {
                            let u = (cu - half + 2.0 * half * iu as f64 / (n - 1) as f64).clamp(0.0, 1.0);
                            let v = (cv - half + 2.0 * half * iv as f64 / (n - 1) as f64).clamp(0.0, 1.0);
                            let d = (eval_in_cell(mesh, row, col, u, v) - q).norm();
                            if d < best.0 {
                                best = (d, u, v);
                            }
                        }
                    }
                    cu = best.1;
                    cv = best.2;
                    half /= 6.0;
                }
                if best.0 < 1e-4 {
                    return Some((row, col, best.1, best.2));
                }
            }
        }
        None
    }

    #[test]
    fn warp_matches_bisection_oracle() {
        let img = checkerboard(224, 224, 14);
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mut motion = MotionField::zeros(8, 8);
        motion.set(4, 4, Vec2::new(7.0, 0.0));
        let mesh_out = apply_motion(&mesh_in, &motion).unwrap();
        let warped = retarget_warp(&img, &mesh_in, &mesh_out, 224, 224).unwrap();

        // Pixels of the 4 cells incident to vertex (4,4): rows 3..5, cols 3..5
        // of the mesh span x,y in [84, 140] plus the 7px shift slack.
        for y in (84..148).step_by(2) {
            for x in (84..148).step_by(2) {
                let q = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let (row, col, u, v) = bisect_invert(&mesh_out, q).expect("oracle must cover interior");
                let p = eval_in_cell(&mesh_in, row, col, u, v);
                let expect = img.sample_bilinear(p)[0];
                let got = warped.image.get(x, y, 0);
                assert!(
                    (got - expect).abs() < 1e-3,
                    "pixel ({x},{y}): got {got}, oracle {expect}"
                );
            }
        }
    }

    #[test]
    fn perturbing_one_vertex_is_local() {
        // Both meshes are non-rigid so both warps take the deformed-location
        // path; untouched quads then produce bit-identical pixels.
        let img = gradient(224, 224);
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let mut base_motion = MotionField::zeros(8, 8);
        base_motion.set(6, 1, Vec2::new(0.5, 0.5));
        let base_mesh = apply_motion(&mesh_in, &base_motion).unwrap();
        let base = retarget_warp(&img, &mesh_in, &base_mesh, 224, 224).unwrap();

        let mut motion = base_motion.clone();
        motion.set(3, 5, Vec2::new(4.0, -3.0));
        let moved = apply_motion(&mesh_in, &motion).unwrap();
        let out = retarget_warp(&img, &mesh_in, &moved, 224, 224).unwrap();

        let incident = |c: &crate::geometry::CellCoord| (2..=3).contains(&c.row) && (4..=5).contains(&c.col);
        for y in 0..224u32 {
            for x in 0..224u32 {
                let differs = (0..3).any(|c| (out.image.get(x, y, c) - base.image.get(x, y, c)).abs() > 0.0);
                if differs {
                    let q = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let a = locate_in_deformed(&moved, q, None).unwrap();
                    let b = locate_in_deformed(&base_mesh, q, None).unwrap();
                    assert!(
                        incident(&a) || incident(&b),
                        "pixel ({x},{y}) changed outside incident cells: {a:?} / {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn warped_values_stay_in_range() {
        let img = checkerboard(160, 160, 20);
        let mesh_in = build_rigid_mesh(160.0, 160.0, 8, 8).unwrap();
        let mut motion = MotionField::zeros(8, 8);
        for i in 0..=8 {
            for j in 0..=8 {
                motion.set(i, j, Vec2::new(((i * 13 + j * 7) % 9) as f64 - 4.0, ((i * 5 + j * 11) % 7) as f64 - 3.0));
            }
        }
        let mesh_out = apply_motion(&mesh_in, &motion).unwrap();
        let out = retarget_warp(&img, &mesh_in, &mesh_out, 160, 160).unwrap();
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
