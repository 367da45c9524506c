//! Distortion-error quality metric and the crop/scale baselines.

use crate::error::{Error, Result};
use crate::geometry::{map_box, Mesh, ObjectBox};
use crate::image::{resize_bilinear, Image};
use serde::Serialize;

/// Fraction of a mapped box that clipping may remove before the object
/// counts as vanished.
const VANISH_CLIP_FRACTION: f64 = 0.95;

/// An object box carried into the output space, or the marker that it did
/// not survive.
#[derive(Debug, Clone)]
pub enum MappedBox {
    Present(ObjectBox),
    Vanished { id: String },
}

impl MappedBox {
    pub fn id(&self) -> &str {
        match self {
            MappedBox::Present(b) => &b.id,
            MappedBox::Vanished { id } => id,
        }
    }
}

/// Per-object aspect comparison.
#[derive(Debug, Clone, Serialize)]
pub struct PerObjectError {
    pub id: String,
    pub input_aspect: f64,
    /// 0 for vanished objects.
    pub output_aspect: f64,
    pub error: f64,
}

/// Mean relative aspect-ratio change of object boxes between input and
/// output; vanished objects score exactly 1.
#[derive(Debug, Clone, Serialize)]
pub struct DistortionReport {
    pub per_object: Vec<PerObjectError>,
    pub mean_error: f64,
    pub vanished_count: usize,
}

/// Distortion error over index-aligned box lists.
pub fn distortion_error(boxes_in: &[ObjectBox], boxes_out: &[MappedBox]) -> Result<DistortionReport> {
    if boxes_in.is_empty() {
        return Err(Error::UndefinedMetric("distortion error needs at least one object".into()));
    }
    if boxes_in.len() != boxes_out.len() {
        return Err(Error::InvalidArgument("box lists must be index-aligned".into()));
    }
    let mut per_object = Vec::with_capacity(boxes_in.len());
    let mut vanished_count = 0;
    let mut sum = 0.0;
    for (b_in, mapped) in boxes_in.iter().zip(boxes_out) {
        let r_in = b_in.aspect();
        let (r_out, error) = match mapped {
            MappedBox::Present(b_out) => {
                let r_out = b_out.aspect();
                (r_out, (r_in - r_out).abs() / r_in)
            }
            MappedBox::Vanished { .. } => {
                vanished_count += 1;
                (0.0, 1.0)
            }
        };
        sum += error;
        per_object.push(PerObjectError {
            id: mapped.id().to_string(),
            input_aspect: r_in,
            output_aspect: r_out,
            error,
        });
    }
    Ok(DistortionReport {
        mean_error: sum / boxes_in.len() as f64,
        per_object,
        vanished_count,
    })
}

/// Maps input boxes through the mesh pair, clips them to the output
/// rectangle, marks objects clipped away (or nearly so) as vanished, and
/// scores the result.
pub fn measure_result(
    mesh_in: &Mesh,
    mesh_f: &Mesh,
    boxes_in: &[ObjectBox],
    out_width: u32,
    out_height: u32,
) -> Result<DistortionReport> {
    let mut mapped = Vec::with_capacity(boxes_in.len());
    for b in boxes_in {
        let m = map_box(mesh_in, mesh_f, b)?;
        mapped.push(clip_or_vanish(m, out_width as f64, out_height as f64));
    }
    distortion_error(boxes_in, &mapped)
}

fn clip_or_vanish(mapped: ObjectBox, out_w: f64, out_h: f64) -> MappedBox {
    let area = mapped.area();
    match mapped.intersect(0.0, 0.0, out_w, out_h) {
        Some(clipped) if clipped.area() > (1.0 - VANISH_CLIP_FRACTION) * area => MappedBox::Present(clipped),
        _ => MappedBox::Vanished { id: mapped.id },
    }
}

/// Simple-scaling baseline: plain bilinear rescale.
pub fn baseline_scl(input: &Image, out_width: u32, out_height: u32) -> Result<Image> {
    resize_bilinear(input, out_width, out_height)
}

/// Box mapping rule for the scaling baseline: componentwise scale.
pub fn scl_map_box(b: &ObjectBox, in_w: u32, in_h: u32, out_w: u32, out_h: u32) -> MappedBox {
    MappedBox::Present(b.scaled(out_w as f64 / in_w as f64, out_h as f64 / in_h as f64))
}

/// Cropping baseline output: the chosen window plus translated boxes.
#[derive(Debug, Clone)]
pub struct CropResult {
    pub image: Image,
    pub mapped: Vec<MappedBox>,
    /// Window origin in input pixels.
    pub origin: (u32, u32),
}

fn covered_area(boxes: &[ObjectBox], x0: f64, y0: f64, w: f64, h: f64) -> f64 {
    boxes
        .iter()
        .filter_map(|b| b.intersect(x0, y0, x0 + w, y0 + h))
        .map(|c| c.area())
        .sum()
}

/// Best crop window of the target size by total covered box area: exhaustive
/// 1 px scan on the downsampled working image, refined locally at full
/// resolution. Reduction only.
pub fn baseline_cr(
    input: &Image,
    boxes: &[ObjectBox],
    out_width: u32,
    out_height: u32,
) -> Result<CropResult> {
    let (in_w, in_h) = (input.width(), input.height());
    if out_width > in_w || out_height > in_h {
        return Err(Error::Unsupported("cropping cannot enlarge".into()));
    }

    // Coarse scan at the working scale.
    let eta = (224.0 / in_w.max(in_h) as f64).min(1.0);
    let win_w = out_width as f64 * eta;
    let win_h = out_height as f64 * eta;
    let span_x = ((in_w as f64 - out_width as f64) * eta).floor() as i64;
    let span_y = ((in_h as f64 - out_height as f64) * eta).floor() as i64;
    let scaled: Vec<ObjectBox> = boxes.iter().map(|b| b.scaled(eta, eta)).collect();
    let mut best = (f64::NEG_INFINITY, 0i64, 0i64);
    for y in 0..=span_y {
        for x in 0..=span_x {
            let a = covered_area(&scaled, x as f64, y as f64, win_w, win_h);
            if a > best.0 {
                best = (a, x, y);
            }
        }
    }

    // Local refinement at full resolution.
    let cx = (best.1 as f64 / eta).round() as i64;
    let cy = (best.2 as f64 / eta).round() as i64;
    let radius = (1.0 / eta).ceil() as i64 + 1;
    let max_x = (in_w - out_width) as i64;
    let max_y = (in_h - out_height) as i64;
    let mut refined = (f64::NEG_INFINITY, cx.clamp(0, max_x), cy.clamp(0, max_y));
    for y in (cy - radius).max(0)..=(cy + radius).min(max_y) {
        for x in (cx - radius).max(0)..=(cx + radius).min(max_x) {
            let a = covered_area(boxes, x as f64, y as f64, out_width as f64, out_height as f64);
            if a > refined.0 {
                refined = (a, x, y);
            }
        }
    }
    let (ox, oy) = (refined.1 as u32, refined.2 as u32);

    let mut image = Image::new(out_width, out_height, input.channels())?;
    for y in 0..out_height {
        for x in 0..out_width {
            for c in 0..input.channels() {
                image.set(x, y, c, input.get(ox + x, oy + y, c));
            }
        }
    }
    let mapped = boxes
        .iter()
        .map(|b| {
            let t = b.translated(-(ox as f64), -(oy as f64));
            match t.intersect(0.0, 0.0, out_width as f64, out_height as f64) {
                Some(clipped) => MappedBox::Present(clipped),
                None => MappedBox::Vanished { id: b.id.clone() },
            }
        })
        .collect();
    Ok(CropResult { image, mapped, origin: (ox, oy) })
}

/// Total box area a window at (x0, y0) covers; exposed for harness checks.
pub fn crop_covered_area(boxes: &[ObjectBox], x0: f64, y0: f64, w: f64, h: f64) -> f64 {
    covered_area(boxes, x0, y0, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::textured_background;
    use crate::geometry::{build_rigid_mesh, rescale_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxes1() -> Vec<ObjectBox> {
        vec![ObjectBox::new("a", 40.0, 40.0, 120.0, 100.0).unwrap()]
    }

    #[test]
    fn identity_is_zero() {
        let b = boxes1();
        let mapped: Vec<MappedBox> = b.iter().cloned().map(MappedBox::Present).collect();
        let r = distortion_error(&b, &mapped).unwrap();
        assert_eq!(r.mean_error, 0.0);
        assert_eq!(r.vanished_count, 0);
    }

    #[test]
    fn scl_closed_form_all_scales() {
        let b = boxes1();
        for k in [0.5, 0.75, 1.25, 1.5, 1.75] {
            let out_w = (224.0 * k) as u32;
            let mapped: Vec<MappedBox> = b.iter().map(|bb| scl_map_box(bb, 224, 224, out_w, 224)).collect();
            // Width-only rescale changes the aspect by exactly k.
            let k_exact = out_w as f64 / 224.0;
            let r = distortion_error(&b, &mapped).unwrap();
            assert!(
                (r.mean_error - (1.0 - k_exact).abs()).abs() < 1e-12,
                "k={k}: {} vs {}",
                r.mean_error,
                (1.0 - k_exact).abs()
            );
        }
    }

    #[test]
    fn vanish_rule() {
        let b = vec![
            ObjectBox::new("kept", 10.0, 10.0, 50.0, 50.0).unwrap(),
            ObjectBox::new("gone", 60.0, 60.0, 90.0, 90.0).unwrap(),
        ];
        let mapped = vec![
            MappedBox::Present(b[0].clone()),
            MappedBox::Vanished { id: "gone".into() },
        ];
        let r = distortion_error(&b, &mapped).unwrap();
        assert_eq!(r.vanished_count, 1);
        assert_eq!(r.per_object[1].error, 1.0);
        assert_eq!(r.per_object[1].output_aspect, 0.0);
        assert!((r.mean_error - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_undefined() {
        assert!(distortion_error(&[], &[]).is_err());
    }

    #[test]
    fn measure_identity_and_pure_scale() {
        let mesh_in = build_rigid_mesh(224.0, 224.0, 8, 8).unwrap();
        let r = measure_result(&mesh_in, &mesh_in, &boxes1(), 224, 224).unwrap();
        assert!(r.mean_error < 1e-12);

        let half = rescale_mesh(&mesh_in, 112.0, 224.0).unwrap();
        let r = measure_result(&mesh_in, &half, &boxes1(), 112, 224).unwrap();
        assert!((r.mean_error - 0.5).abs() < 1e-12, "got {}", r.mean_error);
    }

    #[test]
    fn metric_is_scale_invariant_per_object() {
        // Scaling both boxes of an object by a common factor leaves its
        // error unchanged.
        let b_in = ObjectBox::new("a", 10.0, 10.0, 110.0, 60.0).unwrap();
        let b_out = ObjectBox::new("a", 5.0, 5.0, 65.0, 45.0).unwrap();
        let base = distortion_error(
            &[b_in.clone()],
            &[MappedBox::Present(b_out.clone())],
        )
        .unwrap();
        for k in [0.25, 2.0, 7.5] {
            let r = distortion_error(
                &[b_in.scaled(k, k)],
                &[MappedBox::Present(b_out.scaled(k, k))],
            )
            .unwrap();
            assert!((r.mean_error - base.mean_error).abs() < 1e-12);
        }
    }

    #[test]
    fn cr_keeps_contained_object_exact() {
        // Object inside the intersection of all feasible windows.
        let img = textured_background(64, 64, 1);
        let boxes = vec![ObjectBox::new("a", 20.0, 20.0, 40.0, 44.0).unwrap()];
        let r = baseline_cr(&img, &boxes, 48, 64).unwrap();
        let report = distortion_error(&boxes, &r.mapped).unwrap();
        assert_eq!(report.mean_error, 0.0);
    }

    #[test]
    fn cr_clipping_changes_aspect() {
        let img = textured_background(64, 64, 2);
        // Wider than the 32 px window: any crop clips it.
        let boxes = vec![ObjectBox::new("a", 8.0, 20.0, 56.0, 44.0).unwrap()];
        let r = baseline_cr(&img, &boxes, 32, 64).unwrap();
        let report = distortion_error(&boxes, &r.mapped).unwrap();
        assert!(report.mean_error > 0.0);
    }

    #[test]
    fn cr_two_distant_objects_vanishes_one() {
        let img = textured_background(128, 64, 3);
        let boxes = vec![
            ObjectBox::new("left", 0.0, 20.0, 20.0, 44.0).unwrap(),
            ObjectBox::new("right", 108.0, 20.0, 128.0, 44.0).unwrap(),
        ];
        let r = baseline_cr(&img, &boxes, 40, 64).unwrap();
        let report = distortion_error(&boxes, &r.mapped).unwrap();
        assert!(report.vanished_count >= 1);
        assert!(report.mean_error >= 0.5);
    }

    #[test]
    fn cr_rejects_enlargement() {
        let img = textured_background(64, 64, 4);
        assert!(matches!(
            baseline_cr(&img, &boxes1(), 96, 64),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn cr_beats_random_windows() {
        let img = textured_background(224, 160, 5);
        let boxes = vec![
            ObjectBox::new("a", 30.0, 30.0, 90.0, 80.0).unwrap(),
            ObjectBox::new("b", 140.0, 60.0, 200.0, 140.0).unwrap(),
        ];
        let (out_w, out_h) = (120u32, 120u32);
        let r = baseline_cr(&img, &boxes, out_w, out_h).unwrap();
        let best = crop_covered_area(&boxes, r.origin.0 as f64, r.origin.1 as f64, out_w as f64, out_h as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = rng.random_range(0..=(224 - out_w)) as f64;
            let y = rng.random_range(0..=(160 - out_h)) as f64;
            let a = crop_covered_area(&boxes, x, y, out_w as f64, out_h as f64);
            assert!(a <= best + 1e-9, "window at ({x},{y}) covers {a} > {best}");
        }
    }
}
