//! Deterministic synthetic images and the benchmark fixture suite.

use crate::geometry::ObjectBox;
use crate::image::Image;
use crate::io::{save_boxes, save_png, BoxFile, BoxRecord};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Multi-frequency sinusoid texture with mild seeded noise; every value in
/// [0.05, 0.95] so warping artifacts stay visible.
pub fn textured_background(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx1 = rng.random_range(0.05..0.12);
    let fy1 = rng.random_range(0.05..0.12);
    let fx2 = rng.random_range(0.21..0.4);
    let fy2 = rng.random_range(0.21..0.4);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise: Vec<f64> = (0..(width * height) as usize)
        .map(|_| rng.random_range(-0.03..0.03))
        .collect();
    Image::from_fn(width, height, 3, |x, y| {
        let xf = x as f64;
        let yf = y as f64;
        let base = 0.5
            + 0.18 * (fx1 * xf + phase).sin() * (fy1 * yf).cos()
            + 0.12 * (fx2 * xf).cos() * (fy2 * yf + phase).sin();
        let n = noise[(y * width + x) as usize];
        let v = (base + n).clamp(0.05, 0.95);
        [v, (v * 0.85 + 0.1).clamp(0.05, 0.95), (1.0 - v * 0.7).clamp(0.05, 0.95)]
    })
    .expect("valid dimensions")
}

/// Smooth band-limited image (low-frequency sinusoids only), for resampling
/// round-trip checks.
pub fn smooth_image(width: u32, height: u32) -> Image {
    Image::from_fn(width, height, 3, |x, y| {
        let xf = x as f64 / width as f64;
        let yf = y as f64 / height as f64;
        [
            0.5 + 0.3 * (2.5 * xf).sin() * (1.5 * yf).cos(),
            0.5 + 0.25 * (1.8 * xf + 0.7).cos(),
            0.4 + 0.3 * (2.2 * yf + 0.3).sin(),
        ]
    })
    .expect("valid dimensions")
}

/// Paints a solid constant-color rectangle.
pub fn paint_box(img: &mut Image, b: &ObjectBox, color: [f64; 3]) {
    let x0 = b.x0.max(0.0).floor() as u32;
    let y0 = b.y0.max(0.0).floor() as u32;
    let x1 = (b.x1.ceil() as u32).min(img.width());
    let y1 = (b.y1.ceil() as u32).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            for c in 0..img.channels() {
                img.set(x, y, c, color[c]);
            }
        }
    }
}

/// One synthetic benchmark case: constant-color objects on a textured
/// background.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub image: Image,
    pub boxes: Vec<ObjectBox>,
}

const PALETTE: [[f64; 3]; 5] = [
    [0.85, 0.2, 0.15],
    [0.15, 0.55, 0.85],
    [0.9, 0.75, 0.1],
    [0.2, 0.7, 0.3],
    [0.7, 0.25, 0.75],
];

fn single_object_fixture(index: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = textured_background(224, 224, seed.wrapping_mul(31).wrapping_add(7));
    // Wide-ish boxes kept at least 1.5 cells (42 px) away from every border
    // so boundary vertices never feel object forces.
    let w = rng.random_range(96.0f64..130.0).round();
    let h = rng.random_range(72.0f64..120.0).round();
    let x0 = rng.random_range(44.0..(224.0 - 44.0 - w)).round();
    let y0 = rng.random_range(44.0..(224.0 - 44.0 - h)).round();
    let b = ObjectBox::new("obj0", x0, y0, x0 + w, y0 + h).expect("fixture box");
    paint_box(&mut image, &b, PALETTE[index % PALETTE.len()]);
    Fixture { name: format!("single_{index:02}"), image, boxes: vec![b] }
}

fn double_object_fixture(index: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = textured_background(224, 224, seed.wrapping_mul(17).wrapping_add(3));
    // Two objects side by side within the 44 px safety margins: widths plus
    // the gap always fit the 136 px usable band.
    let w0 = rng.random_range(50.0f64..60.0).round();
    let w1 = rng.random_range(50.0f64..60.0).round();
    let h0 = rng.random_range(64.0f64..110.0).round();
    let h1 = rng.random_range(64.0f64..110.0).round();
    let gap = rng.random_range(8.0f64..14.0).round();
    let slack = 136.0 - w0 - w1 - gap;
    let x0 = 44.0 + rng.random_range(0.0..slack.max(1.0)).round();
    let y0 = rng.random_range(44.0..(224.0 - 44.0 - h0)).round();
    let x1 = x0 + w0 + gap;
    let y1 = rng.random_range(44.0..(224.0 - 44.0 - h1)).round();
    let a = ObjectBox::new("obj0", x0, y0, x0 + w0, y0 + h0).expect("fixture box");
    let b = ObjectBox::new("obj1", x1, y1, x1 + w1, y1 + h1).expect("fixture box");
    paint_box(&mut image, &a, PALETTE[index % PALETTE.len()]);
    paint_box(&mut image, &b, PALETTE[(index + 2) % PALETTE.len()]);
    Fixture { name: format!("double_{index:02}"), image, boxes: vec![a, b] }
}

/// The ten-image synthetic suite: six single-object and four double-object
/// cases at 224x224.
pub fn suite() -> Vec<Fixture> {
    let mut fixtures = Vec::with_capacity(10);
    for i in 0..6 {
        fixtures.push(single_object_fixture(i, 1000 + i as u64));
    }
    for i in 0..4 {
        fixtures.push(double_object_fixture(i, 2000 + i as u64));
    }
    fixtures
}

/// Writes the fixtures as PNG plus sibling box files (`<name>.png`,
/// `<name>.json`) into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, fixtures: &[Fixture]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    for f in fixtures {
        let png = dir.join(format!("{}.png", f.name));
        save_png(&png, &f.image)?;
        let file = BoxFile {
            image: format!("{}.png", f.name),
            boxes: f
                .boxes
                .iter()
                .map(|b| BoxRecord {
                    id: b.id.clone(),
                    x0: b.x0,
                    y0: b.y0,
                    x1: b.x1,
                    y1: b.y1,
                    score: None,
                    label: None,
                })
                .collect(),
        };
        save_boxes(&dir.join(format!("{}.json", f.name)), &file)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shape_and_margins() {
        let fixtures = suite();
        assert_eq!(fixtures.len(), 10);
        for f in &fixtures {
            assert_eq!(f.image.width(), 224);
            assert!(!f.boxes.is_empty());
            for b in &f.boxes {
                assert!(b.x0 >= 42.0 && b.y0 >= 42.0, "{}: {:?}", f.name, b);
                assert!(b.x1 <= 182.0 && b.y1 <= 182.0, "{}: {:?}", f.name, b);
                assert!(b.area() <= 0.5 * 224.0 * 224.0);
            }
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = suite();
        let b = suite();
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.image, fb.image);
            assert_eq!(fa.boxes, fb.boxes);
        }
    }

    #[test]
    fn painted_box_region_is_constant() {
        let f = &suite()[0];
        let b = &f.boxes[0];
        let v = f.image.get(b.x0 as u32 + 1, b.y0 as u32 + 1, 0);
        for y in (b.y0 as u32)..(b.y1 as u32) {
            for x in (b.x0 as u32)..(b.x1 as u32) {
                assert_eq!(f.image.get(x, y, 0), v);
            }
        }
    }
}
