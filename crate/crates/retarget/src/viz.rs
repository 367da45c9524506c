//! Diagnostic rendering: mesh overlays, box overlays, side-by-side panels.
//! Integer Bresenham strokes, no anti-aliasing.

use crate::error::Result;
use crate::geometry::{Mesh, ObjectBox};
use crate::image::Image;

/// Stroke color; for grayscale images only the first component is used.
pub type Stroke = [f64; 3];

fn put(img: &mut Image, x: i64, y: i64, color: Stroke) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
        return;
    }
    for c in 0..img.channels() {
        img.set(x as u32, y as u32, c, color[c]);
    }
}

fn draw_line(img: &mut Image, a: (i64, i64), b: (i64, i64), color: Stroke) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Rounds a coordinate to a pixel index; a point exactly on the far image
/// edge lands on the last pixel instead of vanishing.
fn round_edge(value: f64, dim: u32) -> i64 {
    let r = value.round() as i64;
    if r == dim as i64 && value <= dim as f64 {
        r - 1
    } else {
        r
    }
}

/// Copy of the image with all grid edges stroked 1 px wide. Vertices are
/// rounded to pixel centers; segments outside the image are clipped away.
pub fn draw_mesh_overlay(img: &Image, mesh: &Mesh, stroke: Stroke) -> Image {
    let mut out = img.clone();
    let rounded = |i: usize, j: usize| {
        let v = mesh.vertex(i, j);
        (round_edge(v.x, img.width()), round_edge(v.y, img.height()))
    };
    for i in 0..=mesh.rows() {
        for j in 0..mesh.cols() {
            draw_line(&mut out, rounded(i, j), rounded(i, j + 1), stroke);
        }
    }
    for i in 0..mesh.rows() {
        for j in 0..=mesh.cols() {
            draw_line(&mut out, rounded(i, j), rounded(i + 1, j), stroke);
        }
    }
    out
}

/// Copy of the image with 1 px rectangle outlines.
pub fn draw_boxes(img: &Image, boxes: &[ObjectBox], stroke: Stroke) -> Image {
    let mut out = img.clone();
    for b in boxes {
        let x0 = round_edge(b.x0, img.width());
        let y0 = round_edge(b.y0, img.height());
        let x1 = round_edge(b.x1, img.width());
        let y1 = round_edge(b.y1, img.height());
        draw_line(&mut out, (x0, y0), (x1, y0), stroke);
        draw_line(&mut out, (x0, y1), (x1, y1), stroke);
        draw_line(&mut out, (x0, y0), (x0, y1), stroke);
        draw_line(&mut out, (x1, y0), (x1, y1), stroke);
    }
    out
}

/// Horizontal concatenation with 4 px white separators; shorter panels are
/// padded with black at the bottom. Panel pixels are copied untouched.
pub fn compose_panel(panels: &[&Image]) -> Result<Image> {
    let channels = panels.iter().map(|p| p.channels()).max().unwrap_or(1);
    let height = panels.iter().map(|p| p.height()).max().unwrap_or(1);
    let width: u32 = panels.iter().map(|p| p.width()).sum::<u32>() + 4 * (panels.len().saturating_sub(1) as u32);
    let mut out = Image::new(width.max(1), height, channels)?;
    let mut x_off = 0u32;
    for (idx, p) in panels.iter().enumerate() {
        if idx > 0 {
            for y in 0..height {
                for x in 0..4 {
                    for c in 0..channels {
                        out.set(x_off + x, y, c, 1.0);
                    }
                }
            }
            x_off += 4;
        }
        for y in 0..p.height() {
            for x in 0..p.width() {
                for c in 0..channels {
                    let v = if c < p.channels() { p.get(x, y, c) } else { p.get(x, y, 0) };
                    out.set(x_off + x, y, c, v);
                }
            }
        }
        x_off += p.width();
    }
    Ok(out)
}
