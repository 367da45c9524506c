//! In-memory image buffer and bilinear resampling.

use crate::error::{Error, Result};
use crate::geometry::{ObjectBox, Vec2};

/// Maximum number of interleaved channels.
pub const MAX_CHANNELS: usize = 3;

/// HxWxC buffer of intensities in [0, 1], row-major interleaved, f64 storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        Ok(Image {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        })
    }

    /// Builds an image by evaluating `f(x, y)` per pixel; values are clamped
    /// to [0, 1].
    pub fn from_fn(width: u32, height: u32, channels: usize, mut f: impl FnMut(u32, u32) -> [f64; MAX_CHANNELS]) -> Result<Self> {
        let mut img = Image::new(width, height, channels)?;
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..channels {
                    img.set(x, y, c, px[c].clamp(0.0, 1.0));
                }
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, x: u32, y: u32, c: usize) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// Bilinear sample at a continuous coordinate where pixel center (c, r)
    /// sits at (c+0.5, r+0.5). Coordinates are clamped to the valid range, so
    /// sampling is total.
    #[inline]
    pub fn sample_bilinear_into(&self, p: Vec2, out: &mut [f64]) {
        let x = p.x.clamp(0.5, self.width as f64 - 0.5) - 0.5;
        let y = p.y.clamp(0.5, self.height as f64 - 0.5) - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        for c in 0..self.channels {
            let p00 = self.get(x0, y0, c);
            let p10 = self.get(x1, y0, c);
            let p01 = self.get(x0, y1, c);
            let p11 = self.get(x1, y1, c);
            let top = p00 + fx * (p10 - p00);
            let bot = p01 + fx * (p11 - p01);
            out[c] = top + fy * (bot - top);
        }
    }

    pub fn sample_bilinear(&self, p: Vec2) -> [f64; MAX_CHANNELS] {
        let mut out = [0.0; MAX_CHANNELS];
        self.sample_bilinear_into(p, &mut out[..self.channels]);
        out
    }

    /// Mean absolute difference against another image of identical shape.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "image shapes must match");
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        sum / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "image shapes must match");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Bilinear resize with pixel-center alignment: destination pixel center
/// (x+0.5) maps to source coordinate (x+0.5) * src/dst.
pub fn resize_bilinear(img: &Image, new_width: u32, new_height: u32) -> Result<Image> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    let mut out = Image::new(new_width, new_height, img.channels)?;
    let kx = img.width as f64 / new_width as f64;
    let ky = img.height as f64 / new_height as f64;
    let mut px = [0.0; MAX_CHANNELS];
    for y in 0..new_height {
        let sy = (y as f64 + 0.5) * ky;
        for x in 0..new_width {
            let sx = (x as f64 + 0.5) * kx;
            img.sample_bilinear_into(Vec2::new(sx, sy), &mut px[..img.channels]);
            for c in 0..img.channels {
                out.set(x, y, c, px[c]);
            }
        }
    }
    Ok(out)
}

/// Resamples the rectangle `b` of `img` onto an `out_w` x `out_h` grid.
/// Sample positions are the cell centers of the box subdivided uniformly, so
/// an integer box at native size reproduces its pixels exactly.
pub fn crop_resample(img: &Image, b: &ObjectBox, out_w: u32, out_h: u32) -> Result<Image> {
    let mut out = Image::new(out_w, out_h, img.channels)?;
    let sx = b.width() / out_w as f64;
    let sy = b.height() / out_h as f64;
    let mut px = [0.0; MAX_CHANNELS];
    for y in 0..out_h {
        let py = b.y0 + (y as f64 + 0.5) * sy;
        for x in 0..out_w {
            let pxx = b.x0 + (x as f64 + 0.5) * sx;
            img.sample_bilinear_into(Vec2::new(pxx, py), &mut px[..img.channels]);
            for c in 0..img.channels {
                out.set(x, y, c, px[c]);
            }
        }
    }
    Ok(out)
}

/// Integer crop size for a box edge length: at least one pixel.
pub fn crop_len(extent: f64) -> u32 {
    (extent.round() as i64).max(1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(w: u32, h: u32) -> Image {
        Image::from_fn(w, h, 3, |x, y| {
            let g = (x as f64 + y as f64) / (w + h) as f64;
            [g, 1.0 - g, 0.5 * g]
        })
        .unwrap()
    }

    #[test]
    fn sample_at_center_is_exact() {
        let img = gradient_image(16, 12);
        for (x, y) in [(0u32, 0u32), (5, 7), (15, 11)] {
            let s = img.sample_bilinear(Vec2::new(x as f64 + 0.5, y as f64 + 0.5));
            for c in 0..3 {
                assert_eq!(s[c], img.get(x, y, c));
            }
        }
    }

    #[test]
    fn sample_midway_is_mean() {
        let img = gradient_image(16, 12);
        let s = img.sample_bilinear(Vec2::new(3.0 + 1.0, 5.5));
        for c in 0..3 {
            let mean = 0.5 * (img.get(3, 5, c) + img.get(4, 5, c));
            assert!((s[c] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_clamps_outside() {
        let img = gradient_image(16, 12);
        let s = img.sample_bilinear(Vec2::new(-5.0, -5.0));
        for c in 0..3 {
            assert_eq!(s[c], img.get(0, 0, c));
        }
        let s = img.sample_bilinear(Vec2::new(1e6, 1e6));
        for c in 0..3 {
            assert_eq!(s[c], img.get(15, 11, c));
        }
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = gradient_image(20, 14);
        let same = resize_bilinear(&img, 20, 14).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn crop_at_native_size_copies_pixels() {
        let img = gradient_image(20, 14);
        let b = ObjectBox::new("b", 4.0, 3.0, 12.0, 9.0).unwrap();
        let crop = crop_resample(&img, &b, 8, 6).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                for c in 0..3 {
                    assert!((crop.get(x, y, c) - img.get(x + 4, y + 3, c)).abs() < 1e-15);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn samples_stay_in_range(x in -50.0f64..300.0, y in -50.0f64..300.0) {
            let img = gradient_image(24, 18);
            let s = img.sample_bilinear(Vec2::new(x, y));
            for c in 0..3 {
                prop_assert!((0.0..=1.0).contains(&s[c]));
            }
        }
    }
}
