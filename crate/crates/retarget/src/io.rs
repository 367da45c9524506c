//! Image codecs, object-box ingestion, job configuration and report files.
//!
//! Box files are minimal JSON:
//! `{"image": "photo.png", "boxes": [{"id": "person0", "x0": .., "y0": .., "x1": .., "y1": ..}]}`
//! with coordinates in original image pixels. Detectors that report
//! center/size boxes convert as x0 = cx - w/2, x1 = cx + w/2 (same for y).

use crate::error::{Error, Result};
use crate::geometry::{Mesh, ObjectBox};
use crate::image::Image;
use crate::objective::LossWeights;
use crate::optimize::OptimConfig;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// One box record in a box file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: String,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Object boxes for one image, in original pixel space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxFile {
    pub image: String,
    pub boxes: Vec<BoxRecord>,
}

/// Which dimension roles the enlargement pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnlargeMode {
    /// Optimize the reduction from the virtual large image and invert the
    /// mesh roles when warping.
    Invert,
    /// Optimize the enlargement objective directly.
    Direct,
}

/// Job-level configuration file. Defaults give the 8x8 mesh, weights
/// (1, 0.1, 0.01) and a 224-long-side working resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    pub rows: usize,
    pub cols: usize,
    pub weights: LossWeights,
    /// Override for the auto-derived scale; `None` derives it from the area
    /// ratio.
    pub scale_s: Option<f64>,
    pub normalize_losses: bool,
    pub squared_geometric: bool,
    pub optimizer: OptimConfig,
    /// Long-side pixel count the optimization runs at; inputs are never
    /// upscaled to reach it.
    pub working_res: u32,
    pub enlarge_mode: EnlargeMode,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            rows: 8,
            cols: 8,
            weights: LossWeights::default(),
            scale_s: None,
            normalize_losses: true,
            squared_geometric: false,
            optimizer: OptimConfig::default(),
            working_res: 224,
            enlarge_mode: EnlargeMode::Invert,
        }
    }
}

/// Parses and validates a box file. Records violating the box invariants are
/// rejected individually with a diagnostic; the rest are kept. Boxes larger
/// than half the image area are accepted but flagged by the caller once the
/// image size is known (see [`warn_oversized_boxes`]).
pub fn load_boxes(path: &Path) -> Result<(BoxFile, Vec<ObjectBox>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: BoxFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("box file: {e}")))?;
    let mut boxes = Vec::with_capacity(file.boxes.len());
    for (idx, rec) in file.boxes.iter().enumerate() {
        match ObjectBox::new(rec.id.clone(), rec.x0, rec.y0, rec.x1, rec.y1) {
            Ok(b) => boxes.push(b),
            Err(e) => log::warn!("{}: box #{idx} ('{}') rejected: {e}", path.display(), rec.id),
        }
    }
    Ok((file, boxes))
}

/// Flags boxes covering more than half the image. Training-set curation
/// would drop such images; at inference they are only warned about.
pub fn warn_oversized_boxes(boxes: &[ObjectBox], width: u32, height: u32) {
    let image_area = width as f64 * height as f64;
    for b in boxes {
        if b.area() > 0.5 * image_area {
            log::warn!(
                "box '{}' covers {:.0}% of the image; results may degrade",
                b.id,
                100.0 * b.area() / image_area
            );
        }
    }
}

pub fn save_boxes(path: &Path, file: &BoxFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file).expect("box file serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: &Path) -> Result<JobConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, format!("config: {e}")))
}

pub fn save_config(path: &Path, config: &JobConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, format!("mesh: {e}")))
}

pub fn save_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    let text = serde_json::to_string(mesh).expect("mesh serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a PNG or JPEG into normalized intensities (byte / 255). Grayscale
/// sources load as one channel, everything else as RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path)?;
    Ok(match decoded {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Image::from_fn(w, h, 1, |x, y| {
                [gray.get_pixel(x, y)[0] as f64 / 255.0, 0.0, 0.0]
            })?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Image::from_fn(w, h, 3, |x, y| {
                let p = rgb.get_pixel(x, y);
                [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
            })?
        }
    })
}

/// Writes an 8-bit PNG, mapping intensities back with round(v * 255).
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let to_byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match img.channels() {
        1 => {
            let buf = image::GrayImage::from_fn(img.width(), img.height(), |x, y| {
                image::Luma([to_byte(img.get(x, y, 0))])
            });
            buf.save_with_format(path, image::ImageFormat::Png)?;
        }
        _ => {
            let buf = image::RgbImage::from_fn(img.width(), img.height(), |x, y| {
                image::Rgb([
                    to_byte(img.get(x, y, 0)),
                    to_byte(img.get(x, y, 1)),
                    to_byte(img.get(x, y, 2)),
                ])
            });
            buf.save_with_format(path, image::ImageFormat::Png)?;
        }
    }
    Ok(())
}
