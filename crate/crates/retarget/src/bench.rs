//! Batch benchmark harness: runs retargeting methods over a dataset
//! directory and reports distortion errors as CSV plus a summary table.

use crate::error::{Error, Result};
use crate::geometry::{build_rigid_mesh, ObjectBox};
use crate::image::Image;
use crate::io::{load_boxes, load_image, JobConfig};
use crate::metric::{baseline_cr, distortion_error, measure_result, scl_map_box, DistortionReport};
use crate::pipeline::{retarget_auto, WarpDirection};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Retargeting method selector for the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ObjectIr,
    Scl,
    Cr,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "objectir" => Ok(Method::ObjectIr),
            "scl" => Ok(Method::Scl),
            "cr" => Ok(Method::Cr),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}' (expected objectir, scl or cr)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::ObjectIr => "objectir",
            Method::Scl => "scl",
            Method::Cr => "cr",
        }
    }
}

/// One CSV row; `report` is `None` where the method produces no result
/// (cropping cannot enlarge).
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub image: String,
    pub method: Method,
    pub scale: f64,
    pub mean_error: Option<f64>,
    pub vanished_count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub scales: Vec<f64>,
    pub methods: Vec<Method>,
    pub config: JobConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            scales: vec![0.5, 0.75, 1.25, 1.5, 1.75],
            methods: vec![Method::ObjectIr, Method::Scl, Method::Cr],
            config: JobConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub scales: Vec<f64>,
    pub methods: Vec<Method>,
}

/// Dataset entry: image file plus its sibling `<stem>.json` box file.
fn scan_dataset(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut entries = Vec::new();
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_image = matches!(
            path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
            Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
        );
        if !is_image {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let boxes = path.with_extension("json");
        if boxes.is_file() {
            entries.push((stem, path, boxes));
        } else {
            log::warn!("{}: no box file {}; skipped", path.display(), boxes.display());
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(entries)
}

fn measure_objectir(
    input: &Image,
    boxes: &[ObjectBox],
    out_w: u32,
    out_h: u32,
    config: &JobConfig,
) -> Result<DistortionReport> {
    let result = retarget_auto(input, boxes, out_w, out_h, config)?;
    match result.direction {
        WarpDirection::Reduce | WarpDirection::EnlargeDirect => {
            let mesh_in = build_rigid_mesh(
                input.width() as f64,
                input.height() as f64,
                result.mesh.rows(),
                result.mesh.cols(),
            )?;
            measure_result(&mesh_in, &result.mesh, boxes, out_w, out_h)
        }
        WarpDirection::EnlargeInvert => {
            // The deformed mesh covers the input; the rigid output mesh is
            // the destination side.
            let mesh_out = build_rigid_mesh(out_w as f64, out_h as f64, result.mesh.rows(), result.mesh.cols())?;
            measure_result(&result.mesh, &mesh_out, boxes, out_w, out_h)
        }
    }
}

fn bench_image(
    name: &str,
    image_path: &Path,
    boxes_path: &Path,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    let input = load_image(image_path)?;
    let (_, boxes) = load_boxes(boxes_path)?;
    if boxes.is_empty() {
        log::warn!("{}: no valid boxes; image skipped", boxes_path.display());
        return Ok(Vec::new());
    }
    let (in_w, in_h) = (input.width(), input.height());
    let mut rows = Vec::new();
    for &scale in &opts.scales {
        let out_w = ((in_w as f64 * scale).round() as u32).max(1);
        let out_h = in_h;
        for &method in &opts.methods {
            let report = match method {
                Method::ObjectIr => Some(measure_objectir(&input, &boxes, out_w, out_h, &opts.config)?),
                Method::Scl => {
                    let mapped: Vec<_> = boxes.iter().map(|b| scl_map_box(b, in_w, in_h, out_w, out_h)).collect();
                    Some(distortion_error(&boxes, &mapped)?)
                }
                Method::Cr => {
                    if out_w > in_w || out_h > in_h {
                        None
                    } else {
                        let crop = baseline_cr(&input, &boxes, out_w, out_h)?;
                        Some(distortion_error(&boxes, &crop.mapped)?)
                    }
                }
            };
            rows.push(BenchRow {
                image: name.to_string(),
                method,
                scale,
                mean_error: report.as_ref().map(|r| r.mean_error),
                vanished_count: report.as_ref().map(|r| r.vanished_count),
            });
        }
    }
    Ok(rows)
}

/// Runs the harness over every image in `dir`. Work is parallel across
/// images (capped by the RETARGET_THREADS environment variable); row order
/// is deterministic regardless of thread count.
pub fn run_bench(dir: &Path, opts: &BenchOptions) -> Result<BenchReport> {
    let entries = scan_dataset(dir)?;
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("no dataset entries under {}", dir.display())));
    }
    let threads = std::env::var("RETARGET_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_image: Vec<Vec<BenchRow>> = pool.install(|| {
        entries
            .par_iter()
            .map(|(name, image, boxes)| bench_image(name, image, boxes, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport {
        rows: per_image.into_iter().flatten().collect(),
        scales: opts.scales.clone(),
        methods: opts.methods.clone(),
    })
}

fn fmt_scale(scale: f64) -> String {
    format!("{scale:.2}")
}

impl BenchReport {
    /// CSV with one row per (image, method, scale).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,method,scale,mean_error,vanished_count\n");
        for r in &self.rows {
            let (err, van) = match (r.mean_error, r.vanished_count) {
                (Some(e), Some(v)) => (format!("{e:.12}"), v.to_string()),
                _ => ("--".to_string(), "--".to_string()),
            };
            let _ = writeln!(out, "{},{},{},{},{}", r.image, r.method.name(), fmt_scale(r.scale), err, van);
        }
        out
    }

    /// Mean error of a method at a scale over all images, `None` where the
    /// method produced no result.
    pub fn summary_cell(&self, method: Method, scale: f64) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.scale == scale)
            .filter_map(|r| r.mean_error)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    /// Plain-text summary table: methods vertically, scales across.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "method");
        for s in &self.scales {
            let _ = write!(out, "{:>10}", format!("{}x", fmt_scale(*s)));
        }
        out.push('\n');
        for &m in &self.methods {
            let _ = write!(out, "{:<10}", m.name());
            for &s in &self.scales {
                match self.summary_cell(m, s) {
                    Some(v) => {
                        let _ = write!(out, "{:>10.4}", v);
                    }
                    None => {
                        let _ = write!(out, "{:>10}", "--");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::optimize::OptimConfig;

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse("SCL").unwrap(), Method::Scl);
        assert_eq!(Method::parse("objectir").unwrap(), Method::ObjectIr);
        assert!(Method::parse("seam").is_err());
    }

    #[test]
    fn bench_small_dataset_has_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_dataset(dir.path(), &fixtures::suite()[..2]).unwrap();
        let opts = BenchOptions {
            scales: vec![0.5, 1.5],
            methods: vec![Method::Scl, Method::Cr],
            config: JobConfig {
                optimizer: OptimConfig { max_iters: 4, ..Default::default() },
                ..Default::default()
            },
        };
        let report = run_bench(dir.path(), &opts).unwrap();
        assert_eq!(report.rows.len(), 2 * 2 * 2);

        // SCL mapped-box errors are |1 - k| exactly.
        for r in report.rows.iter().filter(|r| r.method == Method::Scl) {
            let out_w = (224.0 * r.scale).round();
            let k = out_w / 224.0;
            assert!((r.mean_error.unwrap() - (1.0 - k).abs()).abs() < 1e-12);
        }
        // CR cannot enlarge.
        for r in report.rows.iter().filter(|r| r.method == Method::Cr && r.scale > 1.0) {
            assert!(r.mean_error.is_none());
        }
        let csv = report.to_csv();
        assert!(csv.lines().count() == 1 + 8);
        assert!(csv.contains("cr,1.50,--,--"));
        let table = report.summary_table();
        assert!(table.contains("scl"));
    }

    #[test]
    fn missing_box_file_skips_image() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_dataset(dir.path(), &fixtures::suite()[..2]).unwrap();
        std::fs::remove_file(dir.path().join("single_01.json")).unwrap();
        let opts = BenchOptions {
            scales: vec![0.5],
            methods: vec![Method::Scl],
            config: JobConfig::default(),
        };
        let report = run_bench(dir.path(), &opts).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].image, "single_00");
    }
}
