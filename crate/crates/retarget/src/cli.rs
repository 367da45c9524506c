//! Command-line surface: retarget, evaluate, bench, gradcheck.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O or parse failure,
//! 4 optimizer/numerical failure, 5 fold-over surviving the restart.
//! Diagnostics go to stderr; with `--json`, stdout carries only
//! machine-readable output.

use crate::bench::{run_bench, BenchOptions, Method};
use crate::error::{Error, Result};
use crate::geometry::{build_rigid_mesh, Mesh, ObjectBox};
use crate::io::{
    load_boxes, load_config, load_image, load_mesh, save_json, save_mesh, save_png, JobConfig,
};
use crate::metric::measure_result;
use crate::pipeline::{retarget_auto, EnlargeMode, RetargetOutput, WarpDirection};
use crate::viz::{compose_panel, draw_boxes, draw_mesh_overlay};
use crate::warp::retarget_warp;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "retarget", version, about = "Content-aware image retargeting by mesh-warp optimization")]
struct Cli {
    /// Print only machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Retarget one image to a new size.
    Retarget(RetargetArgs),
    /// Score a saved mesh against object boxes.
    Evaluate(EvaluateArgs),
    /// Run retargeting methods over a dataset directory into a CSV report.
    Bench(BenchArgs),
    /// Check the analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct RetargetArgs {
    /// Input image (PNG or JPEG).
    #[arg(long)]
    input: PathBuf,
    /// Object box file; omit to fall back to plain scaling.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Width factor; the height stays fixed.
    #[arg(long, conflicts_with_all = ["width", "height"])]
    scale: Option<f64>,
    /// Target width in pixels.
    #[arg(long)]
    width: Option<u32>,
    /// Target height in pixels.
    #[arg(long)]
    height: Option<u32>,
    /// JSON job configuration; explicit flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Write the full-resolution deformed mesh as JSON.
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Skip optimization and warp through a previously dumped mesh.
    #[arg(long)]
    load_mesh: Option<PathBuf>,
    /// Write one JSON line per optimizer iteration.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    /// Write diagnostic overlays with this path prefix.
    #[arg(long)]
    viz: Option<PathBuf>,
    /// Enlargement strategy: invert (default) or direct.
    #[arg(long)]
    enlarge_mode: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Box file with input-space objects.
    #[arg(long)]
    input_boxes: PathBuf,
    /// Deformed mesh JSON (from --dump-mesh).
    #[arg(long)]
    mesh: PathBuf,
    /// Output rectangle as WxH, e.g. 112x224.
    #[arg(long)]
    out_size: String,
    /// Input rectangle as WxH; read from the box file's image when omitted.
    #[arg(long)]
    in_size: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory of images with sibling <stem>.json box files.
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Comma-separated width factors.
    #[arg(long, default_value = "0.5,0.75,1.25,1.5,1.75")]
    scales: String,
    /// Comma-separated methods out of objectir, scl, cr.
    #[arg(long, default_value = "objectir,scl,cr")]
    methods: String,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed recorded into the optimizer configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Corrupt one analytic component so the check must fail.
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Unsupported(_)
        | Error::DegenerateInput(_)
        | Error::UndefinedMetric(_) => 2,
        Error::Io { .. } | Error::Parse { .. } | Error::Codec(_) => 3,
        Error::OptimizerDiverged { .. }
        | Error::OutOfBounds { .. }
        | Error::OutsideMesh { .. }
        | Error::NonConvergence { .. } => 4,
        Error::FoldOver(_) => 5,
    }
}

/// Parses arguments and runs the selected command, returning the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Retarget(args) => cmd_retarget(args, cli.json),
        Command::Evaluate(args) => cmd_evaluate(args, cli.json),
        Command::Bench(args) => cmd_bench(args, cli.json),
        Command::Gradcheck(args) => cmd_gradcheck(args, cli.json),
    }
}

fn parse_size(text: &str) -> Result<(u32, u32)> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidArgument(format!("size must be WxH, got '{text}'")))?;
    let w: u32 = w.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad width in '{text}'")))?;
    let h: u32 = h.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad height in '{text}'")))?;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("size components must be positive".into()));
    }
    Ok((w, h))
}

fn target_size(args: &RetargetArgs, in_w: u32, in_h: u32) -> Result<(u32, u32)> {
    if let Some(k) = args.scale {
        if !(k > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {k}")));
        }
        // Width-resizing convention: the height stays fixed.
        return Ok((((in_w as f64 * k).round() as u32).max(1), in_h));
    }
    match (args.width, args.height) {
        (None, None) => Err(Error::InvalidArgument("give --scale or --width/--height".into())),
        (w, h) => Ok((w.unwrap_or(in_w), h.unwrap_or(in_h))),
    }
}

fn load_job_config(path: Option<&PathBuf>) -> Result<JobConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(JobConfig::default()),
    }
}

fn write_viz(prefix: &Path, input: &crate::image::Image, boxes: &[ObjectBox], out: &RetargetOutput) -> Result<()> {
    let stroke = [0.1, 1.0, 0.2];
    let with_prefix = |suffix: &str| -> PathBuf {
        let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(suffix);
        prefix.with_file_name(name)
    };
    let mesh_panel = draw_mesh_overlay(&out.image, &out.mesh, stroke);
    save_png(&with_prefix("_mesh.png"), &mesh_panel)?;
    let boxes_panel = draw_boxes(input, boxes, [1.0, 0.2, 0.2]);
    save_png(&with_prefix("_boxes.png"), &boxes_panel)?;
    let panel = compose_panel(&[input, &out.image])?;
    save_png(&with_prefix("_panel.png"), &panel)?;
    Ok(())
}

fn cmd_retarget(args: RetargetArgs, json: bool) -> Result<i32> {
    let input = load_image(&args.input)?;
    let boxes = match &args.boxes {
        Some(path) => load_boxes(path)?.1,
        None => Vec::new(),
    };
    let (out_w, out_h) = target_size(&args, input.width(), input.height())?;
    let mut config = load_job_config(args.config.as_ref())?;
    if let Some(mode) = &args.enlarge_mode {
        config.enlarge_mode = match mode.as_str() {
            "invert" => EnlargeMode::Invert,
            "direct" => EnlargeMode::Direct,
            other => return Err(Error::InvalidArgument(format!("enlarge mode must be invert or direct, got '{other}'"))),
        };
    }

    if let Some(mesh_path) = &args.load_mesh {
        return retarget_with_mesh(&args, json, &input, mesh_path, out_w, out_h);
    }

    let result = retarget_auto(&input, &boxes, out_w, out_h, &config)?;
    save_png(&args.out, &result.image)?;
    if let Some(path) = &args.dump_mesh {
        save_mesh(path, &result.mesh)?;
    }
    if let Some(path) = &args.loss_trace {
        let mut text = String::new();
        for entry in &result.trace {
            text.push_str(&serde_json::to_string(entry).expect("trace serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    if let Some(prefix) = &args.viz {
        write_viz(prefix, &input, &boxes, &result)?;
    }

    if json {
        println!(
            "{}",
            serde_json::json!({
                "output": args.out,
                "width": result.image.width(),
                "height": result.image.height(),
                "direction": format!("{:?}", result.direction),
                "uncovered": result.uncovered,
                "scl_fallback": result.scl_fallback,
                "loss": result.report,
            })
        );
    } else {
        println!(
            "wrote {} ({}x{}, uncovered {}, final total loss {:.6})",
            args.out.display(),
            result.image.width(),
            result.image.height(),
            result.uncovered,
            result.report.total
        );
    }
    Ok(0)
}

fn retarget_with_mesh(
    args: &RetargetArgs,
    json: bool,
    input: &crate::image::Image,
    mesh_path: &Path,
    out_w: u32,
    out_h: u32,
) -> Result<i32> {
    let mesh: Mesh = load_mesh(mesh_path)?;
    if (mesh.width() - out_w as f64).abs() > 0.5 || (mesh.height() - out_h as f64).abs() > 0.5 {
        return Err(Error::InvalidArgument(format!(
            "mesh covers {:.0}x{:.0} but the requested output is {out_w}x{out_h}",
            mesh.width(),
            mesh.height()
        )));
    }
    let mesh_in = build_rigid_mesh(input.width() as f64, input.height() as f64, mesh.rows(), mesh.cols())?;
    let warped = retarget_warp(input, &mesh_in, &mesh, out_w, out_h)?;
    save_png(&args.out, &warped.image)?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "output": args.out,
                "width": out_w,
                "height": out_h,
                "uncovered": warped.uncovered,
            })
        );
    } else {
        println!("wrote {} ({out_w}x{out_h}, uncovered {})", args.out.display(), warped.uncovered);
    }
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs, json: bool) -> Result<i32> {
    let (_, boxes) = load_boxes(&args.input_boxes)?;
    if boxes.is_empty() {
        return Err(Error::UndefinedMetric("evaluation needs at least one valid box".into()));
    }
    let mesh = load_mesh(&args.mesh)?;
    let (out_w, out_h) = parse_size(&args.out_size)?;
    let (in_w, in_h) = match &args.in_size {
        Some(text) => parse_size(text)?,
        None => {
            let box_file = load_boxes(&args.input_boxes)?.0;
            let image_path = args
                .input_boxes
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&box_file.image);
            let img = load_image(&image_path)?;
            (img.width(), img.height())
        }
    };

    // A mesh covering the output rectangle is the reduction convention; one
    // covering the input comes from the inverted enlargement path.
    let covers = |m: &Mesh, w: u32, h: u32| (m.width() - w as f64).abs() < 0.5 && (m.height() - h as f64).abs() < 0.5;
    let report = if covers(&mesh, out_w, out_h) {
        let mesh_in = build_rigid_mesh(in_w as f64, in_h as f64, mesh.rows(), mesh.cols())?;
        measure_result(&mesh_in, &mesh, &boxes, out_w, out_h)?
    } else if covers(&mesh, in_w, in_h) {
        let mesh_out = build_rigid_mesh(out_w as f64, out_h as f64, mesh.rows(), mesh.cols())?;
        measure_result(&mesh, &mesh_out, &boxes, out_w, out_h)?
    } else {
        return Err(Error::InvalidArgument(format!(
            "mesh covers {:.0}x{:.0}, matching neither the input {in_w}x{in_h} nor the output {out_w}x{out_h}",
            mesh.width(),
            mesh.height()
        )));
    };

    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if !json {
        eprintln!("mean distortion error {:.6} ({} vanished)", report.mean_error, report.vanished_count);
    }
    Ok(0)
}

fn cmd_bench(args: BenchArgs, json: bool) -> Result<i32> {
    let mut config = load_job_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.optimizer.seed = seed;
    }
    let mut scales = Vec::new();
    for part in args.scales.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad scale '{part}'")))?;
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("scales must be positive, got {v}")));
        }
        scales.push(v);
    }
    let methods = args
        .methods
        .split(',')
        .map(Method::parse)
        .collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions { scales, methods, config };
    let report = run_bench(&args.dataset_dir, &opts)?;
    std::fs::write(&args.out, report.to_csv()).map_err(|e| Error::io(&args.out, e))?;
    if json {
        let rows: Vec<_> = report
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "image": r.image,
                    "method": r.method.name(),
                    "scale": r.scale,
                    "mean_error": r.mean_error,
                    "vanished_count": r.vanished_count,
                })
            })
            .collect();
        println!("{}", serde_json::json!({ "csv": args.out, "rows": rows }));
    } else {
        println!("wrote {}", args.out.display());
        print!("{}", report.summary_table());
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs, json: bool) -> Result<i32> {
    let cfg = crate::optimize::GradCheckConfig {
        trials: args.trials,
        seed: args.seed,
        corrupt: if args.corrupt { 1e-3 } else { 0.0 },
        ..Default::default()
    };
    let report = crate::optimize::gradcheck_gb(&cfg)?;
    if json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!(
            "gradcheck: {} trials, {} components checked, {} excluded, max relative error {:.3e} -> {}",
            report.trials,
            report.checked_components,
            report.excluded_components,
            report.max_rel_err,
            if report.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if report.pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn run_args(args: &[&str]) -> i32 {
        run(std::iter::once("retarget").chain(args.iter().copied()))
    }

    #[test]
    fn bad_arguments_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.png");
        save_png(&img, &fixtures::textured_background(32, 32, 1)).unwrap();
        // No size given.
        let code = run_args(&["retarget", "--input", img.to_str().unwrap(), "--out", dir.path().join("o.png").to_str().unwrap()]);
        assert_eq!(code, 2);
        // Unknown flag is a clap usage error.
        assert_eq!(run_args(&["retarget", "--nope"]), 2);
    }

    #[test]
    fn missing_input_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_args(&[
            "retarget",
            "--input",
            dir.path().join("absent.png").to_str().unwrap(),
            "--scale",
            "0.5",
            "--out",
            dir.path().join("o.png").to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn exit_code_mapping() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::Unsupported("x".into())), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&Error::OptimizerDiverged { iter: 1, loss: f64::NAN }), 4);
        assert_eq!(exit_code(&Error::FoldOver(vec![(0, 0)])), 5);
    }

    #[test]
    fn parse_size_formats() {
        assert_eq!(parse_size("112x224").unwrap(), (112, 224));
        assert_eq!(parse_size("64X32").unwrap(), (64, 32));
        assert!(parse_size("112").is_err());
        assert!(parse_size("0x5").is_err());
    }

    #[test]
    fn scale_one_round_trips_image() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = &fixtures::suite()[0];
        fixtures::write_dataset(dir.path(), std::slice::from_ref(fixture)).unwrap();
        let img = dir.path().join("single_00.png");
        let boxes = dir.path().join("single_00.json");
        let out = dir.path().join("out.png");
        let mesh = dir.path().join("mesh.json");
        let code = run_args(&[
            "retarget",
            "--input",
            img.to_str().unwrap(),
            "--boxes",
            boxes.to_str().unwrap(),
            "--scale",
            "1.0",
            "--out",
            out.to_str().unwrap(),
            "--dump-mesh",
            mesh.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let input = load_image(&img).unwrap();
        let output = load_image(&out).unwrap();
        assert_eq!(output.width(), 224);
        assert!(input.mean_abs_diff(&output) < 1e-3);

        // The dumped mesh feeds --load-mesh and evaluate.
        let out2 = dir.path().join("out2.png");
        let code = run_args(&[
            "retarget",
            "--input",
            img.to_str().unwrap(),
            "--scale",
            "1.0",
            "--load-mesh",
            mesh.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let roundtrip = load_image(&out2).unwrap();
        assert_eq!(roundtrip.max_abs_diff(&output), 0.0);

        let code = run_args(&[
            "evaluate",
            "--input-boxes",
            boxes.to_str().unwrap(),
            "--mesh",
            mesh.to_str().unwrap(),
            "--out-size",
            "224x224",
            "--in-size",
            "224x224",
        ]);
        assert_eq!(code, 0);
    }

    #[test]
    fn gradcheck_negative_control() {
        assert_eq!(run_args(&["gradcheck", "--trials", "3"]), 0);
        assert_ne!(run_args(&["gradcheck", "--trials", "3", "--corrupt"]), 0);
    }
}
