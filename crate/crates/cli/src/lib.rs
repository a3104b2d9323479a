//! `trifuse` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal invariant violation.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use trifuse_core::eval::{
    score_tensors, substitutions_for, Aggregates, Metric, Reconstructor, ReconstructorKind,
    ScoreReport,
};
use trifuse_core::synth::{build_sequence, Bundle, CameraRig, SceneSpec};
use trifuse_core::triplane::{load_triplane, save_triplane};
use trifuse_core::warp::{
    apply_warp, invert_warp, load_warp, save_warp, synth_distortion, ORACLE_ITERATIONS,
    ORACLE_TOLERANCE,
};
use trifuse_core::{render, Error, ImageFormat};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e:#}"),
            CliError::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        if e.downcast_ref::<Error>().is_some() || e.downcast_ref::<std::io::Error>().is_some() {
            CliError::Data(e)
        } else {
            CliError::Internal(e)
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "trifuse",
    version,
    about = "Synthetic triplane undistortion, fusion and multi-view evaluation"
)]
pub struct Cli {
    /// Worker threads (results are identical for any value).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with defaults for any flag; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence bundle.
    Gen(GenArgs),
    /// Render a triplane from one of the bundle cameras.
    Render(RenderArgs),
    /// Warp a triplane by a seeded smooth distortion.
    Distort(DistortArgs),
    /// Undo a known distortion.
    Undistort(UndistortArgs),
    /// Fuse a frame's triplane with the canonical triplane.
    Fuse(FuseArgs),
    /// Fill score tensors for a reconstructor and write reports.
    Eval(EvalArgs),
    /// Summarize an existing JSON report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output bundle directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 8]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Number of cameras, view 0 frontal [default: 4].
    #[arg(long)]
    pub views: Option<usize>,
    /// Triplane channels [default: 8].
    #[arg(long)]
    pub channels: Option<usize>,
    /// Triplane plane resolution [default: 128].
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Visibility triplane resolution [default: 64].
    #[arg(long)]
    pub visibility_resolution: Option<usize>,
    /// Image width and height [default: 128].
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Samples per ray [default: 64].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Ground-truth image format: png or pfm [default: pfm].
    #[arg(long)]
    pub image_format: Option<ImageFormat>,
    /// Per-view color augmentation strength in [0, 1] [default: 0].
    #[arg(long)]
    pub augment: Option<f32>,
    /// Raw-triplane distortion at 90 degrees of yaw, in texels [default: 6].
    #[arg(long)]
    pub distortion: Option<f32>,
    /// Largest camera yaw in degrees [default: 60].
    #[arg(long)]
    pub max_yaw: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Output image (.png or .pfm, or set --image-format).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Triplane file to render instead of a reconstruction.
    #[arg(long)]
    pub triplane: Option<PathBuf>,
    /// [default: perfect]
    #[arg(long)]
    pub reconstructor: Option<ReconstructorKind>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 0)]
    pub input_view: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_view: usize,
    #[arg(long)]
    pub image_format: Option<ImageFormat>,
}

#[derive(Debug, Args)]
pub struct DistortArgs {
    #[arg(long)]
    pub triplane: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the displacement field.
    #[arg(long)]
    pub field_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest displacement in texels.
    #[arg(long, default_value_t = 4.0)]
    pub magnitude: f32,
    /// Lattice spacing in texels.
    #[arg(long, default_value_t = 32.0)]
    pub smoothness: f32,
}

#[derive(Debug, Args)]
pub struct UndistortArgs {
    /// Distorted triplane (or use --bundle with --frame/--view).
    #[arg(long)]
    pub triplane: Option<PathBuf>,
    /// Displacement field that produced it.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    /// Fuse the raw triplane without undistorting it first.
    #[arg(long)]
    pub no_undistort: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Report directory [default: <bundle>/reports].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// perfect, canonical, identity, undistort, fuse or undistort+fuse [default: undistort+fuse].
    #[arg(long)]
    pub reconstructor: Option<ReconstructorKind>,
    /// psnr, l1 or ssim; repeat or comma-separate for several [default: psnr].
    #[arg(long, value_delimiter = ',')]
    pub metric: Vec<Metric>,
    /// Accepted for symmetry; evaluation draws no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `eval`.
    pub report: PathBuf,
}

/// Values a `--config` file may provide; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub frames: Option<usize>,
    pub views: Option<usize>,
    pub channels: Option<usize>,
    pub resolution: Option<usize>,
    pub visibility_resolution: Option<usize>,
    pub image_size: Option<usize>,
    pub samples: Option<usize>,
    pub image_format: Option<ImageFormat>,
    pub augment: Option<f32>,
    pub distortion: Option<f32>,
    pub max_yaw: Option<f64>,
    pub metric: Option<Vec<Metric>>,
    pub reconstructor: Option<ReconstructorKind>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(anyhow!("reading config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// Parses `args` and runs the selected subcommand, writing human-readable
/// output to `out`.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}").map_err(|e| CliError::Internal(e.into()))?;
                return Ok(());
            }
            return Err(usage(e.to_string()));
        }
    };
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let threads = cli.threads.or(cfg.threads);
    match threads {
        Some(0) => Err(usage("--threads must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Internal(e.into()))?;
            pool.install(|| dispatch(cli.command, &cfg, out))
        }
        None => dispatch(cli.command, &cfg, out),
    }
}

/// Runs the CLI and maps the outcome to a process exit code.
pub fn main_with_code<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    match run(args, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn dispatch(cmd: Command, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Gen(a) => cmd_gen(a, cfg, out),
        Command::Render(a) => cmd_render(a, cfg, out),
        Command::Distort(a) => cmd_distort(a, cfg, out),
        Command::Undistort(a) => cmd_undistort(a, cfg, out),
        Command::Fuse(a) => cmd_fuse(a, cfg, out),
        Command::Eval(a) => cmd_eval(a, cfg, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn required(
    flag: Option<PathBuf>,
    file: &Option<PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| usage(format!("--{name} is required")))
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(msg)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Internal(e.into()))
}

/// Builds the scene spec for `gen` from flags, config file and defaults.
pub fn gen_spec(a: &GenArgs, cfg: &ConfigFile) -> Result<SceneSpec, CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let frames = a.frames.or(cfg.frames).unwrap_or(8);
    let views = a.views.or(cfg.views).unwrap_or(4);
    if frames < 1 {
        return Err(usage("--frames must be >= 1"));
    }
    if views < 2 {
        return Err(usage(format!(
            "--views must be >= 2 (one input and one novel view), got {views}"
        )));
    }
    let mut spec = SceneSpec::new(seed, frames, views);
    if let Some(c) = a.channels.or(cfg.channels) {
        spec.channels = c;
    }
    if let Some(r) = a.resolution.or(cfg.resolution) {
        spec.resolution = r;
    }
    if let Some(r) = a.visibility_resolution.or(cfg.visibility_resolution) {
        spec.visibility.resolution = r;
    }
    if let Some(s) = a.image_size.or(cfg.image_size) {
        spec.render.width = s;
        spec.render.height = s;
    }
    if let Some(s) = a.samples.or(cfg.samples) {
        spec.render.samples_per_ray = s;
    }
    if let Some(f) = a.image_format.or(cfg.image_format) {
        spec.image_format = f;
    }
    if let Some(d) = a.distortion.or(cfg.distortion) {
        spec.distortion_magnitude = d;
    }
    if let Some(y) = a.max_yaw.or(cfg.max_yaw) {
        spec.rig = CameraRig {
            max_yaw_deg: y,
            ..spec.rig
        };
    }
    if let Some(s) = a.augment.or(cfg.augment) {
        if !(0.0..=1.0).contains(&s) {
            return Err(usage(format!("--augment must lie in [0, 1], got {s}")));
        }
        if s > 0.0 {
            spec = spec.with_random_augmentation(s);
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_gen(a: GenArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let root = required(a.out.clone(), &cfg.out, "out")?;
    let spec = gen_spec(&a, cfg)?;
    let bundle = build_sequence(&spec)?;
    bundle.write(&root)?;
    say(
        out,
        format_args!(
            "wrote bundle {} ({} frames x {} views, spec {})",
            root.display(),
            spec.frames,
            spec.views,
            &spec.hash()[..12]
        ),
    )
}

fn load_bundle(flag: Option<PathBuf>, cfg: &ConfigFile) -> Result<Bundle, CliError> {
    let root = required(flag, &cfg.bundle, "bundle")?;
    Ok(Bundle::load(&root).with_context(|| format!("loading bundle {}", root.display()))?)
}

fn check_indices(bundle: &Bundle, frame: usize, views: &[usize]) -> Result<(), CliError> {
    if frame >= bundle.frames() {
        return Err(usage(format!(
            "frame {frame} out of range (bundle has {})",
            bundle.frames()
        )));
    }
    for &v in views {
        if v >= bundle.views() {
            return Err(usage(format!(
                "view {v} out of range (bundle has {})",
                bundle.views()
            )));
        }
    }
    Ok(())
}

fn image_format_for(path: &Path, flag: Option<ImageFormat>) -> ImageFormat {
    flag.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => ImageFormat::Pfm,
        _ => ImageFormat::Png,
    })
}

fn cmd_render(a: RenderArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let dest = required(a.out, &cfg.out, "out")?;
    let bundle = load_bundle(a.bundle, cfg)?;
    check_indices(&bundle, a.frame, &[a.input_view, a.eval_view])?;
    let (tri, what) = match &a.triplane {
        Some(p) => (load_triplane(p)?, p.display().to_string()),
        None => {
            let kind = a
                .reconstructor
                .or(cfg.reconstructor)
                .unwrap_or(ReconstructorKind::Perfect);
            (
                kind.reconstruct(&bundle, a.frame, a.input_view)?,
                kind.name().to_string(),
            )
        }
    };
    let img = render(
        &tri,
        bundle.camera(a.eval_view),
        &bundle.spec.render,
        Some(&bundle.spec.shoulder(a.frame)),
    )?;
    img.save(
        &dest,
        image_format_for(&dest, a.image_format.or(cfg.image_format)),
    )?;
    say(
        out,
        format_args!(
            "rendered {what} from view {} to {}",
            a.eval_view,
            dest.display()
        ),
    )
}

fn cmd_distort(a: DistortArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let dest = required(a.out, &cfg.out, "out")?;
    let tri = load_triplane(&a.triplane)?;
    let d = tri.dims();
    let field = synth_distortion(
        a.seed.or(cfg.seed).unwrap_or(0),
        d.height,
        d.width,
        a.magnitude,
        a.smoothness,
    )?;
    save_triplane(&apply_warp(&tri, &field)?, &dest)?;
    if let Some(f) = &a.field_out {
        save_warp(&field, f)?;
    }
    say(
        out,
        format_args!(
            "distorted {} (max {:.3} texels) to {}",
            a.triplane.display(),
            field.max_magnitude(),
            dest.display()
        ),
    )
}

fn cmd_undistort(a: UndistortArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let dest = required(a.out, &cfg.out, "out")?;
    let (raw, field) = match (a.triplane, a.field) {
        (Some(t), Some(f)) => (load_triplane(&t)?, load_warp(&f)?),
        (None, None) => {
            let bundle = load_bundle(a.bundle, cfg)?;
            check_indices(&bundle, a.frame, &[a.view])?;
            (
                bundle.raw(a.frame, a.view).clone(),
                bundle.distortion(a.frame, a.view).clone(),
            )
        }
        _ => return Err(usage("--triplane and --field must be given together")),
    };
    field.check_matches(raw.dims())?;
    let inv = invert_warp(&field, ORACLE_ITERATIONS, ORACLE_TOLERANCE)?;
    save_triplane(&apply_warp(&raw, &inv)?, &dest)?;
    say(
        out,
        format_args!("undistorted triplane written to {}", dest.display()),
    )
}

fn cmd_fuse(a: FuseArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let dest = required(a.out, &cfg.out, "out")?;
    let bundle = load_bundle(a.bundle, cfg)?;
    check_indices(&bundle, a.frame, &[a.view])?;
    let kind = if a.no_undistort {
        ReconstructorKind::Fuse
    } else {
        ReconstructorKind::UndistortFuse
    };
    let fused = kind.reconstruct(&bundle, a.frame, a.view)?;
    save_triplane(&fused, &dest)?;
    let d = fused.dims();
    let vis = bundle
        .visibility(a.frame, a.view)
        .resample(d.height, d.width);
    let cano = bundle.canonical_visibility().resample(d.height, d.width);
    let share = vis
        .as_slice()
        .iter()
        .zip(cano.as_slice())
        .map(|(&u, &c)| f64::from((1.0 - u) * c))
        .sum::<f64>()
        / vis.as_slice().len() as f64;
    say(
        out,
        format_args!(
            "{} triplane written to {} (mean canonical weight {share:.4})",
            kind.name(),
            dest.display()
        ),
    )
}

fn report_stem(kind: ReconstructorKind, metric: Metric) -> String {
    format!("{}_{}", kind.name().replace('+', "_"), metric.name())
}

fn cmd_eval(a: EvalArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<(), CliError> {
    let root = required(a.bundle, &cfg.bundle, "bundle")?;
    let dest = a
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| root.join("reports"));
    let kind = a
        .reconstructor
        .or(cfg.reconstructor)
        .unwrap_or(ReconstructorKind::UndistortFuse);
    let mut metrics = if a.metric.is_empty() {
        cfg.metric.clone().unwrap_or_else(|| vec![Metric::Psnr])
    } else {
        a.metric
    };
    metrics.dedup();
    for m in &metrics {
        m.check_available()?;
    }
    let bundle =
        Bundle::load(&root).with_context(|| format!("loading bundle {}", root.display()))?;
    let tensors = score_tensors(&kind, &bundle, &metrics, &bundle.spec.render)?;
    say(out, format_args!("reconstructor: {}", kind.name()))?;
    say(
        out,
        format_args!(
            "{:<8} {:>12} {:>12} {:>12} {:>12}",
            "metric", "s", "s_NV", "NVV", "IVV"
        ),
    )?;
    for (m, t) in metrics.iter().zip(&tensors) {
        let report = ScoreReport::new(
            t,
            kind.name(),
            substitutions_for(kind, *m),
            bundle.spec_hash(),
        );
        report.write(&dest, &report_stem(kind, *m))?;
        print_aggregates(out, m.name(), &report.aggregates)?;
    }
    say(out, format_args!("reports written to {}", dest.display()))
}

fn print_aggregates(out: &mut dyn Write, metric: &str, a: &Aggregates) -> Result<(), CliError> {
    say(
        out,
        format_args!(
            "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            metric, a.overall, a.nvs, a.nvv, a.ivv
        ),
    )
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = ScoreReport::load(&a.report)?;
    let tensor = report.tensor()?;
    let recomputed = Aggregates::of(&tensor);
    let stored = report.aggregates;
    for (x, y) in [
        (recomputed.overall, stored.overall),
        (recomputed.nvs, stored.nvs),
        (recomputed.nvv, stored.nvv),
        (recomputed.ivv, stored.ivv),
    ] {
        if (x - y).abs() > 1e-9 {
            return Err(CliError::Data(anyhow!(
                "stored aggregates disagree with the tensor ({y} vs recomputed {x})"
            )));
        }
    }
    let [t, n, _] = report.shape;
    say(out, format_args!("report: {}", a.report.display()))?;
    say(
        out,
        format_args!(
            "reconstructor: {}  tensor: {t} frames x {n} input views x {n} eval views",
            report.metadata.reconstructor
        ),
    )?;
    say(
        out,
        format_args!("bundle spec: {}", report.metadata.bundle_spec_hash),
    )?;
    for s in &report.metadata.substitutions {
        say(out, format_args!("substitution: {s}"))?;
    }
    say(
        out,
        format_args!(
            "{:<8} {:>12} {:>12} {:>12} {:>12}",
            "metric", "s", "s_NV", "NVV", "IVV"
        ),
    )?;
    print_aggregates(out, &report.metadata.metric, &stored)
}
