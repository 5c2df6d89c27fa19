//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::denoise::save_tensor;
use crate::error::{Error, Result};
use crate::evalkit::{run_eval, EvalManifest, EvalOutcome};
use crate::guidance::{content_loss, LambdaScale};
use crate::imageio::{load_image, save_image, Image};
use crate::latent::Latent;
use crate::mosaic::{
    build_content_mosaic, build_style_mosaic, detect_faces, extract_background,
    extract_stylized_faces, reinsert_faces, BicubicUpscaler, ColorKeyDetector, FaceBox,
    FaceManifest, MosaicLayout, StyleMosaicSpec,
};
use crate::pipeline::{stylize_with_mosaic, synth_fixture, synth_style, PredictorSpec, Stylizer};
use crate::sampler::{invert, SampleTrace};

/// Environment variable holding the log filter, e.g. `info` or `debug`.
pub const LOG_ENV: &str = "FACESTYLE_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "facestyle",
    version,
    about = "Identity-preserving stylization toolkit"
)]
pub struct Cli {
    /// Pipeline config (TOML). Defaults apply for anything not set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Noise schedule utilities.
    #[command(subcommand)]
    Schedule(ScheduleCmd),
    /// Encode an image and invert it to the top of the inversion plan.
    Invert(InvertArgs),
    /// Run the stylization pipeline on one image.
    Stylize(StylizeArgs),
    /// Mosaic building blocks.
    #[command(subcommand)]
    Mosaic(MosaicCmd),
    /// Write a face manifest using the color-key detector.
    Detect(DetectArgs),
    /// Evaluate identity preservation from a manifest.
    Eval(EvalArgs),
    /// Generate fixtures and run both pipelines over a guidance grid.
    Demo(DemoArgs),
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCmd {
    /// Print the schedule as CSV (t, beta, alpha_bar).
    Dump {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// Output tensor file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Style reference, required by the style_pull predictor.
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Stylize through the face mosaic.
    #[arg(long)]
    pub mosaic: bool,
    /// Face manifest; without it the color-key detector runs.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    /// Per-step CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MosaicCmd {
    /// Build a content mosaic and its layout sidecar.
    BuildContent {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        tile_size: Option<usize>,
    },
    /// Grid several style images into one reference.
    BuildStyle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        cell: usize,
        #[arg(required = true)]
        styles: Vec<PathBuf>,
    },
    /// Cut face tiles (face_<id>.png) and the background out of a stylized mosaic.
    Extract {
        #[arg(long)]
        mosaic: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Paste face tiles back over their boxes.
    Reinsert {
        /// Stylized background, or the whole stylized mosaic.
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        /// Directory of face_<id>.png tiles.
        #[arg(long)]
        faces_dir: Option<PathBuf>,
        /// Explicit tile as ID=PATH; repeatable.
        #[arg(long = "face", value_parser = parse_face_arg)]
        faces: Vec<(u32, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        feather: Option<usize>,
    },
}

fn parse_face_arg(s: &str) -> std::result::Result<(u32, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or("expected ID=PATH")?;
    let id = id.parse().map_err(|_| format!("bad face id '{id}'"))?;
    Ok((id, PathBuf::from(path)))
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report CSV; the text table is written next to it with a .txt extension.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    pub dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub fixtures: usize,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("facestyle: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Schedule(ScheduleCmd::Dump { out }) => {
            let schedule = cfg.schedule.build()?;
            let mut buf = Vec::new();
            schedule.write_csv(&mut buf).expect("writing to memory");
            match out {
                Some(p) => write_file(p, &buf),
                None => {
                    print!("{}", String::from_utf8_lossy(&buf));
                    Ok(())
                }
            }
        }
        Command::Invert(a) => cmd_invert(&cfg, a),
        Command::Stylize(a) => cmd_stylize(cfg, a),
        Command::Mosaic(m) => cmd_mosaic(&cfg, m),
        Command::Detect(a) => {
            let img = load_image(&a.image)?;
            let faces = detect_faces(&img, &ColorKeyDetector::default())?;
            log::info!("detected {} faces", faces.len());
            FaceManifest { faces }.save(&a.out)
        }
        Command::Eval(a) => cmd_eval(&cfg, a).map(|_| ()),
        Command::Demo(a) => {
            let cfg = if cli.config.is_some() {
                cfg
            } else {
                demo_config()
            };
            run_demo(&a.dir, &cfg, a.fixtures).map(|_| ())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_trace(path: &Path, trace: &SampleTrace) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).expect("writing to memory");
    write_file(path, &buf)
}

fn load_boxes(boxes: Option<&Path>, img: &Image) -> Result<Vec<FaceBox>> {
    match boxes {
        Some(p) => {
            let faces = FaceManifest::load(p)?.faces;
            crate::mosaic::validate_boxes(&faces, img.width(), img.height())?;
            Ok(faces)
        }
        None => detect_faces(img, &ColorKeyDetector::default()),
    }
}

fn cmd_invert(cfg: &PipelineConfig, a: &InvertArgs) -> Result<()> {
    let img = load_image(&a.content)?;
    let stylizer = cfg.stylizer(None)?;
    let x_c = stylizer.content_latent(&img)?;
    let predictor = crate::denoise::PointMassPredictor::new(x_c.clone());
    let z = invert(&x_c, &predictor, &stylizer.schedule, &cfg.inversion)?;
    save_tensor(&a.out, &z)?;
    cfg.save(&sibling(&a.out, ".config.toml"))
}

fn cmd_stylize(mut cfg: PipelineConfig, a: &StylizeArgs) -> Result<()> {
    if let Some(l) = a.lambda_c {
        cfg.guidance.lambda_c = l;
    }
    let img = load_image(&a.content)?;
    let style = a.style.as_deref().map(load_image).transpose()?;
    let stylizer = cfg.stylizer(style)?;

    let (out, trace) = if a.mosaic {
        let boxes = load_boxes(a.boxes.as_deref(), &img)?;
        log::info!("mosaic with {} faces", boxes.len());
        let traced = TracingStylizer::new(&stylizer);
        let run = stylize_with_mosaic(
            &img,
            &boxes,
            &traced,
            &BicubicUpscaler,
            cfg.mosaic.tile_size,
            cfg.mosaic.feather,
        )?;
        (run.output, traced.take().map(|(t, _)| t))
    } else {
        let (out, trace) = stylizer.stylize_traced(&img)?;
        (out, Some(trace))
    };
    save_image(&out, &a.out)?;
    if let (Some(path), Some(trace)) = (&a.trace, trace) {
        write_trace(path, &trace)?;
    }
    cfg.save(&sibling(&a.out, ".config.toml"))
}

/// Keeps the trace of the last stylization run through it.
struct TracingStylizer<'a> {
    inner: &'a crate::pipeline::DiffusionStylizer,
    last: std::cell::RefCell<Option<(SampleTrace, Latent)>>,
}

impl<'a> TracingStylizer<'a> {
    fn new(inner: &'a crate::pipeline::DiffusionStylizer) -> Self {
        Self {
            inner,
            last: Default::default(),
        }
    }

    /// Trace and content latent of the last run.
    fn take(&self) -> Option<(SampleTrace, Latent)> {
        self.last.borrow_mut().take()
    }
}

impl Stylizer for TracingStylizer<'_> {
    fn stylize(&self, img: &Image) -> Result<Image> {
        let (out, trace) = self.inner.stylize_traced(img)?;
        *self.last.borrow_mut() = Some((trace, self.inner.content_latent(img)?));
        Ok(out)
    }
}

fn cmd_mosaic(cfg: &PipelineConfig, cmd: &MosaicCmd) -> Result<()> {
    match cmd {
        MosaicCmd::BuildContent {
            content,
            boxes,
            out,
            layout,
            tile_size,
        } => {
            let img = load_image(content)?;
            let faces = load_boxes(boxes.as_deref(), &img)?;
            let tile = tile_size.unwrap_or(cfg.mosaic.tile_size);
            let (canvas, lay) = build_content_mosaic(&img, &faces, &BicubicUpscaler, tile)?;
            save_image(&canvas, out)?;
            lay.save(layout)
        }
        MosaicCmd::BuildStyle {
            out,
            rows,
            cols,
            cell,
            styles,
        } => {
            let imgs = styles
                .iter()
                .map(|p| load_image(p))
                .collect::<Result<Vec<_>>>()?;
            let spec = StyleMosaicSpec {
                rows: *rows,
                cols: *cols,
                cell_size: *cell,
            };
            save_image(&build_style_mosaic(&imgs, &spec)?, out)
        }
        MosaicCmd::Extract {
            mosaic,
            layout,
            out_dir,
        } => {
            let img = load_image(mosaic)?;
            let lay = MosaicLayout::load(layout)?;
            create_dir(out_dir)?;
            for (id, face) in extract_stylized_faces(&img, &lay)? {
                save_image(&face, &out_dir.join(format!("face_{id}.png")))?;
            }
            save_image(
                &extract_background(&img, &lay)?,
                &out_dir.join("background.png"),
            )
        }
        MosaicCmd::Reinsert {
            background,
            layout,
            faces_dir,
            faces,
            out,
            feather,
        } => {
            let lay = MosaicLayout::load(layout)?;
            let mut bg = load_image(background)?;
            if bg.dims() == (lay.canvas_w, lay.canvas_h) && lay.canvas_h != lay.background.h {
                bg = extract_background(&bg, &lay)?;
            }
            let mut tiles: BTreeMap<u32, PathBuf> = BTreeMap::new();
            if let Some(dir) = faces_dir {
                let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
                for entry in entries {
                    let path = entry.map_err(|e| Error::io(dir, e))?.path();
                    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    if let Some(id) = name.strip_prefix("face_").and_then(|s| s.parse().ok()) {
                        tiles.insert(id, path);
                    }
                }
            }
            tiles.extend(faces.iter().cloned());
            let imgs = tiles
                .into_iter()
                .map(|(id, p)| Ok((id, load_image(&p)?)))
                .collect::<Result<Vec<_>>>()?;
            let merged = reinsert_faces(
                &bg,
                &imgs,
                &lay.boxes(),
                feather.unwrap_or(cfg.mosaic.feather),
            )?;
            save_image(&merged, out)
        }
    }
}

fn cmd_eval(cfg: &PipelineConfig, a: &EvalArgs) -> Result<EvalOutcome> {
    let manifest = EvalManifest::load(&a.manifest)?;
    let embedder = cfg.embedder.build()?;
    let outcome = run_eval(&manifest, &embedder)?;
    write_file(&a.report, outcome.report.to_csv().as_bytes())?;
    let table = outcome.report.to_table();
    write_file(&a.report.with_extension("txt"), table.as_bytes())?;
    cfg.save(&sibling(&a.report, ".config.toml"))?;
    print!("{table}");
    Ok(outcome)
}

/// Guidance fractions of the per-step stability bound swept by the demo.
pub const DEMO_LAMBDA_GRID: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];

/// Demo defaults: pool-8 codec and a style pull, guidance relative to the
/// stability bound.
pub fn demo_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        predictor: PredictorSpec::StylePull { gamma: 0.5 },
        ..PipelineConfig::default()
    };
    cfg.guidance.lambda_scale = LambdaScale::StabilityRelative;
    cfg
}

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub reports: Vec<(f64, EvalOutcome)>,
}

fn lambda_tag(l: f64) -> String {
    format!("lambda_{l:.2}")
}

/// Fixtures, both pipelines over [`DEMO_LAMBDA_GRID`], traces, and one
/// identity report per grid point.
pub fn run_demo(dir: &Path, base: &PipelineConfig, n_fixtures: usize) -> Result<DemoSummary> {
    base.validate()?;
    create_dir(dir)?;
    let fixtures_dir = dir.join("fixtures");
    create_dir(&fixtures_dir)?;
    let (w, h) = (128, 128);

    let style = synth_style(1000, w, h);
    save_image(&style, &fixtures_dir.join("style.png"))?;

    let mut manifest = String::from("candidate = \"mosaic\"\nbaseline = \"plain\"\n");
    let mut fixtures = Vec::with_capacity(n_fixtures);
    for i in 0..n_fixtures {
        let fx = synth_fixture(i as u64, w, h, 1 + i % 2, 16..36)?;
        let name = format!("img_{i:02}");
        save_image(&fx.image, &fixtures_dir.join(format!("{name}.png")))?;
        FaceManifest {
            faces: fx.boxes.clone(),
        }
        .save(&fixtures_dir.join(format!("{name}.faces.toml")))?;
        fixtures.push((name, fx));
    }

    let mut sweep = String::from("lambda_fraction,pipeline,mean_final_content_loss\n");
    for &l in &DEMO_LAMBDA_GRID {
        let mut cfg = base.clone();
        cfg.guidance.lambda_c = l;
        let stylizer = cfg.stylizer(Some(style.clone()))?;
        let tag = lambda_tag(l);
        for pipeline in ["plain", "mosaic"] {
            let out_dir = dir.join(pipeline).join(&tag);
            create_dir(&out_dir)?;
            let mut loss_sum = 0.0;
            for (name, fx) in &fixtures {
                let traced = TracingStylizer::new(&stylizer);
                let out = if pipeline == "mosaic" {
                    stylize_with_mosaic(
                        &fx.image,
                        &fx.boxes,
                        &traced,
                        &BicubicUpscaler,
                        cfg.mosaic.tile_size,
                        cfg.mosaic.feather,
                    )?
                    .output
                } else {
                    traced.stylize(&fx.image)?
                };
                let (trace, x_c) = traced.take().expect("stylizer ran");
                loss_sum += content_loss(trace.final_latent(), &x_c, cfg.guidance.reduction)?;
                save_image(&out, &out_dir.join(format!("{name}.png")))?;
                write_trace(&out_dir.join(format!("{name}.trace.csv")), &trace)?;
            }
            let _ = writeln!(
                sweep,
                "{l},{pipeline},{:.9e}",
                loss_sum / fixtures.len() as f64
            );
        }
    }
    write_file(&dir.join("sweep.csv"), sweep.as_bytes())?;

    manifest.push('\n');
    for (name, _) in &fixtures {
        let _ = writeln!(manifest, "[[entries]]");
        let _ = writeln!(manifest, "id = \"{name}\"");
        let _ = writeln!(manifest, "content = \"fixtures/{name}.png\"");
        let _ = writeln!(manifest, "style = \"stripes\"");
        let _ = writeln!(manifest, "boxes = \"fixtures/{name}.faces.toml\"");
        let _ = writeln!(manifest, "[entries.variants]");
        for &l in &DEMO_LAMBDA_GRID {
            for pipeline in ["plain", "mosaic"] {
                let tag = lambda_tag(l);
                let _ = writeln!(
                    manifest,
                    "\"{pipeline}_{tag}\" = \"{pipeline}/{tag}/{name}.png\""
                );
            }
        }
        manifest.push('\n');
    }
    let manifest_path = dir.join("eval_manifest.toml");
    write_file(&manifest_path, manifest.as_bytes())?;

    let embedder = base.embedder.build()?;
    let parsed = EvalManifest::load(&manifest_path)?;
    let mut reports = Vec::new();
    for &l in &DEMO_LAMBDA_GRID {
        let tag = lambda_tag(l);
        let mut m = parsed.clone();
        m.candidate = format!("mosaic_{tag}");
        m.baseline = format!("plain_{tag}");
        let outcome = run_eval(&m, &embedder)?;
        write_file(
            &dir.join(format!("report_{tag}.csv")),
            outcome.report.to_csv().as_bytes(),
        )?;
        write_file(
            &dir.join(format!("report_{tag}.txt")),
            outcome.report.to_table().as_bytes(),
        )?;
        reports.push((l, outcome));
    }
    base.save(&dir.join("config.toml"))?;
    Ok(DemoSummary { reports })
}
