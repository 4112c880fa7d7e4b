//! `hrf`: synthesize datasets, train, render and evaluate hybrid radiance
//! fields.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use hybrid_radiance::checkpoint::Checkpoint;
use hybrid_radiance::dataset::{CameraEntry, Dataset, DatasetManifest, Role, MANIFEST_FILE};
use hybrid_radiance::geometry::{boundary_from_disparity, normalize_scene, PosedCamera, Projection};
use hybrid_radiance::renderer::{
    colorize_depth, read_png_linear, render_image, write_fdepth, write_png, write_png_rgb8,
};
use hybrid_radiance::scenes::{
    center_rig, export_dataset, make_rig_with, preset, RigIntrinsics, DEFAULT_SAMPLES_PER_UNIT,
    PRESETS,
};
use hybrid_radiance::training::{
    cameras_in_frame, evaluate, prepare_frame, psnr, ssim, test_views, train_loop, EvalReport,
    ImageScore, TrainConfig, TrainData, Trainer, LOG_HEADER,
};
use hybrid_radiance::{Error, Result};

#[derive(Parser)]
#[command(name = "hrf", version, about = "Hybrid foreground/background radiance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a synthetic dataset from an analytic preset scene.
    Synth(SynthArgs),
    /// Train a field on a dataset.
    Train(TrainArgs),
    /// Render a view from a checkpoint.
    Render(RenderArgs),
    /// Score test views and print a JSON report.
    Eval(EvalArgs),
    /// Boundary radius from focal length, baseline and disparity.
    Boundary(BoundaryArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, required_unless_present = "list_presets")]
    preset: Option<String>,
    #[arg(long, required_unless_present = "list_presets")]
    out: Option<PathBuf>,
    /// Print the preset names and exit.
    #[arg(long)]
    list_presets: bool,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Icosahedral subdivision level.
    #[arg(long, default_value_t = 2)]
    subdiv: usize,
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Keep cameras on the full sphere instead of the upper hemisphere.
    #[arg(long)]
    full_sphere: bool,
    /// Half field of view at the image circle edge, in degrees.
    #[arg(long, default_value_t = 90.0)]
    half_fov: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_UNIT)]
    samples_per_unit: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Absolute boundary radius, overriding config and manifest.
    #[arg(long = "t-b")]
    t_b: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with_all = ["config", "seed", "t_b"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Camera index in the dataset manifest given by --data.
    #[arg(long, requires = "data", conflicts_with = "pose")]
    camera_index: Option<usize>,
    /// JSON camera (model, width, height, fx, fy, cx, cy, c2w) in dataset
    /// coordinates.
    #[arg(long, required_unless_present = "camera_index")]
    pose: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the foreground depth as FDEPTH1, plus a colorized PNG
    /// next to it.
    #[arg(long)]
    depth: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "pred")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Score this image against the test view instead of rendering.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Args)]
struct BoundaryArgs {
    /// Focal length in pixels.
    #[arg(long)]
    f: f64,
    /// Baseline in world units.
    #[arg(long)]
    b: f64,
    /// Disparity in pixels.
    #[arg(long)]
    d: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    model: Projection,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    c2w: [f64; 16],
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::NonPositiveDisparity(_) => 2,
        Error::NonFinite { .. } | Error::EmptyBatch => 4,
        _ => 3,
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.list_presets {
        for p in PRESETS {
            println!("{p}");
        }
        return Ok(());
    }
    let (name, out) = (a.preset.unwrap(), a.out.unwrap());
    let intr = RigIntrinsics::fisheye(a.size, a.half_fov.to_radians());
    let mut cams = make_rig_with(a.subdiv, a.radius, !a.full_sphere, &intr);
    center_rig(&mut cams);
    let (_, frame) = normalize_scene(&cams)?;
    let scene = preset(&name, frame.rig_radius, a.seed)?;
    let m = export_dataset(&scene, &cams, &out, a.samples_per_unit)?;
    eprintln!(
        "wrote {} cameras ({} test) to {}",
        m.cameras.len(),
        m.indices(Role::Test).len(),
        out.display()
    );
    Ok(())
}

struct Tee {
    file: File,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        io::stdout().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        io::stdout().flush()
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let dataset = Dataset::load(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("train.log");
    let (mut trainer, cams, fresh) = match &a.resume {
        Some(path) => {
            let trainer = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            let cams = cameras_in_frame(&dataset.cameras, &trainer.field.frame);
            (trainer, cams, false)
        }
        None => {
            let mut config = match &a.config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = a.seed {
                config.seed = s;
            }
            let (cams, frame) = prepare_frame(&dataset, &config, a.t_b)?;
            (Trainer::new(config, frame)?, cams, true)
        }
    };
    let frame = trainer.field.frame;
    let data = TrainData::from_dataset(&dataset, &cams, &frame)?;
    let views = test_views(&dataset, &cams);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = Tee { file };
    if fresh {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    eprintln!(
        "training {} rays from step {} to {}; t_B = {:.4}, rig radius = {:.4}",
        data.rays.len(),
        trainer.step,
        trainer.config.iterations,
        frame.boundary_radius,
        frame.rig_radius
    );
    let report = train_loop(&mut trainer, &data, &views, &a.out, &mut log)?;
    if let Some(r) = report {
        let path = a.out.join("eval.json");
        fs::write(&path, serde_json::to_string_pretty(&r)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn render_camera(a: &RenderArgs, ckpt: &Checkpoint) -> Result<PosedCamera> {
    let world = match (&a.pose, a.camera_index) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let pf: PoseFile = serde_json::from_str(&text)?;
            CameraEntry {
                image: String::new(),
                role: Role::Test,
                model: pf.model,
                width: pf.width,
                height: pf.height,
                fx: pf.fx,
                fy: pf.fy,
                cx: pf.cx,
                cy: pf.cy,
                c2w: pf.c2w,
            }
            .camera()?
        }
        (None, Some(i)) => {
            let dir = a.data.as_ref().expect("clap enforces --data");
            let m = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
            let entry = m.cameras.get(i).ok_or_else(|| {
                Error::Data(format!(
                    "camera index {i} out of range (manifest has {} cameras)",
                    m.cameras.len()
                ))
            })?;
            entry.camera()?
        }
        (None, None) => unreachable!("clap enforces one of --pose and --camera-index"),
    };
    Ok(cameras_in_frame(&[world], &ckpt.field.frame).remove(0))
}

fn render(a: RenderArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let cam = render_camera(&a, &ckpt)?;
    let img = render_image(&ckpt.field, &cam, &ckpt.config.render_options());
    write_png(&a.out, img.width, img.height, &img.color)?;
    if let Some(dpath) = &a.depth {
        write_fdepth(dpath, img.width, img.height, &img.fg_depth)?;
        let far = ckpt.field.frame.boundary_radius;
        let rgb = colorize_depth(&img.fg_depth, 0.0, far);
        let png = dpath.with_extension("png");
        write_png_rgb8(&png, img.width, img.height, &rgb)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = Dataset::load(&a.data)?;
    let test = dataset.manifest.indices(Role::Test);
    if test.is_empty() {
        return Err(Error::Data(format!(
            "{} lists no test camera",
            a.data.join(MANIFEST_FILE).display()
        )));
    }
    let report = match &a.pred {
        Some(pred) => {
            let (w, h, img) = read_png_linear(pred)?;
            let i = test[0];
            let cam = &dataset.cameras[i];
            if (w, h) != (cam.width, cam.height) {
                return Err(Error::Data(format!(
                    "{} is {w}x{h}, test view is {}x{}",
                    pred.display(),
                    cam.width,
                    cam.height
                )));
            }
            let target = &dataset.images[i];
            EvalReport::new(vec![ImageScore {
                image: dataset.manifest.cameras[i].image.clone(),
                psnr: psnr(&img, target),
                ssim: ssim(&img, target, w as usize, h as usize)?,
            }])
        }
        None => {
            let ckpt = Checkpoint::load(a.ckpt.as_ref().expect("clap enforces --ckpt"))?;
            let cams = cameras_in_frame(&dataset.cameras, &ckpt.field.frame);
            evaluate(&ckpt.field, &test_views(&dataset, &cams), &ckpt.config.render_options())?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn boundary(a: BoundaryArgs) -> Result<()> {
    println!("{}", boundary_from_disparity(a.f, a.b, a.d)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Boundary(a) => boundary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
