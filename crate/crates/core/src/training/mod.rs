//! Losses, optimizer, metrics and the coarse-to-fine training loop.

mod loss;
mod metrics;
mod optim;

pub use loss::{color_loss, opacity_entropy, opacity_entropy_grad, opacity_loss, OPACITY_EPS};
pub use metrics::{mse, psnr, psnr_from_mse, ssim, EvalReport, ImageScore, PSNR_CAP};
pub use optim::{Adam, ADAM_EPS, BETA1, BETA2};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, Role};
use crate::error::{Error, Result};
use crate::field::{init_field, FieldConfig, HybridField};
use crate::geometry::{normalize_scene, pixel_to_ray, PosedCamera, Ray, SceneFrame, Vec3};
use crate::renderer::{render_image, trace_batch, RenderOptions};
use crate::sampler::{mix, ray_rng, sample_ray, SampleBatch, Schedule, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_rays: usize,
    pub iterations: usize,
    pub lr_grid: f64,
    pub lr_decoder: f64,
    /// Both learning rates decay exponentially to this fraction by the last
    /// iteration.
    pub lr_decay_target: f64,
    /// Weight of the opacity loss.
    pub lambda_reg: f64,
    pub milestones: Vec<usize>,
    pub seed: u64,
    /// Boundary radius in units of the rig radius; the manifest value is
    /// used when absent.
    pub boundary_multiplier: Option<f64>,
    /// Start and final per-ray sample counts.
    pub n_fg: [usize; 2],
    pub m_bg: [usize; 2],
    /// Start and final grid resolutions.
    pub res_fg: [[usize; 3]; 2],
    pub res_bg: [[usize; 3]; 2],
    pub k_density: usize,
    pub k_appearance: usize,
    pub decoder_width: usize,
    pub view_octaves: usize,
    pub density_bias_init: f64,
    pub init_scale: f64,
    /// Samples at or below this weight skip color decoding once past
    /// `threshold_warmup` iterations.
    pub weight_threshold: f64,
    pub threshold_warmup: usize,
    pub log_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_rays: 4096,
            iterations: 20_000,
            lr_grid: 0.02,
            lr_decoder: 1e-3,
            lr_decay_target: 0.1,
            lambda_reg: 0.01,
            milestones: vec![2000, 3000, 4000, 5500, 7000],
            seed: 0,
            boundary_multiplier: None,
            n_fg: [64, 128],
            m_bg: [64, 128],
            res_fg: [[32; 3], [128; 3]],
            res_bg: [[16, 32, 8], [64, 128, 32]],
            k_density: 8,
            k_appearance: 12,
            decoder_width: 64,
            view_octaves: 4,
            density_bias_init: -10.0,
            init_scale: 0.1,
            weight_threshold: 1e-4,
            threshold_warmup: 500,
            log_every: 100,
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_rays == 0 {
            return Err(Error::Config("batch_rays must be >= 1".into()));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg must be >= 0, got {}", self.lambda_reg)));
        }
        if !(self.lr_grid > 0.0 && self.lr_decoder > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lr_decay_target > 0.0 && self.lr_decay_target <= 1.0) {
            return Err(Error::Config("lr_decay_target must be in (0, 1]".into()));
        }
        if let Some(m) = self.boundary_multiplier {
            if !(m > 1.0) {
                return Err(Error::Config(format!("boundary_multiplier must exceed 1, got {m}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            milestones: self.milestones.clone(),
            n_fg: self.n_fg,
            m_bg: self.m_bg,
            res_fg: self.res_fg,
            res_bg: self.res_bg,
        }
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            k_density: self.k_density,
            k_appearance: self.k_appearance,
            res_fg: self.res_fg[0],
            res_bg: self.res_bg[0],
            decoder_width: self.decoder_width,
            view_octaves: self.view_octaves,
            density_bias_init: self.density_bias_init,
            init_scale: self.init_scale,
        }
    }

    /// Eval-mode rendering at the final sample counts.
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            n_fg: self.n_fg[1],
            m_bg: self.m_bg[1],
            weight_threshold: self.weight_threshold,
            ..RenderOptions::default()
        }
    }
}

/// Normalizes the dataset poses and resolves the boundary radius: an explicit
/// `t_b` wins over the config multiplier, which wins over the manifest.
pub fn prepare_frame(
    dataset: &Dataset,
    config: &TrainConfig,
    t_b: Option<f64>,
) -> Result<(Vec<PosedCamera>, SceneFrame)> {
    let (cams, mut frame) = normalize_scene(&dataset.cameras)?;
    if let Some(r) = dataset.manifest.rig_radius {
        frame.rig_radius = r;
    }
    let frame = match t_b {
        Some(t) => frame.with_boundary_radius(t)?,
        None => frame.with_boundary_multiplier(
            config
                .boundary_multiplier
                .unwrap_or(dataset.manifest.boundary_multiplier),
        )?,
    };
    Ok((cams, frame))
}

/// Moves world-space cameras into a frame produced by [`prepare_frame`].
pub fn cameras_in_frame(cams: &[PosedCamera], frame: &SceneFrame) -> Vec<PosedCamera> {
    cams.iter()
        .map(|c| {
            let mut c = c.clone();
            c.set_center(frame.to_normalized(&c.center()));
            c
        })
        .collect()
}

/// Every valid training pixel as a ray with its target color.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub rays: Vec<Ray>,
    pub targets: Vec<Vec3>,
}

impl TrainData {
    pub fn from_images<'a>(
        views: impl IntoIterator<Item = (&'a PosedCamera, &'a [Vec3])>,
        frame: &SceneFrame,
    ) -> Result<Self> {
        let mut data = TrainData::default();
        for (cam, img) in views {
            let w = cam.width as usize;
            for (i, c) in img.iter().enumerate() {
                let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                if let Ok(ray) = pixel_to_ray(cam, u, v, frame) {
                    data.rays.push(ray);
                    data.targets.push(*c);
                }
            }
        }
        if data.rays.is_empty() {
            return Err(Error::Data("no valid training pixels".into()));
        }
        Ok(data)
    }

    pub fn from_dataset(dataset: &Dataset, cams: &[PosedCamera], frame: &SceneFrame) -> Result<Self> {
        let train = dataset.manifest.indices(Role::Train);
        Self::from_images(
            train.iter().map(|&i| (&cams[i], dataset.images[i].as_slice())),
            frame,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub color: f64,
    pub opacity: f64,
    pub total: f64,
}

/// Total loss `color + lambda_reg * opacity` over a ray batch, with its
/// gradient accumulated into `grads`.
pub fn loss_and_grad(
    field: &HybridField,
    rays: &[Ray],
    samples: &[SampleBatch],
    targets: &[Vec3],
    lambda_reg: f64,
    weight_threshold: f64,
    grads: &mut HybridField,
) -> Result<LossParts> {
    let trace = trace_batch(field, rays, samples, weight_threshold);
    let pred: Vec<Vec3> = trace.outputs.iter().map(|o| o.color).collect();
    let trans: Vec<f64> = trace.outputs.iter().map(|o| o.fg_transmittance).collect();
    let color = color_loss(&pred, targets)?;
    let opacity = opacity_loss(&trans);
    let n = rays.len() as f64;
    let d_color: Vec<Vec3> = pred.iter().zip(targets).map(|(p, t)| (p - t) * (2.0 / n)).collect();
    let d_trans: Vec<f64> = trans
        .iter()
        .map(|&t| lambda_reg * opacity_entropy_grad(t) / n)
        .collect();
    trace.backward(field, &d_color, &d_trans, grads);
    Ok(LossParts {
        color,
        opacity,
        total: color + lambda_reg * opacity,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub loss: LossParts,
    pub stage: Stage,
}

impl StepStats {
    pub fn psnr_train_batch(&self) -> f64 {
        psnr_from_mse(self.loss.color / 3.0)
    }

    pub fn log_line(&self) -> String {
        let r = |v: [usize; 3]| format!("{}x{}x{}", v[0], v[1], v[2]);
        format!(
            "{}\t{:.6e}\t{:.6e}\t{:.4}\t{}\t{}\t{}\t{}",
            self.step,
            self.loss.color,
            self.loss.opacity,
            self.psnr_train_batch(),
            self.stage.n_fg,
            self.stage.m_bg,
            r(self.stage.res_fg),
            r(self.stage.res_bg)
        )
    }
}

pub const LOG_HEADER: &str =
    "step\tloss_color\tloss_opacity\tpsnr_train_batch\tn_fg\tm_bg\tres_fg\tres_bg";

/// Mutable training state: the field, optimizer moments and step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub field: HybridField,
    pub adam: Adam,
    /// Index of the next step to run.
    pub step: usize,
    schedule: Schedule,
    grads: HybridField,
}

impl Trainer {
    pub fn new(config: TrainConfig, frame: SceneFrame) -> Result<Self> {
        config.validate()?;
        let field = init_field(&config.field_config(), frame, config.seed)?;
        let adam = Adam::new(&field);
        Ok(Self::assemble(config, field, adam, 0))
    }

    pub fn assemble(config: TrainConfig, field: HybridField, adam: Adam, step: usize) -> Self {
        Trainer {
            schedule: config.schedule(),
            grads: field.zeros_like(),
            config,
            field,
            adam,
            step,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let adam = match ckpt.optimizer {
            Some(a) => a,
            None => Adam::new(&ckpt.field),
        };
        Ok(Self::assemble(ckpt.config, ckpt.field, adam, ckpt.step))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            field: self.field.clone(),
            optimizer: Some(self.adam.clone()),
        }
    }

    pub fn done(&self) -> bool {
        self.step >= self.config.iterations
    }

    fn apply_stage(&mut self, stage: &Stage) -> Result<()> {
        if stage.res_fg != self.field.foreground.resolution
            || stage.res_bg != self.field.background.resolution
        {
            self.field = self.field.upsample(stage.res_fg, stage.res_bg)?;
            self.adam.reset_grids(&self.field);
            self.grads = self.field.zeros_like();
        }
        Ok(())
    }

    /// Draws the batch for the current step: ray indices and jittered
    /// samples, all from streams keyed by seed and step.
    pub fn draw_batch(&self, data: &TrainData, stage: &Stage) -> (Vec<usize>, Vec<SampleBatch>) {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(c.seed ^ mix(self.step as u64)));
        let idx: Vec<usize> = (0..c.batch_rays)
            .map(|_| rng.random_range(0..data.rays.len()))
            .collect();
        let samples = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut r = ray_rng(c.seed, k as u64, self.step as u64);
                sample_ray(
                    &data.rays[i],
                    self.field.frame.boundary_radius,
                    stage.n_fg,
                    stage.m_bg,
                    Some(&mut r),
                )
            })
            .collect();
        (idx, samples)
    }

    pub fn train_step(&mut self, data: &TrainData) -> Result<StepStats> {
        let stage = self.schedule.stage(self.step);
        self.apply_stage(&stage)?;
        let (idx, samples) = self.draw_batch(data, &stage);
        let rays: Vec<Ray> = idx.iter().map(|&i| data.rays[i]).collect();
        let targets: Vec<Vec3> = idx.iter().map(|&i| data.targets[i]).collect();
        let c = &self.config;
        let threshold = if self.step < c.threshold_warmup {
            0.0
        } else {
            c.weight_threshold
        };
        for (_, t) in self.grads.tensors_mut() {
            t.fill(0.0);
        }
        let loss = loss_and_grad(
            &self.field,
            &rays,
            &samples,
            &targets,
            c.lambda_reg,
            threshold,
            &mut self.grads,
        )?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                color: loss.color,
                opacity: loss.opacity,
            });
        }
        let frac = self.step as f64 / c.iterations.max(1) as f64;
        let decay = c.lr_decay_target.powf(frac);
        let (lr_grid, lr_decoder) = (c.lr_grid * decay, c.lr_decoder * decay);
        self.adam.step(&mut self.field, &self.grads, lr_grid, lr_decoder);
        let stats = StepStats {
            step: self.step,
            loss,
            stage,
        };
        self.step += 1;
        Ok(stats)
    }
}

/// A held-out view used for evaluation.
#[derive(Clone, Debug)]
pub struct EvalView {
    pub name: String,
    pub camera: PosedCamera,
    pub target: Vec<Vec3>,
}

pub fn test_views(dataset: &Dataset, cams: &[PosedCamera]) -> Vec<EvalView> {
    dataset
        .manifest
        .indices(Role::Test)
        .into_iter()
        .map(|i| EvalView {
            name: dataset.manifest.cameras[i].image.clone(),
            camera: cams[i].clone(),
            target: dataset.images[i].clone(),
        })
        .collect()
}

pub fn evaluate(field: &HybridField, views: &[EvalView], opts: &RenderOptions) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(views.len());
    for v in views {
        let img = render_image(field, &v.camera, opts);
        scores.push(ImageScore {
            image: v.name.clone(),
            psnr: psnr(&img.color, &v.target),
            ssim: ssim(
                &img.color,
                &v.target,
                v.camera.width as usize,
                v.camera.height as usize,
            )?,
        });
    }
    Ok(EvalReport::new(scores))
}

/// Runs the remaining steps, writing log lines to `log`, checkpoints into
/// `out_dir` and evaluation reports for `views`. Returns the final report.
pub fn train_loop(
    trainer: &mut Trainer,
    data: &TrainData,
    views: &[EvalView],
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<Option<EvalReport>> {
    let io = |e| Error::io(out_dir, e);
    let c = trainer.config.clone();
    let opts = c.render_options();
    while !trainer.done() {
        if c.checkpoint_every > 0 && trainer.step > 0 && trainer.step % c.checkpoint_every == 0 {
            trainer
                .checkpoint()
                .save(&out_dir.join(format!("step_{:06}.ckpt", trainer.step)))?;
        }
        let stats = trainer.train_step(data)?;
        if stats.step % c.log_every == 0 {
            writeln!(log, "{}", stats.log_line()).map_err(io)?;
        }
        if c.eval_every > 0 && trainer.step % c.eval_every == 0 && !trainer.done() && !views.is_empty() {
            let r = evaluate(&trainer.field, views, &opts)?;
            writeln!(log, "# eval step {}: psnr {:.4} ssim {:.4}", trainer.step, r.mean_psnr, r.mean_ssim)
                .map_err(io)?;
        }
    }
    trainer.checkpoint().save(&out_dir.join(FINAL_CHECKPOINT))?;
    if views.is_empty() {
        return Ok(None);
    }
    let report = evaluate(&trainer.field, views, &opts)?;
    writeln!(log, "# eval final: psnr {:.4} ssim {:.4}", report.mean_psnr, report.mean_ssim).map_err(io)?;
    Ok(Some(report))
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
