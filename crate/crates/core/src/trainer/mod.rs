//! Two-stage training: LoRA pretraining on captioned clips, then
//! finetuning of the last blocks and the condition encoders on
//! motion/video pairs.

pub mod eval;
pub mod metrics;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{assemble_motion_latent, LatentBlock, LatentRole};
use crate::datapipe::SampleRecord;
use crate::diffusion::{self, Conditions, LossDraw, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::{PreparedSample, Stage, WorldModel};
use crate::nn::{Adam, AdamConfig, Module};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Pretrain,
    Finetune,
}

impl TrainStage {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::Pretrain => "pretrain",
            TrainStage::Finetune => "finetune",
        }
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(TrainStage::Pretrain),
            "finetune" => Ok(TrainStage::Finetune),
            _ => Err(Error::Config(format!("unknown stage '{s}' (expected pretrain or finetune)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate to zero over the stage.
    #[default]
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub lr: f64,
    pub steps: usize,
    pub schedule: LrSchedule,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            lr: 1e-3,
            steps: 500,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl StageConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let x = step as f64 / self.steps.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    /// Samples per optimizer step.
    pub batch: usize,
    /// Trailing transformer blocks updated in the finetuning stage.
    pub last_n_blocks: usize,
    /// Condition dropout for classifier-free guidance; configured with the
    /// diffusion settings.
    #[serde(skip)]
    pub p_drop: f64,
    /// Fixed noise draws per sample for the probe loss.
    pub probe_draws: usize,
    pub grad_clip: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain: StageConfig::default(),
            finetune: StageConfig {
                lr: 3e-3,
                schedule: LrSchedule::Constant,
                ..StageConfig::default()
            },
            batch: 1,
            last_n_blocks: 2,
            p_drop: 0.1,
            probe_draws: 8,
            grad_clip: 1.0,
            lora_rank: 4,
            lora_alpha: 4.0,
        }
    }
}

impl TrainConfig {
    pub fn stage(&self, stage: TrainStage) -> StageConfig {
        match stage {
            TrainStage::Pretrain => self.pretrain,
            TrainStage::Finetune => self.finetune,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        for s in [self.pretrain, self.finetune] {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("learning rate must be positive, got {}", s.lr)));
            }
        }
        if self.batch == 0 || self.probe_draws == 0 {
            return Err(Error::Config("batch and probe_draws must be positive".into()));
        }
        if self.last_n_blocks == 0 || self.last_n_blocks > depth {
            return Err(Error::Config(format!(
                "last_n_blocks = {} must be within 1..={depth}",
                self.last_n_blocks
            )));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop = {} outside [0, 1]", self.p_drop)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn is_lora(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

/// Parameters updated by the pretraining stage: the adapters and the caption
/// table.
pub fn pretrain_trainable(name: &str) -> bool {
    name.starts_with("denoiser.") && (is_lora(name) || name == "denoiser.caption")
}

/// Parameters updated by the finetuning stage: base weights of the last
/// `last_n` blocks, the output layers, and the condition encoders.
pub fn finetune_trainable(name: &str, depth: usize, last_n: usize) -> bool {
    if is_lora(name) {
        return false;
    }
    if name.starts_with("encoders.") {
        return true;
    }
    let Some(rest) = name.strip_prefix("denoiser.") else {
        return false;
    };
    if ["norm.", "head.", "gate.", "mix."].iter().any(|p| rest.starts_with(p)) {
        return true;
    }
    rest.strip_prefix("blocks.")
        .and_then(|b| b.split('.').next())
        .and_then(|i| i.parse::<usize>().ok())
        .is_some_and(|i| i + last_n >= depth)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: TrainStage,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
}

pub const LOG_HEADER: &str = "step\tstage\tloss\tlr\tseed";

pub fn render_log(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{:.9e}\t{:e}\t{}\n", r.step, r.stage, r.loss, r.lr, r.seed));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub stage: TrainStage,
    pub steps: usize,
    pub log: Vec<LogRow>,
    /// Probe loss before the first and after the last update.
    pub probe_initial: f64,
    pub probe_final: f64,
    /// Hash of every parameter the stage must not touch.
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
    pub trainable_params: usize,
}

impl TrainOutcome {
    pub fn frozen_intact(&self) -> bool {
        self.frozen_hash_before == self.frozen_hash_after
    }
}

/// Which conditions a probe evaluates with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// Pretraining conditions: caption only.
    Caption,
    /// Motion and camera conditions.
    Full,
    /// Motion latents zeroed; camera kept.
    ZeroMotion,
    /// Motion and camera latents zeroed.
    ZeroMotionCamera,
}

pub fn prepare_samples(model: &WorldModel, records: &[SampleRecord]) -> Result<Vec<PreparedSample>> {
    if records.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    records
        .iter()
        .map(|r| model.prepare(r.id, r.style.caption_id(), &r.video, &r.points, &r.motion))
        .collect()
}

fn zeros_like(role: LatentRole, like: &LatentBlock, c: usize) -> LatentBlock {
    let [k, _, h, w] = like.dims();
    LatentBlock::zeros(role, k, c, h, w)
}

fn caption_conditions(model: &WorldModel, s: &PreparedSample) -> Result<Conditions> {
    let layout = model.layout();
    Conditions::new(
        s.frame.clone(),
        zeros_like(LatentRole::Motion, &s.frame, layout.c_motion),
        zeros_like(LatentRole::Camera, &s.frame, layout.c_video),
        s.caption,
    )
}

fn motion_latent(model: &WorldModel, s: &PreparedSample) -> Result<LatentBlock> {
    let parts = model
        .encoders
        .motion
        .iter()
        .zip(&s.groups)
        .map(|(e, g)| e.encode(g, e.group))
        .collect::<Result<Vec<_>>>()?;
    assemble_motion_latent(Some(&parts[0]), Some(&parts[1]), Some(&parts[2]))
}

fn probe_conditions(model: &WorldModel, s: &PreparedSample, probe: Probe) -> Result<Conditions> {
    if probe == Probe::Caption {
        return caption_conditions(model, s);
    }
    let layout = model.layout();
    let (h, w) = model.config.latent_grid();
    let motion = match probe {
        Probe::Full => motion_latent(model, s)?,
        _ => zeros_like(LatentRole::Motion, &s.frame, layout.c_motion),
    };
    let camera = match probe {
        Probe::ZeroMotionCamera => zeros_like(LatentRole::Camera, &s.frame, layout.c_video),
        _ => model.encoders.camera.encode_volume(&s.rays, s.ray_dims, h, w)?,
    };
    Conditions::new(s.frame.clone(), motion, camera, 0)
}

/// Per-sample mean loss over fixed, stratified noise draws.
pub fn probe_losses(model: &WorldModel, samples: &[PreparedSample], probe: Probe, draws: usize, seed: u64) -> Result<Vec<f64>> {
    let schedule = diffusion::make_schedule();
    samples
        .iter()
        .map(|s| {
            let cond = probe_conditions(model, s, probe)?;
            let set = LossDraw::probe(rng::substream_seed(seed, "probe", s.id), s.z0.shape(), draws);
            let mut sum = 0.0;
            for d in &set {
                sum += diffusion::loss_for_draw(&model.denoiser, &schedule, &cond, &s.z0, d)?;
            }
            Ok(sum / draws as f64)
        })
        .collect()
}

pub fn probe_loss(model: &WorldModel, samples: &[PreparedSample], probe: Probe, draws: usize, seed: u64) -> Result<f64> {
    let l = probe_losses(model, samples, probe, draws, seed)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Loss and gradients for one draw; returns the loss.
fn accumulate(
    model: &mut WorldModel,
    schedule: &NoiseSchedule,
    s: &PreparedSample,
    draw: &LossDraw,
    stage: TrainStage,
    weight: f64,
) -> Result<f64> {
    let layout = model.layout();
    let (h, w) = model.config.latent_grid();
    let train_encoders = stage == TrainStage::Finetune && !draw.drop;
    let mut motion_caches = Vec::new();
    let mut camera_cache = None;
    let cond = if train_encoders {
        let mut parts = Vec::with_capacity(3);
        for (e, g) in model.encoders.motion.iter().zip(&s.groups) {
            let (t, c) = e.forward(g, e.group)?;
            parts.push(t);
            motion_caches.push(c);
        }
        let motion = assemble_motion_latent(Some(&parts[0]), Some(&parts[1]), Some(&parts[2]))?;
        let (cam, cc) = model.encoders.camera.forward(&s.rays, s.ray_dims, h, w)?;
        camera_cache = Some(cc);
        Conditions::new(s.frame.clone(), motion, LatentBlock::new(LatentRole::Camera, cam)?, 0)?
    } else {
        let mut c = caption_conditions(model, s)?;
        if stage == TrainStage::Finetune {
            c.caption = 0;
        }
        c
    };
    let (x, caption) = diffusion::prepare(schedule, &layout, &cond, &s.z0, draw)?;
    let (pred, cache) = model.denoiser.forward(&x, draw.t, caption)?;
    let loss = diffusion::mse(&pred, &draw.eps);
    let scale = 2.0 * weight / pred.len() as f64;
    let d_eps = Tensor::from_vec(
        pred.shape(),
        pred.data().iter().zip(draw.eps.data()).map(|(p, e)| scale * (p - e)).collect(),
    )?;
    let grad = model.denoiser.backward(cache, &d_eps)?;
    if train_encoders {
        for ((e, c), g) in model.encoders.motion.iter_mut().zip(motion_caches).zip(0..) {
            e.backward(c, &grad.x.slice_channels(layout.motion_offset() + g, 1)?);
        }
        if let Some(cc) = camera_cache {
            model
                .encoders
                .camera
                .backward(cc, &grad.x.slice_channels(layout.video_offset(), layout.c_video)?);
        }
    }
    Ok(loss)
}

fn run_stage(
    model: &mut WorldModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    stage: TrainStage,
    seed: u64,
    select: &dyn Fn(&str) -> bool,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let sc = cfg.stage(stage);
    let probe = match stage {
        TrainStage::Pretrain => Probe::Caption,
        TrainStage::Finetune => Probe::Full,
    };
    let probe_seed = rng::substream_seed(seed, "train.probe", 0);
    let frozen = |n: &str| !select(n);
    let frozen_hash_before = model.param_hash(&frozen);
    let probe_initial = probe_loss(model, samples, probe, cfg.probe_draws, probe_seed)?;
    let mut trainable_params = 0;
    model.visit("", &mut |n, p| {
        if select(n) {
            trainable_params += p.len();
        }
    });

    let schedule = diffusion::make_schedule();
    let mut adam = Adam::new(AdamConfig {
        grad_clip: cfg.grad_clip,
        ..AdamConfig::default()
    });
    let mut r = rng::substream(seed, "train", stage as u64);
    let mut log = Vec::with_capacity(sc.steps);
    for step in 0..sc.steps {
        model.zero_grad();
        let mut loss = 0.0;
        for b in 0..cfg.batch {
            let s = &samples[(step * cfg.batch + b) % samples.len()];
            let p_drop = if stage == TrainStage::Pretrain { 0.0 } else { cfg.p_drop };
            let draw = LossDraw::sample(&mut r, s.z0.shape(), p_drop);
            loss += accumulate(model, &schedule, s, &draw, stage, 1.0 / cfg.batch as f64)?;
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let lr = sc.lr_at(step);
        adam.step(model, select, lr);
        log.push(LogRow {
            step,
            stage,
            loss,
            lr,
            seed,
        });
    }
    model.zero_grad();
    // Checkpoints store f32; keep the in-memory model identical to its file.
    model.quantize();
    Ok(TrainOutcome {
        stage,
        steps: sc.steps,
        log,
        probe_initial,
        probe_final: probe_loss(model, samples, probe, cfg.probe_draws, probe_seed)?,
        frozen_hash_before,
        frozen_hash_after: model.param_hash(&frozen),
        trainable_params,
    })
}

/// Attach LoRA and train it (with the caption table) while every base
/// weight stays frozen. Motion and camera latents are zero throughout.
pub fn train_stage1(model: &mut WorldModel, samples: &[PreparedSample], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate(model.config.denoiser.depth)?;
    if model.stage == Stage::Finetuned {
        return Err(Error::Precondition("pretraining a finetuned checkpoint".into()));
    }
    model.attach_lora(seed)?;
    let out = run_stage(model, samples, cfg, TrainStage::Pretrain, seed, &pretrain_trainable)?;
    model.stage = Stage::Pretrained;
    Ok(out)
}

/// Finetune the last blocks and the condition encoders of a pretrained
/// model; LoRA and the earlier blocks stay frozen.
pub fn train_stage2(model: &mut WorldModel, samples: &[PreparedSample], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let depth = model.config.denoiser.depth;
    cfg.validate(depth)?;
    if model.stage == Stage::Init || !model.denoiser.has_lora() {
        return Err(Error::MissingStage1);
    }
    let last_n = cfg.last_n_blocks;
    let select = move |n: &str| finetune_trainable(n, depth, last_n);
    let out = run_stage(model, samples, cfg, TrainStage::Finetune, seed, &select)?;
    model.stage = Stage::Finetuned;
    Ok(out)
}
