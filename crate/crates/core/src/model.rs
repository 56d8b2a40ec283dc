//! The complete world model: codecs, condition encoders and denoiser, its
//! checkpoint format, and first-frame + motion inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{
    rays_to_volume, ChannelLayout, CodecConfig, ConditionEncoders, LatentBlock, LatentRole, PointEncoder,
    PointNormalization, VideoCodec,
};
use crate::diffusion::{self, clean_target, Conditions, Denoiser, DenoiserSpec, SamplerConfig};
use crate::error::{Error, Result};
use crate::geom::{head_to_pose, plucker_map, Intrinsics};
use crate::io::{self, Container};
use crate::motion::{MotionGroup, MotionSequence};
use crate::nn::{join, Module, Param};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Egocentric camera; also fixes the image size.
    pub image: Intrinsics,
    pub codec: CodecConfig,
    pub denoiser: DenoiserSpec,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image: Intrinsics::default(),
            codec: CodecConfig::default(),
            denoiser: DenoiserSpec::default(),
            lora_rank: 4,
            lora_alpha: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.latent_intrinsics()?;
        let (h, w) = self.latent_grid();
        let [pt, ph, pw] = self.denoiser.patch;
        if self.codec.frames % pt != 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::Config(format!(
                "latent {}x{h}x{w} is not divisible by token patch {:?}",
                self.codec.frames, self.denoiser.patch
            )));
        }
        if self.lora_rank == 0 || !(self.lora_alpha > 0.0) {
            return Err(Error::Config("lora rank and alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_grid(&self) -> (usize, usize) {
        (self.image.height / self.codec.patch, self.image.width / self.codec.patch)
    }

    /// The ego camera on the latent grid, used for ray maps.
    pub fn latent_intrinsics(&self) -> Result<Intrinsics> {
        self.image.downscaled(self.codec.patch)
    }
}

/// How far the model has been trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Pretrained,
    Finetuned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub config: ModelConfig,
    pub stage: Stage,
    pub video: VideoCodec,
    pub point: PointEncoder,
    pub encoders: ConditionEncoders,
    pub denoiser: Denoiser,
}

/// Checkpoint metadata, stored as JSON in the container header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: ModelConfig,
    pub stage: Stage,
    pub lora: bool,
    pub layout: ChannelLayout,
    /// `(block, offset, channels)` of the concatenated denoiser input.
    pub channel_offsets: Vec<(LatentRole, usize, usize)>,
}

const CHECKPOINT_FORMAT: &str = "egosim-checkpoint-1";

/// Ray volume `[6, k, h, w]` of the head-driven ego camera on the latent grid.
pub fn motion_rays(motion: &MotionSequence, k_latent: &Intrinsics) -> Result<(Vec<f64>, [usize; 3])> {
    let maps = motion
        .frames
        .iter()
        .map(|f| plucker_map(&head_to_pose(f.head)?, k_latent))
        .collect::<Result<Vec<_>>>()?;
    rays_to_volume(&maps)
}

/// Inference inputs. There is deliberately no way to pass point maps: the
/// model generates them.
///
/// ```compile_fail
/// # use egosim::{model::SampleRequest, diffusion::SamplerConfig, motion::*, Tensor};
/// # let frame = Tensor::full(&[64, 64, 3], 0.5);
/// # let motion = synth_motion(0, 13, Style::Walk).unwrap();
/// # let pts = Tensor::zeros(&[13, 64, 64, 3]);
/// let req = SampleRequest {
///     first_frame: &frame,
///     motion: &motion,
///     point_maps: &pts,
///     caption: 0,
///     sampler: SamplerConfig::default(),
///     seed: 0,
/// };
/// ```
#[derive(Clone, Debug)]
pub struct SampleRequest<'a> {
    /// `[H, W, 3]` in `[0, 1]`.
    pub first_frame: &'a Tensor,
    pub motion: &'a MotionSequence,
    pub caption: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    /// `[k, H, W, 3]`
    pub video: Tensor,
    /// Normalized `[k, H, W, 3]` point maps, for diagnostics only.
    pub points: Tensor,
    /// Generated `[k, c_video + c_point, h, w]` latents.
    pub latents: Tensor,
}

/// Latents of one training pair that stay fixed while the encoders learn.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: u64,
    pub caption: usize,
    pub frame: LatentBlock,
    /// Clean video ⊕ point target.
    pub z0: Tensor,
    pub normalization: PointNormalization,
    /// Per-group motion parameters, `k x d` each, in channel order.
    pub groups: [Vec<f64>; 3],
    pub rays: Vec<f64>,
    pub ray_dims: [usize; 3],
}

impl WorldModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (h, w) = config.latent_grid();
        let mut r = rng::substream(seed, "model.init", 0);
        let point = PointEncoder::new(&config.codec, &mut r)?;
        let encoders = ConditionEncoders::new(&config.codec, h, w, &mut r)?;
        let denoiser = Denoiser::new(config.denoiser.clone(), config.codec.layout(), &mut r)?;
        let mut model = WorldModel {
            video: VideoCodec::new(&config.codec),
            point,
            encoders,
            denoiser,
            stage: Stage::Init,
            config,
        };
        // Start from storage precision so frozen weights survive checkpoints
        // bit-exact.
        model.quantize();
        Ok(model)
    }

    pub fn layout(&self) -> ChannelLayout {
        self.denoiser.layout
    }

    pub fn attach_lora(&mut self, seed: u64) -> Result<()> {
        if self.denoiser.has_lora() {
            return Ok(());
        }
        let mut r = rng::substream(seed, "lora.init", 0);
        self.denoiser
            .attach_lora(self.config.lora_rank, self.config.lora_alpha, &mut r)?;
        self.quantize();
        Ok(())
    }

    fn check_frames(&self, motion: &MotionSequence) -> Result<usize> {
        let k = motion.len();
        if k == 0 {
            return Err(Error::Empty("motion sequence"));
        }
        if k % self.config.denoiser.patch[0] != 0 {
            return Err(Error::Precondition(format!(
                "{k} frames do not divide into temporal patches of {}",
                self.config.denoiser.patch[0]
            )));
        }
        Ok(k)
    }

    /// Fixed latents and encoder inputs for a training pair.
    pub fn prepare(&self, id: u64, caption: usize, video: &Tensor, points: &Tensor, motion: &MotionSequence) -> Result<PreparedSample> {
        let k = self.check_frames(motion)?;
        let [kv, height, width, _] = video.dims4()?;
        if kv != k || height != self.config.image.height || width != self.config.image.width {
            return Err(Error::dim(
                format!("{k}x{}x{}x3 video", self.config.image.height, self.config.image.width),
                format!("{:?}", video.shape()),
            ));
        }
        let first = Tensor::from_vec(&[height, width, 3], video.data()[..height * width * 3].to_vec())?;
        let frame = self.video.encode_frame(&first, k)?;
        let z_video = self.video.encode_video(video)?;
        let (z_point, normalization) = self.point.encode(points)?;
        let (rays, ray_dims) = motion_rays(motion, &self.config.latent_intrinsics()?)?;
        Ok(PreparedSample {
            id,
            caption,
            frame,
            z0: clean_target(&z_video, &z_point)?,
            normalization,
            groups: MotionGroup::ALL.map(|g| motion.group(g)),
            rays,
            ray_dims,
        })
    }

    /// Conditions from a first frame and a motion sequence.
    pub fn conditions(&self, first_frame: &Tensor, motion: &MotionSequence, caption: usize) -> Result<Conditions> {
        let k = self.check_frames(motion)?;
        if first_frame.shape() != [self.config.image.height, self.config.image.width, 3] {
            return Err(Error::dim(
                format!("{}x{}x3 first frame", self.config.image.height, self.config.image.width),
                format!("{:?}", first_frame.shape()),
            ));
        }
        let frame = self.video.encode_frame(first_frame, k)?;
        let motion_latent = self.encoders.encode_motion(motion)?;
        let (h, w) = self.config.latent_grid();
        let (vol, dims) = motion_rays(motion, &self.config.latent_intrinsics()?)?;
        let camera = self.encoders.camera.encode_volume(&vol, dims, h, w)?;
        Conditions::new(frame, motion_latent, camera, caption)
    }

    pub fn sample(&self, req: &SampleRequest<'_>) -> Result<SampleOutput> {
        let cond = self.conditions(req.first_frame, req.motion, req.caption)?;
        let latents = diffusion::sample_latents(
            &self.denoiser,
            &diffusion::make_schedule(),
            &cond,
            &req.sampler,
            req.seed,
        )?;
        let (video, points) = self.decode(&latents)?;
        Ok(SampleOutput { video, points, latents })
    }

    /// Decode `[k, c_video + c_point, h, w]` latents to video and normalized
    /// point maps.
    pub fn decode(&self, latents: &Tensor) -> Result<(Tensor, Tensor)> {
        let layout = self.layout();
        let v = LatentBlock::new(LatentRole::Video, latents.slice_channels(0, layout.c_video)?)?;
        let p = LatentBlock::new(LatentRole::Point, latents.slice_channels(layout.c_video, layout.c_point)?)?;
        Ok((self.video.decode_video(&v)?, self.point.decode_normalized(&p)?))
    }

    pub fn meta(&self) -> CheckpointMeta {
        let layout = self.layout();
        CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            stage: self.stage,
            lora: self.denoiser.has_lora(),
            layout,
            channel_offsets: layout.entries().to_vec(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_string_pretty(&self.meta()).map_err(|e| Error::Format(e.to_string()))?;
        let mut tensors = Vec::new();
        let mut err = None;
        self.visit("", &mut |name, p| match Tensor::from_vec(&p.shape, p.value.clone()) {
            Ok(t) => tensors.push((name.to_string(), t)),
            Err(e) => err = Some(e),
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Container { meta, tensors })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_str(&c.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format '{}'", meta.format)));
        }
        let mut model = WorldModel::new(meta.config.clone(), 0)?;
        if meta.lora {
            model.attach_lora(0)?;
        }
        if model.layout() != meta.layout {
            return Err(Error::Format("checkpoint channel layout does not match its config".into()));
        }
        model.stage = meta.stage;
        let mut by_name: std::collections::HashMap<&str, &Tensor> =
            c.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        model.visit_mut("", &mut |name, p| match by_name.remove(name) {
            Some(t) if t.shape() == p.shape.as_slice() => p.value.copy_from_slice(t.data()),
            Some(t) => {
                err.get_or_insert(Error::Format(format!("{name}: shape {:?}, expected {:?}", t.shape(), p.shape)));
            }
            None => {
                err.get_or_insert(Error::Format(format!("checkpoint lacks {name}")));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &io::encode_container(&self.to_container()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        WorldModel::from_container(&io::decode_container(&io::read_bytes(path)?)?)
    }

    /// Round all parameters to f32, as a save/load cycle would.
    pub fn quantize(&mut self) {
        self.visit_mut("", &mut |_, p| io::quantize(&mut p.value));
    }
}

impl Module for WorldModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.point.visit(&join(prefix, "point"), f);
        self.encoders.visit(&join(prefix, "encoders"), f);
        self.denoiser.visit(&join(prefix, "denoiser"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.point.visit_mut(&join(prefix, "point"), f);
        self.encoders.visit_mut(&join(prefix, "encoders"), f);
        self.denoiser.visit_mut(&join(prefix, "denoiser"), f);
    }
}
