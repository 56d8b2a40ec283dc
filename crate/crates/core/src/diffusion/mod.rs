//! Noise schedule, forward noising, the denoiser, the training objective
//! and the guided sampler.
//!
//! Only the video and point-map channels are ever noised; the frame and
//! motion latents enter the denoiser untouched and the camera latent is
//! added to the noised video channels.

mod denoiser;
mod sampler;

pub use denoiser::{patchify, unpatchify, Block, Denoiser, DenoiserCache, DenoiserSpec, InputGrad, CAPTION_VOCAB};
pub use sampler::{guide, sample_latents, step_grid, SamplerConfig};

use std::f64::consts::FRAC_PI_2;

use rand::Rng as _;

use crate::codec::{concat_conditions, ChannelLayout, LatentBlock, LatentRole};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Trigonometric schedule: signal `σ(t) = cos(πt/2)`, noise `β(t) = sin(πt/2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseSchedule;

pub fn make_schedule() -> NoiseSchedule {
    NoiseSchedule
}

impl NoiseSchedule {
    /// Signal coefficient. Written as `sin(π(1−t)/2)` so both endpoints are
    /// exact in floating point.
    pub fn sigma(&self, t: f64) -> f64 {
        ((1.0 - t) * FRAC_PI_2).sin()
    }

    pub fn beta(&self, t: f64) -> f64 {
        (t * FRAC_PI_2).sin()
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("timestep {t} outside [0, 1]")));
    }
    Ok(())
}

/// `σ(t) z0 + β(t) ε` elementwise.
pub fn forward_noise(schedule: &NoiseSchedule, z0: &Tensor, t: f64, eps: &Tensor) -> Result<Tensor> {
    check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::dim(format!("{:?}", z0.shape()), format!("{:?}", eps.shape())));
    }
    let (s, b) = (schedule.sigma(t), schedule.beta(t));
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| s * z + b * e).collect();
    Tensor::from_vec(z0.shape(), data)
}

/// Noise the video and point channels of a concatenated latent in place of
/// the clean ones; every other channel is copied bit for bit.
pub fn noise_joint(
    schedule: &NoiseSchedule,
    joint: &Tensor,
    layout: &ChannelLayout,
    t: f64,
    eps: &Tensor,
) -> Result<Tensor> {
    let clean = joint.slice_channels(layout.noised_offset(), layout.noised_channels())?;
    let noised = forward_noise(schedule, &clean, t, eps)?;
    let mut out = joint.clone();
    let [k, _, h, w] = out.dims4()?;
    let total = layout.total();
    let plane = h * w;
    let cn = layout.noised_channels();
    for f in 0..k {
        let dst = (f * total + layout.noised_offset()) * plane;
        out.data_mut()[dst..dst + cn * plane].copy_from_slice(&noised.data()[f * cn * plane..(f + 1) * cn * plane]);
    }
    Ok(out)
}

/// Everything the denoiser is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditions {
    pub frame: LatentBlock,
    pub motion: LatentBlock,
    pub camera: LatentBlock,
    pub caption: usize,
}

impl Conditions {
    pub fn new(frame: LatentBlock, motion: LatentBlock, camera: LatentBlock, caption: usize) -> Result<Self> {
        if frame.role != LatentRole::Frame || motion.role != LatentRole::Motion || camera.role != LatentRole::Camera {
            return Err(Error::Precondition("condition latents carry the wrong roles".into()));
        }
        if caption >= CAPTION_VOCAB {
            return Err(Error::Precondition(format!("caption id {caption} out of range")));
        }
        Ok(Conditions {
            frame,
            motion,
            camera,
            caption,
        })
    }

    /// The unconditional branch: motion and camera latents zeroed, null
    /// caption; the first frame is kept.
    pub fn unconditional(&self) -> Conditions {
        let zero = |b: &LatentBlock| LatentBlock {
            role: b.role,
            data: Tensor::zeros(b.data.shape()),
        };
        Conditions {
            frame: self.frame.clone(),
            motion: zero(&self.motion),
            camera: zero(&self.camera),
            caption: 0,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.frame.dims()
    }

    /// Denoiser input for noised video+point channels `z_t`.
    pub fn assemble(&self, layout: &ChannelLayout, z_t: &Tensor) -> Result<Tensor> {
        let mut video = z_t.slice_channels(0, layout.c_video)?;
        if self.camera.data.shape() != video.shape() {
            return Err(Error::dim(
                format!("{:?}", video.shape()),
                format!("{:?}", self.camera.data.shape()),
            ));
        }
        video.add_assign(&self.camera.data);
        let point = z_t.slice_channels(layout.c_video, layout.c_point)?;
        let (joint, got) = concat_conditions(
            &self.frame,
            &self.motion,
            &LatentBlock::new(LatentRole::Video, video)?,
            &LatentBlock::new(LatentRole::Point, point)?,
        )?;
        if got != *layout {
            return Err(Error::Precondition(format!("latent layout {got:?} does not match model {layout:?}")));
        }
        Ok(joint)
    }
}

/// Clean video and point latents concatenated: `[k, c_video + c_point, h, w]`.
pub fn clean_target(video: &LatentBlock, point: &LatentBlock) -> Result<Tensor> {
    if video.role != LatentRole::Video || point.role != LatentRole::Point {
        return Err(Error::Precondition("targets must be video and point latents".into()));
    }
    Tensor::concat_channels(&[&video.data, &point.data])
}

/// Noise predictor over the concatenated latent.
pub trait EpsModel {
    fn layout(&self) -> ChannelLayout;
    fn predict(&self, x: &Tensor, t: f64, caption: usize) -> Result<Tensor>;
}

impl EpsModel for Denoiser {
    fn layout(&self) -> ChannelLayout {
        self.layout
    }

    fn predict(&self, x: &Tensor, t: f64, caption: usize) -> Result<Tensor> {
        Denoiser::predict(self, x, t, caption)
    }
}

/// One draw of the training objective's randomness.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDraw {
    pub t: f64,
    pub eps: Tensor,
    /// Condition dropout for the guidance branch.
    pub drop: bool,
}

impl LossDraw {
    pub fn sample(rng: &mut Rng, shape: &[usize], p_drop: f64) -> Self {
        let t = rng.random::<f64>();
        let mut eps = Tensor::zeros(shape);
        rng::fill_normal(rng, eps.data_mut());
        let drop = rng.random::<f64>() < p_drop;
        LossDraw { t, eps, drop }
    }

    /// Fixed, dropout-free draws with stratified timesteps, used to track
    /// the objective without sampling noise.
    pub fn probe(seed: u64, shape: &[usize], count: usize) -> Vec<LossDraw> {
        (0..count)
            .map(|i| {
                let mut r = rng::substream(seed, "probe", i as u64);
                let mut eps = Tensor::zeros(shape);
                rng::fill_normal(&mut r, eps.data_mut());
                LossDraw {
                    t: (i as f64 + 0.5) / count as f64,
                    eps,
                    drop: false,
                }
            })
            .collect()
    }
}

/// Denoiser input and regression target for one draw.
pub fn prepare(
    schedule: &NoiseSchedule,
    layout: &ChannelLayout,
    cond: &Conditions,
    z0: &Tensor,
    draw: &LossDraw,
) -> Result<(Tensor, usize)> {
    let z_t = forward_noise(schedule, z0, draw.t, &draw.eps)?;
    let uncond;
    let c = if draw.drop {
        uncond = cond.unconditional();
        &uncond
    } else {
        cond
    };
    Ok((c.assemble(layout, &z_t)?, c.caption))
}

pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.len().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

pub fn loss_for_draw<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    cond: &Conditions,
    z0: &Tensor,
    draw: &LossDraw,
) -> Result<f64> {
    let (x, caption) = prepare(schedule, &model.layout(), cond, z0, draw)?;
    let pred = model.predict(&x, draw.t, caption)?;
    Ok(mse(&pred, &draw.eps))
}

/// Mean squared noise-prediction error over the video and point channels
/// for `t ~ U(0, 1)`, `ε ~ N(0, I)`, with condition dropout `p_drop`.
pub fn training_loss<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    cond: &Conditions,
    z0: &Tensor,
    p_drop: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let draw = LossDraw::sample(rng, z0.shape(), p_drop);
    loss_for_draw(model, schedule, cond, z0, &draw)
}
