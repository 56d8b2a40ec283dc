use serde::{Deserialize, Serialize};

use super::{Conditions, EpsModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg: f64,
    /// 0 gives the deterministic update; larger values re-inject noise.
    pub eta: f64,
    /// Lower bound on the signal coefficient when estimating the clean
    /// latent; the first step starts at `σ = 0`.
    pub sigma_floor: f64,
    /// Clamp on the clean-latent estimate magnitude.
    pub x0_clip: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            cfg: 7.5,
            eta: 0.0,
            sigma_floor: 1e-2,
            x0_clip: 10.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Precondition("sampling needs at least one step".into()));
        }
        if !self.cfg.is_finite() || !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("invalid guidance {} or eta {}", self.cfg, self.eta)));
        }
        if !(self.sigma_floor > 0.0) || !(self.x0_clip > 0.0) {
            return Err(Error::Config("sigma_floor and x0_clip must be positive".into()));
        }
        Ok(())
    }
}

/// `t_i = 1 − i/steps` for `i = 0..=steps`.
pub fn step_grid(steps: usize) -> Result<Vec<f64>> {
    if steps < 1 {
        return Err(Error::Precondition("sampling needs at least one step".into()));
    }
    Ok((0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect())
}

/// `ε_u + s (ε_c − ε_u)`, evaluated as `s ε_c + (1 − s) ε_u` so that
/// `s = 0` and `s = 1` return one branch exactly.
pub fn guide(cond: &Tensor, uncond: &Tensor, scale: f64) -> Tensor {
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(c, u)| scale * c + (1.0 - scale) * u)
        .collect();
    Tensor::from_vec(cond.shape(), data).expect("branches share a shape")
}

fn guided_eps<M: EpsModel + ?Sized>(
    model: &M,
    cond: &Conditions,
    uncond: &Conditions,
    z: &Tensor,
    t: f64,
    scale: f64,
) -> Result<Tensor> {
    let layout = model.layout();
    let run = |c: &Conditions| model.predict(&c.assemble(&layout, z)?, t, c.caption);
    if scale == 0.0 {
        return run(uncond);
    }
    if scale == 1.0 {
        return run(cond);
    }
    Ok(guide(&run(cond)?, &run(uncond)?, scale))
}

/// Generate clean video+point latents `[k, c_video + c_point, h, w]` from
/// Gaussian noise under the given conditions.
pub fn sample_latents<M: EpsModel + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    cond: &Conditions,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Tensor> {
    config.validate()?;
    let layout = model.layout();
    let [k, _, h, w] = cond.dims();
    let mut z = Tensor::zeros(&[k, layout.noised_channels(), h, w]);
    rng::fill_normal(&mut rng::substream(seed, "sample.init", 0), z.data_mut());
    let uncond = cond.unconditional();
    let grid = step_grid(config.steps)?;
    for (i, pair) in grid.windows(2).enumerate() {
        let (t, t_next) = (pair[0], pair[1]);
        let eps = guided_eps(model, cond, &uncond, &z, t, config.cfg)?;
        let (s, b) = (schedule.sigma(t), schedule.beta(t));
        let (s_next, b_next) = (schedule.sigma(t_next), schedule.beta(t_next));
        let inv = 1.0 / s.max(config.sigma_floor);
        let clip = config.x0_clip;
        let x0: Vec<f64> = z
            .data()
            .iter()
            .zip(eps.data())
            .map(|(zt, e)| ((zt - b * e) * inv).clamp(-clip, clip))
            .collect();
        // Deterministic part keeps the predicted noise direction; with
        // eta > 0 part of it is replaced by fresh noise.
        let noise_std = if config.eta > 0.0 && b > 0.0 && s_next > 0.0 {
            config.eta * (b_next / b) * (1.0 - (s / s_next).powi(2)).max(0.0).sqrt()
        } else {
            0.0
        };
        let dir = (b_next * b_next - noise_std * noise_std).max(0.0).sqrt();
        let mut fresh = vec![0.0; z.len()];
        if noise_std > 0.0 {
            rng::fill_normal(&mut rng::substream(seed, "sample.eta", i as u64), &mut fresh);
        }
        for (((zv, x), e), n) in z.data_mut().iter_mut().zip(&x0).zip(eps.data()).zip(&fresh) {
            *zv = s_next * x + dir * e + noise_std * n;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_runs_from_noise_to_clean() {
        assert_eq!(step_grid(2).unwrap(), vec![1.0, 0.5, 0.0]);
        assert!(step_grid(0).is_err());
    }

    #[test]
    fn guidance_endpoints_are_exact() {
        let c = Tensor::from_vec(&[3], vec![0.1, -2.0, 3.3]).unwrap();
        let u = Tensor::from_vec(&[3], vec![7.0, 0.25, -1.1]).unwrap();
        assert_eq!(guide(&c, &u, 1.0), c);
        assert_eq!(guide(&c, &u, 0.0), u);
    }
}
