//! Patch-token diffusion transformer predicting the noise on the video and
//! point-map channels of the concatenated latent.

use serde::{Deserialize, Serialize};

use crate::codec::ChannelLayout;
use crate::error::{Error, Result};
use crate::nn::{join, Activation, Attention, AttentionCache, LayerNorm, LayerNormCache, Linear, LinearCache, Module, Param};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Caption vocabulary: index 0 is the null caption.
pub const CAPTION_VOCAB: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    /// Token patch over `(k, h, w)`.
    pub patch: [usize; 3],
    pub mlp_ratio: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            depth: 6,
            width: 128,
            heads: 4,
            patch: [1, 4, 4],
            mlp_ratio: 4,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("denoiser depth must be at least 2, got {}", self.depth)));
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "width {} must be even and divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.patch.contains(&0) || self.mlp_ratio == 0 {
            return Err(Error::Config("patch and mlp ratio must be positive".into()));
        }
        Ok(())
    }

    fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }
}

/// Token grid for a `[k, c, h, w]` latent.
fn token_grid(dims: [usize; 4], patch: [usize; 3]) -> Result<[usize; 3]> {
    let [k, _, h, w] = dims;
    let [pt, ph, pw] = patch;
    if k % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Precondition(format!(
            "latent {k}x{h}x{w} is not divisible by token patch {patch:?}"
        )));
    }
    Ok([k / pt, h / ph, w / pw])
}

/// Visit every `(token feature, element)` correspondence of the patch
/// layout; feature order within a token is `(channel, dt, di, dj)`.
fn for_each_patch(dims: [usize; 4], patch: [usize; 3], mut f: impl FnMut(usize, usize)) {
    let [_, c, h, w] = dims;
    let [pt, ph, pw] = patch;
    let (gh, gw) = (h / ph, w / pw);
    let gt = dims[0] / pt;
    let feat = c * pt * ph * pw;
    for a in 0..gt {
        for b in 0..gh {
            for cc in 0..gw {
                let n = (a * gh + b) * gw + cc;
                let mut fi = 0;
                for ch in 0..c {
                    for dt in 0..pt {
                        for di in 0..ph {
                            for dj in 0..pw {
                                let (t, i, j) = (a * pt + dt, b * ph + di, cc * pw + dj);
                                f(n * feat + fi, ((t * c + ch) * h + i) * w + j);
                                fi += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Zero-weight gate whose mix half starts open, so the mix weights receive
/// gradient from the first step while the output is unchanged.
fn mix_gate(width: usize, cn: usize) -> Linear {
    let mut g = Linear::zeroed(width, 2 * cn);
    if let Some(b) = &mut g.bias {
        b.value[cn..].fill(1.0);
    }
    g
}

/// `[k, C, h, w]` to `[k·h·w, C]` rows.
fn pixel_major(x: &[f64], [k, c, h, w]: [usize; 4]) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for f in 0..k {
        for ch in 0..c {
            for p in 0..plane {
                out[(f * plane + p) * c + ch] = x[(f * c + ch) * plane + p];
            }
        }
    }
    out
}

fn channel_major(rows: &[f64], [k, c, h, w]: [usize; 4]) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; rows.len()];
    for f in 0..k {
        for ch in 0..c {
            for p in 0..plane {
                out[(f * c + ch) * plane + p] = rows[(f * plane + p) * c + ch];
            }
        }
    }
    out
}

pub fn patchify(x: &[f64], dims: [usize; 4], patch: [usize; 3]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for_each_patch(dims, patch, |tok, el| out[tok] = x[el]);
    out
}

pub fn unpatchify(tokens: &[f64], dims: [usize; 4], patch: [usize; 3]) -> Vec<f64> {
    let mut out = vec![0.0; tokens.len()];
    for_each_patch(dims, patch, |tok, el| out[el] = tokens[tok]);
    out
}

/// Fixed sinusoidal embedding of the 3-D token position.
fn position_embedding(grid: [usize; 3], width: usize) -> Vec<f64> {
    let per_axis = 2 * (width / 6);
    let n = grid.iter().product::<usize>();
    let mut out = vec![0.0; n * width];
    for a in 0..grid[0] {
        for b in 0..grid[1] {
            for c in 0..grid[2] {
                let tok = (a * grid[1] + b) * grid[2] + c;
                for (axis, pos) in [a, b, c].into_iter().enumerate() {
                    let half = per_axis / 2;
                    for m in 0..half {
                        let freq = 10000f64.powf(-(m as f64) / half as f64);
                        let base = tok * width + axis * per_axis + 2 * m;
                        out[base] = (pos as f64 * freq).sin();
                        out[base + 1] = (pos as f64 * freq).cos();
                    }
                }
            }
        }
    }
    out
}

/// Sinusoidal features of `1000 t`.
fn timestep_features(t: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let x = 1000.0 * t;
    let mut out = vec![0.0; width];
    for m in 0..half {
        let freq = (-(10000f64.ln()) * m as f64 / half as f64).exp();
        out[m] = (x * freq).sin();
        out[half + m] = (x * freq).cos();
    }
    out
}

/// Pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    fc1: LinearCache,
    hidden: Vec<f64>,
    fc2: LinearCache,
}

impl Block {
    fn new(width: usize, heads: usize, mlp_ratio: usize, rng: &mut Rng) -> Self {
        Block {
            ln1: LayerNorm::new(width),
            attn: Attention::new(width, heads, rng),
            ln2: LayerNorm::new(width),
            fc1: Linear::new(width, width * mlp_ratio, rng),
            fc2: Linear::new(width * mlp_ratio, width, rng),
        }
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v: Vec<&mut Linear> = self.attn.linears_mut().into_iter().collect();
        v.push(&mut self.fc1);
        v.push(&mut self.fc2);
        v
    }

    fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, BlockCache) {
        let (a, ln1) = self.ln1.forward(x);
        let (att, attn) = self.attn.forward(&a, n);
        let y: Vec<f64> = x.iter().zip(&att).map(|(p, q)| p + q).collect();
        let (b, ln2) = self.ln2.forward(&y);
        let (hidden, fc1) = self.fc1.forward(&b, n);
        let g = Activation::Gelu.forward(&hidden);
        let (m, fc2) = self.fc2.forward(&g, n);
        let out = y.iter().zip(&m).map(|(p, q)| p + q).collect();
        (
            out,
            BlockCache {
                ln1,
                attn,
                ln2,
                fc1,
                hidden,
                fc2,
            },
        )
    }

    fn backward(&mut self, cache: BlockCache, dout: &[f64]) -> Vec<f64> {
        let dg = self.fc2.backward(cache.fc2, dout);
        let dh = Activation::Gelu.backward(&cache.hidden, &dg);
        let db = self.fc1.backward(cache.fc1, &dh);
        let dln2 = self.ln2.backward(cache.ln2, &db);
        let dy: Vec<f64> = dout.iter().zip(&dln2).map(|(p, q)| p + q).collect();
        let da = self.attn.backward(cache.attn, &dy);
        let dln1 = self.ln1.backward(cache.ln1, &da);
        dy.iter().zip(&dln1).map(|(p, q)| p + q).collect()
    }
}

impl Module for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// The denoiser. A caption token is prepended to the patch tokens, the
/// timestep embedding is added to every token, and the output head is
/// complemented by two time-gated skips: a per-channel one from the noised
/// input and a per-pixel channel mix of the whole input.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub spec: DenoiserSpec,
    pub layout: ChannelLayout,
    pub embed: Linear,
    /// `CAPTION_VOCAB x width`
    pub caption: Param,
    pub time_in: Linear,
    pub time_out: Linear,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
    /// Time gates: `cn` for the noised skip, then `cn` for the mix.
    pub gate: Linear,
    /// Per-pixel `C_total -> cn` map, zero at initialization.
    pub mix: Linear,
}

pub struct DenoiserCache {
    dims: [usize; 4],
    caption: usize,
    x_noised: Vec<f64>,
    embed: LinearCache,
    time_in: LinearCache,
    time_hidden: Vec<f64>,
    time_out: LinearCache,
    temb: Vec<f64>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
    head: LinearCache,
    gate: LinearCache,
    gate_value: Vec<f64>,
    mix: LinearCache,
    mix_out: Vec<f64>,
}

/// Gradients of the loss with respect to the denoiser input.
pub struct InputGrad {
    /// `[k, C_total, h, w]`
    pub x: Tensor,
}

impl Denoiser {
    pub fn new(spec: DenoiserSpec, layout: ChannelLayout, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let w = spec.width;
        let pv = spec.patch_volume();
        let mut caption = Param::zeros(&[CAPTION_VOCAB, w]);
        rng::fill_normal(rng, &mut caption.value);
        caption.value.iter_mut().for_each(|v| *v *= 0.02);
        let blocks = (0..spec.depth)
            .map(|_| Block::new(w, spec.heads, spec.mlp_ratio, rng))
            .collect();
        Ok(Denoiser {
            embed: Linear::new(layout.total() * pv, w, rng),
            caption,
            time_in: Linear::new(w, w, rng),
            time_out: Linear::new(w, w, rng),
            blocks,
            norm: LayerNorm::new(w),
            head: Linear::new(w, layout.noised_channels() * pv, rng),
            gate: mix_gate(w, layout.noised_channels()),
            mix: Linear::zeroed(layout.total(), layout.noised_channels()),
            spec,
            layout,
        })
    }

    /// Zero the output head and both skips, so the prediction is zero.
    pub fn zero_output(&mut self) {
        for lin in [&mut self.head, &mut self.gate, &mut self.mix] {
            lin.weight.value.fill(0.0);
            if let Some(b) = &mut lin.bias {
                b.value.fill(0.0);
            }
            if let Some(l) = &mut lin.lora {
                l.b.value.fill(0.0);
            }
        }
    }

    /// Every linear layer, in a fixed order.
    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![&mut self.embed, &mut self.time_in, &mut self.time_out];
        for b in &mut self.blocks {
            v.extend(b.linears_mut());
        }
        v.push(&mut self.head);
        v.push(&mut self.gate);
        v.push(&mut self.mix);
        v
    }

    /// Attach a zero-initialized low-rank update to every linear layer.
    pub fn attach_lora(&mut self, rank: usize, alpha: f64, rng: &mut Rng) -> Result<()> {
        if rank == 0 {
            return Err(Error::Config("lora rank must be positive".into()));
        }
        for lin in self.linears_mut() {
            lin.attach_lora(rank.min(lin.in_dim.min(lin.out_dim)).max(1), alpha, rng);
        }
        Ok(())
    }

    pub fn has_lora(&self) -> bool {
        self.embed.lora.is_some()
    }

    fn check(&self, x: &Tensor, caption: usize, t: f64) -> Result<([usize; 4], [usize; 3])> {
        let dims = x.dims4()?;
        if dims[1] != self.layout.total() {
            return Err(Error::dim(format!("{} input channels", self.layout.total()), dims[1]));
        }
        if caption >= CAPTION_VOCAB {
            return Err(Error::Precondition(format!("caption id {caption} out of range")));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Precondition(format!("timestep {t} outside [0, 1]")));
        }
        Ok((dims, token_grid(dims, self.spec.patch)?))
    }

    /// Predicted noise `[k, c_video + c_point, h, w]` and the backward cache.
    pub fn forward(&self, x: &Tensor, t: f64, caption: usize) -> Result<(Tensor, DenoiserCache)> {
        let (dims, grid) = self.check(x, caption, t)?;
        let [k, _, h, w] = dims;
        let width = self.spec.width;
        let patch = self.spec.patch;
        let n = grid.iter().product::<usize>();

        let tokens = patchify(x.data(), dims, patch);
        let (mut hid, embed) = self.embed.forward(&tokens, n);
        for (v, p) in hid.iter_mut().zip(position_embedding(grid, width)) {
            *v += p;
        }

        let (time_hidden, time_in) = self.time_in.forward(&timestep_features(t, width), 1);
        let (temb, time_out) = self.time_out.forward(&Activation::Silu.forward(&time_hidden), 1);

        let mut seq = Vec::with_capacity((n + 1) * width);
        seq.extend_from_slice(&self.caption.value[caption * width..(caption + 1) * width]);
        seq.extend_from_slice(&hid);
        for row in seq.chunks_mut(width) {
            for (v, e) in row.iter_mut().zip(&temb) {
                *v += e;
            }
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, c) = b.forward(&seq, n + 1);
            seq = out;
            caches.push(c);
        }
        let (normed, norm) = self.norm.forward(&seq[width..]);
        let (out_tokens, head) = self.head.forward(&normed, n);
        let cn = self.layout.noised_channels();
        let mut eps = unpatchify(&out_tokens, [k, cn, h, w], patch);

        let (gate_value, gate) = self.gate.forward(&Activation::Silu.forward(&temb), 1);
        let x_noised = x
            .slice_channels(self.layout.noised_offset(), cn)?
            .into_data();
        let plane = h * w;
        let (mix_out, mix) = self.mix.forward(&pixel_major(x.data(), dims), k * plane);
        for f in 0..k {
            for c in 0..cn {
                let (g, gm) = (gate_value[c], gate_value[cn + c]);
                let base = (f * cn + c) * plane;
                for p in 0..plane {
                    eps[base + p] += g * x_noised[base + p] + gm * mix_out[(f * plane + p) * cn + c];
                }
            }
        }
        Ok((
            Tensor::from_vec(&[k, cn, h, w], eps)?,
            DenoiserCache {
                dims,
                caption,
                x_noised,
                embed,
                time_in,
                time_hidden,
                time_out,
                temb,
                blocks: caches,
                norm,
                head,
                gate,
                gate_value,
                mix,
                mix_out,
            },
        ))
    }

    pub fn predict(&self, x: &Tensor, t: f64, caption: usize) -> Result<Tensor> {
        Ok(self.forward(x, t, caption)?.0)
    }

    /// Accumulate parameter gradients for `d eps` and return the gradient
    /// with respect to the full input.
    pub fn backward(&mut self, cache: DenoiserCache, d_eps: &Tensor) -> Result<InputGrad> {
        let dims = cache.dims;
        let [k, c_total, h, w] = dims;
        let cn = self.layout.noised_channels();
        if d_eps.shape() != [k, cn, h, w] {
            return Err(Error::dim(format!("{:?}", [k, cn, h, w]), format!("{:?}", d_eps.shape())));
        }
        let width = self.spec.width;
        let patch = self.spec.patch;
        let grid = token_grid(dims, patch)?;
        let n = grid.iter().product::<usize>();
        let plane = h * w;
        let de = d_eps.data();

        // Gated skips.
        let mut d_gate = vec![0.0; 2 * cn];
        let mut d_x_noised = vec![0.0; de.len()];
        let mut d_mix = vec![0.0; k * plane * cn];
        for f in 0..k {
            for c in 0..cn {
                let (g, gm) = (cache.gate_value[c], cache.gate_value[cn + c]);
                let base = (f * cn + c) * plane;
                for p in 0..plane {
                    let d = de[base + p];
                    let mi = (f * plane + p) * cn + c;
                    d_gate[c] += d * cache.x_noised[base + p];
                    d_gate[cn + c] += d * cache.mix_out[mi];
                    d_x_noised[base + p] = g * d;
                    d_mix[mi] = gm * d;
                }
            }
        }
        let d_mix_in = self.mix.backward(cache.mix, &d_mix);
        let d_silu_temb = self.gate.backward(cache.gate, &d_gate);
        let mut d_temb = Activation::Silu.backward(&cache.temb, &d_silu_temb);

        // Head and transformer.
        let d_tokens = patchify(de, [k, cn, h, w], patch);
        let d_normed = self.head.backward(cache.head, &d_tokens);
        let d_body = self.norm.backward(cache.norm, &d_normed);
        let mut d_seq = vec![0.0; (n + 1) * width];
        d_seq[width..].copy_from_slice(&d_body);
        for (b, c) in self.blocks.iter_mut().zip(cache.blocks).rev() {
            d_seq = b.backward(c, &d_seq);
        }

        for row in d_seq.chunks(width) {
            for (a, b) in d_temb.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (g, d) in self.caption.grad[cache.caption * width..(cache.caption + 1) * width]
            .iter_mut()
            .zip(&d_seq[..width])
        {
            *g += d;
        }
        let d_time_hidden = self.time_out.backward(cache.time_out, &d_temb);
        let d_time_hidden = Activation::Silu.backward(&cache.time_hidden, &d_time_hidden);
        self.time_in.backward(cache.time_in, &d_time_hidden);

        let d_in_tokens = self.embed.backward(cache.embed, &d_seq[width..]);
        let mut dx = unpatchify(&d_in_tokens, dims, patch);
        for (a, b) in dx.iter_mut().zip(channel_major(&d_mix_in, dims)) {
            *a += b;
        }
        let mut dx = Tensor::from_vec(&[k, c_total, h, w], dx)?;
        let skip = Tensor::from_vec(&[k, cn, h, w], d_x_noised)?;
        dx.add_into_channels(self.layout.noised_offset(), &skip)?;
        Ok(InputGrad { x: dx })
    }
}

impl Module for Denoiser {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.embed.visit(&join(prefix, "embed"), f);
        f(&join(prefix, "caption"), &self.caption);
        self.time_in.visit(&join(prefix, "time_in"), f);
        self.time_out.visit(&join(prefix, "time_out"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.head.visit(&join(prefix, "head"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        self.mix.visit(&join(prefix, "mix"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        f(&join(prefix, "caption"), &mut self.caption);
        self.time_in.visit_mut(&join(prefix, "time_in"), f);
        self.time_out.visit_mut(&join(prefix, "time_out"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.mix.visit_mut(&join(prefix, "mix"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let dims = [2, 3, 4, 6];
        let x: Vec<f64> = (0..144).map(|v| v as f64).collect();
        let tok = patchify(&x, dims, [1, 2, 3]);
        assert_ne!(tok, x);
        assert_eq!(unpatchify(&tok, dims, [1, 2, 3]), x);
    }

    #[test]
    fn spec_rejects_shallow_models() {
        let spec = DenoiserSpec {
            depth: 1,
            ..DenoiserSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn timestep_features_distinguish_steps() {
        assert_ne!(timestep_features(0.5, 16), timestep_features(0.51, 16));
    }
}
