//! Latent producers: the frame/video patch codec, the part-wise motion
//! encoders, the camera encoder and the point-map encoder with its adapter.
//!
//! Every latent is a `[k, c, h, w]` tensor. [`ChannelLayout`] is the single
//! record of where each block lives in the concatenated denoiser input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PluckerRayMap;
use crate::motion::{MotionGroup, MotionSequence};
use crate::nn::{join, ConvStack, ConvStackCache, ConvStackSpec, Linear, LinearCache, Module, Param};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Channels of the part-wise motion latent, one per group.
pub const MOTION_CHANNELS: usize = 3;

pub const MOTION_ENCODER_LAYERS: usize = 8;
pub const ADAPTER_LAYERS: usize = 5;

/// Codec and encoder sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Square patch edge in pixels.
    pub patch: usize,
    pub c_frame: usize,
    pub c_video: usize,
    pub c_point: usize,
    /// Frames per clip.
    pub frames: usize,
    /// Hidden width of each motion encoder.
    pub motion_width: usize,
    /// Hidden width of the camera encoder.
    pub camera_width: usize,
    /// Hidden width of the point-map adapter.
    pub adapter_width: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            patch: 4,
            c_frame: 48,
            c_video: 48,
            c_point: 64,
            frames: 13,
            motion_width: 8,
            camera_width: 8,
            adapter_width: 32,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.c_frame == 0 || self.c_video == 0 || self.c_point == 0 || self.frames == 0 {
            return Err(Error::Config(format!("codec sizes must be positive: {self:?}")));
        }
        if self.motion_width == 0 || self.camera_width == 0 || self.adapter_width == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout::new(self.c_frame, self.c_video, self.c_point)
    }

    /// Values in one RGB or XYZ patch.
    pub fn patch_values(&self) -> usize {
        3 * self.patch * self.patch
    }
}

/// What a latent block holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRole {
    Frame,
    Motion,
    Video,
    Point,
    Camera,
}

/// A role-tagged `[k, c, h, w]` latent.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBlock {
    pub role: LatentRole,
    pub data: Tensor,
}

impl LatentBlock {
    pub fn new(role: LatentRole, data: Tensor) -> Result<Self> {
        data.dims4()?;
        Ok(LatentBlock { role, data })
    }

    pub fn zeros(role: LatentRole, k: usize, c: usize, h: usize, w: usize) -> Self {
        LatentBlock {
            role,
            data: Tensor::zeros(&[k, c, h, w]),
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.data.dims4().expect("latent blocks are rank 4")
    }

    pub fn channels(&self) -> usize {
        self.dims()[1]
    }
}

/// Channel offsets of the concatenated input `frame ‖ motion ‖ video ‖ point`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub c_frame: usize,
    pub c_motion: usize,
    pub c_video: usize,
    pub c_point: usize,
}

impl ChannelLayout {
    pub fn new(c_frame: usize, c_video: usize, c_point: usize) -> Self {
        ChannelLayout {
            c_frame,
            c_motion: MOTION_CHANNELS,
            c_video,
            c_point,
        }
    }

    pub fn frame_offset(&self) -> usize {
        0
    }

    pub fn motion_offset(&self) -> usize {
        self.c_frame
    }

    pub fn video_offset(&self) -> usize {
        self.c_frame + self.c_motion
    }

    pub fn point_offset(&self) -> usize {
        self.video_offset() + self.c_video
    }

    /// Channels that receive noise (video then point).
    pub fn noised_offset(&self) -> usize {
        self.video_offset()
    }

    pub fn noised_channels(&self) -> usize {
        self.c_video + self.c_point
    }

    pub fn condition_channels(&self) -> usize {
        self.c_frame + self.c_motion
    }

    pub fn total(&self) -> usize {
        self.point_offset() + self.c_point
    }

    /// `(role, offset, channels)` for every block, in concatenation order.
    pub fn entries(&self) -> [(LatentRole, usize, usize); 4] {
        [
            (LatentRole::Frame, self.frame_offset(), self.c_frame),
            (LatentRole::Motion, self.motion_offset(), self.c_motion),
            (LatentRole::Video, self.video_offset(), self.c_video),
            (LatentRole::Point, self.point_offset(), self.c_point),
        ]
    }

    /// Recover one block from a concatenated tensor.
    pub fn extract(&self, joint: &Tensor, role: LatentRole) -> Result<Tensor> {
        let (_, off, c) = self
            .entries()
            .into_iter()
            .find(|e| e.0 == role)
            .ok_or_else(|| Error::Precondition(format!("{role:?} is not part of the layout")))?;
        joint.slice_channels(off, c)
    }
}

fn check_role(block: &LatentBlock, role: LatentRole) -> Result<()> {
    if block.role != role {
        return Err(Error::Precondition(format!(
            "expected a {role:?} latent, got {:?}",
            block.role
        )));
    }
    Ok(())
}

/// Channel-wise concatenation in the fixed order frame, motion, noised video
/// (with the camera latent already added), noised point map.
pub fn concat_conditions(
    frame: &LatentBlock,
    motion: &LatentBlock,
    video_noised_plus_camera: &LatentBlock,
    point_noised: &LatentBlock,
) -> Result<(Tensor, ChannelLayout)> {
    check_role(frame, LatentRole::Frame)?;
    check_role(motion, LatentRole::Motion)?;
    check_role(video_noised_plus_camera, LatentRole::Video)?;
    check_role(point_noised, LatentRole::Point)?;
    if motion.channels() != MOTION_CHANNELS {
        return Err(Error::dim(MOTION_CHANNELS, motion.channels()));
    }
    let joint = Tensor::concat_channels(&[
        &frame.data,
        &motion.data,
        &video_noised_plus_camera.data,
        &point_noised.data,
    ])?;
    let layout = ChannelLayout::new(
        frame.channels(),
        video_noised_plus_camera.channels(),
        point_noised.channels(),
    );
    Ok((joint, layout))
}

/// Modified Gram-Schmidt on the columns of a seeded Gaussian `n x n` matrix.
fn seeded_orthogonal(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let mut m = vec![0.0; n * n];
    rng::fill_normal(&mut r, &mut m);
    for j in 0..n {
        for p in 0..j {
            let d: f64 = (0..n).map(|i| m[i * n + j] * m[i * n + p]).sum();
            for i in 0..n {
                m[i * n + j] -= d * m[i * n + p];
            }
        }
        let norm: f64 = (0..n).map(|i| m[i * n + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..n {
            m[i * n + j] /= norm;
        }
    }
    m
}

/// Fixed linear map between `n`-vectors and `c`-vectors with orthonormal
/// columns (`c >= n`, exactly invertible) or orthonormal rows (`c < n`,
/// decoding is the orthogonal projection).
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoMap {
    pub input: usize,
    pub output: usize,
    /// `output x input`
    basis: Vec<f64>,
}

impl OrthoMap {
    pub fn new(input: usize, output: usize, seed: u64) -> Self {
        let m = input.max(output);
        let o = seeded_orthogonal(m, seed);
        let mut basis = Vec::with_capacity(input * output);
        for i in 0..output {
            basis.extend_from_slice(&o[i * m..i * m + input]);
        }
        OrthoMap { input, output, basis }
    }

    pub fn is_invertible(&self) -> bool {
        self.output >= self.input
    }

    pub fn forward(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.basis[i * self.input..(i + 1) * self.input]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    pub fn transpose(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &zi) in z.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(&self.basis[i * self.input..(i + 1) * self.input]) {
                *o += zi * b;
            }
        }
    }
}

/// Deterministic patch embedding of `H x W x 3` images into `c x H/p x W/p`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchCodec {
    pub patch: usize,
    pub map: OrthoMap,
}

impl PatchCodec {
    pub fn new(patch: usize, channels: usize, seed: u64) -> Self {
        PatchCodec {
            patch,
            map: OrthoMap::new(3 * patch * patch, channels, seed),
        }
    }

    pub fn channels(&self) -> usize {
        self.map.output
    }

    fn grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let p = self.patch;
        if height % p != 0 || width % p != 0 || height == 0 || width == 0 {
            return Err(Error::Precondition(format!(
                "image {height}x{width} is not divisible by patch {p}"
            )));
        }
        Ok((height / p, width / p))
    }

    /// One image `[H, W, 3]` into `[c, h, w]`.
    pub fn encode_image(&self, image: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        let (h, w) = self.grid(height, width)?;
        if image.len() != height * width * 3 {
            return Err(Error::dim(format!("{height}x{width}x3"), image.len()));
        }
        let p = self.patch;
        let c = self.channels();
        let mut out = vec![0.0; c * h * w];
        let mut v = vec![0.0; 3 * p * p];
        let mut z = vec![0.0; c];
        for i in 0..h {
            for j in 0..w {
                let mut n = 0;
                for di in 0..p {
                    for dj in 0..p {
                        let px = ((i * p + di) * width + j * p + dj) * 3;
                        v[n..n + 3].copy_from_slice(&image[px..px + 3]);
                        n += 3;
                    }
                }
                self.map.forward(&v, &mut z);
                for (ch, zv) in z.iter().enumerate() {
                    out[(ch * h + i) * w + j] = *zv;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode_image`](Self::encode_image) for a `[c, h, w]` latent.
    pub fn decode_image(&self, latent: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        let c = self.channels();
        if latent.len() != c * h * w {
            return Err(Error::dim(format!("{c}x{h}x{w}"), latent.len()));
        }
        let p = self.patch;
        let (height, width) = (h * p, w * p);
        let mut image = vec![0.0; height * width * 3];
        let mut v = vec![0.0; 3 * p * p];
        let mut z = vec![0.0; c];
        for i in 0..h {
            for j in 0..w {
                for (ch, zv) in z.iter_mut().enumerate() {
                    *zv = latent[(ch * h + i) * w + j];
                }
                self.map.transpose(&z, &mut v);
                let mut n = 0;
                for di in 0..p {
                    for dj in 0..p {
                        let px = ((i * p + di) * width + j * p + dj) * 3;
                        image[px..px + 3].copy_from_slice(&v[n..n + 3]);
                        n += 3;
                    }
                }
            }
        }
        Ok(image)
    }

    /// `[k, H, W, 3]` clip into `[k, c, h, w]`.
    pub fn encode_clip(&self, clip: &Tensor) -> Result<Tensor> {
        let [k, height, width, three] = clip.dims4()?;
        if three != 3 {
            return Err(Error::dim("3 colour channels", three));
        }
        let (h, w) = self.grid(height, width)?;
        let frame = height * width * 3;
        let mut data = Vec::with_capacity(k * self.channels() * h * w);
        for f in 0..k {
            data.extend(self.encode_image(&clip.data()[f * frame..(f + 1) * frame], height, width)?);
        }
        Tensor::from_vec(&[k, self.channels(), h, w], data)
    }

    /// `[k, c, h, w]` latent into a `[k, H, W, 3]` clip.
    pub fn decode_clip(&self, latent: &Tensor) -> Result<Tensor> {
        let [k, c, h, w] = latent.dims4()?;
        if c != self.channels() {
            return Err(Error::dim(format!("{} channels", self.channels()), c));
        }
        let plane = c * h * w;
        let mut data = Vec::with_capacity(k * h * w * self.patch * self.patch * 3);
        for f in 0..k {
            data.extend(self.decode_image(&latent.data()[f * plane..(f + 1) * plane], h, w)?);
        }
        Tensor::from_vec(&[k, h * self.patch, w * self.patch, 3], data)
    }
}

const FRAME_CODEC_SEED: u64 = 0x0f4a_3e01;
const VIDEO_CODEC_SEED: u64 = 0x0f4a_3e02;
const POINT_CODEC_SEED: u64 = 0x0f4a_3e03;
const POINT_SKIP_SEED: u64 = 0x0f4a_3e04;

/// Frame and video codecs.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoCodec {
    pub frame: PatchCodec,
    pub video: PatchCodec,
}

impl VideoCodec {
    pub fn new(cfg: &CodecConfig) -> Self {
        VideoCodec {
            frame: PatchCodec::new(cfg.patch, cfg.c_frame, FRAME_CODEC_SEED),
            video: PatchCodec::new(cfg.patch, cfg.c_video, VIDEO_CODEC_SEED),
        }
    }

    /// Encode a first frame `[H, W, 3]` and tile it over `k` time steps.
    pub fn encode_frame(&self, image: &Tensor, k: usize) -> Result<LatentBlock> {
        let [height, width, three] = match image.shape() {
            &[a, b, c] => [a, b, c],
            s => return Err(Error::dim("H x W x 3 image", format!("{s:?}"))),
        };
        if three != 3 {
            return Err(Error::dim("3 colour channels", three));
        }
        let one = self.frame.encode_image(image.data(), height, width)?;
        let (h, w) = (height / self.frame.patch, width / self.frame.patch);
        let mut data = Vec::with_capacity(k * one.len());
        for _ in 0..k {
            data.extend_from_slice(&one);
        }
        LatentBlock::new(LatentRole::Frame, Tensor::from_vec(&[k, self.frame.channels(), h, w], data)?)
    }

    /// First time step of a frame latent back to an `[H, W, 3]` image.
    pub fn decode_frame(&self, latent: &LatentBlock) -> Result<Tensor> {
        check_role(latent, LatentRole::Frame)?;
        let [_, c, h, w] = latent.dims();
        if c != self.frame.channels() {
            return Err(Error::dim(self.frame.channels(), c));
        }
        let img = self.frame.decode_image(&latent.data.data()[..c * h * w], h, w)?;
        Tensor::from_vec(&[h * self.frame.patch, w * self.frame.patch, 3], img)
    }

    pub fn encode_video(&self, clip: &Tensor) -> Result<LatentBlock> {
        LatentBlock::new(LatentRole::Video, self.video.encode_clip(clip)?)
    }

    pub fn decode_video(&self, latent: &LatentBlock) -> Result<Tensor> {
        check_role(latent, LatentRole::Video)?;
        self.video.decode_clip(&latent.data)
    }
}

/// Per-sequence affine normalization of point maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointNormalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl PointNormalization {
    /// Zero mean and unit maximum absolute coordinate over the sequence.
    pub fn fit(points: &Tensor) -> Result<Self> {
        if !points.is_finite() {
            return Err(Error::NonFinite("point maps"));
        }
        let n = points.len() / 3;
        if n == 0 {
            return Err(Error::Empty("point maps"));
        }
        let mut center = [0.0; 3];
        for p in points.data().chunks(3) {
            for a in 0..3 {
                center[a] += p[a];
            }
        }
        for c in &mut center {
            *c /= n as f64;
        }
        let extent = points
            .data()
            .chunks(3)
            .flat_map(|p| (0..3).map(move |a| (p[a] - center[a]).abs()))
            .fold(0.0, f64::max);
        let scale = if extent > 0.0 { extent } else { 1.0 };
        Ok(PointNormalization { center, scale })
    }

    pub fn apply(&self, points: &Tensor) -> Tensor {
        let mut out = points.clone();
        for p in out.data_mut().chunks_mut(3) {
            for a in 0..3 {
                p[a] = (p[a] - self.center[a]) / self.scale;
            }
        }
        out
    }

    pub fn invert(&self, points: &Tensor) -> Tensor {
        let mut out = points.clone();
        for p in out.data_mut().chunks_mut(3) {
            for a in 0..3 {
                p[a] = p[a] * self.scale + self.center[a];
            }
        }
        out
    }
}

/// Point-map encoder: normalization, patch embedding, then a five-layer
/// adapter into `c_point` channels. The adapter is a fixed isometric lift
/// plus a residual convolution stack whose last layer starts at zero, so
/// the decoder below is exact until the residual branch is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEncoder {
    pub embed: PatchCodec,
    pub lift: OrthoMap,
    pub adapter: ConvStack,
}

impl PointEncoder {
    pub fn new(cfg: &CodecConfig, rng: &mut Rng) -> Result<Self> {
        let n = cfg.patch_values();
        let mut widths = vec![n];
        widths.extend(std::iter::repeat_n(cfg.adapter_width, ADAPTER_LAYERS - 1));
        widths.push(cfg.c_point);
        let spec = ConvStackSpec {
            kernel: [3, 3, 3],
            widths,
        };
        Ok(PointEncoder {
            embed: PatchCodec::new(cfg.patch, n, POINT_CODEC_SEED),
            lift: OrthoMap::new(n, cfg.c_point, POINT_SKIP_SEED),
            adapter: ConvStack::new(spec, rng)?,
        })
    }

    pub fn c_point(&self) -> usize {
        self.lift.output
    }

    /// Encode `[k, H, W, 3]` point maps; also returns the normalization used.
    pub fn encode(&self, pmaps: &Tensor) -> Result<(LatentBlock, PointNormalization)> {
        let norm = PointNormalization::fit(pmaps)?;
        let embedded = self.embed.encode_clip(&norm.apply(pmaps))?;
        let [k, n, h, w] = embedded.dims4()?;
        let c = self.c_point();
        let plane = h * w;
        let mut lifted = Tensor::zeros(&[k, c, h, w]);
        let mut v = vec![0.0; n];
        let mut z = vec![0.0; c];
        for f in 0..k {
            for px in 0..plane {
                for (ch, vv) in v.iter_mut().enumerate() {
                    *vv = embedded.data()[(f * n + ch) * plane + px];
                }
                self.lift.forward(&v, &mut z);
                for (ch, zv) in z.iter().enumerate() {
                    lifted.data_mut()[(f * c + ch) * plane + px] = *zv;
                }
            }
        }
        let residual = self.adapter.apply(embedded.swap01().data(), [k, h, w]);
        let residual = Tensor::from_vec(&[c, k, h, w], residual)?.swap01();
        lifted.add_assign(&residual);
        Ok((LatentBlock::new(LatentRole::Point, lifted)?, norm))
    }

    /// Normalized `[k, H, W, 3]` point maps from a point latent, through the
    /// transpose of the isometric lift.
    pub fn decode_normalized(&self, latent: &LatentBlock) -> Result<Tensor> {
        check_role(latent, LatentRole::Point)?;
        let [k, c, h, w] = latent.dims();
        if c != self.c_point() {
            return Err(Error::dim(self.c_point(), c));
        }
        let n = self.lift.input;
        let plane = h * w;
        let mut embedded = Tensor::zeros(&[k, n, h, w]);
        let mut v = vec![0.0; n];
        let mut z = vec![0.0; c];
        for f in 0..k {
            for px in 0..plane {
                for (ch, zv) in z.iter_mut().enumerate() {
                    *zv = latent.data.data()[(f * c + ch) * plane + px];
                }
                self.lift.transpose(&z, &mut v);
                for (ch, vv) in v.iter().enumerate() {
                    embedded.data_mut()[(f * n + ch) * plane + px] = *vv;
                }
            }
        }
        self.embed.decode_clip(&embedded)
    }
}

impl Module for PointEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.adapter.visit(&join(prefix, "adapter"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.adapter.visit_mut(&join(prefix, "adapter"), f);
    }
}

/// One group's encoder: a learned per-frame lift of the parameter vector to
/// a `1 x h x w` grid followed by an eight-layer 3-D convolution stack.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionEncoder {
    pub group: MotionGroup,
    pub h: usize,
    pub w: usize,
    pub lift: Linear,
    pub stack: ConvStack,
}

pub struct MotionEncoderCache {
    lift: LinearCache,
    stack: ConvStackCache,
}

impl MotionEncoder {
    pub fn new(group: MotionGroup, h: usize, w: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        Ok(MotionEncoder {
            group,
            h,
            w,
            lift: Linear::new(group.dim(), h * w, rng),
            stack: ConvStack::new(ConvStackSpec::uniform(MOTION_ENCODER_LAYERS, 1, width, 1), rng)?,
        })
    }

    fn check(&self, params: &[f64], group: MotionGroup) -> Result<usize> {
        if group != self.group {
            return Err(Error::Precondition(format!(
                "encoder for {} received {} parameters",
                self.group.name(),
                group.name()
            )));
        }
        let d = group.dim();
        if params.is_empty() || params.len() % d != 0 {
            return Err(Error::dim(format!("k x {d}"), params.len()));
        }
        Ok(params.len() / d)
    }

    /// `k x d` parameters into a `[k, 1, h, w]` latent.
    pub fn encode(&self, params: &[f64], group: MotionGroup) -> Result<Tensor> {
        let k = self.check(params, group)?;
        let lifted = self.lift.apply(params, k);
        let out = self.stack.apply(&lifted, [k, self.h, self.w]);
        Tensor::from_vec(&[k, 1, self.h, self.w], out)
    }

    pub fn forward(&self, params: &[f64], group: MotionGroup) -> Result<(Tensor, MotionEncoderCache)> {
        let k = self.check(params, group)?;
        let (lifted, lift) = self.lift.forward(params, k);
        // [k, h·w] rows are already the [1, k, h, w] volume layout.
        let (out, stack) = self.stack.forward(&lifted, [k, self.h, self.w]);
        Ok((Tensor::from_vec(&[k, 1, self.h, self.w], out)?, MotionEncoderCache { lift, stack }))
    }

    pub fn backward(&mut self, cache: MotionEncoderCache, dy: &Tensor) {
        let g = self.stack.backward(cache.stack, dy.data());
        self.lift.backward(cache.lift, &g);
    }
}

impl Module for MotionEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.lift.visit(&join(prefix, "lift"), f);
        self.stack.visit(&join(prefix, "stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lift.visit_mut(&join(prefix, "lift"), f);
        self.stack.visit_mut(&join(prefix, "stack"), f);
    }
}

/// Fixed channel order: body+feet, hands, head. Arguments are positional,
/// so swapping two inputs swaps their channels.
pub fn assemble_motion_latent(
    body_feet: Option<&Tensor>,
    hands: Option<&Tensor>,
    head: Option<&Tensor>,
) -> Result<LatentBlock> {
    let missing = |name: &str| Error::Precondition(format!("motion group '{name}' is missing"));
    let b = body_feet.ok_or_else(|| missing("body_feet"))?;
    let ha = hands.ok_or_else(|| missing("hands"))?;
    let he = head.ok_or_else(|| missing("head"))?;
    for t in [b, ha, he] {
        let [_, c, _, _] = t.dims4()?;
        if c != 1 {
            return Err(Error::dim("one channel per group", c));
        }
        if t.shape() != b.shape() {
            return Err(Error::dim(format!("{:?}", b.shape()), format!("{:?}", t.shape())));
        }
    }
    LatentBlock::new(LatentRole::Motion, Tensor::concat_channels(&[b, ha, he])?)
}

/// Eight-layer convolution stack over per-frame Plücker maps, producing
/// `c_video` channels to be added to the noised video latent.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraEncoder {
    pub stack: ConvStack,
}

pub struct CameraEncoderCache {
    stack: ConvStackCache,
}

/// Stack `k` ray maps into the `[6, k, h, w]` volume the encoder consumes.
pub fn rays_to_volume(rays: &[PluckerRayMap]) -> Result<(Vec<f64>, [usize; 3])> {
    let first = rays.first().ok_or(Error::Empty("ray maps"))?;
    let (h, w) = (first.height, first.width);
    if rays.iter().any(|r| r.height != h || r.width != w) {
        return Err(Error::Precondition("ray maps differ in size".into()));
    }
    let k = rays.len();
    let plane = h * w;
    let mut vol = vec![0.0; 6 * k * plane];
    for (f, r) in rays.iter().enumerate() {
        for px in 0..plane {
            for c in 0..6 {
                vol[(c * k + f) * plane + px] = r.rays[px * 6 + c];
            }
        }
    }
    Ok((vol, [k, h, w]))
}

impl CameraEncoder {
    pub fn new(c_video: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        Ok(CameraEncoder {
            stack: ConvStack::new(ConvStackSpec::uniform(MOTION_ENCODER_LAYERS, 6, width, c_video), rng)?,
        })
    }

    fn check(&self, dims: [usize; 3], h: usize, w: usize) -> Result<()> {
        if dims[1] != h || dims[2] != w {
            return Err(Error::dim(
                format!("ray maps on the {h}x{w} latent grid"),
                format!("{}x{}", dims[1], dims[2]),
            ));
        }
        Ok(())
    }

    /// `[6, k, h, w]` ray volume into a `[k, c_video, h, w]` latent.
    pub fn encode_volume(&self, vol: &[f64], dims: [usize; 3], h: usize, w: usize) -> Result<LatentBlock> {
        self.check(dims, h, w)?;
        let out = self.stack.apply(vol, dims);
        let t = Tensor::from_vec(&[self.stack.out_ch(), dims[0], h, w], out)?.swap01();
        LatentBlock::new(LatentRole::Camera, t)
    }

    pub fn encode(&self, rays: &[PluckerRayMap], h: usize, w: usize) -> Result<LatentBlock> {
        let (vol, dims) = rays_to_volume(rays)?;
        self.encode_volume(&vol, dims, h, w)
    }

    pub fn forward(&self, vol: &[f64], dims: [usize; 3], h: usize, w: usize) -> Result<(Tensor, CameraEncoderCache)> {
        self.check(dims, h, w)?;
        let (out, stack) = self.stack.forward(vol, dims);
        let t = Tensor::from_vec(&[self.stack.out_ch(), dims[0], h, w], out)?.swap01();
        Ok((t, CameraEncoderCache { stack }))
    }

    /// `dy` is `[k, c_video, h, w]`.
    pub fn backward(&mut self, cache: CameraEncoderCache, dy: &Tensor) {
        self.stack.backward(cache.stack, dy.swap01().data());
    }
}

impl Module for CameraEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stack.visit(&join(prefix, "stack"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stack.visit_mut(&join(prefix, "stack"), f);
    }
}

/// The trainable condition encoders: one per motion group plus the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEncoders {
    pub motion: [MotionEncoder; 3],
    pub camera: CameraEncoder,
}

impl ConditionEncoders {
    pub fn new(cfg: &CodecConfig, h: usize, w: usize, rng: &mut Rng) -> Result<Self> {
        let [a, b, c] = MotionGroup::ALL;
        Ok(ConditionEncoders {
            motion: [
                MotionEncoder::new(a, h, w, cfg.motion_width, rng)?,
                MotionEncoder::new(b, h, w, cfg.motion_width, rng)?,
                MotionEncoder::new(c, h, w, cfg.motion_width, rng)?,
            ],
            camera: CameraEncoder::new(cfg.c_video, cfg.camera_width, rng)?,
        })
    }

    /// Part-wise motion latent for a whole sequence.
    pub fn encode_motion(&self, seq: &MotionSequence) -> Result<LatentBlock> {
        let latents = self
            .motion
            .iter()
            .map(|e| e.encode(&seq.group(e.group), e.group))
            .collect::<Result<Vec<_>>>()?;
        assemble_motion_latent(Some(&latents[0]), Some(&latents[1]), Some(&latents[2]))
    }
}

impl Module for ConditionEncoders {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for e in &self.motion {
            e.visit(&join(prefix, e.group.name()), f);
        }
        self.camera.visit(&join(prefix, "camera"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for e in &mut self.motion {
            let name = join(prefix, e.group.name());
            e.visit_mut(&name, f);
        }
        self.camera.visit_mut(&join(prefix, "camera"), f);
    }
}
