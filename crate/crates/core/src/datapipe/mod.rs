//! Synthetic ego/exo capture and the reprojection-error filter.
//!
//! Every sample is rendered from a known analytic scene, so ego point maps
//! are exact. Exocentric 2-D keypoints are the projected body joints plus
//! seeded Gaussian pixel noise; samples whose keypoints disagree most with
//! the projected motion are filtered out.

mod manifest;
mod world;

pub use manifest::{read_manifest, write_manifest, Manifest, ManifestRow, ManifestStats};
pub use world::{look_at, Render, SyntheticWorld};

use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Intrinsics};
use crate::io;
use crate::motion::{synth_motion, MotionSequence, Style, BODY_JOINTS, DEFAULT_FPS, FRAME_DIM};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub world_seed: u64,
    pub exo: Intrinsics,
    /// Keypoint noise level is drawn uniformly from `[eta_min, eta_max]` px.
    pub eta_min: f64,
    pub eta_max: f64,
    /// Noise multiplier for planted outliers.
    pub outlier_factor: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            world_seed: 0,
            exo: Intrinsics::default(),
            eta_min: 0.5,
            eta_max: 1.5,
            outlier_factor: 10.0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.exo.validate()?;
        if !(self.eta_min >= 0.0 && self.eta_min <= self.eta_max && self.eta_max.is_finite()) {
            return Err(Error::Config(format!("invalid noise range [{}, {}]", self.eta_min, self.eta_max)));
        }
        if !(self.outlier_factor >= 1.0) {
            return Err(Error::Config("outlier_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Keypoint noise for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeypointNoise {
    /// Seed-derived level within the configured range.
    Seeded,
    /// Seed-derived level times a factor.
    Scaled(f64),
    /// Exact level in pixels; `Fixed(0.0)` gives oracle keypoints.
    Fixed(f64),
}

/// One motion/video pair with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub style: Style,
    /// `[k, H, W, 3]` RGB in `[0, 1]`.
    pub video: Tensor,
    pub motion: MotionSequence,
    /// `[k, H, W, 3]` world coordinates of every pixel.
    pub points: Tensor,
    /// `[k, 22, 2]` exocentric pixels, NaN where the joint is not visible.
    pub keypoints: Tensor,
    pub reprojection_error: f64,
    pub kept: bool,
}

impl SampleRecord {
    pub fn frames(&self) -> usize {
        self.motion.len()
    }
}

/// Renders samples of one world.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub world: SyntheticWorld,
    pub config: DataConfig,
}

impl Generator {
    pub fn new(config: DataConfig, ego: Intrinsics) -> Result<Self> {
        config.validate()?;
        ego.validate()?;
        Ok(Generator {
            world: SyntheticWorld::new(config.world_seed, ego, config.exo),
            config,
        })
    }

    /// A pure function of its arguments and the generator configuration.
    pub fn generate(&self, id: u64, seed: u64, style: Style, k: usize, noise: KeypointNoise) -> Result<SampleRecord> {
        let mut motion = synth_motion(seed, k, style)?;
        for f in &mut motion.frames {
            io::quantize(&mut f.body_feet);
            io::quantize(&mut f.head);
            io::quantize(&mut f.hands);
        }
        let ego = self.world.ego;
        let frame_len = ego.height * ego.width * 3;
        let mut video = Vec::with_capacity(k * frame_len);
        let mut points = Vec::with_capacity(k * frame_len);
        for f in &motion.frames {
            let pose = geom::head_to_pose(f.head)?;
            let r = self.world.render_ego(&pose, f);
            video.extend(r.rgb);
            points.extend(r.points);
        }
        let mut video = Tensor::from_vec(&[k, ego.height, ego.width, 3], video)?;
        let mut points = Tensor::from_vec(&[k, ego.height, ego.width, 3], points)?;
        io::quantize(video.data_mut());
        io::quantize(points.data_mut());

        let mut r = rng::substream(seed, "keypoints", 0);
        let seeded = r.random_range(self.config.eta_min..=self.config.eta_max);
        let eta = match noise {
            KeypointNoise::Seeded => seeded,
            KeypointNoise::Scaled(s) => seeded * s,
            KeypointNoise::Fixed(e) => e,
        };
        let mut kp = Vec::with_capacity(k * BODY_JOINTS * 2);
        let mut n = [0.0; 2];
        for f in &motion.frames {
            for p in self.projected(f) {
                rng::fill_normal(&mut r, &mut n);
                kp.push(p[0] + eta * n[0]);
                kp.push(p[1] + eta * n[1]);
            }
        }
        let mut keypoints = Tensor::from_vec(&[k, BODY_JOINTS, 2], kp)?;
        io::quantize(keypoints.data_mut());
        let mut rec = SampleRecord {
            id,
            style,
            video,
            motion,
            points,
            keypoints,
            reprojection_error: 0.0,
            kept: true,
        };
        rec.reprojection_error = self.reprojection_error(&rec)? as f32 as f64;
        Ok(rec)
    }

    /// Body joints projected into the exocentric view at storage precision.
    fn projected(&self, frame: &crate::motion::MotionFrame) -> Vec<[f64; 2]> {
        self.world
            .project_body(frame)
            .into_iter()
            .map(|p| p.map(|v| v as f32 as f64))
            .collect()
    }

    /// Mean pixel distance over frames and visible joints between the
    /// projected motion and the stored keypoints.
    pub fn reprojection_error(&self, rec: &SampleRecord) -> Result<f64> {
        let k = rec.motion.len();
        if rec.keypoints.shape() != [k, BODY_JOINTS, 2] {
            return Err(Error::dim(
                format!("keypoints for {k} frames x {BODY_JOINTS} joints"),
                format!("{:?}", rec.keypoints.shape()),
            ));
        }
        let kp = rec.keypoints.data();
        let (mut sum, mut count) = (0.0, 0usize);
        for (fi, f) in rec.motion.frames.iter().enumerate() {
            for (j, p) in self.projected(f).into_iter().enumerate() {
                let o = (fi * BODY_JOINTS + j) * 2;
                let (x, y) = (kp[o], kp[o + 1]);
                if p[0].is_nan() || x.is_nan() || y.is_nan() {
                    continue;
                }
                sum += ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Empty("visible keypoints"));
        }
        Ok(sum / count as f64)
    }
}

/// Which samples to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub num: usize,
    pub frames: usize,
    pub styles: Vec<Style>,
    pub seed: u64,
    /// Ids whose keypoint noise is multiplied by the outlier factor.
    pub outliers: Vec<u64>,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num == 0 {
            return Err(Error::Precondition("corpus size must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::Precondition("frame count must be positive".into()));
        }
        if self.styles.is_empty() {
            return Err(Error::Precondition("at least one style is required".into()));
        }
        Ok(())
    }

    pub fn sample_seed(&self, id: u64) -> u64 {
        rng::substream_seed(self.seed, "corpus", id)
    }
}

/// All records of a corpus, in ascending id order.
pub fn build_corpus(generator: &Generator, spec: &CorpusSpec) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    (0..spec.num as u64)
        .map(|id| {
            let style = spec.styles[id as usize % spec.styles.len()];
            let noise = if spec.outliers.contains(&id) {
                KeypointNoise::Scaled(generator.config.outlier_factor)
            } else {
                KeypointNoise::Seeded
            };
            generator.generate(id, spec.sample_seed(id), style, spec.frames, noise)
        })
        .collect()
}

/// Number of samples removed for `fraction` of `n`: `⌈fraction · n⌉`.
pub fn removal_count(n: usize, fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Precondition(format!("filter fraction {fraction} must lie in [0, 1)")));
    }
    // Absorb the representation error of products such as 0.1 · 30.
    let c = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if n > 0 && c >= n {
        return Err(Error::Precondition(format!("filtering {c} of {n} samples would empty the corpus")));
    }
    Ok(c)
}

/// Mark exactly `⌈fraction · N⌉` rows with the largest errors as removed;
/// among equal errors the higher id is removed first. Everything else is
/// kept.
pub fn filter_fraction(manifest: &Manifest, fraction: f64) -> Result<Manifest> {
    if manifest.rows.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let remove = removal_count(manifest.rows.len(), fraction)?;
    let mut order: Vec<usize> = (0..manifest.rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&manifest.rows[a], &manifest.rows[b]);
        rb.error.total_cmp(&ra.error).then(rb.id.cmp(&ra.id))
    });
    let mut out = manifest.clone();
    for row in &mut out.rows {
        row.kept = true;
    }
    for &i in &order[..remove] {
        out.rows[i].kept = false;
    }
    Ok(out)
}

/// The top-decile rule.
pub fn filter_top_decile(manifest: &Manifest) -> Result<Manifest> {
    filter_fraction(manifest, 0.1)
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

fn sample_paths(id: u64) -> [String; 4] {
    ["video", "motion", "points", "keypoints"].map(|kind| format!("samples/{id:05}.{kind}.tnsr"))
}

/// Write sample tensors and the manifest under `dir`.
pub fn write_corpus(dir: &Path, records: &[SampleRecord]) -> Result<Manifest> {
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let [video, motion, points, keypoints] = sample_paths(rec.id);
        let flat = Tensor::from_vec(&[rec.frames(), FRAME_DIM], rec.motion.to_flat())?;
        io::write_tensor(&dir.join(&video), &rec.video)?;
        io::write_tensor(&dir.join(&motion), &flat)?;
        io::write_tensor(&dir.join(&points), &rec.points)?;
        io::write_tensor(&dir.join(&keypoints), &rec.keypoints)?;
        let [_, height, width, _] = rec.video.dims4()?;
        rows.push(ManifestRow {
            id: rec.id,
            style: rec.style,
            video,
            motion,
            points,
            keypoints,
            k: rec.frames(),
            height,
            width,
            error: rec.reprojection_error,
            kept: rec.kept,
        });
    }
    let manifest = Manifest { rows };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// A corpus on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    /// Open a corpus directory or a manifest file.
    pub fn open(path: &Path) -> Result<Self> {
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (root, path.to_path_buf())
        };
        Ok(Corpus {
            manifest: read_manifest(&file)?,
            root,
        })
    }

    pub fn kept(&self) -> impl Iterator<Item = &ManifestRow> {
        self.manifest.rows.iter().filter(|r| r.kept)
    }

    pub fn load(&self, row: &ManifestRow) -> Result<SampleRecord> {
        let video = io::read_tensor(&self.root.join(&row.video))?;
        let flat = io::read_tensor(&self.root.join(&row.motion))?;
        let points = io::read_tensor(&self.root.join(&row.points))?;
        let keypoints = io::read_tensor(&self.root.join(&row.keypoints))?;
        let expect = [row.k, row.height, row.width, 3];
        for (name, t) in [("video", &video), ("points", &points)] {
            if t.shape() != expect {
                return Err(Error::Format(format!("{name} of sample {} has shape {:?}", row.id, t.shape())));
            }
        }
        if flat.shape() != [row.k, FRAME_DIM] {
            return Err(Error::Format(format!("motion of sample {} has shape {:?}", row.id, flat.shape())));
        }
        Ok(SampleRecord {
            id: row.id,
            style: row.style,
            video,
            motion: MotionSequence::from_flat(flat.data(), DEFAULT_FPS)?,
            points,
            keypoints,
            reprojection_error: row.error,
            kept: row.kept,
        })
    }
}
