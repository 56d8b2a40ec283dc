//! Evaluation over a corpus: sample each clip from its first frame and
//! motion, then score video fidelity and hand pose.

use serde::Serialize;

use crate::codec::PointNormalization;
use crate::datapipe::{SampleRecord, SyntheticWorld};
use crate::diffusion::SamplerConfig;
use crate::error::{Error, Result};
use crate::geom::{head_to_pose, Vec3};
use crate::model::{SampleRequest, WorldModel};
use crate::motion::{HandJointSet, HAND_JOINTS};
use crate::rng;
use crate::tensor::Tensor;

use super::metrics::{mpjpe, mrrpe, psnr, ssim};

/// Generated video and normalized point maps for one record.
pub struct Prediction {
    pub video: Tensor,
    pub points: Tensor,
}

pub trait Predictor {
    fn predict(&self, record: &SampleRecord, seed: u64) -> Result<Prediction>;
}

/// The world model driven by the record's first frame and motion only.
pub struct ModelPredictor<'a> {
    pub model: &'a WorldModel,
    pub sampler: SamplerConfig,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, record: &SampleRecord, seed: u64) -> Result<Prediction> {
        let [_, h, w, c] = record.video.dims4()?;
        let first = Tensor::from_vec(&[h, w, c], record.video.data()[..h * w * c].to_vec())?;
        let out = self.model.sample(&SampleRequest {
            first_frame: &first,
            motion: &record.motion,
            caption: 0,
            sampler: self.sampler.clone(),
            seed,
        })?;
        Ok(Prediction {
            video: out.video,
            points: out.points,
        })
    }
}

/// Returns the ground truth; an upper bound for every metric.
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn predict(&self, record: &SampleRecord, _seed: u64) -> Result<Prediction> {
        let norm = PointNormalization::fit(&record.points)?;
        Ok(Prediction {
            video: record.video.clone(),
            points: norm.apply(&record.points),
        })
    }
}

/// Reads 3-D hand joints off normalized point maps at the pixels where the
/// kinematic hand joints project in the egocentric view. Predicted and
/// reference maps go through the same lookup.
pub fn estimate_hands(world: &SyntheticWorld, record: &SampleRecord, points: &Tensor) -> Result<Vec<HandJointSet>> {
    let [k, h, w, _] = points.dims4()?;
    if k != record.frames() {
        return Err(Error::dim(record.frames(), k));
    }
    let p = points.data();
    record
        .motion
        .frames
        .iter()
        .enumerate()
        .map(|(f, frame)| {
            let pose = head_to_pose(frame.head)?;
            let joints: Vec<Vec3> = world
                .hand_joints_world(frame)
                .into_iter()
                .map(|j| {
                    let (i, jj) = match world.ego.project(pose.world_to_camera(j)) {
                        Some([x, y]) => (
                            (y.floor().max(0.0) as usize).min(h - 1),
                            (x.floor().max(0.0) as usize).min(w - 1),
                        ),
                        None => (h / 2, w / 2),
                    };
                    let o = ((f * h + i) * w + jj) * 3;
                    [p[o], p[o + 1], p[o + 2]]
                })
                .collect();
            let (left, right) = joints.split_at(HAND_JOINTS);
            HandJointSet::new(left.to_vec(), right.to_vec(), 0, 0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub mpjpe: f64,
    pub mrrpe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
}

pub const REPORT_HEADER: &str = "id\tpsnr\tssim\tmpjpe\tmrrpe";

impl EvalReport {
    /// Tab-separated rows followed by a `mean` row.
    pub fn render(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let line = |id: String, r: &EvalRow| format!("{id}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", r.psnr, r.ssim, r.mpjpe, r.mrrpe);
        for r in &self.rows {
            out.push_str(&line(r.id.to_string(), r));
        }
        out.push_str(&line("mean".into(), &self.mean));
        out
    }
}

pub fn evaluate(predictor: &dyn Predictor, world: &SyntheticWorld, records: &[SampleRecord], seed: u64) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let pred = predictor.predict(rec, rng::substream_seed(seed, "sample", rec.id))?;
        let gt_points = PointNormalization::fit(&rec.points)?.apply(&rec.points);
        let gt_hands = estimate_hands(world, rec, &gt_points)?;
        let pred_hands = estimate_hands(world, rec, &pred.points)?;
        let (mut e, mut r) = (0.0, 0.0);
        for (p, g) in pred_hands.iter().zip(&gt_hands) {
            e += mpjpe(p, g)?;
            r += mrrpe(p, g);
        }
        let n = gt_hands.len() as f64;
        rows.push(EvalRow {
            id: rec.id,
            psnr: psnr(&pred.video, &rec.video)?,
            ssim: ssim(&pred.video, &rec.video)?,
            mpjpe: e / n,
            mrrpe: r / n,
        });
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = EvalRow {
        id: 0,
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        mpjpe: avg(|r| r.mpjpe),
        mrrpe: avg(|r| r.mrrpe),
    };
    Ok(EvalReport { rows, mean })
}
