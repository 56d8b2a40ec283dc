//! `egosim`: corpus synthesis, filtering, two-stage training, sampling and
//! evaluation.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use egosim::config::RunConfig;
use egosim::datapipe::{self, Corpus, CorpusSpec, Generator, MANIFEST_FILE};
use egosim::io;
use egosim::model::{SampleRequest, WorldModel};
use egosim::motion::{MotionSequence, Style, DEFAULT_FPS};
use egosim::trainer::{self, eval, TrainStage};
use egosim::{Error, Tensor};

const CHECKPOINT_FILE: &str = "checkpoint.egck";
const TRAIN_LOG_FILE: &str = "train_log.tsv";
const TRAIN_SUMMARY_FILE: &str = "train_summary.json";

#[derive(Parser)]
#[command(name = "egosim", version, about = "Desk-scale egocentric world simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Comma-separated styles, e.g. `walk,wave`.
        #[arg(long, value_delimiter = ',')]
        styles: Option<Vec<Style>>,
    },
    /// Mark the highest-reprojection-error samples as removed.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        /// Output manifest; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one training stage on the kept samples of a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_stage)]
        stage: TrainStage,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from; required for `finetune`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Generate video and point maps from a first frame and a motion file.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// `[H, W, 3]` image tensor, or a `[k, H, W, 3]` clip whose first
        /// frame is used.
        #[arg(long)]
        first_frame: PathBuf,
        /// `[k, 159]` motion tensor.
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Not accepted: inference takes only the first frame and the motion.
        #[arg(long, hide = true)]
        point_maps: Option<PathBuf>,
    },
    /// Sample every kept corpus clip and score it against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report file (tab-separated).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg: Option<f64>,
    },
}

fn parse_stage(s: &str) -> Result<TrainStage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::Precondition(_) | Error::MissingStage1) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

type CmdResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) if !p.exists() => return Err(usage(format!("config file {} does not exist", p.display()))),
        Some(p) => RunConfig::load(p).map_err(anyhow::Error::from)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn finish_config(cfg: &RunConfig, dir: &Path) -> CmdResult {
    cfg.validate().map_err(anyhow::Error::from)?;
    cfg.write_snapshot(dir).map_err(anyhow::Error::from)?;
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn checksum(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn report(path: &Path) -> anyhow::Result<()> {
    println!("wrote {} sha256={}", path.display(), checksum(path)?);
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn synth(common: Common, out: PathBuf, num: Option<usize>, frames: Option<usize>, styles: Option<Vec<Style>>) -> CmdResult {
    let mut cfg = load_config(&common)?;
    if let Some(n) = num {
        cfg.datapipe.num = n;
    }
    if let Some(k) = frames {
        cfg.codec.frames = k;
    }
    if let Some(s) = styles {
        cfg.datapipe.styles = s;
    }
    finish_config(&cfg, &out)?;
    let generator = Generator::new(cfg.data(), cfg.geometry).map_err(anyhow::Error::from)?;
    let spec = CorpusSpec {
        num: cfg.datapipe.num,
        frames: cfg.codec.frames,
        styles: cfg.datapipe.styles.clone(),
        seed: cfg.seed,
        outliers: Vec::new(),
    };
    let records = datapipe::build_corpus(&generator, &spec).map_err(anyhow::Error::from)?;
    datapipe::write_corpus(&out, &records).map_err(anyhow::Error::from)?;
    report(&out.join(MANIFEST_FILE))?;
    Ok(())
}

fn filter(common: Common, manifest: PathBuf, fraction: Option<f64>, out: Option<PathBuf>) -> CmdResult {
    let mut cfg = load_config(&common)?;
    if let Some(f) = fraction {
        cfg.datapipe.filter_fraction = f;
    }
    require_file(&manifest, "manifest")?;
    let out = out.unwrap_or_else(|| manifest.clone());
    let fraction = cfg.datapipe.filter_fraction;
    let m = datapipe::read_manifest(&manifest).map_err(anyhow::Error::from)?;
    let filtered = datapipe::filter_fraction(&m, fraction).map_err(anyhow::Error::from)?;
    finish_config(&cfg, &parent_dir(&out))?;
    datapipe::write_manifest(&filtered, &out).map_err(anyhow::Error::from)?;
    println!("removed {} of {} samples", filtered.removed().count(), filtered.rows.len());
    report(&out)?;
    Ok(())
}

fn load_records(corpus: &Path) -> Result<Vec<datapipe::SampleRecord>, Failure> {
    if !corpus.exists() {
        return Err(usage(format!("corpus {} does not exist", corpus.display())));
    }
    let c = Corpus::open(corpus).map_err(anyhow::Error::from)?;
    let records = c
        .kept()
        .map(|r| c.load(r))
        .collect::<egosim::Result<Vec<_>>>()
        .map_err(anyhow::Error::from)?;
    if records.is_empty() {
        return Err(Failure::Runtime(Error::Empty("corpus").into()));
    }
    Ok(records)
}

fn train(
    common: Common,
    stage: TrainStage,
    corpus: PathBuf,
    out: PathBuf,
    resume: Option<PathBuf>,
    steps: Option<usize>,
    lr: Option<f64>,
) -> CmdResult {
    let mut cfg = load_config(&common)?;
    {
        let sc = match stage {
            TrainStage::Pretrain => &mut cfg.trainer.pretrain,
            TrainStage::Finetune => &mut cfg.trainer.finetune,
        };
        if let Some(s) = steps {
            sc.steps = s;
        }
        if let Some(l) = lr {
            sc.lr = l;
        }
    }
    let mut model = match &resume {
        Some(p) => {
            require_file(p, "checkpoint")?;
            let m = WorldModel::load(p).map_err(anyhow::Error::from)?;
            // The checkpoint fixes the architecture.
            cfg.geometry = m.config.image;
            cfg.codec = m.config.codec.clone();
            cfg.denoiser = m.config.denoiser.clone();
            cfg.trainer.lora_rank = m.config.lora_rank;
            cfg.trainer.lora_alpha = m.config.lora_alpha;
            m
        }
        None if stage == TrainStage::Finetune => return Err(Failure::Usage(Error::MissingStage1.into())),
        None => {
            cfg.validate().map_err(anyhow::Error::from)?;
            WorldModel::new(cfg.model(), egosim::rng::substream_seed(cfg.seed, "model", 0))
                .map_err(anyhow::Error::from)?
        }
    };
    finish_config(&cfg, &out)?;
    let records = load_records(&corpus)?;
    let samples = trainer::prepare_samples(&model, &records).map_err(anyhow::Error::from)?;
    let tc = cfg.train();
    let outcome = match stage {
        TrainStage::Pretrain => trainer::train_stage1(&mut model, &samples, &tc, cfg.seed),
        TrainStage::Finetune => trainer::train_stage2(&mut model, &samples, &tc, cfg.seed),
    }
    .map_err(anyhow::Error::from)?;
    if !outcome.frozen_intact() {
        return Err(Failure::Runtime(anyhow::anyhow!("frozen parameters changed during {stage}")));
    }
    let ckpt = out.join(CHECKPOINT_FILE);
    model.save(&ckpt).map_err(anyhow::Error::from)?;
    let log = out.join(TRAIN_LOG_FILE);
    fs::write(&log, trainer::render_log(&outcome.log)).with_context(|| format!("writing {}", log.display()))?;
    let summary = out.join(TRAIN_SUMMARY_FILE);
    let json = serde_json::json!({
        "stage": stage,
        "steps": outcome.steps,
        "samples": samples.len(),
        "probe_initial": outcome.probe_initial,
        "probe_final": outcome.probe_final,
        "frozen_hash": outcome.frozen_hash_after,
        "trainable_params": outcome.trainable_params,
    });
    fs::write(&summary, serde_json::to_string_pretty(&json).context("serializing summary")? + "\n")
        .with_context(|| format!("writing {}", summary.display()))?;
    println!(
        "{stage}: probe loss {:.6} -> {:.6} over {} steps",
        outcome.probe_initial, outcome.probe_final, outcome.steps
    );
    report(&ckpt)?;
    Ok(())
}

fn read_first_frame(path: &Path) -> Result<Tensor, Failure> {
    let t = io::read_tensor(path).map_err(anyhow::Error::from)?;
    match *t.shape() {
        [_, _, 3] => Ok(t),
        [k, h, w, 3] if k > 0 => Ok(Tensor::from_vec(&[h, w, 3], t.data()[..h * w * 3].to_vec()).map_err(anyhow::Error::from)?),
        _ => Err(usage(format!("first frame must be [H, W, 3] or [k, H, W, 3], got {:?}", t.shape()))),
    }
}

#[allow(clippy::too_many_arguments)]
fn sample(
    common: Common,
    ckpt: PathBuf,
    first_frame: PathBuf,
    motion: PathBuf,
    steps: Option<usize>,
    guidance: Option<f64>,
    out: PathBuf,
    point_maps: Option<PathBuf>,
) -> CmdResult {
    if point_maps.is_some() {
        return Err(usage("--point-maps is not accepted: sampling uses only the first frame and the motion"));
    }
    let mut cfg = load_config(&common)?;
    if let Some(s) = steps {
        cfg.diffusion.steps = s;
    }
    if let Some(c) = guidance {
        cfg.diffusion.cfg = c;
    }
    require_file(&ckpt, "checkpoint")?;
    require_file(&first_frame, "first frame")?;
    require_file(&motion, "motion file")?;
    cfg.sampler().validate().map_err(anyhow::Error::from)?;
    let model = WorldModel::load(&ckpt).map_err(anyhow::Error::from)?;
    cfg.geometry = model.config.image;
    cfg.codec = model.config.codec.clone();
    cfg.denoiser = model.config.denoiser.clone();
    finish_config(&cfg, &out)?;
    let frame = read_first_frame(&first_frame)?;
    let flat = io::read_tensor(&motion).map_err(anyhow::Error::from)?;
    let motion = MotionSequence::from_flat(flat.data(), DEFAULT_FPS).map_err(anyhow::Error::from)?;
    let output = model
        .sample(&SampleRequest {
            first_frame: &frame,
            motion: &motion,
            caption: 0,
            sampler: cfg.sampler(),
            seed: egosim::rng::substream_seed(cfg.seed, "sample", 0),
        })
        .map_err(anyhow::Error::from)?;
    for (name, t) in [("video.tnsr", &output.video), ("points.tnsr", &output.points)] {
        let p = out.join(name);
        io::write_tensor(&p, t).map_err(anyhow::Error::from)?;
        report(&p)?;
    }
    Ok(())
}

fn evaluate(common: Common, ckpt: PathBuf, corpus: PathBuf, out: PathBuf, steps: Option<usize>, guidance: Option<f64>) -> CmdResult {
    let mut cfg = load_config(&common)?;
    if let Some(s) = steps {
        cfg.diffusion.steps = s;
    }
    if let Some(c) = guidance {
        cfg.diffusion.cfg = c;
    }
    require_file(&ckpt, "checkpoint")?;
    let model = WorldModel::load(&ckpt).map_err(anyhow::Error::from)?;
    cfg.geometry = model.config.image;
    cfg.codec = model.config.codec.clone();
    cfg.denoiser = model.config.denoiser.clone();
    finish_config(&cfg, &parent_dir(&out))?;
    let records = load_records(&corpus)?;
    let generator = Generator::new(cfg.data(), cfg.geometry).map_err(anyhow::Error::from)?;
    let predictor = eval::ModelPredictor {
        model: &model,
        sampler: cfg.sampler(),
    };
    let rep = eval::evaluate(&predictor, &generator.world, &records, cfg.seed).map_err(anyhow::Error::from)?;
    fs::write(&out, rep.render()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "mean psnr {:.3} ssim {:.4} mpjpe {:.4} mrrpe {:.4} over {} samples",
        rep.mean.psnr,
        rep.mean.ssim,
        rep.mean.mpjpe,
        rep.mean.mrrpe,
        rep.rows.len()
    );
    report(&out)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth {
            common,
            out,
            num,
            frames,
            styles,
        } => synth(common, out, num, frames, styles),
        Command::Filter {
            common,
            manifest,
            fraction,
            out,
        } => filter(common, manifest, fraction, out),
        Command::Train {
            common,
            stage,
            corpus,
            out,
            resume,
            steps,
            lr,
        } => train(common, stage, corpus, out, resume, steps, lr),
        Command::Sample {
            common,
            ckpt,
            first_frame,
            motion,
            steps,
            cfg,
            out,
            point_maps,
        } => sample(common, ckpt, first_frame, motion, steps, cfg, out, point_maps),
        Command::Eval {
            common,
            ckpt,
            corpus,
            out,
            steps,
            cfg,
        } => evaluate(common, ckpt, corpus, out, steps, cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
