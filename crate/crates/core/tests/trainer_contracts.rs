use egosim::codec::CodecConfig;
use egosim::config::RunConfig;
use egosim::datapipe::{DataConfig, Generator, KeypointNoise};
use egosim::diffusion::DenoiserSpec;
use egosim::geom::Intrinsics;
use egosim::model::{ModelConfig, PreparedSample, SampleRequest, Stage, WorldModel};
use egosim::motion::Style;
use egosim::nn::Module;
use egosim::trainer::{
    finetune_trainable, is_lora, prepare_samples, train_stage1, train_stage2, Probe, StageConfig, TrainConfig,
};
use egosim::{io, Error, Tensor};

fn tiny() -> ModelConfig {
    ModelConfig {
        image: Intrinsics {
            fx: 16.0,
            fy: 16.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
        },
        codec: CodecConfig {
            frames: 3,
            c_point: 8,
            adapter_width: 4,
            motion_width: 2,
            camera_width: 2,
            ..CodecConfig::default()
        },
        denoiser: DenoiserSpec {
            depth: 3,
            width: 12,
            heads: 2,
            patch: [1, 2, 2],
            mlp_ratio: 2,
        },
        lora_rank: 2,
        lora_alpha: 2.0,
    }
}

fn corpus(model: &WorldModel) -> Vec<PreparedSample> {
    let g = Generator::new(DataConfig::default(), model.config.image).unwrap();
    let records: Vec<_> = [Style::Walk, Style::Wave]
        .into_iter()
        .enumerate()
        .map(|(i, st)| g.generate(i as u64, 70 + i as u64, st, 3, KeypointNoise::Seeded).unwrap())
        .collect();
    prepare_samples(model, &records).unwrap()
}

fn train_config(steps: usize) -> TrainConfig {
    let stage = StageConfig {
        steps,
        ..StageConfig::default()
    };
    TrainConfig {
        pretrain: stage.clone(),
        finetune: stage,
        last_n_blocks: 1,
        probe_draws: 2,
        ..TrainConfig::default()
    }
}

fn snapshot(m: &WorldModel, select: impl Fn(&str) -> bool) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    m.visit("", &mut |n, p| {
        if select(n) {
            out.push((n.to_string(), p.value.clone()));
        }
    });
    out
}

fn sample(m: &WorldModel) -> Tensor {
    let motion = egosim::motion::synth_motion(2, 3, Style::Walk).unwrap();
    let frame = Tensor::full(&[16, 16, 3], 0.4);
    m.sample(&SampleRequest {
        first_frame: &frame,
        motion: &motion,
        caption: 1,
        sampler: egosim::diffusion::SamplerConfig {
            steps: 2,
            ..Default::default()
        },
        seed: 3,
    })
    .unwrap()
    .latents
}

#[test]
fn lora_is_the_identity_at_attachment() {
    let mut m = WorldModel::new(tiny(), 1).unwrap();
    let before = sample(&m);
    m.attach_lora(2).unwrap();
    assert!(m.denoiser.has_lora());
    assert_eq!(sample(&m), before);
}

#[test]
fn zero_steps_leave_the_model_unchanged() {
    let mut m = WorldModel::new(tiny(), 1).unwrap();
    let samples = corpus(&m);
    let base = snapshot(&m, |_| true);
    let out = train_stage1(&mut m, &samples, &train_config(0), 5).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.probe_initial, out.probe_final);
    assert_eq!(snapshot(&m, |n| !is_lora(n)), base);
    assert_eq!(m.stage, Stage::Pretrained);
}

#[test]
fn stages_respect_their_freeze_contracts() {
    let mut m = WorldModel::new(tiny(), 1).unwrap();
    let samples = corpus(&m);
    let cfg = train_config(3);
    let base = snapshot(&m, |_| true);

    let s1 = train_stage1(&mut m, &samples, &cfg, 5).unwrap();
    assert!(s1.frozen_intact());
    assert_eq!(snapshot(&m, |n| !is_lora(n) && n != "denoiser.caption"), base.iter().filter(|(n, _)| n != "denoiser.caption").cloned().collect::<Vec<_>>());
    let lora_after_s1 = snapshot(&m, is_lora);
    let zero_b = lora_after_s1.iter().filter(|(n, _)| n.ends_with("lora_b")).all(|(_, v)| v.iter().all(|&x| x == 0.0));
    assert!(!zero_b, "stage 1 never moved the LoRA factors");

    let depth = m.config.denoiser.depth;
    let early = |n: &str| n.starts_with("denoiser.blocks.") && !finetune_trainable(n, depth, cfg.last_n_blocks);
    let early_before = snapshot(&m, early);
    let s2 = train_stage2(&mut m, &samples, &cfg, 6).unwrap();
    assert!(s2.frozen_intact());
    assert_eq!(snapshot(&m, is_lora), lora_after_s1);
    assert_eq!(snapshot(&m, early), early_before);
    assert_ne!(snapshot(&m, |n| n.starts_with("encoders.")), snapshot(&WorldModel::new(tiny(), 1).unwrap(), |n| n.starts_with("encoders.")));
    assert_eq!(m.stage, Stage::Finetuned);
    assert!(s2.trainable_params > 0 && s2.trainable_params < m.num_params());
}

#[test]
fn finetuning_requires_a_pretrained_model() {
    let mut m = WorldModel::new(tiny(), 1).unwrap();
    let samples = corpus(&m);
    assert!(matches!(train_stage2(&mut m, &samples, &train_config(1), 5), Err(Error::MissingStage1)));
    let mut fake = m.clone();
    fake.stage = Stage::Pretrained;
    assert!(matches!(train_stage2(&mut fake, &samples, &train_config(1), 5), Err(Error::MissingStage1)));
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut m = WorldModel::new(tiny(), 1).unwrap();
        let samples = corpus(&m);
        let a = train_stage1(&mut m, &samples, &train_config(2), 5).unwrap();
        let b = train_stage2(&mut m, &samples, &train_config(2), 6).unwrap();
        (io::encode_container(&m.to_container().unwrap()).unwrap(), a.log, b.log)
    };
    let (c1, a1, b1) = run();
    let (c2, a2, b2) = run();
    assert_eq!(c1, c2);
    for (x, y) in a1.iter().chain(&b1).zip(a2.iter().chain(&b2)) {
        assert!((x.loss - y.loss).abs() <= 1e-6);
    }
}

#[test]
fn probes_are_deterministic() {
    let m = WorldModel::new(tiny(), 1).unwrap();
    let samples = corpus(&m);
    for p in [Probe::Caption, Probe::Full, Probe::ZeroMotion, Probe::ZeroMotionCamera] {
        let a = egosim::trainer::probe_loss(&m, &samples, p, 2, 8).unwrap();
        assert_eq!(a, egosim::trainer::probe_loss(&m, &samples, p, 2, 8).unwrap());
        assert!(a.is_finite() && a > 0.0);
    }
}

#[test]
fn config_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 1234;
    cfg.trainer.pretrain.steps = 17;
    cfg.write_snapshot(dir.path()).unwrap();
    let back = RunConfig::load(&dir.path().join(egosim::config::SNAPSHOT_FILE)).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::parse("[trainer]\nbogus = 1\n").is_err());
}
