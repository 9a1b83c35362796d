//! Adversarial objectives, the training step, schedules and checkpoints.

mod common;

use common::{tiny_arch, tiny_camera, tiny_data, tiny_disc, tiny_train, uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::adversary::{r1_penalty, Discriminator};
use vgan::dataio::BatchStream;
use vgan::diffcore::{Module, Tensor};
use vgan::trainer::{decode, encode, ScheduleOptions, Stage, TrainConfig, Trainer};
use vgan::VganError;

fn trainer(cfg: TrainConfig) -> Trainer<f64> {
    Trainer::new(tiny_arch(), tiny_disc(), tiny_camera(), cfg).unwrap()
}

fn run(t: &mut Trainer<f64>, steps: u64) -> Vec<[u64; 5]> {
    let data = tiny_data(16);
    let mut stream = BatchStream::new(data.len(), t.cfg.batch, 1).unwrap();
    let (epoch, pos) = (t.step * t.cfg.batch as u64 / 16, t.step * t.cfg.batch as u64 % 16);
    stream.seek(epoch, pos).unwrap();
    let opts = ScheduleOptions {
        max_steps: Some(steps),
        ..Default::default()
    };
    let s = t.run_schedule(&data, &mut stream, &opts, |_, _| Ok(())).unwrap();
    s.losses
        .iter()
        .map(|r| [r.g_loss, r.d_loss_real, r.d_loss_fake, r.r1_penalty, r.d_accuracy].map(f64::to_bits))
        .collect()
}

#[test]
fn r1_penalty_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = Discriminator::<f64>::new(tiny_disc(), &mut rng).unwrap();
    let img = uniform(&mut rng, &[3, 8, 8], -1.0, 1.0);
    let analytic = r1_penalty(&d, std::slice::from_ref(&img), 1.0).unwrap();
    let score = |x: &Tensor<f64>| d.scores(std::slice::from_ref(x), 1.0).unwrap()[0];
    let h = 1e-6;
    let mut fd = 0.0;
    for i in 0..img.numel() {
        let mut a = img.clone();
        let mut b = img.clone();
        a.data_mut()[i] += h;
        b.data_mut()[i] -= h;
        fd += ((score(&a) - score(&b)) / (2.0 * h)).powi(2);
    }
    assert!((analytic - fd).abs() / fd.max(1e-12) < 1e-5, "{analytic} vs {fd}");
}

#[test]
fn discriminator_updates_raise_real_scores() {
    let mut t = trainer(TrainConfig {
        g_lr: 0.0,
        lambda: 0.0,
        ..tiny_train()
    });
    let data = tiny_data(4);
    let (_, level, _) = t.phase();
    assert_eq!(level, 0);
    let reals: Vec<Tensor<f64>> = data.images.clone();
    let small: Vec<Tensor<f64>> = reals.iter().map(|r| vgan::trainer::box_downsample(r, 2)).collect();
    let before: f64 = t.d.scores(&small, 1.0).unwrap().iter().sum();
    for _ in 0..5 {
        t.train_step(&reals).unwrap();
    }
    let after: f64 = t.d.scores(&small, 1.0).unwrap().iter().sum();
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn zero_learning_rates_freeze_both_networks() {
    let mut t = trainer(TrainConfig {
        g_lr: 0.0,
        d_lr: 0.0,
        ..tiny_train()
    });
    let (g0, d0) = (t.g.named_params(), t.d.named_params());
    run(&mut t, 3);
    assert_eq!(t.step, 3);
    assert_eq!(t.g.named_params(), g0);
    assert_eq!(t.d.named_params(), d0);
}

#[test]
fn same_seed_same_run() {
    let mut a = trainer(tiny_train());
    let mut b = trainer(tiny_train());
    assert_eq!(run(&mut a, 4), run(&mut b, 4));
    assert_eq!(a.g.named_params(), b.g.named_params());
    let mut c = trainer(TrainConfig { seed: 6, ..tiny_train() });
    assert_ne!(run(&mut c, 4), run(&mut trainer(tiny_train()), 4));
}

#[test]
fn resume_continues_bit_exactly() {
    let mut straight = trainer(tiny_train());
    let all = run(&mut straight, 6);
    let mut first = trainer(tiny_train());
    run(&mut first, 3);
    let bytes = encode(&first.state(0, 0));
    let mut second = trainer(tiny_train());
    second.restore(&decode(&bytes, Some(second.config_hash)).unwrap()).unwrap();
    assert_eq!(run(&mut second, 3), all[3..]);
    assert_eq!(second.g.named_params(), straight.g.named_params());
    assert_eq!(second.d.named_params(), straight.d.named_params());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let t = trainer(tiny_train());
    let bytes = encode(&t.state(0, 0));
    assert!(decode::<f64>(&bytes, Some(t.config_hash)).is_ok());

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode::<f64>(&magic, None), Err(VganError::BadMagic)));

    let mut version = bytes.clone();
    version[4] = 99;
    assert!(matches!(decode::<f64>(&version, None), Err(VganError::VersionMismatch { found: 99, .. })));

    for cut in [bytes.len() / 3, bytes.len() - 2] {
        assert!(matches!(decode::<f64>(&bytes[..cut], None), Err(VganError::Truncated(_))), "cut at {cut}");
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode::<f64>(&flipped, None), Err(VganError::CrcMismatch { .. })));

    let other = trainer(TrainConfig { lambda: 2.0, ..tiny_train() });
    assert!(matches!(
        decode::<f64>(&bytes, Some(other.config_hash)),
        Err(VganError::HashMismatch { .. })
    ));
}

#[test]
fn schedule_grows_once_and_counts_images() {
    let mut t = trainer(tiny_train());
    let data = tiny_data(16);
    let mut stream = BatchStream::new(data.len(), 4, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = ScheduleOptions {
        out_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: 10,
        sample_every: 0,
        ..Default::default()
    };
    let mut seen = Vec::new();
    let s = t
        .run_schedule(&data, &mut stream, &opts, |t, _| {
            seen.push(t.phase());
            Ok(())
        })
        .unwrap();
    assert_eq!((s.steps, s.images_seen), (16, 64));
    assert_eq!(s.growth.len(), 1);
    let g = s.growth[0];
    assert_eq!((g.from_res, g.to_res, g.images_seen, g.step), (4, 8, 32, 8));
    // fade over the first 8 images of the second stage, then full weight
    assert_eq!(seen[7], (8, 1, 0.0));
    assert_eq!(seen[8], (8, 1, 0.5));
    assert_eq!(seen[9], (8, 1, 1.0));
    let names: Vec<_> = s.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["ckpt_000010.vgan", "ckpt_000016.vgan"]);
    assert!(dir.path().join("latest.vgan").exists());
}

#[test]
fn schedules_are_validated() {
    let bad = [
        TrainConfig { batch: 0, ..tiny_train() },
        TrainConfig { schedule: vec![], ..tiny_train() },
        TrainConfig {
            schedule: vec![Stage { res: 8, kimg: 1.0 }, Stage { res: 4, kimg: 1.0 }],
            ..tiny_train()
        },
        TrainConfig {
            schedule: vec![Stage { res: 6, kimg: 1.0 }],
            ..tiny_train()
        },
        TrainConfig { beta1: 1.0, ..tiny_train() },
    ];
    for cfg in bad {
        assert!(Trainer::<f64>::new(tiny_arch(), tiny_disc(), tiny_camera(), cfg.clone()).is_err(), "{cfg:?}");
    }
    let too_big = TrainConfig {
        schedule: vec![Stage { res: 16, kimg: 1.0 }],
        ..tiny_train()
    };
    assert!(Trainer::<f64>::new(tiny_arch(), tiny_disc(), tiny_camera(), too_big).is_err());
}
