//! Image files, configs, the studio helpers and the `vgan` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use vgan::camera::CameraPose;
use vgan::dataio::{read_image, to_rgb8, write_image};
use vgan::diffcore::Tensor;
use vgan::nnlayers::LatentCode;
use vgan::studio::{cmd_render, fixed_rays, open_generator, orbit_poses, sample_codes, style_mix, RunConfig};
use vgan::trainer::{save_checkpoint, Trainer};

/// The desk preset shrunk to a few hundred parameters.
fn tiny_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::preset("desk").unwrap();
    c.name = "tiny".into();
    c.dataset.resolution = 8;
    c.dataset.count = 16;
    c.camera.ray_res = 4;
    c.camera.steps = 6;
    let g = &mut c.generator;
    g.latent_dim = 8;
    g.mapping_width = 8;
    g.mapping_depth = 2;
    g.template_channels = 4;
    g.template_res = 2;
    g.volume_channels = vec![4];
    g.field_hidden = 8;
    g.field_layers = 2;
    g.feature_dim = 4;
    g.renderer_channels = 4;
    g.max_res = 8;
    c.discriminator.base_channels = 4;
    c.discriminator.max_channels = 8;
    c.train.batch = 4;
    c.train.schedule = vec![(8, 0.016)];
    c.output.dir = dir.to_path_buf();
    c.output.checkpoint_every = 2;
    c.output.sample_every = 2;
    c
}

fn checkpoint(cfg: &RunConfig, path: &Path) {
    let t = Trainer::<f32>::new(cfg.generator_arch(), cfg.disc_arch(), cfg.camera_config().unwrap(), cfg.train_config()).unwrap();
    save_checkpoint(&t.state(0, 0), path).unwrap();
}

#[test]
fn quantization_hits_both_ends() {
    let dir = tempfile::tempdir().unwrap();
    for (v, byte) in [(-1.0f64, 0u8), (1.0, 255), (-2.0, 0), (3.0, 255), (0.0, 128)] {
        let img = Tensor::full(&[3, 2, 2], v);
        assert!(to_rgb8(&img).unwrap().as_raw().iter().all(|&b| b == byte), "{v}");
        let path = dir.path().join("q.png");
        write_image(&path, &img).unwrap();
        let back: Tensor<f64> = read_image(&path).unwrap();
        assert!(back.data().iter().all(|&x| x == byte as f64 / 127.5 - 1.0));
    }
}

#[test]
fn ppm_and_png_round_trip_quantized_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::<f32>::from_fn(&[3, 5, 7], |i| ((i * 37) % 256) as f32 / 127.5 - 1.0);
    for name in ["a.ppm", "a.png"] {
        let path = dir.path().join(name);
        write_image(&path, &img).unwrap();
        let back: Tensor<f32> = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    assert!(write_image(&dir.path().join("a.jpg"), &img).is_err());
}

#[test]
fn render_writes_one_file_per_pose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("init.vgan");
    checkpoint(&cfg, &ckpt);
    let poses = orbit_poses(&cfg.camera_config().unwrap(), 5);
    let files = cmd_render(&cfg, &ckpt, 3, &poses, &dir.path().join("views")).unwrap();
    assert_eq!(files.len(), 5);
    for f in &files {
        let img: Tensor<f32> = read_image(f).unwrap();
        assert_eq!(img.shape(), &[3, 8, 8]);
    }
    assert!(dir.path().join("views/poses.txt").exists());
}

#[test]
fn one_cell_mix_with_tied_codes_is_a_plain_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("init.vgan");
    checkpoint(&cfg, &ckpt);
    let g = open_generator::<f32>(&cfg, &ckpt).unwrap();
    let camera = cfg.camera_config().unwrap();
    let codes = &sample_codes::<f32>(8, 1, 9)[0];
    let pose = CameraPose::from_yaw_pitch(0.1, 0.05);
    let z: &LatentCode<f32> = &codes.z_structural;
    let grid = style_mix(&g, std::slice::from_ref(z), &[(z.clone(), z.clone())], &pose, &camera).unwrap();
    assert_eq!(grid, g.render(codes, &fixed_rays(&pose, &camera)).unwrap());
}

#[test]
fn checkpoint_from_another_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ckpt = dir.path().join("init.vgan");
    checkpoint(&cfg, &ckpt);
    let mut other = cfg.clone();
    other.train.lambda = 3.0;
    assert!(matches!(open_generator::<f32>(&other, &ckpt), Err(vgan::VganError::HashMismatch { .. })));
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let path = dir.path().join("tiny.toml");
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    let broken = std::fs::read_to_string(&path).unwrap().replace("[train]", "[train]\nmomentum = 0.9");
    assert!(RunConfig::parse(&broken).is_err());
}

proptest! {
    #[test]
    fn numeric_config_fields_survive_toml(
        batch in 1usize..512,
        lr in 1e-6f64..1e-2,
        lambda in 0.0f64..20.0,
        seed in 0..=i64::MAX as u64,
        fov in 1.0f64..90.0,
    ) {
        let mut cfg = RunConfig::preset("desk").unwrap();
        cfg.train.batch = batch;
        cfg.train.g_lr = lr;
        cfg.train.lambda = lambda;
        cfg.train.seed = seed;
        cfg.camera.fov = fov;
        prop_assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn seeds_beyond_toml_integers_are_rejected(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut cfg = RunConfig::preset("desk").unwrap();
        cfg.train.seed = seed;
        prop_assert!(cfg.validate().is_err());
        prop_assert!(cfg.to_toml().is_err());
    }

    #[test]
    fn angle_expressions_agree_with_arithmetic(a in -10.0f64..10.0, b in 1.0f64..10.0) {
        let src = format!("pi/{b} - ({a})*2");
        let v = vgan::studio::eval_expr(&src).unwrap();
        prop_assert!((v - (std::f64::consts::PI / b - a * 2.0)).abs() < 1e-12);
    }
}

fn vgan(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vgan"))
        .args(args)
        .env("VGAN_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.success(), text)
}

#[test]
fn command_line_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| -> PathBuf { dir.path().join(p) };
    let cfg_path = d("tiny.toml");
    tiny_config(&d("run")).save(&cfg_path).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let (ok, text) = vgan(&["--config", cfg, "train", "--max-steps", "3"]);
    assert!(ok, "{text}");
    assert!(d("run/losses.csv").exists() && d("run/config.toml").exists());
    let ckpt = d("run/latest.vgan");
    let ck = ckpt.to_str().unwrap();

    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "train", "--resume", "--max-steps", "1"]);
    assert!(ok, "{text}");
    assert!(d("run/ckpt_000004.vgan").exists(), "{text}");

    let out = d("out");
    let o = out.to_str().unwrap();
    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "--out", o, "--seed", "2", "render", "--views", "3"]);
    assert!(ok, "{text}");
    assert!(out.join("view_002.png").exists());
    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "--out", o, "--seed", "2", "mesh", "--res", "16"]);
    assert!(ok, "{text}");
    assert!(out.join("mesh_2.obj").exists());
    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "--out", o, "mix", "--rows", "2", "--cols", "3", "--yaw", "-5"]);
    assert!(ok, "{text}");
    let mix: Tensor<f32> = read_image(&out.join("mix.png")).unwrap();
    assert_eq!(mix.shape(), &[3, 16, 24]);
    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "--out", o, "pcaviz"]);
    assert!(ok, "{text}");
    let (ok, text) = vgan(&["--config", cfg, "--checkpoint", ck, "--out", o, "--deterministic", "metrics", "frechet", "--samples", "8"]);
    assert!(ok, "{text}");
    assert!(out.join("frechet.json").exists(), "{text}");

    std::fs::write(d("given.txt"), "a 10 0\nb -5 2\n").unwrap();
    std::fs::write(d("pred.txt"), "b -4 2\na 12 1\n").unwrap();
    let (ok, text) = vgan(&[
        "--out",
        o,
        "metrics",
        "pose",
        "--given",
        d("given.txt").to_str().unwrap(),
        "--predicted",
        d("pred.txt").to_str().unwrap(),
    ]);
    assert!(ok, "{text}");
    assert!(text.contains("pose_error_deg") && text.contains("2"), "{text}");

    let (ok, text) = vgan(&["--config", cfg, "render"]);
    assert!(!ok && text.contains("--checkpoint"), "{text}");
    let (ok, text) = vgan(&["--config", "nonsense", "render"]);
    assert!(!ok && text.contains("nonsense"), "{text}");
}
