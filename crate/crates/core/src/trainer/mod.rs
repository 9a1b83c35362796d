//! Alternating adversarial optimization with a progressive resolution
//! schedule and bit-exact checkpointing.

mod checkpoint;
mod optim;

use std::path::PathBuf;

use diffcore::{Gradients, Module, Real, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use checkpoint::{
    decode, encode, load_checkpoint, load_generator, save_checkpoint, CheckpointState, OptimState, RngState, FORMAT_VERSION,
    MAGIC,
};
pub use optim::Adam;

use crate::adversary::{r1_term, DiscArch, Discriminator, LossReport};

use crate::camera::{ray_grid, sample_pose, CameraConfig, CameraPose};
use crate::dataio::{image_grid, write_image, BatchStream, Dataset};
use crate::error::{invalid, Result, VganError};
use crate::generator::{CodeBundle, Generator, GeneratorArch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub res: usize,
    pub kimg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub eps: f64,
    pub lambda: f64,
    pub schedule: Vec<Stage>,
    /// Fade-in length as a fraction of each stage's images.
    pub fade_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            g_lr: 2.5e-4,
            d_lr: 2.5e-4,
            beta0: 0.0,
            beta1: 0.999,
            eps: 1e-8,
            lambda: 1.0,
            schedule: vec![Stage { res: 32, kimg: 500.0 }],
            fade_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return invalid("batch must be at least 1");
        }
        if self.schedule.is_empty() {
            return invalid("schedule needs at least one stage");
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if !s.res.is_power_of_two() || !(s.kimg > 0.0) {
                return invalid(format!("stage {i}: resolution {} must be a power of two and kimg {} positive", s.res, s.kimg));
            }
            if i > 0 && s.res <= self.schedule[i - 1].res {
                return invalid("schedule resolutions must ascend");
            }
        }
        if self.g_lr < 0.0 || self.d_lr < 0.0 || self.lambda < 0.0 {
            return invalid("learning rates and lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta0) || !(0.0..1.0).contains(&self.beta1) {
            return invalid("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn total_images(&self) -> u64 {
        self.schedule.iter().map(|s| (s.kimg * 1000.0).round() as u64).sum()
    }

    /// Stage index and fade weight after `images` training images.
    pub fn stage_at(&self, images: u64) -> (usize, f64) {
        let mut start = 0u64;
        for (i, s) in self.schedule.iter().enumerate() {
            let len = (s.kimg * 1000.0).round() as u64;
            if images < start + len || i + 1 == self.schedule.len() {
                let into = images.saturating_sub(start) as f64;
                let fade = self.fade_fraction * len as f64;
                let alpha = if i == 0 || fade <= 0.0 { 1.0 } else { (into / fade).min(1.0) };
                return (i, alpha);
            }
            start += len;
        }
        (0, 1.0)
    }
}

/// Averages per-sample gradient lists in sample order.
fn mean_grads<T: Real>(per_sample: Vec<Vec<Tensor<T>>>) -> Vec<Tensor<T>> {
    let n = per_sample.len();
    let mut it = per_sample.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for g in it {
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
    let k = T::lit(1.0 / n as f64);
    acc.iter().map(|t| t.scale(k)).collect()
}

/// Gradient of every parameter of `module` (zeros where untouched).
pub fn param_grads<T: Real, M: Module<T>>(module: &M, tape: &Tape<T>, grads: &Gradients<T>) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    module.visit("", &mut |_, p| {
        out.push(
            grads
                .param(tape, p)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape())),
        )
    });
    out
}

/// Box-filter downsampling of `[C, H, W]` by an integer factor.
pub fn box_downsample<T: Real>(img: &Tensor<T>, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return img.clone();
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (oh, ow) = (h / factor, w / factor);
    let d = img.data();
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for a in 0..factor {
                    for b in 0..factor {
                        s += d[(ch * h + i * factor + a) * w + j * factor + b].as_f64();
                    }
                }
                out.push(T::lit(s * norm));
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("shape")
}

fn nearest_upsample2<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    Tensor::from_fn(&[c, 2 * h, 2 * w], |i| {
        let j = i % (2 * w);
        let r = (i / (2 * w)) % (2 * h);
        let ch = i / (4 * h * w);
        img.data()[(ch * h + r / 2) * w + j / 2]
    })
}

/// Real image at training resolution `res`; during a fade the lower
/// resolution, re-upsampled, is blended in with weight `1 − alpha`.
pub fn prepare_real<T: Real>(img: &Tensor<T>, res: usize, alpha: f64) -> Result<Tensor<T>> {
    let h = img.shape().get(1).copied().unwrap_or(0);
    if img.rank() != 3 || h < res || h % res != 0 || !(h / res).is_power_of_two() {
        return invalid(format!("real image {:?} cannot be reduced to {res}²", img.shape()));
    }
    let x = box_downsample(img, h / res);
    if alpha >= 1.0 || res < 2 {
        return Ok(x);
    }
    let low = nearest_upsample2(&box_downsample(&x, 2));
    let a = T::lit(alpha);
    let b = T::lit(1.0 - alpha);
    Ok(x.zip_map(&low, |hi, lo| a * hi + b * lo))
}

/// Stable 64-bit fingerprint of a configuration's textual form.
pub fn config_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Hash of everything that shapes a run; checkpoints carry it.
pub fn fingerprint(g_arch: &GeneratorArch, d_arch: &DiscArch, camera: &CameraConfig, cfg: &TrainConfig) -> u64 {
    config_hash(&format!("{g_arch:?}|{d_arch:?}|{camera:?}|{cfg:?}"))
}

/// Latents, poses and rays for one generated batch.
struct FakeInputs<T: Real> {
    codes: Vec<CodeBundle<T>>,
    rays: Vec<crate::camera::RayGrid>,
}

/// Generator, discriminator, optimizers and the sampling stream.
pub struct Trainer<T: Real> {
    pub g: Generator<T>,
    pub d: Discriminator<T>,
    pub g_opt: Adam<T>,
    pub d_opt: Adam<T>,
    pub camera: CameraConfig,
    pub cfg: TrainConfig,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub images_seen: u64,
    pub config_hash: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(g_arch: GeneratorArch, d_arch: DiscArch, camera: CameraConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        if camera.ray_res != g_arch.renderer.ray_res {
            return invalid(format!(
                "camera ray_res {} differs from renderer ray_res {}",
                camera.ray_res, g_arch.renderer.ray_res
            ));
        }
        for s in &cfg.schedule {
            g_arch.renderer.level_of(s.res)?;
            if s.res > d_arch.max_res || s.res < d_arch.min_res {
                return invalid(format!("discriminator cannot score {}² images", s.res));
            }
        }
        let hash = fingerprint(&g_arch, &d_arch, &camera, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g = Generator::new(g_arch, &mut rng)?;
        let d = Discriminator::new(d_arch, &mut rng)?;
        let g_opt = Adam::new(&g, cfg.g_lr, cfg.beta0, cfg.beta1, cfg.eps);
        let d_opt = Adam::new(&d, cfg.d_lr, cfg.beta0, cfg.beta1, cfg.eps);
        Ok(Trainer {
            g,
            d,
            g_opt,
            d_opt,
            camera,
            cfg,
            rng,
            step: 0,
            images_seen: 0,
            config_hash: hash,
        })
    }

    /// Resolution, renderer level and fade weight at the current position.
    pub fn phase(&self) -> (usize, usize, f64) {
        let (stage, alpha) = self.cfg.stage_at(self.images_seen);
        let res = self.cfg.schedule[stage].res;
        let level = self.g.arch().renderer.level_of(res).expect("validated schedule");
        (res, level, alpha)
    }

    fn sample_fakes(&mut self, n: usize) -> FakeInputs<T> {
        let dim = self.g.arch().latent_dim;
        let mut codes = Vec::with_capacity(n);
        let mut rays = Vec::with_capacity(n);
        for _ in 0..n {
            codes.push(CodeBundle::sample(dim, &mut self.rng));
            let pose = sample_pose(&self.camera, &mut self.rng);
            rays.push(ray_grid(&pose, &self.camera, true, &mut self.rng));
        }
        FakeInputs { codes, rays }
    }

    /// One discriminator update followed by one generator update.
    ///
    /// The generated batch is rendered once; its recorded graph serves
    /// both the discriminator's fake term and the generator's update.
    pub fn train_step(&mut self, reals: &[Tensor<T>]) -> Result<LossReport> {
        if reals.is_empty() {
            return invalid("empty real batch");
        }
        let (res, level, alpha) = self.phase();
        let reals: Vec<Tensor<T>> = reals
            .iter()
            .map(|r| prepare_real(r, res, alpha))
            .collect::<Result<_>>()?;
        let b = reals.len();
        let fakes = self.sample_fakes(b);
        let t0 = std::time::Instant::now();

        let g = &self.g;
        let mut g_runs: Vec<(Tape<T>, diffcore::Var)> = fakes
            .codes
            .par_iter()
            .zip(fakes.rays.par_iter())
            .map(|(codes, rays)| {
                let mut tape = Tape::new();
                let out = g.forward(&mut tape, codes, rays, level, alpha)?;
                Ok((tape, out.image))
            })
            .collect::<Result<_>>()?;
        let fake_images: Vec<Tensor<T>> = g_runs.iter().map(|(t, v)| t.value(*v).clone()).collect();
        let t_gen = t0.elapsed();

        // discriminator: softplus(−D(real)) + λ‖∇D(real)‖² + softplus(D(fake))
        let d = &self.d;
        let lambda = self.cfg.lambda;
        let d_results: Vec<(Vec<Tensor<T>>, [f64; 4])> = reals
            .par_iter()
            .zip(fake_images.par_iter())
            .map(|(real, fake)| {
                let mut tape = Tape::new();
                let x = tape.leaf(real.clone(), true);
                let sr = d.forward(&mut tape, x, alpha)?;
                let nsr = tape.neg(sr);
                let lr = tape.softplus(nsr);
                let r1 = r1_term(&mut tape, sr, x)?;
                let xf = tape.constant(fake.clone());
                let sf = d.forward(&mut tape, xf, alpha)?;
                let lf = tape.softplus(sf);
                let pen = tape.scale(r1, lambda);
                let total = tape.add(lr, lf)?;
                let total = tape.add(total, pen)?;
                let grads = tape.backward(total)?;
                let stats = [
                    tape.value(lr).item().as_f64(),
                    tape.value(lf).item().as_f64(),
                    tape.value(r1).item().as_f64(),
                    f64::from(u8::from(tape.value(sr).item().as_f64() > 0.0) + u8::from(tape.value(sf).item().as_f64() < 0.0)),
                ];
                Ok((param_grads(d, &tape, &grads), stats))
            })
            .collect::<Result<_>>()?;
        let mut report = LossReport::default();
        for (_, s) in &d_results {
            report.d_loss_real += s[0] / b as f64;
            report.d_loss_fake += s[1] / b as f64;
            report.r1_penalty += s[2] / b as f64;
            report.d_accuracy += s[3] / (2 * b) as f64;
        }
        let d_grads = mean_grads(d_results.into_iter().map(|(g, _)| g).collect());
        self.check_finite(&report, &d_grads, "discriminator gradient")?;
        self.d_opt.step(&mut self.d, &d_grads)?;
        let t_disc = t0.elapsed();

        // generator: softplus(−D(G(z, ξ))) through the updated discriminator
        let d = &self.d;
        let g = &self.g;
        let g_results: Vec<(Vec<Tensor<T>>, f64)> = g_runs
            .par_iter_mut()
            .zip(fake_images.par_iter())
            .map(|((gtape, image), fake)| {
                let mut tape = Tape::inference();
                let x = tape.leaf(fake.clone(), true);
                let s = d.forward(&mut tape, x, alpha)?;
                let ns = tape.neg(s);
                let loss = tape.softplus(ns);
                let mut grads = tape.backward(loss)?;
                let seed = grads.take(x).unwrap_or_else(|| Tensor::zeros(fake.shape()));
                let ggrads = gtape.backward_from(*image, seed)?;
                Ok((param_grads(g, gtape, &ggrads), tape.value(loss).item().as_f64()))
            })
            .collect::<Result<_>>()?;
        drop(g_runs);
        report.g_loss = g_results.iter().map(|(_, l)| l).sum::<f64>() / b as f64;
        let g_grads = mean_grads(g_results.into_iter().map(|(g, _)| g).collect());
        self.check_finite(&report, &g_grads, "generator gradient")?;
        self.g_opt.step(&mut self.g, &g_grads)?;

        log::debug!(
            "step {}: render {:.3}s, D update {:.3}s, G update {:.3}s",
            self.step,
            t_gen.as_secs_f64(),
            (t_disc - t_gen).as_secs_f64(),
            (t0.elapsed() - t_disc).as_secs_f64()
        );
        self.step += 1;
        self.images_seen += b as u64;
        Ok(report)
    }

    fn check_finite(&self, report: &LossReport, grads: &[Tensor<T>], what: &str) -> Result<()> {
        if !report.is_finite() {
            return Err(VganError::NonFinite {
                step: self.step,
                what: format!("loss ({report:?})"),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(VganError::NonFinite {
                step: self.step,
                what: format!("{what} #{i}"),
            });
        }
        Ok(())
    }

    /// True when every parameter of both networks is finite.
    pub fn params_finite(&self) -> bool {
        let mut ok = true;
        self.g.visit("", &mut |_, p| ok &= p.value().is_finite());
        self.d.visit("", &mut |_, p| ok &= p.value().is_finite());
        ok
    }

    /// Generated images at the current phase for fixed codes and poses.
    pub fn sample_images(&self, codes: &[CodeBundle<T>], poses: &[CameraPose]) -> Result<Vec<Tensor<T>>> {
        let (_, level, alpha) = self.phase();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rays: Vec<_> = poses.iter().map(|p| ray_grid(p, &self.camera, false, &mut rng)).collect();
        codes
            .par_iter()
            .zip(rays.par_iter())
            .map(|(c, r)| {
                let mut tape = Tape::inference();
                let out = self.g.forward(&mut tape, c, r, level, alpha)?;
                Ok(tape.value(out.image).clone())
            })
            .collect()
    }
}

/// Resolution change between consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowthEvent {
    pub step: u64,
    pub images_seen: u64,
    pub from_res: usize,
    pub to_res: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOptions {
    /// Checkpoint and sample-grid directory; nothing is written without it.
    pub out_dir: Option<PathBuf>,
    /// Steps between checkpoints (0 disables them).
    pub checkpoint_every: u64,
    /// Steps between sample grids (0 disables them).
    pub sample_every: u64,
    /// Steps between parameter finiteness checks.
    pub finite_check_every: u64,
    /// Stops early after this many steps of this call.
    pub max_steps: Option<u64>,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            out_dir: None,
            checkpoint_every: 1000,
            sample_every: 1000,
            finite_check_every: 100,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub images_seen: u64,
    pub growth: Vec<GrowthEvent>,
    pub losses: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

impl<T: Real> Trainer<T> {
    /// Trains through the whole schedule (or `opts.max_steps`), drawing
    /// real batches cyclically from `stream`. `on_step` sees the trainer
    /// after every step.
    pub fn run_schedule(
        &mut self,
        data: &Dataset<T>,
        stream: &mut BatchStream,
        opts: &ScheduleOptions,
        mut on_step: impl FnMut(&Trainer<T>, &LossReport) -> Result<()>,
    ) -> Result<RunSummary> {
        let final_res = self.cfg.schedule.last().map_or(0, |s| s.res);
        if data.resolution < final_res {
            return invalid(format!("dataset resolution {} is below the final stage {final_res}", data.resolution));
        }
        let total = self.cfg.total_images();
        let mut summary = RunSummary::default();
        let sample_codes: Vec<CodeBundle<T>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(1));
            (0..8).map(|_| CodeBundle::sample(self.g.arch().latent_dim, &mut rng)).collect()
        };
        let sample_poses: Vec<CameraPose> = (0..8)
            .map(|i| CameraPose::from_yaw_pitch(-0.4 + 0.8 * i as f64 / 7.0, 0.0))
            .collect();
        while self.images_seen < total && opts.max_steps.is_none_or(|m| summary.steps < m) {
            let (res_before, _, _) = self.phase();
            let reals = stream.next_batch(data);
            let report = self.train_step(&reals)?;
            summary.steps += 1;
            summary.losses.push(report);
            let (res_after, _, _) = self.phase();
            if res_after != res_before && self.images_seen < total {
                log::info!("step {}: growing {res_before}² -> {res_after}²", self.step);
                summary.growth.push(GrowthEvent {
                    step: self.step,
                    images_seen: self.images_seen,
                    from_res: res_before,
                    to_res: res_after,
                });
            }
            if opts.finite_check_every > 0 && self.step.is_multiple_of(opts.finite_check_every) && !self.params_finite() {
                return Err(VganError::NonFinite {
                    step: self.step,
                    what: "parameter".into(),
                });
            }
            let done = self.images_seen >= total || opts.max_steps == Some(summary.steps);
            if let Some(dir) = &opts.out_dir {
                let due = |every: u64| every > 0 && (self.step.is_multiple_of(every) || done);
                if due(opts.checkpoint_every) {
                    let (epoch, pos) = stream.position();
                    let path = dir.join(format!("ckpt_{:06}.vgan", self.step));
                    save_checkpoint(&self.state(epoch, pos), &path)?;
                    save_checkpoint(&self.state(epoch, pos), &dir.join("latest.vgan"))?;
                    summary.checkpoints.push(path);
                }
                if due(opts.sample_every) {
                    let imgs = self.sample_images(&sample_codes, &sample_poses)?;
                    let grid = image_grid(&imgs, 4)?;
                    write_image(&dir.join(format!("samples_{:06}.png", self.step)), &grid)?;
                }
            }
            on_step(self, &report)?;
        }
        summary.images_seen = self.images_seen;
        Ok(summary)
    }
}
