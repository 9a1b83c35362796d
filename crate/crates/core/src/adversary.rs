//! Residual discriminator and the logistic adversarial objectives.

use diffcore::ops::softplus;
use diffcore::{join, Module, Param, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{invalid, Result};
use crate::nnlayers::{Conv, Linear};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscArch {
    pub max_res: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Resolution at which the dense head takes over.
    pub min_res: usize,
}

impl DiscArch {
    pub fn channels(&self, res: usize) -> usize {
        (self.base_channels * (self.max_res / res)).min(self.max_channels)
    }

    /// Resolutions with a residual block, highest first.
    pub fn block_resolutions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut r = self.max_res;
        while r > self.min_res {
            out.push(r);
            r /= 2;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min_res >= 1
            && self.max_res >= self.min_res
            && self.max_res.is_power_of_two()
            && self.min_res.is_power_of_two()
            && self.base_channels > 0
            && self.max_channels > 0;
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid discriminator layout {self:?}"))
        }
    }
}

/// Two 3×3 convolutions and an average-pool, with a pooled 1×1 skip.
#[derive(Debug, Clone)]
pub struct ResBlock<T: Real> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    pub skip: Conv<T>,
}

impl<T: Real> ResBlock<T> {
    fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = tape.lrelu(y);
        let y = self.conv2.forward(tape, y)?;
        let y = tape.lrelu(y);
        let y = tape.avg_pool(y, 2, 2)?;
        let s = tape.avg_pool(x, 2, 2)?;
        let s = self.skip.forward(tape, s)?;
        let sum = tape.add(y, s)?;
        Ok(tape.scale(sum, std::f64::consts::FRAC_1_SQRT_2))
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Real> {
    /// 1×1 input stems, one per resolution from `max_res` down to `min_res`.
    pub stems: Vec<Conv<T>>,
    pub blocks: Vec<ResBlock<T>>,
    pub fc: Linear<T>,
    pub out: Linear<T>,
    arch: DiscArch,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng>(arch: DiscArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let gain = 2f64.sqrt();
        let mut stems = Vec::new();
        let mut r = arch.max_res;
        while r >= arch.min_res {
            stems.push(Conv::new(3, arch.channels(r), 1, 2, 1.0, rng));
            r /= 2;
        }
        let blocks = arch
            .block_resolutions()
            .into_iter()
            .map(|r| {
                let (c, c2) = (arch.channels(r), arch.channels(r / 2));
                ResBlock {
                    conv1: Conv::new(c, c, 3, 2, gain, rng),
                    conv2: Conv::new(c, c2, 3, 2, gain, rng),
                    skip: Conv::new(c, c2, 1, 2, 1.0, rng),
                }
            })
            .collect();
        let c = arch.channels(arch.min_res);
        let flat = c * arch.min_res * arch.min_res;
        let fc = Linear::new(flat, c, gain, true, rng);
        let out = Linear::new(c, 1, 1.0, true, rng);
        Ok(Discriminator {
            stems,
            blocks,
            fc,
            out,
            arch,
        })
    }

    pub fn arch(&self) -> &DiscArch {
        &self.arch
    }

    fn index_of(&self, res: usize) -> Option<usize> {
        let mut r = self.arch.max_res;
        let mut i = 0;
        while r >= self.arch.min_res {
            if r == res {
                return Some(i);
            }
            r /= 2;
            i += 1;
        }
        None
    }

    fn stem(&self, tape: &mut Tape<T>, x: Var, i: usize) -> Result<Var> {
        let h = self.stems[i].forward(tape, x)?;
        Ok(tape.lrelu(h))
    }

    /// Score of one `[3, r, r]` image. With `alpha < 1` the input is also
    /// fed, pooled, through the next-lower stem and blended after the first
    /// block.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, alpha: f64) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let res = shape.get(1).copied().unwrap_or(0);
        let start = match self.index_of(res) {
            Some(i) if shape.len() == 3 && shape[0] == 3 && shape[2] == res => i,
            _ => {
                return invalid(format!(
                    "discriminator accepts [3, r, r] with r a power of two in [{}, {}], got {shape:?}",
                    self.arch.min_res, self.arch.max_res
                ))
            }
        };
        let mut h = self.stem(tape, x, start)?;
        for (i, block) in self.blocks.iter().enumerate().skip(start) {
            h = block.forward(tape, h)?;
            if i == start && alpha < 1.0 {
                let low = tape.avg_pool(x, 2, 2)?;
                let low = self.stem(tape, low, start + 1)?;
                let low = tape.scale(low, 1.0 - alpha);
                let hi = tape.scale(h, alpha);
                h = tape.add(low, hi)?;
            }
        }
        let n = tape.value(h).numel();
        let flat = tape.reshape(h, &[n])?;
        let f = self.fc.forward(tape, flat)?;
        let f = tape.lrelu(f);
        let s = self.out.forward(tape, f)?;
        Ok(tape.reshape(s, &[])?)
    }

    /// Scores for a batch of image values.
    pub fn scores(&self, images: &[Tensor<T>], alpha: f64) -> Result<Vec<f64>> {
        images
            .iter()
            .map(|img| {
                let mut tape = Tape::inference();
                let x = tape.constant(img.clone());
                let s = self.forward(&mut tape, x, alpha)?;
                Ok(tape.value(s).item().as_f64())
            })
            .collect()
    }
}

impl<T: Real> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, s) in self.stems.iter().enumerate() {
            s.visit(&join(prefix, &format!("stem{i}")), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv1.visit(&join(&p, "conv1"), f);
            b.conv2.visit(&join(&p, "conv2"), f);
            b.skip.visit(&join(&p, "skip"), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stems.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stem{i}")), f);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.conv1.visit_mut(&join(&p, "conv1"), f);
            b.conv2.visit_mut(&join(&p, "conv2"), f);
            b.skip.visit_mut(&join(&p, "skip"), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Losses of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub g_loss: f64,
    pub d_loss_real: f64,
    pub d_loss_fake: f64,
    pub r1_penalty: f64,
    /// Fraction of real scores above 0 and fake scores below 0, before the
    /// discriminator update.
    pub d_accuracy: f64,
}

impl LossReport {
    pub fn d_loss(&self) -> f64 {
        self.d_loss_real + self.d_loss_fake
    }

    pub fn is_finite(&self) -> bool {
        [self.g_loss, self.d_loss_real, self.d_loss_fake, self.r1_penalty, self.d_accuracy]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Non-saturating logistic losses `(g_loss, d_loss)`.
pub fn logistic_losses(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let g = mean(fake.iter().map(|&s| softplus(-s)));
    let d = mean(real.iter().map(|&s| softplus(-s))) + mean(fake.iter().map(|&s| softplus(s)));
    (g, d)
}

/// `‖∇_x D(x)‖²` recorded on `tape` so that it can be differentiated
/// further. `x` must require a gradient.
pub fn r1_term<T: Real>(tape: &mut Tape<T>, score: Var, x: Var) -> Result<Var> {
    if !tape.requires_grad(x) {
        return invalid("gradient penalty needs images that require grad");
    }
    let g = tape.grad_graph(score, &[x])?[0];
    let sq = tape.square(g);
    Ok(tape.sum(sq))
}

/// Batch mean of the squared input-gradient norm of `D`.
pub fn r1_penalty<T: Real>(d: &Discriminator<T>, images: &[Tensor<T>], alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let mut tape = Tape::new();
        let x = tape.leaf(img.clone(), true);
        let s = d.forward(&mut tape, x, alpha)?;
        let g = tape.backward(s)?;
        let gx = g.get(x).map(|g| g.to_f64_vec()).unwrap_or_default();
        total += gx.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / images.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores() {
        let (g, d) = logistic_losses(&[0.0, 0.0], &[0.0, 0.0]);
        let ln2 = std::f64::consts::LN_2;
        assert!((g - ln2).abs() < 1e-15);
        assert!((d - 2.0 * ln2).abs() < 1e-15);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let (_, d) = logistic_losses(&[1e3], &[-1e3]);
        assert!(d < 1e-300);
    }

    #[test]
    fn mixed_fake_scores() {
        let (g, _) = logistic_losses(&[], &[1.0, -1.0]);
        assert!((g - 0.813262).abs() < 1e-6);
    }

    #[test]
    fn channel_schedule() {
        let a = DiscArch {
            max_res: 256,
            base_channels: 64,
            max_channels: 512,
            min_res: 4,
        };
        assert_eq!(a.channels(256), 64);
        assert_eq!(a.channels(4), 512);
        assert_eq!(a.block_resolutions().len(), 6);
    }
}
