//! Image ingestion, the procedural primitives dataset and shuffled batch
//! streams.

mod image_io;
mod synthetic;

use std::path::{Path, PathBuf};

use diffcore::{Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use image_io::{from_rgb8, image_grid, is_supported, read_image, to_rgb8, write_image};
pub use synthetic::{
    generate_synthetic, load_synthetic, save_synthetic, Object, Scene, SceneViews, Shape, SyntheticRecord, SyntheticSceneConfig,
    EXTENT,
};

use crate::camera::CameraPose;
use crate::error::{io_err, Result, VganError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crop {
    Center,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Folder(PathBuf),
    Synthetic(Box<SyntheticSceneConfig>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: Source,
    pub resolution: usize,
    pub crop: Crop,
    pub shuffle_seed: u64,
}

/// In-memory images `[3, R, R]` in [−1, 1], with poses when known.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub resolution: usize,
    pub poses: Option<Vec<CameraPose>>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn from_records(records: Vec<SyntheticRecord<T>>) -> Result<Self> {
        let resolution = records.first().map(|r| r.image.shape()[1]).ok_or_else(|| VganError::Data("no records".into()))?;
        let poses = records.iter().map(|r| r.pose).collect();
        Ok(Dataset {
            images: records.into_iter().map(|r| r.image).collect(),
            resolution,
            poses: Some(poses),
        })
    }
}

/// Opens a dataset; synthetic sources are rendered at `spec.resolution`.
pub fn open_dataset<T: Real>(spec: &DatasetSpec) -> Result<Dataset<T>> {
    if !spec.resolution.is_power_of_two() {
        return Err(VganError::Config(format!("dataset resolution {} is not a power of two", spec.resolution)));
    }
    match &spec.source {
        Source::Folder(dir) => load_folder(dir, spec.resolution, spec.crop),
        Source::Synthetic(cfg) => {
            let cfg = SyntheticSceneConfig {
                resolution: spec.resolution,
                ..(**cfg).clone()
            };
            Dataset::from_records(generate_synthetic(&cfg)?)
        }
    }
}

/// Center square of the shorter side.
pub fn center_crop<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let side = h.min(w);
    let (r0, c0) = ((h - side) / 2, (w - side) / 2);
    let d = img.data();
    Tensor::from_fn(&[c, side, side], |i| {
        let (ch, p) = (i / (side * side), i % (side * side));
        d[(ch * h + r0 + p / side) * w + c0 + p % side]
    })
}

/// Area-weighted 1-D resampling matrix entries `(src, weight)` per output.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Box-filter (area) resampling of `[C, H, W]` to `[C, oh, ow]`.
pub fn area_resize<T: Real>(img: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if (h, w) == (oh, ow) {
        return img.clone();
    }
    let (wr, wc) = (area_weights(h, oh), area_weights(w, ow));
    let d = img.to_f64_vec();
    // columns first, then rows
    let mut tmp = vec![0.0; c * h * ow];
    for ch in 0..c {
        for i in 0..h {
            for (j, ws) in wc.iter().enumerate() {
                tmp[(ch * h + i) * ow + j] = ws.iter().map(|&(s, k)| k * d[(ch * h + i) * w + s]).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for ws in &wr {
            for j in 0..ow {
                let v: f64 = ws.iter().map(|&(s, k)| k * tmp[(ch * h + s) * ow + j]).sum();
                out.push(T::lit(v));
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("shape")
}

/// The ingestion rule for one decoded image.
pub fn preprocess<T: Real>(img: &Tensor<T>, res: usize, crop: Crop) -> Tensor<T> {
    let img = match crop {
        Crop::Center => center_crop(img),
        Crop::None => img.clone(),
    };
    area_resize(&img, res, res).map(|v| v.clamp(T::lit(-1.0), T::lit(1.0)))
}

/// Every PNG/PPM file of a flat directory in file-name order. Files that
/// fail to decode are skipped with a warning.
pub fn load_folder<T: Real>(dir: &Path, res: usize, crop: Crop) -> Result<Dataset<T>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_supported(p))
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        match read_image::<T>(p) {
            Ok(img) => images.push(preprocess(&img, res, crop)),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if images.is_empty() {
        return Err(VganError::Data(format!("no decodable PNG/PPM images in {}", dir.display())));
    }
    Ok(Dataset {
        images,
        resolution: res,
        poses: None,
    })
}

/// Cyclic shuffled index stream; each epoch uses a fresh permutation
/// seeded by `(seed, epoch)`. The position is `(epoch, offset)`.
#[derive(Debug, Clone)]
pub struct BatchStream {
    len: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    pos: u64,
    perm: Vec<usize>,
}

impl BatchStream {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if len == 0 || batch == 0 {
            return Err(VganError::Data("batch stream needs a non-empty dataset and batch".into()));
        }
        let mut s = BatchStream {
            len,
            batch,
            seed,
            epoch: 0,
            pos: 0,
            perm: Vec::new(),
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.perm = (0..self.len).collect();
        self.perm.shuffle(&mut rng);
    }

    pub fn position(&self) -> (u64, u64) {
        (self.epoch, self.pos)
    }

    pub fn seek(&mut self, epoch: u64, pos: u64) -> Result<()> {
        if pos as usize >= self.len {
            return Err(VganError::Data(format!("offset {pos} past dataset of {}", self.len)));
        }
        self.epoch = epoch;
        self.pos = pos;
        self.shuffle();
        Ok(())
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            out.push(self.perm[self.pos as usize]);
            self.pos += 1;
            if self.pos as usize == self.len {
                self.epoch += 1;
                self.pos = 0;
                self.shuffle();
            }
        }
        out
    }

    pub fn next_batch<T: Real>(&mut self, data: &Dataset<T>) -> Vec<Tensor<T>> {
        self.next_indices().into_iter().map(|i| data.images[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_then_resize() {
        let img = Tensor::<f32>::from_fn(&[3, 200, 300], |i| ((i % 300) as f32 / 150.0) - 1.0);
        let c = center_crop(&img);
        assert_eq!(c.shape(), &[3, 200, 200]);
        // first kept column is source column 50
        assert_eq!(c.data()[0], img.data()[50]);
        assert_eq!(preprocess(&img, 64, Crop::Center).shape(), &[3, 64, 64]);
    }

    #[test]
    fn square_input_keeps_geometry() {
        let img = Tensor::<f64>::from_fn(&[3, 8, 8], |i| (i as f64 * 0.37).sin());
        assert_eq!(preprocess(&img, 8, Crop::Center), img);
    }

    #[test]
    fn area_resize_preserves_mean() {
        let img = Tensor::<f64>::from_fn(&[1, 9, 7], |i| (i as f64 * 0.91).cos());
        let out = area_resize(&img, 4, 3);
        let m0 = img.sum() / 63.0;
        let m1 = out.sum() / 12.0;
        assert!((m0 - m1).abs() < 1e-12);
    }

    #[test]
    fn stream_is_cyclic_and_deterministic() {
        let mut a = BatchStream::new(5, 5, 9).unwrap();
        let mut b = BatchStream::new(5, 5, 9).unwrap();
        for _ in 0..3 {
            let ia = a.next_indices();
            let mut sorted = ia.clone();
            sorted.sort();
            assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
            assert_eq!(ia, b.next_indices());
        }
        assert_eq!(a.position(), (3, 0));
        let mut c = BatchStream::new(5, 3, 9).unwrap();
        let first: Vec<usize> = (0..4).flat_map(|_| c.next_indices()).collect();
        assert_eq!(first.len(), 12);
        let mut d = BatchStream::new(5, 3, 9).unwrap();
        d.next_indices();
        let (e, p) = d.position();
        let mut r = BatchStream::new(5, 3, 9).unwrap();
        r.seek(e, p).unwrap();
        assert_eq!(r.next_indices(), first[3..6].to_vec());
    }
}
