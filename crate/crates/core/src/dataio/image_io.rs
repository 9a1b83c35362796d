use std::path::Path;

use diffcore::{Real, Tensor};
use image::{ImageFormat, RgbImage};

use crate::error::{invalid, Result, VganError};

fn image_err(path: &Path, e: impl std::fmt::Display) -> VganError {
    VganError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// True for the supported extensions (`png`, `ppm`), case-insensitive.
pub fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm")
    )
}

fn format_of(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm") => Ok(ImageFormat::Pnm),
        _ => Err(image_err(path, "only .png and .ppm files are supported")),
    }
}

/// Decodes a PNG or binary PPM into `[3, H, W]` with values in [−1, 1].
pub fn read_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let fmt = format_of(path)?;
    let bytes = std::fs::read(path).map_err(crate::error::io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, fmt)
        .map_err(|e| image_err(path, e))?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8<T: Real>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::lit(raw[p * 3 + c] as f64 / 127.5 - 1.0)
    })
}

/// Quantizes `[3, H, W]` in [−1, 1] with `round((v + 1) · 127.5)`.
pub fn to_rgb8<T: Real>(img: &Tensor<T>) -> Result<RgbImage> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return invalid(format!("expected an image [3, H, W], got {s:?}"));
    }
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for p in 0..h * w {
            let v = ((d[c * h * w + p].as_f64() + 1.0) * 127.5).round();
            raw[p * 3 + c] = v.clamp(0.0, 255.0) as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size"))
}

/// Encodes by extension: `.png` or binary `.ppm`.
pub fn write_image<T: Real>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let fmt = format_of(path)?;
    let rgb = to_rgb8(img)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    }
    rgb.save_with_format(path, fmt).map_err(|e| image_err(path, e))
}

/// Tiles equally sized images into a `cols`-wide grid.
pub fn image_grid<T: Real>(images: &[Tensor<T>], cols: usize) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| VganError::Invalid("empty image grid".into()))?;
    let s = first.shape().to_vec();
    if images.iter().any(|i| i.shape() != s.as_slice()) || s.len() != 3 {
        return invalid("grid images must share one [C, H, W] shape");
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (c, h, w) = (s[0], s[1], s[2]);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[c, gh, gw], T::lit(-1.0));
    let data = out.data_mut();
    for (n, img) in images.iter().enumerate() {
        let (r0, c0) = (n / cols * h, n % cols * w);
        let d = img.data();
        for ch in 0..c {
            for i in 0..h {
                let src = &d[(ch * h + i) * w..(ch * h + i + 1) * w];
                let dst = (ch * gh + r0 + i) * gw + c0;
                data[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::<f32>::from_fn(&[3, 5, 7], |i| (i % 256) as f32 / 127.5 - 1.0);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &img).unwrap();
            let back: Tensor<f32> = read_image(&p).unwrap();
            assert_eq!(back.shape(), img.shape());
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_other_formats() {
        assert!(read_image::<f32>(Path::new("x.jpg")).is_err());
        assert!(is_supported(Path::new("A.PPM")));
    }
}
