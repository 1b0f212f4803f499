use std::path::Path;

use image::{ImageError, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a PNG or JPEG into a `[3, H, W]` tensor in `[0, 1]`. Grayscale is
/// promoted to three channels and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(rgb8_to_tensor(&load_rgb8(path)?))
}

pub fn load_rgb8(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let img = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    Ok(img.to_rgb8())
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::chw(3, h, w, data).expect("consistent dims")
}

/// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.shape3()?;
    if c != 3 {
        return Err(Error::shape(format!("cannot store {} channels as RGB", c)));
    }
    let plane = h * w;
    let d = t.data();
    let mut buf = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            buf.push(quantize(d[ch * plane + p]));
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"))
}

pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Writes a PNG.
pub fn save_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_rgb8(&tensor_to_rgb8(t)?, path)
}

pub fn save_rgb8(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            ImageError::IoError(source) => Error::io(path, source),
            other => Error::Encode {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        })
}
