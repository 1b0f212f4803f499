//! Image decode/encode, resizing, manifests and in-memory paired datasets.

mod image_io;
mod manifest;
mod resize;
pub mod synthetic;

use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;

pub use image_io::{load_image, load_rgb8, quantize, rgb8_to_tensor, save_image, save_rgb8, tensor_to_rgb8};
pub use manifest::{parse_manifest, read_manifest, ImagePairRecord, Manifest};
pub use resize::resize_bilinear;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel storage for a dataset image. Decoded files stay 8-bit to keep
/// large sets small; generated data keeps full precision.
#[derive(Clone, Debug)]
pub enum Pixels {
    Rgb8(RgbImage),
    Float(Tensor),
}

impl Pixels {
    pub fn tensor(&self) -> Tensor {
        match self {
            Pixels::Rgb8(img) => rgb8_to_tensor(img),
            Pixels::Float(t) => t.clone(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Pixels::Rgb8(img) => (img.height() as usize, img.width() as usize),
            Pixels::Float(t) => (t.dims()[1], t.dims()[2]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub input: Pixels,
    pub target: Pixels,
}

/// Ordered (raw, reference) pairs held in memory.
#[derive(Clone, Debug, Default)]
pub struct PairDataset {
    pub samples: Vec<Sample>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn from_tensors(pairs: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let samples = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (input, target))| {
                if input.dims() != target.dims() || input.shape3()?.0 != 3 {
                    return Err(Error::shape(format!(
                        "pair {}: input {:?}, target {:?}",
                        i,
                        input.dims(),
                        target.dims()
                    )));
                }
                Ok(Sample {
                    id: format!("{:04}", i),
                    input: Pixels::Float(input),
                    target: Pixels::Float(target),
                })
            })
            .collect::<Result<_>>()?;
        Ok(PairDataset { samples })
    }

    /// Loads the paired records of `manifest`, optionally restricted to one
    /// split, truncated to `limit` records and resized to `size`×`size`.
    pub fn from_manifest(
        manifest: &Manifest,
        split: Option<&str>,
        limit: Option<usize>,
        size: Option<usize>,
    ) -> Result<Self> {
        let records: Vec<&ImagePairRecord> = manifest
            .paired()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .take(limit.unwrap_or(usize::MAX))
            .collect();
        let samples = records
            .par_iter()
            .map(|r| {
                let reference = r.reference_path.as_ref().expect("paired record");
                let input = load_sized(&r.raw_path, size)?;
                let target = load_sized(reference, size)?;
                if input.dimensions() != target.dimensions() {
                    return Err(Error::Data(format!(
                        "{}: raw is {:?} but reference is {:?}",
                        r.raw_path.display(),
                        input.dimensions(),
                        target.dimensions()
                    )));
                }
                Ok(Sample {
                    id: image_id(&r.raw_path),
                    input: Pixels::Rgb8(input),
                    target: Pixels::Rgb8(target),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairDataset { samples })
    }
}

/// File stem used as the image identifier in reports.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_sized(path: &Path, size: Option<usize>) -> Result<RgbImage> {
    let img = load_rgb8(path)?;
    match size {
        Some(s) if (img.width() as usize, img.height() as usize) != (s, s) => {
            tensor_to_rgb8(&resize_bilinear(&rgb8_to_tensor(&img), s, s)?)
        }
        _ => Ok(img),
    }
}
