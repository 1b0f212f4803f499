use std::path::{Path, PathBuf};

use image::RgbImage;

use super::ciede2000::ciede2000;
use crate::colorspace::srgb_to_lab;
use crate::error::{Error, Result};

pub const PATCH_COUNT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    /// Reference color, unnormalized CIE Lab.
    pub lab: [f64; 3],
}

/// Locations and reference colors of the 24 checker patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchLayout {
    pub patches: Vec<Patch>,
}

impl PatchLayout {
    pub fn new(patches: Vec<Patch>) -> Result<Self> {
        if patches.len() != PATCH_COUNT {
            return Err(Error::Config(format!(
                "patch layout needs {} patches, got {}",
                PATCH_COUNT,
                patches.len()
            )));
        }
        if let Some(i) = patches.iter().position(|p| p.w == 0 || p.h == 0) {
            return Err(Error::Config(format!("patch {} is empty", i + 1)));
        }
        Ok(PatchLayout { patches })
    }

    /// Parses `x,y,w,h,L,a,b` records, one per line; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            msg,
        };
        let mut patches = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(err(i + 1, format!("expected 7 fields, found {}", fields.len())));
            }
            let int = |s: &str| s.parse::<u32>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
            let real = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(i + 1, format!("{s:?} is not a number")))
            };
            patches.push(Patch {
                x: int(fields[0])?,
                y: int(fields[1])?,
                w: int(fields[2])?,
                h: int(fields[3])?,
                lab: [real(fields[4])?, real(fields[5])?, real(fields[6])?],
            });
        }
        PatchLayout::new(patches)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        for (i, p) in self.patches.iter().enumerate() {
            if p.x as u64 + p.w as u64 > width as u64 || p.y as u64 + p.h as u64 > height as u64 {
                return Err(Error::Data(format!(
                    "patch {} ({},{} {}x{}) exceeds the {}x{} image",
                    i + 1,
                    p.x,
                    p.y,
                    p.w,
                    p.h,
                    width,
                    height
                )));
            }
        }
        Ok(())
    }
}

/// Lab color of a patch's mean RGB.
pub fn patch_lab(img: &RgbImage, p: &Patch) -> [f64; 3] {
    let mut sum = [0.0; 3];
    for y in p.y..p.y + p.h {
        for x in p.x..p.x + p.w {
            let px = img.get_pixel(x, y).0;
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
    }
    let n = (p.w * p.h) as f64 * 255.0;
    srgb_to_lab([sum[0] / n, sum[1] / n, sum[2] / n]).0
}

/// Per-patch ΔE00 against the reference colors.
pub fn patch_errors(img: &RgbImage, layout: &PatchLayout) -> Result<Vec<f64>> {
    layout.check_bounds(img.width(), img.height())?;
    Ok(layout
        .patches
        .iter()
        .map(|p| ciede2000(patch_lab(img, p), p.lab))
        .collect())
}

/// Mean ΔE00 over the 24 patches.
pub fn colorchecker_score(img: &RgbImage, layout: &PatchLayout) -> Result<f64> {
    let e = patch_errors(img, layout)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}
