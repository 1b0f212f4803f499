use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centers; source coordinates are clamped
/// at the borders.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.shape3()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape("resize to or from an empty image"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = img.channel(ch);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::chw(c, out_h, out_w, out)
}
