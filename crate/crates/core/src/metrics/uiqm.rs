use image::RgbImage;

pub const UIQM_C1: f64 = 0.0282;
pub const UIQM_C2: f64 = 0.2953;
pub const UIQM_C3: f64 = 3.5753;
pub const UICM_ALPHA: f64 = 0.1;
pub const UIQM_BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Uiqm {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub uiqm: f64,
}

/// Colorfulness, sharpness and contrast components and their weighted sum.
/// Images smaller than one 8×8 block score zero on the block measures.
pub fn uiqm(img: &RgbImage) -> Uiqm {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes: [Vec<f64>; 3] = std::array::from_fn(|c| img.pixels().map(|p| p.0[c] as f64).collect());
    let uicm = uicm(&planes[0], &planes[1], &planes[2]);
    let uism = uism(&planes, h, w);
    let lum: Vec<f64> = (0..w * h)
        .map(|i| 0.299 * planes[0][i] + 0.587 * planes[1][i] + 0.114 * planes[2][i])
        .collect();
    let uiconm = log_amee(&lum, h, w, UIQM_BLOCK);
    Uiqm {
        uicm,
        uism,
        uiconm,
        uiqm: UIQM_C1 * uicm + UIQM_C2 * uism + UIQM_C3 * uiconm,
    }
}

/// Mean after discarding `ceil(α·K)` lowest and `floor(α·K)` highest values.
pub fn trimmed_mean(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (alpha * k as f64).ceil() as usize;
    let hi = (alpha * k as f64).floor() as usize;
    let kept = &v[lo.min(k)..k.saturating_sub(hi).max(lo.min(k))];
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn spread(values: &[f64], mu: f64) -> f64 {
    values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / values.len().max(1) as f64
}

pub fn uicm(r: &[f64], g: &[f64], b: &[f64]) -> f64 {
    let rg: Vec<f64> = r.iter().zip(g).map(|(r, g)| r - g).collect();
    let yb: Vec<f64> = r.iter().zip(g).zip(b).map(|((r, g), b)| (r + g) / 2.0 - b).collect();
    let mu_rg = trimmed_mean(&rg, UICM_ALPHA);
    let mu_yb = trimmed_mean(&yb, UICM_ALPHA);
    let var = spread(&rg, mu_rg) + spread(&yb, mu_yb);
    -0.0268 * mu_rg.hypot(mu_yb) + 0.1586 * var.sqrt()
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        src[y * w + x]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

/// Per-block `(min, max)` over the `k1`×`k2` full blocks of size `block`.
fn block_extrema(src: &[f64], h: usize, w: usize, block: usize) -> Vec<(f64, f64)> {
    let (k1, k2) = (h / block, w / block);
    let mut out = Vec::with_capacity(k1 * k2);
    for by in 0..k1 {
        for bx in 0..k2 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for y in by * block..(by + 1) * block {
                for &v in &src[y * w + bx * block..y * w + (bx + 1) * block] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            out.push((lo, hi));
        }
    }
    out
}

/// `2/(k1·k2) · Σ ln(max/min)`, skipping blocks with a zero extreme.
pub fn eme(src: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let blocks = block_extrema(src, h, w, block);
    if blocks.is_empty() {
        return 0.0;
    }
    let s: f64 = blocks
        .iter()
        .filter(|(lo, hi)| *lo > 0.0 && *hi > 0.0)
        .map(|(lo, hi)| (hi / lo).ln())
        .sum();
    2.0 / blocks.len() as f64 * s
}

pub fn uism(planes: &[Vec<f64>; 3], h: usize, w: usize) -> f64 {
    const WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
    planes
        .iter()
        .zip(WEIGHTS)
        .map(|(p, wt)| {
            let mag = sobel_magnitude(p, h, w);
            let peak = mag.iter().cloned().fold(0.0, f64::max);
            let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
            let edge: Vec<f64> = mag.iter().zip(p).map(|(m, v)| m * scale * v).collect();
            wt * eme(&edge, h, w, UIQM_BLOCK)
        })
        .sum()
}

/// `-1/(k1·k2) · Σ r·ln r` with `r = (max - min)/(max + min)` per block;
/// blocks with `r = 0` contribute nothing.
pub fn log_amee(src: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let blocks = block_extrema(src, h, w, block);
    if blocks.is_empty() {
        return 0.0;
    }
    let s: f64 = blocks
        .iter()
        .map(|(lo, hi)| {
            let den = hi + lo;
            let r = if den > 0.0 { (hi - lo) / den } else { 0.0 };
            if r > 0.0 {
                r * r.ln()
            } else {
                0.0
            }
        })
        .sum();
    -s / blocks.len() as f64
}
