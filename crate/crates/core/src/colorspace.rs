//! Differentiable RGB ↔ HSI and RGB ↔ CIE Lab conversions.
//!
//! Ranges used throughout:
//! * RGB in `[0, 1]`.
//! * HSI: hue as a fraction of a full turn in `[0, 1)`, saturation and
//!   intensity in `[0, 1]`.
//! * Lab normalized as `(L/100, a/110, b/110)`.
//!
//! Every pixel conversion returns its value together with the 3x3 jacobian
//! (row-major, `∂out_i/∂in_j`), which the tape ops record for backward.

use std::f64::consts::PI;
use std::sync::LazyLock;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-6;

type Jac = [f64; 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Hsi,
    Lab,
}

/// A `[3, H, W]` tensor tagged with its color space.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub space: ColorSpace,
    pub tensor: Tensor,
}

impl ColorImage {
    pub fn new(space: ColorSpace, tensor: Tensor) -> Result<Self> {
        let (c, _, _) = tensor.shape3()?;
        if c != 3 {
            return Err(Error::shape(format!("color image with {} channels", c)));
        }
        Ok(ColorImage { space, tensor })
    }

    fn convert(&self, from: ColorSpace, to: ColorSpace, f: fn([f64; 3]) -> ([f64; 3], Jac)) -> Result<Self> {
        if self.space != from {
            return Err(Error::shape(format!("expected {:?} image, got {:?}", from, self.space)));
        }
        let (t, _) = map_pixels(&self.tensor, f);
        Ok(ColorImage { space: to, tensor: t })
    }

    pub fn rgb_to_hsi(&self) -> Result<Self> {
        self.convert(ColorSpace::Rgb, ColorSpace::Hsi, rgb_to_hsi_pixel)
    }

    pub fn hsi_to_rgb(&self) -> Result<Self> {
        self.convert(ColorSpace::Hsi, ColorSpace::Rgb, hsi_to_rgb_pixel)
    }

    pub fn rgb_to_lab(&self) -> Result<Self> {
        self.convert(ColorSpace::Rgb, ColorSpace::Lab, rgb_to_lab_pixel)
    }

    pub fn lab_to_rgb(&self) -> Result<Self> {
        self.convert(ColorSpace::Lab, ColorSpace::Rgb, lab_to_rgb_pixel)
    }
}

fn map_pixels(t: &Tensor, f: impl Fn([f64; 3]) -> ([f64; 3], Jac)) -> (Tensor, Vec<Jac>) {
    let plane = t.dims()[1] * t.dims()[2];
    let d = t.data();
    let mut out = vec![0.0; 3 * plane];
    let mut jac = Vec::with_capacity(plane);
    for p in 0..plane {
        let (v, j) = f([d[p], d[plane + p], d[2 * plane + p]]);
        out[p] = v[0];
        out[plane + p] = v[1];
        out[2 * plane + p] = v[2];
        jac.push(j);
    }
    (Tensor::new(t.dims().to_vec(), out).unwrap(), jac)
}

fn record(tape: &mut Tape, x: NodeId, f: fn([f64; 3]) -> ([f64; 3], Jac)) -> Result<NodeId> {
    let (c, _, _) = tape.value(x).shape3()?;
    if c != 3 {
        return Err(Error::shape(format!("color conversion of {} channels", c)));
    }
    let (value, jac) = map_pixels(tape.value(x), f);
    Ok(tape.pixel_map(x, value, jac))
}

pub fn rgb_to_hsi_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    record(tape, x, rgb_to_hsi_pixel)
}

pub fn hsi_to_rgb_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    record(tape, x, hsi_to_rgb_pixel)
}

pub fn rgb_to_lab_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    record(tape, x, rgb_to_lab_pixel)
}

pub fn lab_to_rgb_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    record(tape, x, lab_to_rgb_pixel)
}

/// Clamp with in-range pass-through: returns the clamped value and its derivative.
fn clamp_d(v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if v < lo {
        (lo, 0.0)
    } else if v > hi {
        (hi, 0.0)
    } else {
        (v, 1.0)
    }
}

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// RGB → HSI. Inputs are clamped to `[EPS, 1]`. Hue is the angle of the
/// chromaticity vector, which is the arccos formulation evaluated through
/// `atan2`; achromatic pixels get hue 0 with zero hue gradient.
pub fn rgb_to_hsi_pixel(rgb: [f64; 3]) -> ([f64; 3], Jac) {
    let mut c = [0.0; 3];
    let mut mask = [0.0; 3];
    for k in 0..3 {
        (c[k], mask[k]) = clamp_d(rgb[k], EPS, 1.0);
    }
    let [r, g, b] = c;
    let mut j = [0.0; 9];

    let intensity = (r + g + b) / 3.0;
    j[6..9].fill(1.0 / 3.0);

    let sum = r + g + b + EPS;
    let mut argmin = 0;
    for k in 1..3 {
        if c[k] < c[argmin] {
            argmin = k;
        }
    }
    let mn = c[argmin];
    let sat = 1.0 - 3.0 * mn / sum;
    for k in 0..3 {
        j[3 + k] = 3.0 * mn / (sum * sum);
    }
    j[3 + argmin] -= 3.0 / sum;

    let x = r - 0.5 * (g + b);
    let y = SQRT3_2 * (g - b);
    let r2 = x * x + y * y;
    let hue = if r2.sqrt() < EPS {
        0.0
    } else {
        let mut theta = y.atan2(x);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        let dx = [1.0, -0.5, -0.5];
        let dy = [0.0, SQRT3_2, -SQRT3_2];
        for k in 0..3 {
            j[k] = (x * dy[k] - y * dx[k]) / (r2 * 2.0 * PI);
        }
        let h = theta / (2.0 * PI);
        if h >= 1.0 {
            0.0
        } else {
            h
        }
    };
    for row in 0..3 {
        for k in 0..3 {
            j[row * 3 + k] *= mask[k];
        }
    }
    ([hue, sat, intensity], j)
}

/// HSI → RGB, three-sector inverse. Sector membership is constant for the
/// jacobian.
pub fn hsi_to_rgb_pixel(hsi: [f64; 3]) -> ([f64; 3], Jac) {
    let [h, s, i] = hsi;
    let h = h.rem_euclid(1.0);
    let sector = ((h * 3.0) as usize).min(2);
    let theta = 2.0 * PI * h - sector as f64 * 2.0 * PI / 3.0;
    let cden = (PI / 3.0 - theta).cos();
    let k = theta.cos() / cden;
    let dk = -SQRT3_2 / (cden * cden) * 2.0 * PI;

    let lo = i * (1.0 - s);
    let hi = i * (1.0 + s * k);
    let mid = 3.0 * i - lo - hi;
    // rows over (h, s, i)
    let d_lo = [0.0, -i, 1.0 - s];
    let d_hi = [i * s * dk, i * k, 1.0 + s * k];
    let d_mid = [-d_hi[0], -d_lo[1] - d_hi[1], 3.0 - d_lo[2] - d_hi[2]];

    let (vals, rows) = match sector {
        0 => ([hi, mid, lo], [d_hi, d_mid, d_lo]),
        1 => ([lo, hi, mid], [d_lo, d_hi, d_mid]),
        _ => ([mid, lo, hi], [d_mid, d_lo, d_hi]),
    };
    let mut j = [0.0; 9];
    for r in 0..3 {
        j[r * 3..r * 3 + 3].copy_from_slice(&rows[r]);
    }
    (vals, j)
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

static XYZ_TO_SRGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&SRGB_TO_XYZ));

/// D65 white as the image of RGB (1, 1, 1), so white maps to a = b = 0 exactly.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let m = &SRGB_TO_XYZ;
    [m[0].iter().sum(), m[1].iter().sum(), m[2].iter().sum()]
});

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(v: f64) -> (f64, f64) {
    if v <= 0.04045 {
        (v / 12.92, 1.0 / 12.92)
    } else {
        let base = (v + 0.055) / 1.055;
        (base.powf(2.4), 2.4 / 1.055 * base.powf(1.4))
    }
}

fn linear_to_srgb(l: f64) -> (f64, f64) {
    if l <= 0.003_130_8 {
        (12.92 * l, 12.92)
    } else {
        let p = l.powf(1.0 / 2.4);
        (1.055 * p - 0.055, 1.055 / 2.4 * p / l)
    }
}

fn lab_f(t: f64) -> (f64, f64) {
    if t > DELTA * DELTA * DELTA {
        let c = t.cbrt();
        (c, 1.0 / (3.0 * c * c))
    } else {
        let s = 1.0 / (3.0 * DELTA * DELTA);
        (t * s + 4.0 / 29.0, s)
    }
}

fn lab_f_inv(f: f64) -> (f64, f64) {
    if f > DELTA {
        (f * f * f, 3.0 * f * f)
    } else {
        let s = 3.0 * DELTA * DELTA;
        (s * (f - 4.0 / 29.0), s)
    }
}

const LAB_L_SCALE: f64 = 100.0;
const LAB_AB_SCALE: f64 = 110.0;

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn flatten(m: [[f64; 3]; 3]) -> Jac {
    let mut j = [0.0; 9];
    for r in 0..3 {
        j[r * 3..r * 3 + 3].copy_from_slice(&m[r]);
    }
    j
}

/// Unnormalized CIE Lab (D65) of an sRGB triple in `[0, 1]`, with jacobian.
pub fn srgb_to_lab(rgb: [f64; 3]) -> ([f64; 3], Jac) {
    let mut lin = [0.0; 3];
    let mut dlin = [0.0; 3];
    for k in 0..3 {
        let (c, m) = clamp_d(rgb[k], 0.0, 1.0);
        let (l, d) = srgb_to_linear(c);
        lin[k] = l;
        dlin[k] = d * m;
    }
    let white = *WHITE;
    let mut f = [0.0; 3];
    let mut df = [0.0; 3];
    for r in 0..3 {
        let xyz: f64 = (0..3).map(|k| SRGB_TO_XYZ[r][k] * lin[k]).sum();
        let (v, d) = lab_f(xyz / white[r]);
        f[r] = v;
        df[r] = d / white[r];
    }
    let lab = [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])];
    let d_lab_d_f = [[0.0, 116.0, 0.0], [500.0, -500.0, 0.0], [0.0, 200.0, -200.0]];
    let mut d_f_d_lin = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            d_f_d_lin[r][k] = df[r] * SRGB_TO_XYZ[r][k] * dlin[k];
        }
    }
    (lab, flatten(matmul3(&d_lab_d_f, &d_f_d_lin)))
}

/// Inverse of [`srgb_to_lab`]; out-of-gamut results are clamped to `[0, 1]`.
pub fn lab_to_srgb(lab: [f64; 3]) -> ([f64; 3], Jac) {
    let fy = (lab[0] + 16.0) / 116.0;
    let f = [fy + lab[1] / 500.0, fy, fy - lab[2] / 200.0];
    let d_f_d_lab = [
        [1.0 / 116.0, 1.0 / 500.0, 0.0],
        [1.0 / 116.0, 0.0, 0.0],
        [1.0 / 116.0, 0.0, -1.0 / 200.0],
    ];
    let white = *WHITE;
    let mut xyz = [0.0; 3];
    let mut dxyz = [0.0; 3];
    for r in 0..3 {
        let (t, d) = lab_f_inv(f[r]);
        xyz[r] = white[r] * t;
        dxyz[r] = white[r] * d;
    }
    let minv = &*XYZ_TO_SRGB;
    let mut out = [0.0; 3];
    let mut d_out_d_xyz = [[0.0; 3]; 3];
    for r in 0..3 {
        let lin: f64 = (0..3).map(|k| minv[r][k] * xyz[k]).sum();
        let (v, dv) = linear_to_srgb(lin);
        let (v, m) = clamp_d(v, 0.0, 1.0);
        out[r] = v;
        for k in 0..3 {
            d_out_d_xyz[r][k] = dv * m * minv[r][k] * dxyz[k];
        }
    }
    (out, flatten(matmul3(&d_out_d_xyz, &d_f_d_lab)))
}

/// RGB → normalized Lab `(L/100, a/110, b/110)`.
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> ([f64; 3], Jac) {
    let (lab, mut j) = srgb_to_lab(rgb);
    let scale = [LAB_L_SCALE, LAB_AB_SCALE, LAB_AB_SCALE];
    for r in 0..3 {
        for k in 0..3 {
            j[r * 3 + k] /= scale[r];
        }
    }
    ([lab[0] / scale[0], lab[1] / scale[1], lab[2] / scale[2]], j)
}

/// Normalized Lab → RGB, clamped to `[0, 1]`.
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> ([f64; 3], Jac) {
    let scale = [LAB_L_SCALE, LAB_AB_SCALE, LAB_AB_SCALE];
    let (rgb, mut j) = lab_to_srgb([lab[0] * scale[0], lab[1] * scale[1], lab[2] * scale[2]]);
    for r in 0..3 {
        for k in 0..3 {
            j[r * 3 + k] *= scale[k];
        }
    }
    (rgb, j)
}
