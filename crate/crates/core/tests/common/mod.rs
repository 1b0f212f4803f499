#![allow(dead_code)]

pub mod grad_cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usln::{NodeId, Tape, Tensor};

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;
/// Errors below this pass every tolerance in use and skip the kink test.
pub const SUSPECT: f64 = 1e-4;
/// Relative change of the central difference under a tenfold smaller step
/// that marks a kink inside the step.
pub const KINK_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Graph builder: given a tape and one leaf per input tensor, returns the
/// output node.
pub type Build<'a> = dyn Fn(&mut Tape, &[NodeId]) -> NodeId + 'a;

fn project(tape: &mut Tape, y: NodeId, probe: &Tensor) -> NodeId {
    let p = tape.constant(probe.clone());
    let m = tape.mul(y, p).unwrap();
    tape.sum(m)
}

fn eval(build: &Build<'_>, inputs: &[Tensor], probe: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let y = build(&mut tape, &ids);
    let l = project(&mut tape, y, probe);
    tape.value(l).data()[0]
}

fn central(build: &Build<'_>, inputs: &[Tensor], probe: &Tensor, k: usize, j: usize, h: f64) -> f64 {
    let mut plus = inputs.to_vec();
    plus[k].data_mut()[j] += h;
    let mut minus = inputs.to_vec();
    minus[k].data_mut()[j] -= h;
    (eval(build, &plus, probe) - eval(build, &minus, probe)) / (2.0 * h)
}

/// Result of a finite-difference check.
#[derive(Clone, Copy, Debug)]
pub struct Check {
    /// Largest relative error over the elements that were compared.
    pub worst: f64,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub at: (usize, usize, f64, f64),
    pub compared: usize,
    /// Elements skipped because the step straddles a kink.
    pub kinks: usize,
}

/// Compares the analytic gradient of a random linear functional of the
/// output with central differences, over every element of every input.
/// An element that disagrees by more than [`SUSPECT`] and whose central
/// difference also moves by more than that when the step shrinks tenfold (a
/// tie or clamp boundary within one step) is counted and skipped.
pub fn grad_check(build: &Build<'_>, inputs: &[Tensor], seed: u64) -> Check {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = build(&mut tape, &ids);
    let mut r = rng(seed ^ 0xA5A5);
    let probe = uniform(&mut r, tape.value(y).dims(), -1.0, 1.0);
    let l = project(&mut tape, y, &probe);
    let grads = tape.backward(l).unwrap();
    let mut check = Check {
        worst: 0.0,
        at: (0, 0, 0.0, 0.0),
        compared: 0,
        kinks: 0,
    };
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).unwrap();
        for j in 0..inputs[k].len() {
            let numeric = central(build, inputs, &probe, k, j, FD_STEP);
            let e = rel_err(analytic.data()[j], numeric);
            if e > SUSPECT {
                let fine = central(build, inputs, &probe, k, j, FD_STEP / 10.0);
                if (numeric - fine).abs() > KINK_TOL * numeric.abs().max(fine.abs()).max(REL_FLOOR) {
                    check.kinks += 1;
                    continue;
                }
            }
            check.compared += 1;
            if e > check.worst {
                check.worst = e;
                check.at = (k, j, analytic.data()[j], numeric);
            }
        }
    }
    check
}

/// Random pixels in `[lo, hi]` satisfying `keep`, as a `[3, h, w]` tensor.
pub fn pixels(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64, keep: impl Fn([f64; 3]) -> bool) -> Tensor {
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        let px = loop {
            let c = [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ];
            if keep(c) {
                break c;
            }
        };
        for c in 0..3 {
            data[c * plane + p] = px[c];
        }
    }
    Tensor::chw(3, h, w, data).unwrap()
}

/// Away from the achromatic axis and from ties between the two smallest
/// channels, where saturation and hue have kinks.
pub fn chromatic(c: [f64; 3]) -> bool {
    let mut s = c;
    s.sort_by(f64::total_cmp);
    s[1] - s[0] > 0.01 && s[2] - s[0] > 0.05
}

/// Centered delta kernel `[3, 3, 3, 3]` with `scale` on the channel diagonal.
pub fn delta_kernel(scale: f64) -> Tensor {
    Tensor::from_fn(&[3, 3, 3, 3], |i| {
        let (co, ci, k) = (i / 27, (i / 9) % 3, i % 9);
        if co == ci && k == 4 {
            scale
        } else {
            0.0
        }
    })
}

pub mod classical {
    use usln::Tensor;

    fn per_channel(x: &Tensor, f: impl Fn(&[f64], f64) -> f64) -> Tensor {
        let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let mut out = Vec::with_capacity(x.len());
        for ch in 0..c {
            let plane = x.channel(ch);
            out.extend(plane.iter().map(|&v| f(plane, v)));
        }
        Tensor::chw(c, h, w, out).unwrap()
    }

    /// Each channel scaled so its mean becomes 0.5.
    pub fn gray_world(x: &Tensor) -> Tensor {
        per_channel(x, |p, v| {
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            v * 0.5 / mean
        })
    }

    /// Each channel divided by its maximum.
    pub fn white_patch(x: &Tensor) -> Tensor {
        per_channel(x, |p, v| v / p.iter().cloned().fold(f64::MIN, f64::max))
    }

    /// Each channel mapped linearly from `[min, max]` onto `[0, 1]`.
    pub fn global_stretch(x: &Tensor) -> Tensor {
        per_channel(x, |p, v| {
            let lo = p.iter().cloned().fold(f64::MAX, f64::min);
            let hi = p.iter().cloned().fold(f64::MIN, f64::max);
            (v - lo) / (hi - lo)
        })
    }
}

/// Windowed SSIM evaluated window by window with the full 2-D gaussian.
pub fn brute_force_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    const K: usize = 11;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut g = [[0.0; K]; K];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - K {
        for x0 in 0..=w - K {
            let at = |img: &[f64], i: usize, j: usize| img[(y0 + i) * w + x0 + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = g[i][j] / total;
                    mx += wt * at(x, i, j);
                    my += wt * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let wt = g[i][j] / total;
                    let (dx, dy) = (at(x, i, j) - mx, at(y, i, j) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// The 34 published CIEDE2000 verification pairs: `(lab1, lab2, ΔE00)`.
pub const CIEDE2000_PAIRS: [([f64; 3], [f64; 3], f64); 34] = [
    ([50.0, 2.6772, -79.7751], [50.0, 0.0, -82.7485], 2.0425),
    ([50.0, 3.1571, -77.2803], [50.0, 0.0, -82.7485], 2.8615),
    ([50.0, 2.8361, -74.0200], [50.0, 0.0, -82.7485], 3.4412),
    ([50.0, -1.3802, -84.2814], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, -1.1848, -84.8006], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, -0.9009, -85.5211], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, 0.0, 0.0], [50.0, -1.0, 2.0], 2.3669),
    ([50.0, -1.0, 2.0], [50.0, 0.0, 0.0], 2.3669),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0009], 7.1792),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0010], 7.1792),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0011], 7.2195),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0012], 7.2195),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0009, -2.4900], 4.8045),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0010, -2.4900], 4.8045),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0011, -2.4900], 4.7461),
    ([50.0, 2.5, 0.0], [50.0, 0.0, -2.5], 4.3065),
    ([50.0, 2.5, 0.0], [73.0, 25.0, -18.0], 27.1492),
    ([50.0, 2.5, 0.0], [61.0, -5.0, 29.0], 22.8977),
    ([50.0, 2.5, 0.0], [56.0, -27.0, -3.0], 31.9030),
    ([50.0, 2.5, 0.0], [58.0, 24.0, 15.0], 19.4535),
    ([50.0, 2.5, 0.0], [50.0, 3.1736, 0.5854], 1.0000),
    ([50.0, 2.5, 0.0], [50.0, 3.2972, 0.0], 1.0000),
    ([50.0, 2.5, 0.0], [50.0, 1.8634, 0.5757], 1.0000),
    ([50.0, 2.5, 0.0], [50.0, 3.2592, 0.3350], 1.0000),
    ([60.2574, -34.0099, 36.2677], [60.4626, -34.1751, 39.4387], 1.2644),
    ([63.0109, -31.0961, -5.8663], [62.8187, -29.7946, -4.0864], 1.2630),
    ([61.2901, 3.7196, -5.3901], [61.4292, 2.2480, -4.9620], 1.8731),
    ([35.0831, -44.1164, 3.7933], [35.0232, -40.0716, 1.5901], 1.8645),
    ([22.7233, 20.0904, -46.6940], [23.0331, 14.9730, -42.5619], 2.0373),
    ([36.4612, 47.8580, 18.3852], [36.2715, 50.5065, 21.2231], 1.4146),
    ([90.8027, -2.0831, 1.4410], [91.1528, -1.6435, 0.0447], 1.4441),
    ([90.9257, -0.5406, -0.9208], [88.6381, -0.8985, -0.7239], 1.5381),
    ([6.7747, -0.2908, -2.4247], [5.8714, -0.0985, -2.2286], 0.6377),
    ([2.0776, 0.0795, -1.1350], [0.9033, -0.0636, -0.5514], 0.9082),
];
