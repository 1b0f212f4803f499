//! Randomized finite-difference cases, one builder per differentiable op.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use usln::colorspace::{
    hsi_to_rgb_node, lab_to_rgb_node, rgb_to_hsi_node, rgb_to_hsi_pixel, rgb_to_lab_node, ColorImage, ColorSpace,
};
use usln::losses::{combined_loss, mae_loss, perceptual_loss, ssim_loss, LinearExtractor, LossConfig};
use usln::model::{dsbm_forward, mcsm_forward, rem_forward, usln_graph, GraphParams, WeightSet};
use usln::{Architecture, NodeId, StatKind, Tape, Tensor};

use super::{chromatic, pixels, uniform};

pub struct Case {
    pub name: &'static str,
    pub build: Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>,
    pub inputs: Vec<Tensor>,
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[NodeId]) -> NodeId + 'static) -> Case {
    Case {
        name,
        build: Box::new(build),
        inputs,
    }
}

/// Values bounded away from zero in magnitude.
fn signed_away(rng: &mut ChaCha8Rng, dims: &[usize], min_abs: f64) -> Tensor {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(min_abs..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn with_params(inputs: &mut Vec<Tensor>, weights: &WeightSet) {
    inputs.extend(weights.params().iter().map(|p| p.tensor.clone()));
}

fn params(ids: &[NodeId]) -> GraphParams {
    GraphParams::from_nodes(ids.to_vec()).unwrap()
}

pub const OP_CASES: usize = 29;

/// Op-level case `kind` (mod [`OP_CASES`]) drawn from `rng`.
pub fn op_case(kind: usize, rng: &mut ChaCha8Rng) -> Case {
    match kind % OP_CASES {
        0 => case(
            "pointwise_conv3",
            vec![
                uniform(rng, &[3, 5, 4], -1.0, 1.0),
                uniform(rng, &[3, 3], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
            ],
            |t, i| t.pointwise_conv(i[0], i[1], i[2]).unwrap(),
        ),
        1 => case(
            "pointwise_conv2",
            vec![
                uniform(rng, &[2, 4, 6], -1.0, 1.0),
                uniform(rng, &[2, 2], -1.0, 1.0),
                uniform(rng, &[2], -1.0, 1.0),
            ],
            |t, i| t.pointwise_conv(i[0], i[1], i[2]).unwrap(),
        ),
        2 => case(
            "conv3x3",
            vec![
                uniform(rng, &[3, 6, 5], -1.0, 1.0),
                uniform(rng, &[3, 3, 3, 3], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
            ],
            |t, i| t.conv3x3(i[0], i[1], i[2]).unwrap(),
        ),
        3 => case("global_average", vec![uniform(rng, &[3, 4, 5], 0.0, 1.0)], |t, i| {
            t.global_stat(i[0], StatKind::Average).unwrap()
        }),
        4 => case("global_max", vec![uniform(rng, &[3, 4, 5], 0.0, 1.0)], |t, i| {
            t.global_stat(i[0], StatKind::Maximum).unwrap()
        }),
        5 => case("global_min", vec![uniform(rng, &[3, 4, 5], 0.0, 1.0)], |t, i| {
            t.global_stat(i[0], StatKind::Minimum).unwrap()
        }),
        6 => case(
            "add_broadcast",
            vec![uniform(rng, &[3, 3, 4], -1.0, 1.0), uniform(rng, &[3], -1.0, 1.0)],
            |t, i| t.add(i[0], i[1]).unwrap(),
        ),
        7 => case(
            "sub",
            vec![uniform(rng, &[3, 3, 4], -1.0, 1.0), uniform(rng, &[3, 3, 4], -1.0, 1.0)],
            |t, i| t.sub(i[0], i[1]).unwrap(),
        ),
        8 => case(
            "mul_broadcast",
            vec![uniform(rng, &[3, 3, 4], -1.0, 1.0), uniform(rng, &[3], -1.0, 1.0)],
            |t, i| t.mul(i[0], i[1]).unwrap(),
        ),
        9 => case(
            "div",
            vec![uniform(rng, &[2, 3, 4], -1.0, 1.0), uniform(rng, &[2, 3, 4], 0.5, 1.5)],
            |t, i| t.div(i[0], i[1]).unwrap(),
        ),
        10 => {
            let (s, o) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
            case("affine", vec![uniform(rng, &[3, 4, 4], -1.0, 1.0)], move |t, i| {
                t.affine(i[0], s, o)
            })
        }
        11 => case("reciprocal", vec![uniform(rng, &[3], 0.2, 1.0)], |t, i| {
            t.reciprocal(i[0], 1e-6)
        }),
        12 => case("tanh", vec![uniform(rng, &[3, 4, 4], -2.0, 2.0)], |t, i| t.tanh(i[0])),
        13 => case("abs", vec![signed_away(rng, &[3, 4, 4], 0.05)], |t, i| t.abs(i[0])),
        14 => {
            let x = Tensor::from_fn(&[3, 4, 4], |_| {
                let v: f64 = rng.random_range(-0.5..1.5);
                if v.abs() < 0.02 || (v - 1.0).abs() < 0.02 {
                    v + 0.05
                } else {
                    v
                }
            });
            case("clamp", vec![x], |t, i| t.clamp(i[0], 0.0, 1.0))
        }
        15 => case("mean", vec![uniform(rng, &[3, 4, 5], -1.0, 1.0)], |t, i| t.mean(i[0])),
        16 => case("stretch", vec![uniform(rng, &[3, 5, 5], 0.0, 1.0)], |t, i| {
            let lo = t.global_stat(i[0], StatKind::Minimum).unwrap();
            let hi = t.global_stat(i[0], StatKind::Maximum).unwrap();
            t.stretch(i[0], lo, hi).unwrap()
        }),
        17 => case("slice_concat", vec![uniform(rng, &[3, 3, 4], -1.0, 1.0)], |t, i| {
            let a = t.slice_channels(i[0], 1, 2).unwrap();
            let b = t.slice_channels(i[0], 0, 1).unwrap();
            t.concat_channels(&[a, b]).unwrap()
        }),
        18 => case("rgb_to_hsi", vec![pixels(rng, 4, 4, 0.05, 0.95, chromatic)], |t, i| {
            rgb_to_hsi_node(t, i[0]).unwrap()
        }),
        19 => {
            let hsi = pixels(rng, 4, 4, 0.05, 0.95, |c| {
                let h = rgb_to_hsi_pixel(c).0[0] * 3.0;
                chromatic(c) && (h - h.round()).abs() > 0.01
            });
            let hsi = ColorImage::new(ColorSpace::Rgb, hsi)
                .unwrap()
                .rgb_to_hsi()
                .unwrap()
                .tensor;
            case("hsi_to_rgb", vec![hsi], |t, i| hsi_to_rgb_node(t, i[0]).unwrap())
        }
        20 => case("rgb_to_lab", vec![uniform(rng, &[3, 4, 4], 0.05, 0.95)], |t, i| {
            rgb_to_lab_node(t, i[0]).unwrap()
        }),
        21 => {
            let rgb = uniform(rng, &[3, 4, 4], 0.05, 0.95);
            let lab = ColorImage::new(ColorSpace::Rgb, rgb)
                .unwrap()
                .rgb_to_lab()
                .unwrap()
                .tensor;
            case("lab_to_rgb", vec![lab], |t, i| lab_to_rgb_node(t, i[0]).unwrap())
        }
        22 => {
            let p = uniform(rng, &[3, 5, 5], 0.0, 1.0);
            let d = signed_away(rng, &[3, 5, 5], 0.02);
            let t = Tensor::from_fn(&[3, 5, 5], |k| p.data()[k] + 0.2 * d.data()[k]);
            case("mae_loss", vec![p, t], |t, i| mae_loss(t, i[0], i[1]).unwrap())
        }
        23 => case(
            "ssim_loss",
            vec![uniform(rng, &[3, 5, 5], 0.0, 1.0), uniform(rng, &[3, 5, 5], 0.0, 1.0)],
            |t, i| ssim_loss(t, i[0], i[1], &LossConfig::default()).unwrap(),
        ),
        24 => case(
            "rem",
            vec![
                uniform(rng, &[3, 5, 5], 0.0, 1.0),
                uniform(rng, &[3, 3, 3, 3], -0.3, 0.3),
                uniform(rng, &[3], -0.3, 0.3),
            ],
            |t, i| rem_forward(t, i[0], (i[1], i[2])).unwrap(),
        ),
        25 => {
            let fx = LinearExtractor::new(uniform(rng, &[3, 3], -1.0, 1.0), uniform(rng, &[3], -0.5, 0.5)).unwrap();
            case(
                "perceptual_loss",
                vec![uniform(rng, &[3, 4, 4], 0.0, 1.0), uniform(rng, &[3, 4, 4], 0.0, 1.0)],
                move |t, i| perceptual_loss(t, i[0], i[1], &fx).unwrap(),
            )
        }
        26 => {
            let p = uniform(rng, &[3, 5, 5], 0.0, 1.0);
            let d = signed_away(rng, &[3, 5, 5], 0.02);
            let t = Tensor::from_fn(&[3, 5, 5], |k| p.data()[k] + 0.2 * d.data()[k]);
            case("combined_loss", vec![p, t], |t, i| {
                combined_loss(t, i[0], i[1], &LossConfig::default(), None)
                    .unwrap()
                    .total
            })
        }
        27 => {
            let w = WeightSet::init(rng.random(), 0.01);
            let mut inputs = vec![uniform(rng, &[3, 5, 5], 0.1, 0.9)];
            with_params(&mut inputs, &w);
            case("dsbm", inputs, |t, i| {
                dsbm_forward(t, i[0], &params(&i[1..]), &Architecture::default()).unwrap()
            })
        }
        _ => {
            let w = WeightSet::init(rng.random(), 0.01);
            let mut inputs = vec![pixels(rng, 5, 5, 0.1, 0.9, chromatic)];
            with_params(&mut inputs, &w);
            case("mcsm", inputs, |t, i| {
                mcsm_forward(t, i[0], &params(&i[1..]), &Architecture::default()).unwrap()
            })
        }
    }
}

/// Whole network on a `3×side×side` input, every parameter differentiated.
pub fn network_case(rng: &mut ChaCha8Rng, side: usize) -> Case {
    let w = WeightSet::init(rng.random(), 0.01);
    let mut inputs = vec![pixels(rng, side, side, 0.1, 0.9, chromatic)];
    with_params(&mut inputs, &w);
    case("usln", inputs, |t, i| {
        usln_graph(t, i[0], &params(&i[1..]), &Architecture::default()).unwrap()
    })
}
