//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any required criterion fails.
//!
//! Criterion 8 needs the UIEB data: point `USLN_UIEB_MANIFEST` at a manifest
//! whose paired records carry the split tags `train` and `test`.

mod common;

use std::fmt::Write as _;
use std::time::Instant;

use common::grad_cases::{network_case, op_case, OP_CASES};
use common::{brute_force_ssim, chromatic, classical, delta_kernel, grad_check, pixels, rng, uniform, CIEDE2000_PAIRS};
use image::RgbImage;
use rand::Rng;
use usln::colorspace::{hsi_to_rgb_pixel, lab_to_rgb_pixel, rgb_to_hsi_pixel, rgb_to_lab_pixel};
use usln::data::synthetic::{degraded_pairs, Degradation};
use usln::data::{read_manifest, tensor_to_rgb8, PairDataset};
use usln::metrics::{ciede2000, luminance, mse_psnr, ssim_metric};
use usln::model::{dsbm_forward, mcsm_forward, touched_parameter_count, usln_forward, GraphParams};
use usln::train::{fit, train_epoch, AdamState, TrainConfig};
use usln::{Architecture, Tape, Tensor, WeightSet};

struct Outcome {
    pass: bool,
    summary: String,
    /// Full-precision record used for the determinism comparison.
    report: String,
}

fn outcome(pass: bool, summary: String, report: String) -> Outcome {
    Outcome { pass, summary, report }
}

fn criterion_1() -> Outcome {
    let w = WeightSet::init(0, 0.0);
    let g = w.group_counts();
    let touched = touched_parameter_count(&w, &Tensor::full(&[3, 16, 16], 0.5)).unwrap();
    let pass = (g.dsbm, g.mcsm, g.rem, g.total, touched) == (192, 282, 420, 894, 894);
    let s = format!(
        "dsbm={} mcsm={} rem={} total={} touched={}",
        g.dsbm, g.mcsm, g.rem, g.total, touched
    );
    outcome(pass, s.clone(), s)
}

const CLASSICAL_TOL: f64 = 1e-5;

fn criterion_2() -> Outcome {
    let mut r = rng(2);
    let mut worst = [0.0f64; 4];
    let gw_only = Architecture {
        white_patch: false,
        ..Architecture::default()
    };
    let wp_only = Architecture {
        gray_world: false,
        ..Architecture::default()
    };
    let rgb_only = Architecture {
        hsi_stretch: false,
        lab_stretch: false,
        ..Architecture::default()
    };
    let mut w = WeightSet::init(0, 0.0);
    *w.get_mut("dsbm.gw.merge3x3.weight").unwrap() = delta_kernel(1.0);
    *w.get_mut("dsbm.wp.merge3x3.weight").unwrap() = delta_kernel(1.0);
    *w.get_mut("mcsm.rgb.merge3x3.weight").unwrap() = delta_kernel(1.0);
    let init = WeightSet::init(0, 0.0);
    for _ in 0..20 {
        let x = uniform(&mut r, &[3, 32, 32], 0.02, 0.98);
        let run = |weights: &WeightSet, f: &dyn Fn(&mut Tape, usln::NodeId, &GraphParams) -> usln::NodeId| {
            let mut tape = Tape::new();
            let p = GraphParams::register(&mut tape, weights, false);
            let xi = tape.constant(x.clone());
            let y = f(&mut tape, xi, &p);
            tape.value(y).clone()
        };
        let gw = run(&w, &|t, xi, p| dsbm_forward(t, xi, p, &gw_only).unwrap());
        let wp = run(&w, &|t, xi, p| dsbm_forward(t, xi, p, &wp_only).unwrap());
        let st = run(&w, &|t, xi, p| mcsm_forward(t, xi, p, &rgb_only).unwrap());
        let both = run(&init, &|t, xi, p| {
            dsbm_forward(t, xi, p, &Architecture::default()).unwrap()
        });
        let gw_o = classical::gray_world(&x);
        let wp_o = classical::white_patch(&x);
        let avg = Tensor::from_fn(x.dims(), |i| 0.5 * (gw_o.data()[i] + wp_o.data()[i]));
        for (k, d) in [
            gw.max_abs_diff(&gw_o),
            wp.max_abs_diff(&wp_o),
            st.max_abs_diff(&classical::global_stretch(&x)),
            both.max_abs_diff(&avg),
        ]
        .into_iter()
        .enumerate()
        {
            worst[k] = worst[k].max(d);
        }
    }
    let pass = worst.iter().all(|&d| d < CLASSICAL_TOL);
    outcome(
        pass,
        format!(
            "max abs diff: gray-world {:.2e}, white-patch {:.2e}, stretch {:.2e}, dual-statistic init {:.2e} (tol {:.0e})",
            worst[0], worst[1], worst[2], worst[3], CLASSICAL_TOL
        ),
        format!("{worst:?}"),
    )
}

const OP_TOL: f64 = 1e-4;
const NETWORK_TOL: f64 = 1e-3;
/// A case with more of its elements at a tie or clamp boundary is degenerate
/// and replaced by a fresh draw.
const MAX_KINK_SHARE: f64 = 0.05;
const MAX_REDRAWN: usize = 10;

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut op_worst = (0.0f64, "");
    let mut net_worst = 0.0f64;
    let (mut kinks, mut redrawn) = (0usize, 0usize);
    let mut report = String::new();
    // 90 op-level cases cycle through every op; 10 end-to-end cases.
    let mut i = 0;
    while i < 100 {
        let (c, op) = if i < 90 {
            (op_case(i % OP_CASES, &mut r), true)
        } else {
            (network_case(&mut r, if i < 92 { 16 } else { 8 }), false)
        };
        let check = grad_check(&*c.build, &c.inputs, r.random());
        write!(report, "{}:{:e}/{};", c.name, check.worst, check.kinks).unwrap();
        if check.kinks as f64 > MAX_KINK_SHARE * (check.compared + check.kinks) as f64 {
            redrawn += 1;
            continue;
        }
        kinks += check.kinks;
        if op && check.worst > op_worst.0 {
            op_worst = (check.worst, c.name);
        } else if !op {
            net_worst = net_worst.max(check.worst);
        }
        i += 1;
    }
    let pass = op_worst.0 < OP_TOL && net_worst < NETWORK_TOL && redrawn <= MAX_REDRAWN;
    outcome(
        pass,
        format!(
            "100 cases; worst op rel err {:.2e} ({}, tol {:.0e}); worst end-to-end {:.2e} (tol {:.0e}); {} elements at kinks skipped, {} degenerate draws replaced",
            op_worst.0, op_worst.1, OP_TOL, net_worst, NETWORK_TOL, kinks, redrawn
        ),
        report,
    )
}

const ROUND_TRIP_TOL: f64 = 1e-4;
const ANCHOR_TOL: f64 = 1e-5;

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut hsi_err = 0.0f64;
    let mut lab_err = 0.0f64;
    let x = pixels(&mut r, 1, 1000, 0.0, 1.0, chromatic);
    for p in 0..1000 {
        let c = [x.data()[p], x.data()[1000 + p], x.data()[2000 + p]];
        let back = hsi_to_rgb_pixel(rgb_to_hsi_pixel(c).0).0;
        let back_lab = lab_to_rgb_pixel(rgb_to_lab_pixel(c).0).0;
        for k in 0..3 {
            hsi_err = hsi_err.max((back[k] - c[k]).abs());
            lab_err = lab_err.max((back_lab[k] - c[k]).abs());
        }
    }
    let close = |a: [f64; 3], b: [f64; 3], tol: f64| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol);
    let third = 1.0 / 3.0;
    let anchors = [
        (
            "red",
            close(rgb_to_hsi_pixel([1.0, 0.0, 0.0]).0, [0.0, 1.0, third], ANCHOR_TOL),
        ),
        (
            "gray",
            close(rgb_to_hsi_pixel([0.5, 0.5, 0.5]).0, [0.0, 0.0, 0.5], ANCHOR_TOL),
        ),
        (
            "blue",
            close(rgb_to_hsi_pixel([0.0, 0.0, 1.0]).0, [2.0 / 3.0, 1.0, third], ANCHOR_TOL),
        ),
        (
            "hsi-red",
            close(hsi_to_rgb_pixel([0.0, 1.0, third]).0, [1.0, 0.0, 0.0], ANCHOR_TOL),
        ),
        (
            "hsi-achromatic",
            close(hsi_to_rgb_pixel([0.37, 0.0, 0.6]).0, [0.6, 0.6, 0.6], ANCHOR_TOL),
        ),
        (
            "lab-white",
            close(rgb_to_lab_pixel([1.0, 1.0, 1.0]).0, [1.0, 0.0, 0.0], 1e-3),
        ),
        (
            "lab-black",
            close(rgb_to_lab_pixel([0.0, 0.0, 0.0]).0, [0.0, 0.0, 0.0], 1e-3),
        ),
        (
            "lab-inverse-white",
            close(lab_to_rgb_pixel([1.0, 0.0, 0.0]).0, [1.0, 1.0, 1.0], 1e-3),
        ),
    ];
    let failed: Vec<&str> = anchors.iter().filter(|a| !a.1).map(|a| a.0).collect();
    let pass = hsi_err < ROUND_TRIP_TOL && lab_err < ROUND_TRIP_TOL && failed.is_empty();
    outcome(
        pass,
        format!(
            "1000 pixels: HSI round trip {:.2e}, Lab round trip {:.2e} (tol {:.0e}); anchors {}/{}{}",
            hsi_err,
            lab_err,
            ROUND_TRIP_TOL,
            anchors.len() - failed.len(),
            anchors.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" failed: {failed:?}")
            }
        ),
        format!("{hsi_err:e} {lab_err:e} {failed:?}"),
    )
}

fn criterion_5() -> Outcome {
    let mut worst = (0.0f64, 0);
    let mut report = String::new();
    for (i, (a, b, expected)) in CIEDE2000_PAIRS.iter().enumerate() {
        let d = ciede2000(*a, *b);
        write!(report, "{d:?};").unwrap();
        let e = (d - expected).abs().max((ciede2000(*b, *a) - expected).abs());
        if e > worst.0 {
            worst = (e, i + 1);
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!(
            "34 pairs, worst |ΔE - published| = {:.2e} (pair {}, tol 1e-4)",
            worst.0, worst.1
        ),
        report,
    )
}

fn random_rgb8(r: &mut rand_chacha::ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([r.random(), r.random(), r.random()]))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    let mut report = String::new();
    for _ in 0..20 {
        let a = random_rgb8(&mut r, 32, 32);
        // A correlated partner so SSIM is far from zero.
        let b = RgbImage::from_fn(32, 32, |x, y| {
            let p = a.get_pixel(x, y).0;
            image::Rgb(p.map(|v| v.saturating_add(r.random_range(0..40)).saturating_sub(20)))
        });
        let fast = ssim_metric(&a, &b).unwrap();
        let brute = brute_force_ssim(&luminance(&a), &luminance(&b), 32, 32);
        write!(report, "{fast:?};").unwrap();
        worst = worst.max((fast - brute).abs());
    }
    outcome(
        worst < 1e-6,
        format!("20 images 32x32, max |fast - brute force| = {worst:.2e} (tol 1e-6)"),
        report,
    )
}

/// Overfit benchmark settings; see the README for why the schedule differs
/// from the training defaults.
pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs: 300,
        batch_size: 1,
        lr0: 0.003,
        lr_decay_per_epoch: 0.02,
        seed: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

fn mean_psnr(weights: &WeightSet, pairs: &[(Tensor, Tensor)]) -> f64 {
    let arch = Architecture::default();
    pairs
        .iter()
        .map(|(x, y)| {
            let out = usln_forward(x, weights, &arch, false).unwrap().clamped();
            mse_psnr(&tensor_to_rgb8(&out).unwrap(), &tensor_to_rgb8(y).unwrap())
                .unwrap()
                .1
        })
        .sum::<f64>()
        / pairs.len() as f64
}

fn criterion_7() -> Outcome {
    let pairs = degraded_pairs(8, 32, 32, 7, &Degradation::default());
    let data = PairDataset::from_tensors(pairs.clone()).unwrap();
    let cfg = overfit_config();
    let mut w = WeightSet::init(cfg.seed, cfg.init_jitter);
    let mut state = AdamState::new(&w);
    let before = mean_psnr(&w, &pairs);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        match train_epoch(&mut w, &mut state, &data, &cfg, e, None) {
            Ok(s) => losses.push(s.loss.total),
            Err(err) => {
                return outcome(
                    false,
                    format!("training aborted at epoch {}: {err}", e + 1),
                    err.to_string(),
                )
            }
        }
    }
    let psnr = mean_psnr(&w, &pairs);
    let ratio = losses[losses.len() - 1] / losses[0];
    let finite = w.all_finite();
    let pass = psnr >= 30.0 && ratio < 0.1 && finite;
    outcome(
        pass,
        format!(
            "8 pairs 32x32, 300 epochs: train PSNR {:.2} dB (from {:.2}, need >= 30), loss epoch 300 / epoch 1 = {:.4} (need < 0.1), weights finite: {}",
            psnr, before, ratio, finite
        ),
        format!("{psnr:?} {losses:?} {:?}", w.to_bytes()),
    )
}

fn criterion_8() -> Option<Outcome> {
    let path = std::env::var_os("USLN_UIEB_MANIFEST")?;
    let started = Instant::now();
    let run = || -> usln::Result<(f64, f64)> {
        let manifest = read_manifest(&path)?;
        let train = PairDataset::from_manifest(&manifest, Some("train"), None, Some(256))?;
        let test = PairDataset::from_manifest(&manifest, Some("test"), None, Some(256))?;
        let out = tempfile::tempdir().map_err(|e| usln::Error::Data(e.to_string()))?;
        let fitted = fit(&TrainConfig::default(), &train, out.path(), None, None)?;
        let arch = Architecture::default();
        let (mut psnr, mut ssim) = (0.0, 0.0);
        for s in &test.samples {
            let pred = tensor_to_rgb8(&usln_forward(&s.input.tensor(), &fitted.weights, &arch, false)?.clamped())?;
            let reference = tensor_to_rgb8(&s.target.tensor())?;
            psnr += mse_psnr(&pred, &reference)?.1;
            ssim += ssim_metric(&pred, &reference)?;
        }
        let n = test.len().max(1) as f64;
        Ok((psnr / n, ssim / n))
    };
    Some(match run() {
        Ok((psnr, ssim)) => {
            let hours = started.elapsed().as_secs_f64() / 3600.0;
            let pass = (psnr - 23.78).abs() <= 1.5 && ssim >= 0.88 && hours <= 2.0;
            outcome(
                pass,
                format!("Test-90 PSNR {psnr:.2} dB (23.78 ± 1.5), SSIM {ssim:.4} (>= 0.88), {hours:.2} h (<= 2)"),
                String::new(),
            )
        }
        Err(e) => outcome(false, format!("could not run: {e}"), String::new()),
    })
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const DETERMINISTIC: [Criterion; 6] = [
    (2, "classical equivalence", criterion_2),
    (3, "gradient suite", criterion_3),
    (4, "colorspace suite", criterion_4),
    (5, "CIEDE2000", criterion_5),
    (6, "SSIM metric", criterion_6),
    (7, "overfit benchmark", criterion_7),
];

fn print(n: usize, name: &str, o: &Outcome, secs: f64) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{verdict}] {name}: {} ({secs:.1} s)", o.summary);
}

fn main() {
    // libtest arguments such as --nocapture are accepted and ignored.
    let mut ok = true;
    let t = Instant::now();
    let c1 = criterion_1();
    print(1, "parameter accounting", &c1, t.elapsed().as_secs_f64());
    ok &= c1.pass;

    let mut first = Vec::new();
    for (n, name, f) in DETERMINISTIC {
        let t = Instant::now();
        let o = f();
        print(n, name, &o, t.elapsed().as_secs_f64());
        ok &= o.pass;
        first.push(o.report);
        if n == 7 {
            let t = Instant::now();
            match criterion_8() {
                Some(o8) => {
                    print(8, "UIEB reproduction", &o8, t.elapsed().as_secs_f64());
                    ok &= o8.pass;
                }
                None => println!("criterion 8 [SKIP] UIEB reproduction: USLN_UIEB_MANIFEST not set"),
            }
        }
    }

    let t = Instant::now();
    let differing: Vec<usize> = DETERMINISTIC
        .iter()
        .zip(&first)
        .filter(|((_, _, f), report)| f().report != **report)
        .map(|((n, _, _), _)| *n)
        .collect();
    let o9 = outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "second run of criteria 2-7 reproduced every report exactly".into()
        } else {
            format!("reports differ for criteria {differing:?}")
        },
        String::new(),
    );
    print(9, "determinism", &o9, t.elapsed().as_secs_f64());
    ok &= o9.pass;

    if !ok {
        std::process::exit(1);
    }
}
