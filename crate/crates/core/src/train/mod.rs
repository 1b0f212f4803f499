//! Adam training over a paired dataset with seeded shuffling, checkpoints and
//! a tab-separated epoch log.

mod adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};

use crate::autodiff::Tape;
use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, FeatureExtractor, LossConfig, LossValues};
use crate::model::{usln_graph, Architecture, GraphParams, WeightSet};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.tsv";
pub const FINAL_WEIGHTS: &str = "weights.usln";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_per_epoch: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Standard deviation of the gaussian added to the initial weights.
    pub init_jitter: f64,
    /// Ablation variant, see [`Architecture::variant`].
    pub architecture: String,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 10,
            lr0: 0.01,
            lr_decay_per_epoch: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            init_jitter: 0.0,
            architecture: "full".into(),
            checkpoint_every: 10,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.lr_decay_per_epoch) {
            return bad("lr_decay_per_epoch must lie in [0, 1)");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam hyperparameters out of range");
        }
        if self.init_jitter.is_nan() || self.init_jitter < 0.0 {
            return bad("init_jitter must be non-negative");
        }
        self.arch()?;
        self.loss.validate()
    }

    pub fn arch(&self) -> Result<Architecture> {
        Architecture::variant(&self.architecture)
            .ok_or_else(|| Error::Config(format!("unknown architecture {:?}", self.architecture)))
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// `lr0 · (1 - decay)^epoch`, epochs counted from 0.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * (1.0 - self.lr_decay_per_epoch).powi(epoch as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossValues,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
            self.epoch, self.lr, self.loss.total, self.loss.mae, self.loss.ssim, self.loss.perceptual
        )
    }
}

/// Loss values and parameter gradients for a single pair.
pub fn example_gradients(
    weights: &WeightSet,
    input: &Tensor,
    target: &Tensor,
    arch: &Architecture,
    loss: &LossConfig,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<(LossValues, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params = GraphParams::register(&mut tape, weights, true);
    let x = tape.constant(input.clone());
    let t = tape.constant(target.clone());
    let y = usln_graph(&mut tape, x, &params, arch)?;
    let terms = combined_loss(&mut tape, y, t, loss, fx)?;
    let values = terms.values(&tape);
    if !values.total.is_finite() {
        return Err(Error::NonFinite { param: "loss".into() });
    }
    let mut grads = tape.backward(terms.total)?;
    let g = params
        .nodes()
        .iter()
        .map(|&n| grads.take(n).expect("trainable leaf"))
        .collect();
    Ok((values, g))
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One pass over `data` in a seeded random order. Per-example gradients are
/// computed in parallel and averaged in batch order.
pub fn train_epoch(
    weights: &mut WeightSet,
    state: &mut AdamState,
    data: &PairDataset,
    cfg: &TrainConfig,
    epoch: usize,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let arch = cfg.arch()?;
    let hyper = cfg.hyper();
    let lr = cfg.learning_rate(epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed, epoch)));

    let mut sum = LossValues::default();
    for batch in order.chunks(cfg.batch_size) {
        let current: &WeightSet = weights;
        let results = batch
            .par_iter()
            .map(|&i| {
                let s = &data.samples[i];
                example_gradients(current, &s.input.tensor(), &s.target.tensor(), &arch, &cfg.loss, fx)
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut mean: Vec<Tensor> = current
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.dims()))
            .collect();
        for (values, grads) in &results {
            sum.total += values.total;
            sum.mae += values.mae;
            sum.ssim += values.ssim;
            sum.perceptual += values.perceptual;
            for (acc, g) in mean.iter_mut().zip(grads) {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v * scale;
                }
            }
        }
        adam_step(weights, &mean, state, lr, &hyper)?;
    }
    let n = data.len() as f64;
    Ok(EpochStats {
        epoch: epoch + 1,
        lr,
        loss: LossValues {
            total: sum.total / n,
            mae: sum.mae / n,
            ssim: sum.ssim / n,
            perceptual: sum.perceptual / n,
        },
    })
}

/// Optimizer sidecar stored next to each checkpoint weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub adam: AdamState,
}

pub fn checkpoint_paths(out_dir: &Path, epoch: usize) -> (PathBuf, PathBuf) {
    let dir = out_dir.join(CHECKPOINT_DIR);
    (
        dir.join(format!("epoch_{epoch:04}.usln")),
        dir.join(format!("epoch_{epoch:04}.json")),
    )
}

pub fn save_checkpoint(out_dir: &Path, weights: &WeightSet, state: &CheckpointState) -> Result<PathBuf> {
    let (wpath, spath) = checkpoint_paths(out_dir, state.epoch);
    let dir = wpath.parent().expect("checkpoint dir");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    weights.save(&wpath)?;
    let json = serde_json::to_string(state).expect("serializable state");
    std::fs::write(&spath, json).map_err(|e| Error::io(&spath, e))?;
    Ok(wpath)
}

/// Loads a checkpoint weight file and its `.json` sidecar.
pub fn load_checkpoint(weights_path: &Path) -> Result<(WeightSet, CheckpointState)> {
    let weights = WeightSet::load(weights_path)?;
    let spath = weights_path.with_extension("json");
    let text = std::fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
    let state: CheckpointState = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: spath.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    state.adam.validate(&weights)?;
    Ok((weights, state))
}

pub struct FitOutcome {
    pub weights: WeightSet,
    pub history: Vec<EpochStats>,
    pub weights_path: PathBuf,
}

/// Full training run writing `weights.usln`, `train_log.tsv` and periodic
/// checkpoints under `out_dir`. With `resume`, training continues from the
/// given checkpoint weight file; log lines past the checkpoint are dropped.
pub fn fit(
    cfg: &TrainConfig,
    data: &PairDataset,
    out_dir: &Path,
    resume: Option<&Path>,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);

    let (mut weights, mut adam, start, mut log) = match resume {
        Some(path) => {
            let (w, st) = load_checkpoint(path)?;
            if st.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {}, config has {}",
                    st.seed, cfg.seed
                )));
            }
            if st.epoch > cfg.epochs {
                return Err(Error::Config(format!(
                    "checkpoint is at epoch {}, beyond the configured {} epochs",
                    st.epoch, cfg.epochs
                )));
            }
            let previous = std::fs::read_to_string(&log_path).unwrap_or_default();
            let mut kept = String::new();
            for line in previous.lines().take(st.epoch) {
                kept.push_str(line);
                kept.push('\n');
            }
            (w, st.adam, st.epoch, kept)
        }
        None => {
            let w = WeightSet::init(cfg.seed, cfg.init_jitter);
            let a = AdamState::new(&w);
            (w, a, 0, String::new())
        }
    };

    let mut history = Vec::with_capacity(cfg.epochs - start);
    for epoch in start..cfg.epochs {
        let stats = train_epoch(&mut weights, &mut adam, data, cfg, epoch, fx)?;
        writeln!(log, "{}", stats.log_line()).expect("string write");
        std::fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        if cfg.checkpoint_every > 0 && stats.epoch % cfg.checkpoint_every == 0 {
            let state = CheckpointState {
                epoch: stats.epoch,
                seed: cfg.seed,
                adam: adam.clone(),
            };
            save_checkpoint(out_dir, &weights, &state)?;
        }
        history.push(stats);
    }
    let weights_path = out_dir.join(FINAL_WEIGHTS);
    weights.save(&weights_path)?;
    Ok(FitOutcome {
        weights,
        history,
        weights_path,
    })
}
