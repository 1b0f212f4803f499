//! Training objectives: MAE, global SSIM, a pluggable perceptual term and
//! their weighted sum.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, StatKind, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ssim: f64,
    pub lambda_perceptual: f64,
    pub perceptual_enabled: bool,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ssim: 0.25,
            lambda_perceptual: 1.0,
            perceptual_enabled: false,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ssim >= 0.0 && self.lambda_perceptual >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::Config("ssim stabilizers must be positive".into()));
        }
        Ok(())
    }
}

/// Maps an image to a feature tensor on the tape. Implementations must be
/// deterministic and produce the same output shape for the same input shape.
pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> &str;
    fn extract(&self, tape: &mut Tape, image: NodeId) -> Result<NodeId>;
}

pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn descriptor(&self) -> &str {
        "identity"
    }

    fn extract(&self, _tape: &mut Tape, image: NodeId) -> Result<NodeId> {
        Ok(image)
    }
}

/// Fixed channel-mixing map followed by `tanh`.
pub struct LinearExtractor {
    weight: Tensor,
    bias: Tensor,
}

impl LinearExtractor {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.dims() != [3, 3] || bias.dims() != [3] {
            return Err(Error::shape("linear extractor needs a 3x3 weight and 3 biases"));
        }
        Ok(LinearExtractor { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

impl FeatureExtractor for LinearExtractor {
    fn descriptor(&self) -> &str {
        "linear3x3+tanh"
    }

    fn extract(&self, tape: &mut Tape, image: NodeId) -> Result<NodeId> {
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let y = tape.pointwise_conv(image, w, b)?;
        Ok(tape.tanh(y))
    }
}

fn check_pair(tape: &Tape, pred: NodeId, target: NodeId) -> Result<()> {
    if tape.value(pred).dims() != tape.value(target).dims() {
        return Err(Error::shape(format!(
            "loss operands differ: {:?} vs {:?}",
            tape.value(pred).dims(),
            tape.value(target).dims()
        )));
    }
    Ok(())
}

/// Mean absolute error over all elements.
pub fn mae_loss(tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<NodeId> {
    check_pair(tape, pred, target)?;
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// `1 - SSIM` using whole-image statistics per channel, averaged over channels.
pub fn ssim_loss(tape: &mut Tape, pred: NodeId, target: NodeId, cfg: &LossConfig) -> Result<NodeId> {
    check_pair(tape, pred, target)?;
    let avg = |tape: &mut Tape, x: NodeId| tape.global_stat(x, StatKind::Average);
    let mu_p = avg(tape, pred)?;
    let mu_t = avg(tape, target)?;
    let pp = tape.mul(pred, pred)?;
    let tt = tape.mul(target, target)?;
    let pt = tape.mul(pred, target)?;
    let e_pp = avg(tape, pp)?;
    let e_tt = avg(tape, tt)?;
    let e_pt = avg(tape, pt)?;

    let mu_pp = tape.mul(mu_p, mu_p)?;
    let mu_tt = tape.mul(mu_t, mu_t)?;
    let mu_pt = tape.mul(mu_p, mu_t)?;
    let var_p = tape.sub(e_pp, mu_pp)?;
    let var_t = tape.sub(e_tt, mu_tt)?;
    let cov = tape.sub(e_pt, mu_pt)?;

    let lum_num = tape.affine(mu_pt, 2.0, cfg.ssim_c1);
    let cs_num = tape.affine(cov, 2.0, cfg.ssim_c2);
    let lum_den = tape.add(mu_pp, mu_tt)?;
    let lum_den = tape.affine(lum_den, 1.0, cfg.ssim_c1);
    let cs_den = tape.add(var_p, var_t)?;
    let cs_den = tape.affine(cs_den, 1.0, cfg.ssim_c2);

    let num = tape.mul(lum_num, cs_num)?;
    let den = tape.mul(lum_den, cs_den)?;
    let ssim = tape.div(num, den)?;
    let mean = tape.mean(ssim);
    Ok(tape.affine(mean, -1.0, 1.0))
}

/// MAE between extracted features of `pred` and `target`.
pub fn perceptual_loss(tape: &mut Tape, pred: NodeId, target: NodeId, fx: &dyn FeatureExtractor) -> Result<NodeId> {
    check_pair(tape, pred, target)?;
    let fp = fx.extract(tape, pred)?;
    let ft = fx.extract(tape, target)?;
    mae_loss(tape, fp, ft)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub mae: NodeId,
    pub ssim: NodeId,
    pub perceptual: Option<NodeId>,
}

/// Scalar values of a [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub mae: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |id: NodeId| tape.value(id).data()[0];
        LossValues {
            total: v(self.total),
            mae: v(self.mae),
            ssim: v(self.ssim),
            perceptual: self.perceptual.map(v).unwrap_or(0.0),
        }
    }
}

/// `MAE + λ_ssim·(1 - SSIM) [+ λ_perceptual·perceptual]`.
pub fn combined_loss(
    tape: &mut Tape,
    pred: NodeId,
    target: NodeId,
    cfg: &LossConfig,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<LossTerms> {
    cfg.validate()?;
    let mae = mae_loss(tape, pred, target)?;
    let ssim = ssim_loss(tape, pred, target, cfg)?;
    let weighted = tape.affine(ssim, cfg.lambda_ssim, 0.0);
    let mut total = tape.add(mae, weighted)?;
    let mut perceptual = None;
    if cfg.perceptual_enabled {
        let fx = fx.ok_or_else(|| Error::Config("perceptual loss enabled but no feature extractor supplied".into()))?;
        let p = perceptual_loss(tape, pred, target, fx)?;
        let wp = tape.affine(p, cfg.lambda_perceptual, 0.0);
        total = tape.add(total, wp)?;
        perceptual = Some(p);
    }
    Ok(LossTerms {
        total,
        mae,
        ssim,
        perceptual,
    })
}

/// Evaluates the combined loss on plain tensors.
pub fn evaluate(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    fx: Option<&dyn FeatureExtractor>,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let t = tape.constant(target.clone());
    let terms = combined_loss(&mut tape, p, t, cfg, fx)?;
    Ok(terms.values(&tape))
}
