//! Full-reference (MSE, PSNR, SSIM), no-reference (UIQM) and color-checker
//! (CIEDE2000) evaluation of 8-bit images.

mod ciede2000;
mod colorchecker;
mod fullref;
mod report;
mod uiqm;

pub use ciede2000::ciede2000;
pub use colorchecker::{colorchecker_score, patch_errors, patch_lab, Patch, PatchLayout, PATCH_COUNT};
pub use fullref::{
    gaussian_taps, luminance, mse_psnr, psnr_from_mse, ssim_metric, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{MetricReport, MetricRow};
pub use uiqm::{
    eme, log_amee, sobel_magnitude, trimmed_mean, uicm, uiqm, uism, Uiqm, UICM_ALPHA, UIQM_BLOCK, UIQM_C1, UIQM_C2,
    UIQM_C3,
};

use image::RgbImage;

use crate::error::Result;

/// Scores one image. `reference` enables MSE/PSNR/SSIM, `layout` enables the
/// color-checker ΔE00.
pub fn evaluate_image(
    id: &str,
    pred: &RgbImage,
    reference: Option<&RgbImage>,
    layout: Option<&PatchLayout>,
) -> Result<MetricRow> {
    let (mse, psnr, ssim) = match reference {
        Some(r) => {
            let (mse, psnr) = mse_psnr(pred, r)?;
            (Some(mse), Some(psnr), Some(ssim_metric(pred, r)?))
        }
        None => (None, None, None),
    };
    let q = uiqm(pred);
    let ciede2000 = layout.map(|l| colorchecker_score(pred, l)).transpose()?;
    Ok(MetricRow {
        id: id.to_string(),
        mse,
        psnr,
        ssim,
        uicm: q.uicm,
        uism: q.uism,
        uiconm: q.uiconm,
        uiqm: q.uiqm,
        ciede2000,
    })
}
