use super::{ensure_dims, Image};
use crate::error::Result;

/// Images are normalized to [0, 1].
pub const DEFAULT_PEAK: f64 = 1.0;

/// Mean squared error over all pixels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    ensure_dims(a.dims(), b.dims())?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak^2 / MSE)` in decibels; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_peak(peak)?;
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// PSNR of the concatenated vector `(u, v)` against `(u_gt, v_gt)`.
pub fn psnr_joint(u: &Image, v: &Image, u_gt: &Image, v_gt: &Image, peak: f64) -> Result<f64> {
    check_peak(peak)?;
    ensure_dims(u.dims(), v.dims())?;
    let joint = 0.5 * (mse(u, u_gt)? + mse(v, v_gt)?);
    Ok(psnr_from_mse(joint, peak))
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(crate::Error::InvalidParameter(format!(
            "peak must be positive and finite, got {peak}"
        )));
    }
    Ok(())
}
