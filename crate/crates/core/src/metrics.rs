//! Reconstruction error measures.

use crate::error::{Error, Result};
use crate::grid::{crop, ComplexGrid2D, C64};

/// PSNR reported for an exact match.
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub e0: f64,
    pub psnr_db: f64,
    /// Least-squares complex scale fitted to the estimate.
    pub scale_factor: C64,
    /// Set when the estimate was identically zero and no scale could be fitted.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct E0 {
    pub value: f64,
    pub gamma: C64,
    pub degenerate: bool,
}

/// Normalized RMSE after fitting the optimal global complex scale `gamma`
/// to `estimate`.
pub fn e0(truth: &ComplexGrid2D, estimate: &ComplexGrid2D) -> Result<E0> {
    if truth.dims() != estimate.dims() {
        return Err(Error::Shape(format!(
            "truth {:?} vs estimate {:?}",
            truth.dims(),
            estimate.dims()
        )));
    }
    let truth_energy = truth.norm_sqr();
    if truth_energy == 0.0 {
        return Err(Error::InvalidParameter(
            "E0 needs a nonzero reference object".into(),
        ));
    }
    let est_energy = estimate.norm_sqr();
    if est_energy == 0.0 {
        return Ok(E0 {
            value: 1.0,
            gamma: C64::new(0.0, 0.0),
            degenerate: true,
        });
    }
    let cross: C64 = truth
        .as_slice()
        .iter()
        .zip(estimate.as_slice())
        .map(|(t, e)| t * e.conj())
        .sum();
    let gamma = cross / est_energy;
    let residual: f64 = truth
        .as_slice()
        .iter()
        .zip(estimate.as_slice())
        .map(|(t, e)| (t - gamma * e).norm_sqr())
        .sum();
    Ok(E0 {
        value: (residual / truth_energy).sqrt(),
        gamma,
        degenerate: false,
    })
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(truth: &[f64], estimate: &[f64], peak: f64) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "PSNR inputs have lengths {} and {}",
            truth.len(),
            estimate.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let mse = truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| (t - e).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Removes a `pad`-pixel border from every side.
pub fn crop_to_roi(object: &ComplexGrid2D, pad: usize) -> Result<ComplexGrid2D> {
    let (h, w) = object.dims();
    if 2 * pad >= h || 2 * pad >= w {
        return Err(Error::Shape(format!(
            "padding {pad} leaves nothing of a {h}x{w} grid"
        )));
    }
    crop(object, pad, pad, h - 2 * pad, w - 2 * pad)
}

/// E0 and amplitude PSNR of `estimate` against `truth`. The PSNR peak is the
/// largest true amplitude.
pub fn evaluate(truth: &ComplexGrid2D, estimate: &ComplexGrid2D) -> Result<MetricReport> {
    let fit = e0(truth, estimate)?;
    let true_amp = truth.amplitudes();
    let peak = true_amp.iter().cloned().fold(0.0, f64::max);
    let psnr_db = psnr(&true_amp, &estimate.amplitudes(), peak)?;
    Ok(MetricReport {
        e0: fit.value,
        psnr_db,
        scale_factor: fit.gamma,
        degenerate: fit.degenerate,
    })
}
