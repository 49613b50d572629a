//! Quality and sparsity measures.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::image::Image;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    /// `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub mse: f64,
    pub mssim: f64,
    pub sr: Option<f64>,
}

impl QualityReport {
    pub fn compare(reference: &Image, test: &Image, bits: u32) -> Result<Self> {
        Ok(QualityReport {
            psnr: psnr(reference, test, bits)?,
            mse: mse(reference, test)?,
            mssim: mssim(reference, test, bits)?,
            sr: None,
        })
    }
}

fn check_same_shape(a: &Image, b: &Image) -> Result<()> {
    if (a.rows(), a.cols(), a.channel_count()) != (b.rows(), b.cols(), b.channel_count()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.rows(),
            a.cols(),
            a.channel_count(),
            b.rows(),
            b.cols(),
            b.channel_count()
        )));
    }
    Ok(())
}

/// `Σ_z ‖a_z − b_z‖²_F / (Z·rows·cols)`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .channels()
        .iter()
        .zip(b.channels())
        .map(|(x, y)| Zip::from(x).and(y).fold(0.0, |acc, p, q| acc + (p - q) * (p - q)))
        .sum();
    Ok(sum / a.pixel_count() as f64)
}

/// Peak signal-to-noise ratio in dB against `2^bits − 1`.
pub fn psnr(a: &Image, b: &Image, bits: u32) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = ((1u64 << bits) - 1) as f64;
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering: output is `(rows−w+1) × (cols−w+1)`.
fn filter_valid(x: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let k = w.len();
    let horiz: Array2<f64> =
        Array2::from_shape_fn((rows, cols - k + 1), |(r, c)| (0..k).map(|t| w[t] * x[[r, c + t]]).sum());
    Array2::from_shape_fn((rows - k + 1, cols - k + 1), |(r, c)| (0..k).map(|t| w[t] * horiz[[r + t, c]]).sum())
}

fn ssim_channel(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> f64 {
    let w = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mu_a = filter_valid(a, &w);
    let mu_b = filter_valid(b, &w);
    let aa = filter_valid(&(a * a), &w);
    let bb = filter_valid(&(b * b), &w);
    let ab = filter_valid(&(a * b), &w);
    let mut total = 0.0;
    Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).for_each(|&ma, &mb, &saa, &sbb, &sab| {
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    });
    total / mu_a.len() as f64
}

/// Mean SSIM over all 11×11 Gaussian windows (σ = 1.5) that fit inside the
/// image, averaged over channels.
pub fn mssim(a: &Image, b: &Image, bits: u32) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.rows() < SSIM_WINDOW || a.cols() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(SSIM_WINDOW));
    }
    let peak = ((1u64 << bits) - 1) as f64;
    let sum: f64 = a.channels().iter().zip(b.channels()).map(|(x, y)| ssim_channel(x, y, peak)).sum();
    Ok(sum / a.channel_count() as f64)
}

/// Total pixels over total retained coefficients.
pub fn sparsity_ratio(total_pixels: usize, total_coeffs: usize) -> Result<f64> {
    if total_coeffs == 0 {
        return Err(Error::ZeroCoefficients);
    }
    Ok(total_pixels as f64 / total_coeffs as f64)
}
