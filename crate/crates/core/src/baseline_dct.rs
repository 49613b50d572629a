//! Block-DCT thresholding baseline.
//!
//! Uses the same block tiling as the dictionary codec and keeps every
//! coefficient whose magnitude exceeds one global threshold, chosen by
//! bisection so the reconstruction just meets a PSNR target.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::container::{assemble_image, tile_image};
use crate::error::Result;
use crate::image::Image;
use crate::metrics::{psnr, sparsity_ratio};
use crate::omp2d::CALIBRATION_BAND;
use crate::par::{map_indexed, Execution};

const MAX_BISECTIONS: usize = 60;

/// Orthonormal DCT-II matrix; row `k` is the `k`-th cosine basis vector.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, j)| {
        let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        alpha * (PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

pub fn dct2_block(block: &Array2<f64>) -> Array2<f64> {
    let c = dct_matrix(block.nrows());
    c.dot(block).dot(&c.t())
}

pub fn idct2_block(coeffs: &Array2<f64>) -> Array2<f64> {
    let c = dct_matrix(coeffs.nrows());
    c.t().dot(coeffs).dot(&c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DctApproxResult {
    pub approximation: Image,
    pub retained_coeffs: usize,
    /// `None` when nothing had to be retained (an all-zero image).
    pub sr: Option<f64>,
    pub psnr: f64,
    pub threshold: f64,
    /// False when even keeping every coefficient misses the target.
    pub reached: bool,
}

struct Candidate {
    threshold: f64,
    retained: usize,
    image: Image,
    psnr: f64,
}

pub fn dct_approximate(image: &Image, target_psnr: f64, block_n: usize, exec: Execution) -> Result<DctApproxResult> {
    let tiles = tile_image(image, block_n);
    let spectra: Vec<Vec<Array2<f64>>> = map_indexed(exec, &tiles, |_, t| t.iter().map(dct2_block).collect::<Vec<_>>());

    let evaluate = |threshold: f64| -> Result<Candidate> {
        let kept: Vec<(Vec<Array2<f64>>, usize)> = map_indexed(exec, &spectra, |_, chans| {
            let mut count = 0;
            let rec = chans
                .iter()
                .map(|s| {
                    let masked = s.mapv(|v| if v.abs() > threshold { v } else { 0.0 });
                    count += masked.iter().filter(|v| **v != 0.0).count();
                    idct2_block(&masked)
                })
                .collect();
            (rec, count)
        });
        let retained = kept.iter().map(|k| k.1).sum();
        let rec_tiles: Vec<Vec<Array2<f64>>> = kept.into_iter().map(|k| k.0).collect();
        let approx = assemble_image(&rec_tiles, image.rows(), image.cols(), block_n, image.bits())?;
        let p = psnr(image, &approx, image.bits())?;
        Ok(Candidate { threshold, retained, image: approx, psnr: p })
    };

    let max_mag = spectra.iter().flatten().flat_map(|s| s.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best = evaluate(0.0)?;
    let reached = best.psnr >= target_psnr;
    if reached {
        let (mut lo, mut hi) = (0.0, max_mag);
        let top = evaluate(hi)?;
        if top.psnr >= target_psnr {
            best = top;
        } else {
            for _ in 0..MAX_BISECTIONS {
                if best.psnr <= target_psnr + CALIBRATION_BAND {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let cand = evaluate(mid)?;
                if cand.psnr >= target_psnr {
                    lo = mid;
                    best = cand;
                } else {
                    hi = mid;
                }
            }
        }
    }

    Ok(DctApproxResult {
        sr: sparsity_ratio(image.pixel_count(), best.retained).ok(),
        retained_coeffs: best.retained,
        psnr: best.psnr,
        threshold: best.threshold,
        approximation: best.image,
        reached,
    })
}
