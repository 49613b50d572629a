use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use sceif::baseline_dct::dct_approximate;
use sceif::container::{read_container, write_container};
use sceif::folding::{fold_approximation, unfold_with, KeyMaterial};
use sceif::image::Image;
use sceif::metrics::{mse, mssim, psnr};
use sceif::omp2d::{approximate_image, ApproxConfig, ImageApproximation};
use sceif::par::Execution;

use crate::QualityArgs;

pub fn execution(threads: usize) -> Execution {
    if threads == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

/// Seconds and nanoseconds of the wall clock folded into 32 bits.
pub fn seed_or_clock(seed: Option<u32>) -> u32 {
    seed.unwrap_or_else(|| {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        (now.as_secs() as u32) ^ now.subsec_nanos().rotate_left(16)
    })
}

pub fn read_image(path: &Path) -> anyhow::Result<Image> {
    Image::read_pnm(path).with_context(|| format!("reading {}", path.display()))
}

pub fn approx_config(q: QualityArgs, exec: Execution) -> ApproxConfig {
    let mut cfg = ApproxConfig::new(q.psnr);
    cfg.block_n = q.block;
    cfg.execution = exec;
    cfg
}

pub fn format_sr(approx: &ImageApproximation) -> String {
    match approx.sparsity_ratio() {
        Ok(sr) => format!("{sr:.2}"),
        Err(e) => format!("undefined ({e})"),
    }
}

fn mssim_text(a: &Image, b: &Image) -> String {
    match mssim(a, b, a.bits()) {
        Ok(v) => format!("{v:.6}"),
        Err(e) => format!("n/a ({e})"),
    }
}

pub fn approx(input: &Path, output: &Path, q: QualityArgs, exec: Execution) -> anyhow::Result<()> {
    let img = read_image(input)?;
    let start = Instant::now();
    let approx = approximate_image(&img, &approx_config(q, exec))?;
    let elapsed = start.elapsed().as_secs_f64();
    let rec = approx.to_image()?;
    rec.write_pnm(output).with_context(|| format!("writing {}", output.display()))?;
    println!("coefficients: {}", approx.total_coefficients());
    println!("SR: {}", format_sr(&approx));
    println!("PSNR: {:.3} dB", psnr(&img, &rec, img.bits())?);
    println!("MSSIM: {}", mssim_text(&img, &rec));
    println!("elapsed: {elapsed:.3} s");
    Ok(())
}

pub fn fold(input: &Path, output: &Path, key: u64, seed: u32, q: QualityArgs, exec: Execution) -> anyhow::Result<()> {
    let img = read_image(input)?;
    let start = Instant::now();
    let approx = approximate_image(&img, &approx_config(q, exec))?;
    let approx_secs = start.elapsed().as_secs_f64();
    let sr = format_sr(&approx);
    let start = Instant::now();
    let out = fold_approximation(approx, KeyMaterial::new(key, seed), exec)?;
    let fold_secs = start.elapsed().as_secs_f64();
    write_container(&out.container, output).with_context(|| format!("writing {}", output.display()))?;
    let (rows, cols, channels) = out.container.dims();
    println!("seed: {seed}");
    println!("SR: {sr}");
    println!("hosts: {} of {} blocks, ad-hoc blocks: {}", out.plan.hosts, out.plan.q, out.plan.adhoc);
    println!("container: {rows}x{cols}x{channels}");
    println!("elapsed: approximation {approx_secs:.3} s, folding {fold_secs:.3} s");
    Ok(())
}

pub fn unfold(input: &Path, output: &Path, key: u64, exec: Execution) -> anyhow::Result<()> {
    let container = read_container(input).with_context(|| format!("reading {}", input.display()))?;
    let start = Instant::now();
    let out = unfold_with(&container, key, exec)?;
    let elapsed = start.elapsed().as_secs_f64();
    out.image.write_pnm(output).with_context(|| format!("writing {}", output.display()))?;
    println!("image: {}x{}x{}", out.image.rows(), out.image.cols(), out.image.channel_count());
    println!("elapsed: {elapsed:.3} s");
    Ok(())
}

pub fn metrics(reference: &Path, test: &Path) -> anyhow::Result<()> {
    let a = read_image(reference)?;
    let b = read_image(test)?;
    let bits = a.bits().max(b.bits());
    println!("MSE: {:.6}", mse(&a, &b)?);
    println!("PSNR: {:.3} dB", psnr(&a, &b, bits)?);
    match mssim(&a, &b, bits) {
        Ok(v) => println!("MSSIM: {v:.6}"),
        Err(e) => println!("MSSIM: n/a ({e})"),
    }
    Ok(())
}

pub fn baseline_dct(input: &Path, output: &Path, q: QualityArgs, exec: Execution) -> anyhow::Result<()> {
    let img = read_image(input)?;
    let start = Instant::now();
    let r = dct_approximate(&img, q.psnr, q.block, exec)?;
    let elapsed = start.elapsed().as_secs_f64();
    r.approximation.write_pnm(output).with_context(|| format!("writing {}", output.display()))?;
    println!("coefficients: {}", r.retained_coeffs);
    match r.sr {
        Some(sr) => println!("SR: {sr:.2}"),
        None => println!("SR: undefined (no coefficients retained)"),
    }
    println!("PSNR: {:.3} dB", r.psnr);
    if !r.reached {
        println!("note: target not reachable, all coefficients retained");
    }
    println!("elapsed: {elapsed:.3} s");
    Ok(())
}
