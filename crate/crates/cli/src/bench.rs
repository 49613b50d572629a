use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use sceif::baseline_dct::dct_approximate;
use sceif::folding::{fold_approximation, unfold_with, KeyMaterial};
use sceif::omp2d::approximate_image;
use sceif::par::Execution;

use crate::commands::{approx_config, read_image};
use crate::QualityArgs;

#[derive(Debug, Clone)]
struct Row {
    name: String,
    sr: Option<f64>,
    dct_sr: Option<f64>,
    approx: f64,
    fold: f64,
    unfold: f64,
}

impl Row {
    fn total(&self) -> f64 {
        self.approx + self.fold + self.unfold
    }
}

const HEADERS: [&str; 7] = ["image", "SR", "SR_DCT", "approximation_s", "folding_s", "expanding_s", "total_s"];

fn corpus_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PGM/PPM images in {}", dir.display());
    }
    Ok(files)
}

fn measure(path: &Path, key: KeyMaterial, q: QualityArgs, exec: Execution) -> anyhow::Result<Row> {
    let img = read_image(path)?;
    let start = Instant::now();
    let approx = approximate_image(&img, &approx_config(q, exec))?;
    let approx_secs = start.elapsed().as_secs_f64();
    let sr = approx.sparsity_ratio().ok();
    let start = Instant::now();
    let folded = fold_approximation(approx, key, exec).with_context(|| format!("folding {}", path.display()))?;
    let fold_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    unfold_with(&folded.container, key.private_key, exec)?;
    let unfold_secs = start.elapsed().as_secs_f64();
    let dct = dct_approximate(&img, q.psnr, q.block, exec)?;
    Ok(Row {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sr,
        dct_sr: dct.sr,
        approx: approx_secs,
        fold: fold_secs,
        unfold: unfold_secs,
    })
}

fn cells(r: &Row) -> [String; 7] {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
    [
        r.name.clone(),
        opt(r.sr),
        opt(r.dct_sr),
        format!("{:.3}", r.approx),
        format!("{:.3}", r.fold),
        format!("{:.3}", r.unfold),
        format!("{:.3}", r.total()),
    ]
}

fn print_table(rows: &[[String; 7]]) {
    let mut widths = HEADERS.map(str::len);
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: &[String]| {
        cols.iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(&HEADERS.map(String::from)));
    for r in rows {
        println!("{}", line(r));
    }
}

pub fn run(
    dir: &Path,
    csv_path: Option<&Path>,
    key: u64,
    seed: u32,
    q: QualityArgs,
    exec: Execution,
) -> anyhow::Result<()> {
    let files = corpus_files(dir)?;
    let key = KeyMaterial::new(key, seed);
    let rows = files.iter().map(|f| measure(f, key, q, exec)).collect::<anyhow::Result<Vec<_>>>()?;
    let mut table: Vec<[String; 7]> = rows.iter().map(cells).collect();

    let srs: Vec<f64> = rows.iter().filter_map(|r| r.sr).collect();
    let dct_srs: Vec<f64> = rows.iter().filter_map(|r| r.dct_sr).collect();
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let n = rows.len() as f64;
    table.push(cells(&Row {
        name: "mean".into(),
        sr: mean(&srs),
        dct_sr: mean(&dct_srs),
        approx: rows.iter().map(|r| r.approx).sum::<f64>() / n,
        fold: rows.iter().map(|r| r.fold).sum::<f64>() / n,
        unfold: rows.iter().map(|r| r.unfold).sum::<f64>() / n,
    }));

    println!("seed: {seed}, target {:.1} dB, block {}", q.psnr, q.block);
    print_table(&table);
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(HEADERS)?;
        for r in &table {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}
