//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use sceif::keystream::RandomStream;

pub fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Random 8-bit-range block: smooth structure plus noise, so the number of
/// atoms needed varies.
pub fn random_block(s: &mut RandomStream, n: usize) -> Array2<f64> {
    let (fx, fy, phase) = (s.unit() * 1.5, s.unit() * 1.5, s.unit() * 6.0);
    let (amp, noise, mean) = (s.unit() * 100.0, s.unit() * 20.0, 40.0 + s.unit() * 170.0);
    Array2::from_shape_fn((n, n), |(r, c)| {
        mean + amp * (fx * r as f64 + fy * c as f64 + phase).sin() + noise * s.uniform()
    })
}

/// Dense least squares by Householder QR.
pub fn lstsq(atoms: &[Array2<f64>], x: &Array2<f64>) -> Vec<f64> {
    let rows = x.len();
    let k = atoms.len();
    let mut a: Vec<Vec<f64>> = atoms.iter().map(|m| m.iter().copied().collect()).collect(); // columns
    let mut b: Vec<f64> = x.iter().copied().collect();
    for j in 0..k {
        let norm = (j..rows).map(|i| a[j][i] * a[j][i]).sum::<f64>().sqrt();
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (0..rows).map(|i| if i < j { 0.0 } else { a[j][i] }).collect();
        v[j] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        if vv == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(j) {
            let f = 2.0 * v.iter().zip(col.iter()).map(|(p, q)| p * q).sum::<f64>() / vv;
            col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
        }
        let f = 2.0 * v.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / vv;
        b.iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
    }
    let mut c = vec![0.0; k];
    for j in (0..k).rev() {
        let s: f64 = (j + 1..k).map(|t| a[t][j] * c[t]).sum();
        c[j] = (b[j] - s) / a[j][j];
    }
    c
}
