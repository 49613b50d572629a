use ndarray::Array2;
use sceif::container::{read_container, write_container, FoldedContainer};
use sceif::folding::{fold_detailed, unfold, FoldConfig, KeyMaterial};
use sceif::image::Image;
use sceif::keystream::RandomStream;
use sceif::metrics::psnr;
use sceif::omp2d::{approximate_image, ApproxConfig};
use sceif::par::Execution;

fn textured(rows: usize, cols: usize, seed: u64) -> Image {
    let mut s = RandomStream::new(seed);
    let data = Array2::from_shape_fn((rows, cols), |(r, c)| {
        128.0 + 70.0 * ((r as f64) / 6.0).sin() * ((c as f64) / 9.0).cos() + 15.0 * s.uniform()
    });
    Image::gray(data, 8).unwrap()
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.channels()
        .iter()
        .zip(b.channels())
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn float_container_unfolds_to_the_approximation() {
    let img = textured(64, 64, 1);
    let key = KeyMaterial::new(0x1234_5678_9abc, 77);
    let out = fold_detailed(&img, key, &FoldConfig::new(35.0)).unwrap();
    let plain = out.approximation.to_image().unwrap();
    let back = unfold(&out.container, key.private_key).unwrap();
    assert!(!back.suspect);
    assert!(max_abs_diff(&plain, &back.image) <= 1e-6, "{}", max_abs_diff(&plain, &back.image));
}

#[test]
fn ragged_color_image_survives_a_file_roundtrip() {
    let base = textured(45, 70, 3);
    let img = Image::new(vec![base.channel(0).clone(), base.channel(0).mapv(|v| 255.0 - v), base.channel(0) * 0.5], 8)
        .unwrap();
    let key = KeyMaterial::new(99, 5);
    let out = fold_detailed(&img, key, &FoldConfig::new(40.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ppm");
    write_container(&out.container, &path).unwrap();
    let read = read_container(&path).unwrap();
    let back = unfold(&read, key.private_key).unwrap();
    assert_eq!((back.image.rows(), back.image.cols(), back.image.channel_count()), (45, 70, 3));
    let plain = out.approximation.to_image().unwrap();
    assert!(psnr(&plain, &back.image, 8).unwrap() > 45.0);
}

#[test]
fn wrong_key_garbles_without_error() {
    let img = textured(64, 64, 8);
    let key = KeyMaterial::new(1_000_003, 11);
    let out = fold_detailed(&img, key, &FoldConfig::new(35.0)).unwrap();
    let wrong = unfold(&out.container, 1_000_004).unwrap();
    let plain = out.approximation.to_image().unwrap();
    assert!(psnr(&plain, &wrong.image, 8).unwrap() < 25.0);
}

#[test]
fn sequential_and_parallel_folds_agree() {
    let img = textured(48, 64, 4);
    let key = KeyMaterial::new(7, 8);
    let mut cfg = FoldConfig::new(38.0);
    cfg.execution = Execution::Sequential;
    cfg.approx.execution = Execution::Sequential;
    let a = fold_detailed(&img, key, &cfg).unwrap().container;
    let b = fold_detailed(&img, key, &FoldConfig::new(38.0)).unwrap().container;
    assert_eq!(a, b);
}

#[test]
fn quantized_container_matches_decoded_file() {
    let img = textured(40, 40, 9);
    let c = fold_detailed(&img, KeyMaterial::new(1, 2), &FoldConfig::new(36.0)).unwrap().container;
    let q: FoldedContainer = c.quantized().unwrap();
    let again = FoldedContainer::from_netpbm(&c.to_netpbm().unwrap()).unwrap();
    assert_eq!(q, again);
}

#[test]
fn approximation_meets_target() {
    let img = textured(64, 64, 12);
    let a = approximate_image(&img, &ApproxConfig::new(38.0)).unwrap();
    let p = psnr(&img, &a.to_image().unwrap(), 8).unwrap();
    assert!((38.0..=38.0 + 0.2 + 1e-9).contains(&p), "{p}");
}
