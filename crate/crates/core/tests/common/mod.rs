#![allow(dead_code)]

use std::fs;
use std::path::Path;

use kervolution::data::{synthetic_blobs, MNIST_FILES};

/// Writes blob images under the standard MNIST file names, so the loaders
/// and commands can run without the real dataset.
pub fn fake_mnist(dir: &Path, train_per_class: usize, test_per_class: usize) {
    fs::create_dir_all(dir).unwrap();
    let train = synthetic_blobs(train_per_class, 10, 1).unwrap();
    let test = synthetic_blobs(test_per_class, 10, 2).unwrap();
    for (pair, ds) in [(0, &train), (2, &test)] {
        let (images, labels) = ds.to_idx();
        fs::write(dir.join(MNIST_FILES[pair]), images).unwrap();
        fs::write(dir.join(MNIST_FILES[pair + 1]), labels).unwrap();
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
