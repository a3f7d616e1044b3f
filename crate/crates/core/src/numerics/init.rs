use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor};

/// Glorot-uniform `rows×cols` matrix: U(−a, a) with a = √(6 / (rows + cols)).
pub fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-a..=a))).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std > 0");
    let data = (0..rows * cols).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}
