//! Forward kernels on plain tensors.
//!
//! These are the value computations behind the recorded graph operations in
//! [`Graph`](super::Graph); they are also usable directly when no gradient is
//! needed.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.require_matrix("matmul lhs")?;
    let (k2, n) = b.require_matrix("matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul: {:?} x {:?}: inner dimensions differ",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn softmax_slice<T: Scalar>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

/// Max-subtracted softmax along `axis` (0 = down columns, 1 = along rows).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (_, c) = x.require_matrix("softmax")?;
    match axis {
        1 => {
            let mut out = x.clone();
            if c > 0 {
                out.data_mut().chunks_mut(c).for_each(softmax_slice);
            }
            Ok(out)
        }
        0 => Ok(softmax(&x.transpose(), 1)?.transpose()),
        _ => Err(Error::Shape(format!(
            "softmax: axis {axis} invalid for shape {:?}",
            x.shape()
        ))),
    }
}

/// Row-wise mean and reciprocal standard deviation used by layer norm.
pub(crate) fn row_stats<T: Scalar>(row: &[T], eps: f64) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + T::of(eps)).sqrt())
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm: eps must be > 0, got {eps}")));
    }
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm: width {d} vs gamma {:?} / beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = x.clone();
    if d == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(d) {
        let (mean, rstd) = row_stats(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * rstd * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(out)
}

/// x·Φ(x) with the exact erf form of Φ.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() / T::of((2.0 * PI).sqrt());
    cdf + x * pdf
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Row-wise log-softmax via log-sum-exp.
pub fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    out
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "cross_entropy: {rows} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Data(format!(
            "cross_entropy: sample {i} has label {l}, outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (b, c) = logits.require_matrix("cross_entropy")?;
    check_labels(labels, b, c)?;
    if b == 0 {
        return Err(Error::Usage("cross_entropy on an empty batch".into()));
    }
    let logp = log_softmax_rows(logits);
    let total: T = labels.iter().enumerate().map(|(i, &l)| -logp.at(i, l)).sum();
    Ok(total / T::of(b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let b = Tensor::<f64>::from_rows(&[&[1.0, -2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);

        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let ones = Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let out = matmul(&a, &ones).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        let out = matmul(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.at(i, p) * b.at(p, j);
                }
                assert_relative_eq!(out.at(i, j), s, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let x = Tensor::<f32>::row_vector(vec![0.0, 0.0]);
        assert_eq!(softmax(&x, 1).unwrap().data(), &[0.5, 0.5]);
        let x = Tensor::<f32>::row_vector(vec![1000.0, 1000.0]);
        assert_eq!(softmax(&x, 1).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 1, 9);
        let out = softmax(&x, 1).unwrap();
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_axis_zero_normalises_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 3, 4);
        let out = softmax(&x, 0).unwrap();
        for j in 0..4 {
            let s: f64 = (0..3).map(|i| out.at(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_definition() {
        let g = Tensor::<f64>::filled(&[1, 4], 1.0);
        let b = Tensor::<f64>::zeros(&[1, 4]);
        let constant = Tensor::row_vector(vec![3.0; 4]);
        let out = layer_norm(&constant, &g, &b, 1e-5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let x = Tensor::row_vector(vec![1.0, -2.0, 0.5, 7.0]);
        let out = layer_norm(&x, &g, &b, 1e-12).unwrap();
        let mean: f64 = out.data().iter().sum::<f64>() / 4.0;
        let var: f64 = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);

        assert!(matches!(layer_norm(&x, &g, &b, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
        // Φ(1) = 0.5 (1 + erf(1/√2)), erf(1/√2) = 0.682689492137...
        assert!((gelu_scalar(1.0f64) - 0.841_344_746).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Tensor::<f64>::zeros(&[2, 5]);
        let l = cross_entropy(&uniform, &[0, 3]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);

        let sat = Tensor::<f64>::row_vector(vec![0.0, 30.0, 0.0]);
        assert!(cross_entropy(&sat, &[1]).unwrap() < 1e-10);

        let err = cross_entropy(&uniform, &[0, 5]).unwrap_err().to_string();
        assert!(err.contains("sample 1"), "{err}");
    }

    #[test]
    fn cross_entropy_matches_softmax_then_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random(&mut rng, 4, 6);
        let labels = [0, 5, 2, 2];
        let mut expect = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            expect -= (logits.at(i, l).exp() / z).ln();
        }
        expect /= 4.0;
        let got = cross_entropy(&logits, &labels).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }
}
