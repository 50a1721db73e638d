//! Loss functions: negative cosine similarity, its symmetrized two-view form
//! and softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-12;

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.rows() == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Row-wise `v / (|v| + 1e-12)`.
pub fn l2_normalize<T: Scalar>(v: &Tensor<T>) -> Tensor<T> {
    let mut out = v.clone();
    if v.shape().len() != 2 {
        return out;
    }
    let eps = T::from_f64(NORM_EPS);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row_norm(row) + eps;
        row.iter_mut().for_each(|x| *x = *x / n);
    }
    out
}

/// Mean over rows of `-cos(p_i, z_i)` and its gradient with respect to `p`.
/// `z` is treated as a constant.
pub fn cosine_loss<T: Scalar>(p: &Tensor<T>, z: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    check_same(p, z)?;
    let n = p.rows();
    let nf = T::from_f64(n as f64);
    let eps = T::from_f64(NORM_EPS);
    let mut grad = Tensor::zeros(p.shape());
    let mut total = T::zero();
    for r in 0..n {
        let (pr, zr) = (p.row(r), z.row(r));
        let pn = row_norm(pr) + eps;
        let zn = row_norm(zr) + eps;
        let cos = pr.iter().zip(zr).map(|(&a, &b)| (a / pn) * (b / zn)).sum::<T>();
        total = total - cos;
        for ((g, &a), &b) in grad.row_mut(r).iter_mut().zip(pr).zip(zr) {
            *g = -(b / zn - cos * (a / pn)) / pn / nf;
        }
    }
    Ok((total / nf, grad))
}

/// `0.5 * L(p1, z2) + 0.5 * L(p2, z1)`; gradients for `p1` and `p2`.
pub fn symmetrized_loss<T: Scalar>(
    p1: &Tensor<T>,
    z2: &Tensor<T>,
    p2: &Tensor<T>,
    z1: &Tensor<T>,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    check_same(p1, p2)?;
    let (l12, mut g1) = cosine_loss(p1, z2)?;
    let (l21, mut g2) = cosine_loss(p2, z1)?;
    let half = T::from_f64(0.5);
    g1.data_mut().iter_mut().for_each(|g| *g = *g * half);
    g2.data_mut().iter_mut().for_each(|g| *g = *g * half);
    Ok((half * l12 + half * l21, g1, g2))
}

/// Mean `-log softmax(logits)[label]` and `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!("{:?} logits for {} labels", logits.shape(), labels.len())));
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::BadLabel { label: bad, classes: k });
    }
    let nf = T::from_f64(labels.len() as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total = total + (lse - row[label]);
        for (j, (g, &v)) in grad.row_mut(r).iter_mut().zip(row).enumerate() {
            let prob = (v - lse).exp();
            let onehot = if j == label { T::one() } else { T::zero() };
            *g = (prob - onehot) / nf;
        }
    }
    Ok((total / nf, grad))
}
