use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<()> {
    let s = logits.shape();
    ensure_dim("cross_entropy", "logit height", 1, s.h)?;
    ensure_dim("cross_entropy", "logit width", 1, s.w)?;
    ensure_dim("cross_entropy", "batch", s.n, labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
        return Err(Error::invalid(
            "cross_entropy",
            format!("label {bad} out of range for {} classes", s.c),
        ));
    }
    Ok(())
}

/// Numerically stable softmax of one row of logits.
fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    check(logits, labels)?;
    let mut total = T::zero();
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.sample(n);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total = total + (lse - row[label]);
    }
    Ok(total / T::from_usize(labels.len()).unwrap())
}

/// `(softmax(logits) - onehot(labels)) / n`.
pub fn cross_entropy_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    check(logits, labels)?;
    let inv_n = T::one() / T::from_usize(labels.len()).unwrap();
    let mut grad = Tensor::zeros(logits.shape());
    for (n, &label) in labels.iter().enumerate() {
        let probs = softmax_row(logits.sample(n));
        let dst = grad.sample_mut(n);
        for (c, p) in probs.into_iter().enumerate() {
            let target = if c == label { T::one() } else { T::zero() };
            dst[c] = (p - target) * inv_n;
        }
    }
    Ok(grad)
}
