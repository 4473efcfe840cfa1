use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Returns `k` when `channels == k * k`.
pub fn square_root_exact(channels: usize) -> Option<usize> {
    let k = (channels as f64).sqrt().round() as usize;
    (k * k == channels).then_some(k)
}

/// Softmax over the channel axis at every `(n, y, x)`.
///
/// The channel count must be a perfect square: each position holds one
/// flattened k x k filter.
pub fn softmax_per_position<T: Scalar>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    let s = mask.shape();
    if square_root_exact(s.c).is_none() {
        return Err(Error::invalid(
            "softmax_per_position",
            format!("channel count {} is not a perfect square", s.c),
        ));
    }
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut max = vec![T::zero(); p];
    let mut total = vec![T::zero(); p];
    for n in 0..s.n {
        let src = mask.sample(n);
        let dst = out.sample_mut(n);
        max.copy_from_slice(&src[..p]);
        for c in 1..s.c {
            for (m, &v) in max.iter_mut().zip(&src[c * p..(c + 1) * p]) {
                *m = m.max(v);
            }
        }
        total.fill(T::zero());
        for c in 0..s.c {
            let (row_in, row_out) = (&src[c * p..(c + 1) * p], &mut dst[c * p..(c + 1) * p]);
            for i in 0..p {
                let e = (row_in[i] - max[i]).exp();
                row_out[i] = e;
                total[i] = total[i] + e;
            }
        }
        for c in 0..s.c {
            for (v, &t) in dst[c * p..(c + 1) * p].iter_mut().zip(&total) {
                *v = *v / t;
            }
        }
    }
    Ok(out)
}

/// `dx = y * (dy - sum_c y * dy)` per position, given the softmax output `y`.
pub fn softmax_per_position_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    output: &Tensor<T>,
) -> Result<Tensor<T>> {
    output.ensure_same_shape(grad_out, "softmax_per_position_backward")?;
    let s = output.shape();
    let p = s.plane();
    let mut grad_in = Tensor::zeros(s);
    let mut dot = vec![T::zero(); p];
    for n in 0..s.n {
        let (y, dy) = (output.sample(n), grad_out.sample(n));
        dot.fill(T::zero());
        for c in 0..s.c {
            for i in 0..p {
                dot[i] = dot[i] + y[c * p + i] * dy[c * p + i];
            }
        }
        let dx = grad_in.sample_mut(n);
        for c in 0..s.c {
            for i in 0..p {
                let j = c * p + i;
                dx[j] = y[j] * (dy[j] - dot[i]);
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_logits_are_uniform() {
        let y = softmax_per_position(&Tensor::<f64>::zeros(Shape::new(1, 9, 2, 3))).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn large_logit_saturates() {
        let mut m = Tensor::<f64>::zeros(Shape::new(1, 9, 1, 1));
        m.set(0, 4, 0, 0, 50.0);
        let y = softmax_per_position(&m).unwrap();
        assert!(y.get(0, 4, 0, 0) >= 1.0 - 1e-15);
        for c in (0..9).filter(|&c| c != 4) {
            assert!(y.get(0, c, 0, 0) < 1e-20);
        }
    }

    #[test]
    fn non_square_channels_rejected() {
        assert!(softmax_per_position(&Tensor::<f32>::zeros(Shape::new(1, 8, 2, 2))).is_err());
        assert_eq!(square_root_exact(49), Some(7));
        assert_eq!(square_root_exact(50), None);
    }
}
