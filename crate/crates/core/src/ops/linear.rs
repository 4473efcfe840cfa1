use crate::error::{ensure_dim, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Affine head: `(n, c, 1, 1) -> (n, classes, 1, 1)` with weight
/// `(classes, c, 1, 1)` and bias `(classes, 1, 1, 1)`.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (is, ws) = (input.shape(), weight.shape());
    ensure_dim("fully_connected", "input height", 1, is.h)?;
    ensure_dim("fully_connected", "input width", 1, is.w)?;
    ensure_dim("fully_connected", "weight columns", ws.c * ws.h * ws.w, is.c)?;
    ensure_dim("fully_connected", "bias length", ws.n, bias.numel())?;
    let classes = ws.n;
    let mut out = Tensor::zeros(Shape::new(is.n, classes, 1, 1));
    for n in 0..is.n {
        out.sample_mut(n).copy_from_slice(bias.data());
    }
    // out (n x classes) += input (n x c) * weight^T (c x classes)
    T::gemm(
        is.n,
        is.c,
        classes,
        T::one(),
        input.data(),
        is.c as isize,
        1,
        weight.data(),
        1,
        is.c as isize,
        T::one(),
        out.data_mut(),
        classes as isize,
        1,
    );
    Ok(out)
}

/// Gradients for input, weight and bias.
pub fn fully_connected_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (is, ws) = (input.shape(), weight.shape());
    let classes = ws.n;
    ensure_dim("fully_connected_backward", "classes", classes, grad_out.shape().c)?;
    ensure_dim("fully_connected_backward", "batch", is.n, grad_out.shape().n)?;
    let mut grad_in = Tensor::zeros(is);
    let mut grad_w = Tensor::zeros(ws);
    let mut grad_b = Tensor::zeros(Shape::new(classes, 1, 1, 1));
    // grad_in (n x c) = grad_out (n x classes) * weight (classes x c)
    T::gemm(
        is.n,
        classes,
        is.c,
        T::one(),
        grad_out.data(),
        classes as isize,
        1,
        weight.data(),
        is.c as isize,
        1,
        T::zero(),
        grad_in.data_mut(),
        is.c as isize,
        1,
    );
    // grad_w (classes x c) = grad_out^T (classes x n) * input (n x c)
    T::gemm(
        classes,
        is.n,
        is.c,
        T::one(),
        grad_out.data(),
        1,
        classes as isize,
        input.data(),
        is.c as isize,
        1,
        T::zero(),
        grad_w.data_mut(),
        is.c as isize,
        1,
    );
    for n in 0..is.n {
        for (b, &g) in grad_b.data_mut().iter_mut().zip(grad_out.sample(n)) {
            *b = *b + g;
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only_heads() {
        let x = Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1.0f64, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let eye = Tensor::from_fn(Shape::new(3, 3, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let zero_b = Tensor::zeros(Shape::new(3, 1, 1, 1));
        assert_eq!(fully_connected(&x, &eye, &zero_b).unwrap().data(), x.data());

        let b = Tensor::from_vec(Shape::new(3, 1, 1, 1), vec![0.1, 0.2, 0.3]).unwrap();
        let y = fully_connected(&x, &Tensor::zeros(Shape::new(3, 3, 1, 1)), &b).unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn matches_dot_product_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(Shape::new(3, 7, 1, 1), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let w = Tensor::from_fn(Shape::new(4, 7, 1, 1), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let b = Tensor::from_fn(Shape::new(4, 1, 1, 1), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let y = fully_connected(&x, &w, &b).unwrap();
        for n in 0..3 {
            for k in 0..4 {
                let dot: f64 = b.data()[k] + (0..7).map(|c| x.get(n, c, 0, 0) * w.get(k, c, 0, 0)).sum::<f64>();
                assert!((y.get(n, k, 0, 0) - dot).abs() < 1e-12);
            }
        }
        assert!(fully_connected(&x, &Tensor::zeros(Shape::new(4, 6, 1, 1)), &b).is_err());
    }
}
