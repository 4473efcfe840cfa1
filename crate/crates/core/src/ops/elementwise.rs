//! Activations and broadcasting products.
//!
//! Derivatives at kinks take the left limit: `relu'(0) = 0`,
//! `hardswish'(-3) = 0`, `hardswish'(3) = 1.5`.

use crate::error::{ensure_dim, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub fn relu_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

pub fn relu_grad_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// `x * clamp(x + 3, 0, 6) / 6`.
pub fn hardswish_scalar<T: Scalar>(x: T) -> T {
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    x * (x + three).max(T::zero()).min(six) / six
}

pub fn hardswish_grad_scalar<T: Scalar>(x: T) -> T {
    let three = T::lit(3.0);
    if x <= -three {
        T::zero()
    } else if x > three {
        T::one()
    } else {
        (x + x + three) / T::lit(6.0)
    }
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(relu_scalar)
}

pub fn hardswish<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(hardswish_scalar)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

fn broadcast_shapes<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Shape> {
    let (xs, gs) = (x.shape(), gate.shape());
    ensure_dim("mul_broadcast_channels", "gate channels", 1, gs.c)?;
    ensure_dim("mul_broadcast_channels", "batch", xs.n, gs.n)?;
    ensure_dim("mul_broadcast_channels", "height", xs.h, gs.h)?;
    ensure_dim("mul_broadcast_channels", "width", xs.w, gs.w)?;
    Ok(xs)
}

/// `out(n, c, y, x) = x(n, c, y, x) * gate(n, 0, y, x)`.
pub fn mul_broadcast_channels<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = broadcast_shapes(x, gate)?;
    let mut out = x.clone();
    for n in 0..s.n {
        let g = gate.plane(n, 0).to_vec();
        for c in 0..s.c {
            for (v, &a) in out.plane_mut(n, c).iter_mut().zip(&g) {
                *v = *v * a;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`mul_broadcast_channels`] for `x` and `gate`.
pub fn mul_broadcast_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    gate: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = broadcast_shapes(x, gate)?;
    grad_out.ensure_same_shape(x, "mul_broadcast_channels_backward")?;
    let grad_x = mul_broadcast_channels(grad_out, gate)?;
    let mut grad_gate = Tensor::zeros(gate.shape());
    for n in 0..s.n {
        let dst = grad_gate.plane_mut(n, 0);
        for c in 0..s.c {
            for ((d, &g), &v) in dst.iter_mut().zip(grad_out.plane(n, c)).zip(x.plane(n, c)) {
                *d = *d + g * v;
            }
        }
    }
    Ok((grad_x, grad_gate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_breakpoints() {
        assert_eq!(hardswish_scalar(0.0f64), 0.0);
        assert_eq!(hardswish_scalar(3.0f64), 3.0);
        assert_eq!(hardswish_scalar(-3.0f64), 0.0);
        assert_eq!(hardswish_scalar(10.0f64), 10.0);
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        assert_eq!(relu_scalar(-2.0f32), 0.0);
        assert_eq!(relu_grad_scalar(0.0f32), 0.0);
        assert_eq!(hardswish_grad_scalar(-3.0f64), 0.0);
    }

    #[test]
    fn broadcast_gate_multiplies_every_channel() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 2, 2), 2.0);
        let g = Tensor::from_fn(Shape::new(2, 1, 2, 2), |n, _, y, x| (n + y + x) as f32);
        let y = mul_broadcast_channels(&x, &g).unwrap();
        assert_eq!(y.get(1, 2, 1, 1), 6.0);
        assert!(mul_broadcast_channels(&x, &x).is_err());
    }
}
