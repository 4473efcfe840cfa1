use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One momentum-buffer update: `v = momentum * v + g; param -= lr * v`.
pub fn sgd_momentum_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: T,
    momentum: T,
) -> Result<()> {
    param.ensure_same_shape(grad, "sgd_momentum_step")?;
    param.ensure_same_shape(velocity, "sgd_momentum_step")?;
    for ((p, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut().iter_mut())
        .zip(grad.data())
    {
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// SGD with a momentum buffer per parameter tensor.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new<'a>(momentum: T, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        Sgd {
            momentum,
            velocity: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Updates `params[i]` with `grads[i]` in order.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<T>>, grads: &[Tensor<T>], lr: T) -> Result<()> {
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let (g, v) = match (grads.get(i), self.velocity.get_mut(i)) {
                (Some(g), Some(v)) => (g, v),
                _ => return Err(Error::invalid("sgd", "more parameters than gradients or buffers")),
            };
            sgd_momentum_step(p, g, v, lr, self.momentum)?;
            count += 1;
        }
        if count != grads.len() || count != self.velocity.len() {
            return Err(Error::invalid("sgd", format!("{count} parameters for {} gradients", grads.len())));
        }
        Ok(())
    }
}
