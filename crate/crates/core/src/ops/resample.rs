use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// `out(n, c, y, x) = in(n, c, y / factor, x / factor)`.
pub fn nearest_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::invalid("nearest_upsample", "factor must be at least 1"));
    }
    let is = input.shape();
    let os = Shape::new(is.n, is.c, is.h * factor, is.w * factor);
    let mut out = Tensor::zeros(os);
    for n in 0..is.n {
        for c in 0..is.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..os.h {
                let row = &src[(y / factor) * is.w..];
                for x in 0..os.w {
                    dst[y * os.w + x] = row[x / factor];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`nearest_upsample`]: sums each factor x factor block.
pub fn nearest_upsample_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    if factor == 0 || gs.h % factor != 0 || gs.w % factor != 0 {
        return Err(Error::invalid("nearest_upsample_backward", "gradient not a multiple of factor"));
    }
    let is = Shape::new(gs.n, gs.c, gs.h / factor, gs.w / factor);
    let mut grad = Tensor::zeros(is);
    for n in 0..gs.n {
        for c in 0..gs.c {
            let src = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for y in 0..gs.h {
                for x in 0..gs.w {
                    let j = (y / factor) * is.w + x / factor;
                    dst[j] = dst[j] + src[y * gs.w + x];
                }
            }
        }
    }
    Ok(grad)
}

fn pool_factors(is: Shape, target_h: usize, target_w: usize) -> Result<(usize, usize)> {
    if target_h == 0 || target_w == 0 || is.h % target_h != 0 || is.w % target_w != 0 {
        return Err(Error::invalid(
            "avg_pool_to",
            format!("target {target_h}x{target_w} does not divide input {}x{}", is.h, is.w),
        ));
    }
    Ok((is.h / target_h, is.w / target_w))
}

/// Non-overlapping block mean down to `target_h x target_w`.
pub fn avg_pool_to<T: Scalar>(input: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    let is = input.shape();
    let (fy, fx) = pool_factors(is, target_h, target_w)?;
    if fy == 1 && fx == 1 {
        return Ok(input.clone());
    }
    let inv = T::one() / T::from_usize(fy * fx).unwrap();
    let mut out = Tensor::zeros(Shape::new(is.n, is.c, target_h, target_w));
    for n in 0..is.n {
        for c in 0..is.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for ty in 0..target_h {
                for tx in 0..target_w {
                    let mut acc = T::zero();
                    for y in ty * fy..(ty + 1) * fy {
                        for &v in &src[y * is.w + tx * fx..y * is.w + (tx + 1) * fx] {
                            acc = acc + v;
                        }
                    }
                    dst[ty * target_w + tx] = acc * inv;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avg_pool_to`].
pub fn avg_pool_to_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    let (fy, fx) = pool_factors(input_shape, gs.h, gs.w)?;
    let inv = T::one() / T::from_usize(fy * fx).unwrap();
    let mut grad = Tensor::zeros(input_shape);
    for n in 0..gs.n {
        for c in 0..gs.c {
            let src = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for y in 0..input_shape.h {
                for x in 0..input_shape.w {
                    dst[y * input_shape.w + x] = src[(y / fy) * gs.w + x / fx] * inv;
                }
            }
        }
    }
    Ok(grad)
}

pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    avg_pool_to(input, 1, 1)
}
