//! Lossless rearrangements: sub-pixel shuffle, neighbourhood unfolding and
//! channel concatenation.

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// `(n, c*s*s, h, w) -> (n, c, s*h, s*w)`.
///
/// `out(n, c, s*y + dy, s*x + dx) = in(n, c*s*s + dy*s + dx, y, x)`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let is = input.shape();
    if s == 0 || is.c % (s * s) != 0 {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("channel count {} not divisible by {}^2", is.c, s),
        ));
    }
    let c_out = is.c / (s * s);
    let os = Shape::new(is.n, c_out, is.h * s, is.w * s);
    let mut out = Tensor::zeros(os);
    for n in 0..is.n {
        for c in 0..c_out {
            for dy in 0..s {
                for dx in 0..s {
                    let src = input.plane(n, c * s * s + dy * s + dx);
                    let dst = out.plane_mut(n, c);
                    for y in 0..is.h {
                        let row = &mut dst[(s * y + dy) * os.w..];
                        for x in 0..is.w {
                            row[s * x + dx] = src[y * is.w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]: `(n, c, s*h, s*w) -> (n, c*s*s, h, w)`.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let is = input.shape();
    if s == 0 || is.h % s != 0 || is.w % s != 0 {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("spatial dims {}x{} not divisible by {}", is.h, is.w, s),
        ));
    }
    let (h, w) = (is.h / s, is.w / s);
    let mut out = Tensor::zeros(Shape::new(is.n, is.c * s * s, h, w));
    for n in 0..is.n {
        for c in 0..is.c {
            let src = input.plane(n, c);
            for dy in 0..s {
                for dx in 0..s {
                    let dst = out.plane_mut(n, c * s * s + dy * s + dx);
                    for y in 0..h {
                        for x in 0..w {
                            dst[y * w + x] = src[(s * y + dy) * is.w + s * x + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Zero-padded k x k neighbourhoods as channels: `(n, c, h, w) -> (n, c*k*k, h, w)`.
///
/// Channel `c*k*k + u*k + v` at `(y, x)` holds `in(c, y + u - k/2, x + v - k/2)`.
pub fn unfold_neighborhood<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k % 2 == 0 {
        return Err(Error::invalid("unfold_neighborhood", format!("window size {k} is not odd")));
    }
    let is = input.shape();
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(Shape::new(is.n, is.c * k * k, is.h, is.w));
    for n in 0..is.n {
        for c in 0..is.c {
            let src = input.plane(n, c).to_vec();
            for u in 0..k {
                for v in 0..k {
                    let (dy, dx) = (u as isize - r, v as isize - r);
                    let dst = out.plane_mut(n, c * k * k + u * k + v);
                    for y in 0..is.h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= is.h as isize {
                            continue;
                        }
                        for x in 0..is.w {
                            let sx = x as isize + dx;
                            if sx >= 0 && sx < is.w as isize {
                                dst[y * is.w + x] = src[sy as usize * is.w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`unfold_neighborhood`].
pub fn unfold_neighborhood_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: Shape,
    k: usize,
) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    ensure_dim("unfold_neighborhood_backward", "channels", input_shape.c * k * k, gs.c)?;
    let r = (k / 2) as isize;
    let mut grad = Tensor::zeros(input_shape);
    for n in 0..gs.n {
        for c in 0..input_shape.c {
            for u in 0..k {
                for v in 0..k {
                    let (dy, dx) = (u as isize - r, v as isize - r);
                    let src = grad_out.plane(n, c * k * k + u * k + v).to_vec();
                    let dst = grad.plane_mut(n, c);
                    for y in 0..gs.h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= gs.h as isize {
                            continue;
                        }
                        for x in 0..gs.w {
                            let sx = x as isize + dx;
                            if sx >= 0 && sx < gs.w as isize {
                                let j = sy as usize * gs.w + sx as usize;
                                dst[j] = dst[j] + src[y * gs.w + x];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?
        .shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        ensure_dim("concat_channels", "batch", first.n, s.n)?;
        ensure_dim("concat_channels", "height", first.h, s.h)?;
        ensure_dim("concat_channels", "width", first.w, s.w)?;
        c_total += s.c;
    }
    let mut out = Tensor::zeros(Shape::new(first.n, c_total, first.h, first.w));
    let plane = first.plane();
    for n in 0..first.n {
        let dst = out.sample_mut(n);
        let mut offset = 0;
        for p in parts {
            let src = p.sample(n);
            dst[offset..offset + src.len()].copy_from_slice(src);
            offset += p.shape().c * plane;
        }
    }
    Ok(out)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let gs = grad.shape();
    ensure_dim("split_channels", "channels", channels.iter().sum(), gs.c)?;
    let plane = gs.plane();
    let mut parts: Vec<Tensor<T>> = channels
        .iter()
        .map(|&c| Tensor::zeros(Shape::new(gs.n, c, gs.h, gs.w)))
        .collect();
    for n in 0..gs.n {
        let src = grad.sample(n);
        let mut offset = 0;
        for p in parts.iter_mut() {
            let dst = p.sample_mut(n);
            let len = dst.len();
            dst.copy_from_slice(&src[offset..offset + len]);
            offset += p.shape().c * plane;
        }
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: Shape) -> Tensor<f32> {
        let mut i = 0.0;
        Tensor::from_fn(shape, |_, _, _, _| {
            i += 1.0;
            i
        })
    }

    #[test]
    fn shuffle_factor_one_is_identity() {
        let x = iota(Shape::new(2, 3, 2, 4));
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn shuffle_sub_pixel_layout() {
        let x = Tensor::from_vec(Shape::new(1, 4, 1, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_rejects_indivisible_channels() {
        assert!(pixel_shuffle(&iota(Shape::new(1, 6, 2, 2)), 2).is_err());
        assert!(pixel_unshuffle(&iota(Shape::new(1, 1, 3, 2)), 2).is_err());
    }

    #[test]
    fn unfold_definition() {
        let x = iota(Shape::new(1, 1, 3, 3));
        assert_eq!(unfold_neighborhood(&x, 1).unwrap(), x);
        let u = unfold_neighborhood(&x, 3).unwrap();
        let centre: Vec<f32> = (0..9).map(|c| u.get(0, c, 1, 1)).collect();
        assert_eq!(centre, (1..=9).map(|v| v as f32).collect::<Vec<_>>());
        let corner: Vec<f32> = (0..9).map(|c| u.get(0, c, 0, 0)).collect();
        assert_eq!(corner.iter().filter(|&&v| v == 0.0).count(), 5);
        assert_eq!(corner.iter().sum::<f32>(), 12.0);
        assert!(unfold_neighborhood(&x, 2).is_err());
    }

    #[test]
    fn concat_then_split() {
        let a = iota(Shape::new(2, 1, 2, 2));
        let b = iota(Shape::new(2, 3, 2, 2)).scale(-1.0);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape().c, 4);
        assert_eq!(cat.get(1, 0, 1, 1), a.get(1, 0, 1, 1));
        assert_eq!(cat.get(1, 2, 0, 1), b.get(1, 1, 0, 1));
        let parts = split_channels(&cat, &[1, 3]).unwrap();
        assert_eq!(parts, vec![a, b]);
    }
}
